"""
Unit tests for the analytic field oracle, array geometry and sampling.

Tests verify:
- Two-layer array layout and layer pairing
- Plane-wave fields satisfy Helmholtz and the impedance boundary condition
- Point-source image field and its far-field plane-wave limit
- Noise calibration, unbiasedness and seeding
- Surface-relative oracle coordinates for a raised array
- Latin-hypercube stratification
"""
import numpy as np
import pytest

from impedans.config import apply_overrides
from impedans.errors import DomainError, SchemaError
from impedans.materials import AIR, ConstantImpedance
from impedans.oracle import (
    PlaneWaveComponent,
    PressureDataset,
    add_complex_noise,
    build_sampling_domain,
    build_two_layer_array,
    excitation_field,
    latin_hypercube_points,
    plane_wave_over_impedance,
    point_source_over_impedance,
    superposed_plane_waves,
    synthesize_dataset,
)

FREQUENCY = 1000.0
WAVELENGTH = AIR.c0 / FREQUENCY


def _laplacian_4th_order(field, point, h):
    """Fourth-order central-difference Laplacian of a callable at one point."""
    total = 0.0
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = h
        values = [field(point + m * step) for m in (-2, -1, 0, 1, 2)]
        total += (-values[0] + 16 * values[1] - 30 * values[2] + 16 * values[3] - values[4]) / (12 * h**2)
    return total


def _dz_4th_order(field, point, h):
    step = np.array([0.0, 0.0, h])
    return (field(point - 2 * step) - 8 * field(point - step) + 8 * field(point + step) - field(point + 2 * step)) / (12 * h)


class TestArrayGeometry:
    """Test suite for the two-layer array."""

    def test_four_by_four_layout(self):
        """Test that a 4x4 array at 25 mm pitch gives 32 sensors in two layers."""
        geometry, sensors = build_two_layer_array(4, 4, 0.025, 0.020, 0.030)
        assert sensors.shape == (32, 3)
        np.testing.assert_allclose(np.unique(sensors[:, 2]), [0.020, 0.050])
        assert geometry.footprint == pytest.approx((0.075, 0.075))
        np.testing.assert_allclose(sensors[:, 0].min(), -0.0375)
        np.testing.assert_allclose(sensors[:, 0].max(), 0.0375)

    def test_three_by_three_layout(self):
        """Test that a 3x3 array with d1 = 5 mm, d2 = 10 mm gives 18 sensors."""
        _, sensors = build_two_layer_array(3, 3, 0.025, 0.005, 0.010)
        assert sensors.shape == (18, 3)
        np.testing.assert_allclose(np.unique(sensors[:, 2]), [0.005, 0.015])

    def test_layers_are_paired(self, small_array):
        """Test that sensor i + n sits d2 above sensor i."""
        geometry, sensors = small_array
        n = geometry.sensors_per_layer
        np.testing.assert_allclose(sensors[n:] - sensors[:n], np.tile([0.0, 0.0, 0.030], (n, 1)), atol=1e-15)

    def test_tilted_surface_frame(self):
        """Test that a tilted surface still gives an orthonormal frame and pairing."""
        normal = (0.0, -np.sin(0.3), -np.cos(0.3))
        geometry, sensors = build_two_layer_array(3, 2, 0.02, 0.01, 0.02, center=(0.1, 0.0, 0.0), surface_normal=normal)
        t1, t2, up = geometry.frame()
        frame = np.stack([t1, t2, up])
        np.testing.assert_allclose(frame @ frame.T, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(up, -np.asarray(normal))
        n = geometry.sensors_per_layer
        np.testing.assert_allclose(sensors[n:] - sensors[:n], np.tile(0.02 * up, (n, 1)), atol=1e-12)

    def test_non_unit_normal_rejected(self):
        with pytest.raises(ValueError):
            build_two_layer_array(2, 2, 0.02, 0.01, 0.02, surface_normal=(0.0, 0.0, -2.0))

    @pytest.mark.parametrize("nx", [0, 1])
    def test_single_column_rejected(self, nx):
        """Test that fewer than 2 sensors per side raises."""
        with pytest.raises(ValueError):
            build_two_layer_array(nx, 2, 0.02, 0.01, 0.02)


class TestPlaneWaveOracle:
    """Test suite for plane-wave fields above an impedance plane."""

    def test_quarter_wavelength_value(self):
        """Test that zeta = 2 at z = lambda/4 gives p = 2j/3."""
        material = ConstantImpedance(zeta_re=2.0)
        p = plane_wave_over_impedance(material, 0.0, 0.0, FREQUENCY, [[0.0, 0.0, WAVELENGTH / 4]])
        assert complex(p[0, 0]) == pytest.approx(2j / 3, abs=1e-12)

    def test_near_rigid_surface_doubles_pressure(self):
        """Test that a near-rigid surface gives p = 2 at z = 0."""
        material = ConstantImpedance(zeta_re=1e12)
        p = plane_wave_over_impedance(material, 0.0, 0.0, FREQUENCY, [[0.01, -0.02, 0.0]])
        assert complex(p[0, 0]) == pytest.approx(2.0 + 0j, abs=1e-9)

    def test_matched_surface_has_no_reflection(self):
        """Test that zeta = 1 at normal incidence leaves only the incident wave."""
        material = ConstantImpedance(zeta_re=1.0)
        points = np.array([[0.0, 0.0, 0.013], [0.02, 0.01, 0.07]])
        p = plane_wave_over_impedance(material, 0.0, 0.0, FREQUENCY, points)
        k = AIR.wavenumber(FREQUENCY)
        np.testing.assert_allclose(p[0], np.exp(1j * k * points[:, 2]), rtol=1e-12)

    def test_helmholtz_residual(self, constant_material):
        """Test that an oblique superposition satisfies Helmholtz to finite-difference accuracy."""
        components = [
            PlaneWaveComponent(theta_inc=np.deg2rad(30.0), azimuth=np.deg2rad(20.0)),
            PlaneWaveComponent(theta_inc=np.deg2rad(55.0), azimuth=np.deg2rad(200.0), amplitude=0.5 - 0.3j),
        ]
        k = AIR.wavenumber(FREQUENCY)
        h = WAVELENGTH / 200

        def field(point):
            return superposed_plane_waves(constant_material, components, FREQUENCY, point[None, :])[0, 0]

        rng = np.random.default_rng(3)
        for point in rng.uniform([-0.05, -0.05, 0.01], [0.05, 0.05, 0.08], size=(5, 3)):
            residual = _laplacian_4th_order(field, point, h) + k**2 * field(point)
            assert abs(residual) / k**2 < 1e-6

    @pytest.mark.parametrize("theta_deg", [0.0, 35.0])
    def test_boundary_condition_recovers_impedance(self, constant_material, theta_deg):
        """Test that k*p/(j*dp/dn) at z = 0 returns the material impedance."""
        theta = np.deg2rad(theta_deg)
        k = AIR.wavenumber(FREQUENCY)

        def field(point):
            return plane_wave_over_impedance(constant_material, theta, 0.4, FREQUENCY, point[None, :])[0, 0]

        point = np.array([0.01, -0.005, 0.0])
        dp_dn = -_dz_4th_order(field, point, WAVELENGTH / 200)
        zeta = k * field(point) / (1j * dp_dn)
        assert zeta == pytest.approx(constant_material.zeta, rel=1e-6)

    def test_superposition_needs_components(self, constant_material):
        with pytest.raises(DomainError):
            superposed_plane_waves(constant_material, [], FREQUENCY, [[0.0, 0.0, 0.01]])


class TestPointSourceOracle:
    """Test suite for the image-source field."""

    def test_near_rigid_surface_adds_full_image(self):
        """Test that a near-rigid surface returns direct plus image terms."""
        material = ConstantImpedance(zeta_re=1e12)
        source = np.array([0.0, 0.0, 0.5])
        points = np.array([[0.1, 0.0, 0.02], [-0.03, 0.04, 0.05]])
        p = point_source_over_impedance(source, 1.0, material, FREQUENCY, points)
        k = AIR.wavenumber(FREQUENCY)
        r = np.linalg.norm(points - source, axis=1)
        r_image = np.linalg.norm(points - source * np.array([1, 1, -1]), axis=1)
        expected = np.exp(-1j * k * r) / r + np.exp(-1j * k * r_image) / r_image
        np.testing.assert_allclose(p[0], expected, rtol=1e-9)

    def test_source_below_surface_rejected(self, constant_material):
        with pytest.raises(DomainError):
            point_source_over_impedance((0.0, 0.0, -0.1), 1.0, constant_material, FREQUENCY, [[0.0, 0.0, 0.01]])

    def test_distant_source_matches_plane_wave(self, constant_material, small_array):
        """Test that a source 50 wavelengths overhead gives the normal-incidence plane wave within 1%."""
        _, sensors = small_array
        height = 50 * WAVELENGTH
        k = AIR.wavenumber(FREQUENCY)
        p = point_source_over_impedance((0.0, 0.0, height), 1.0, constant_material, FREQUENCY, sensors)[0]
        # undo the spherical spreading and travel phase to the surface
        normalized = p * height * np.exp(1j * k * height)
        plane = plane_wave_over_impedance(constant_material, 0.0, 0.0, FREQUENCY, sensors)[0]
        assert np.max(np.abs(normalized - plane) / np.abs(plane)) < 0.01


class TestNoise:
    """Test suite for calibrated complex noise."""

    @pytest.fixture
    def flat_dataset(self, small_array):
        geometry, _ = small_array
        n = 100_000
        return PressureDataset(
            medium=AIR,
            frequencies=np.array([FREQUENCY]),
            sensors=np.zeros((n, 3)),
            pressure=np.ones((1, n), dtype=complex),
            geometry=geometry,
        )

    def test_infinite_snr_is_identity(self, tiny_config):
        """Test that SNR = inf returns the dataset unchanged."""
        dataset = synthesize_dataset(tiny_config)
        assert add_complex_noise(dataset, float("inf"), seed=0) is dataset

    def test_zero_db_noise_power(self, flat_dataset):
        """Test that 0 dB SNR gives noise power equal to signal power within 2%."""
        noisy = add_complex_noise(flat_dataset, 0.0, seed=11)
        noise = noisy.pressure - flat_dataset.pressure
        assert np.mean(np.abs(noise) ** 2) == pytest.approx(1.0, rel=0.02)
        assert np.mean(noise.real**2) == pytest.approx(np.mean(noise.imag**2), rel=0.05)
        assert noisy.noise_meta.snr_db == 0.0

    def test_noise_is_unbiased(self, flat_dataset):
        """Test that the ensemble mean of the noise lies within 3 sigma / sqrt(N) of zero."""
        noisy = add_complex_noise(flat_dataset, 10.0, seed=17)
        noise = noisy.pressure - flat_dataset.pressure
        sigma = 10.0 ** (-10.0 / 20.0)
        assert abs(noise.mean()) < 3 * sigma / np.sqrt(noise.size)

    def test_seeded_noise_is_reproducible(self, tiny_config):
        """Test that the same seed yields identical noise and a different seed does not."""
        dataset = synthesize_dataset(tiny_config)
        first = add_complex_noise(dataset, 20.0, seed=5).pressure
        second = add_complex_noise(dataset, 20.0, seed=5).pressure
        other = add_complex_noise(dataset, 20.0, seed=6).pressure
        np.testing.assert_array_equal(first, second)
        assert not np.array_equal(first, other)

    def test_nan_snr_rejected(self, tiny_config):
        with pytest.raises(DomainError):
            add_complex_noise(synthesize_dataset(tiny_config), float("nan"), seed=0)


class TestSampling:
    """Test suite for Latin-hypercube sampling and the sampling domain."""

    def test_one_point_per_stratum(self):
        """Test that n = 10 samples put exactly one point in each stratum per axis."""
        lower, upper = np.array([-1.0, 0.0, 2.0]), np.array([1.0, 0.5, 3.0])
        points = latin_hypercube_points(10, lower, upper, seed=4)
        strata = np.floor((points - lower) / (upper - lower) * 10).astype(int)
        for axis in range(3):
            assert sorted(strata[:, axis]) == list(range(10))

    def test_seeded_sampling_is_reproducible(self):
        first = latin_hypercube_points(20, [0, 0, 0], [1, 1, 1], seed=9)
        second = latin_hypercube_points(20, [0, 0, 0], [1, 1, 1], seed=9)
        np.testing.assert_array_equal(first, second)

    def test_degenerate_box_rejected(self):
        with pytest.raises(DomainError):
            latin_hypercube_points(5, [0, 0, 0], [1, 0, 1], seed=0)

    def test_sampling_domain_layout(self, small_array):
        """Test that S_b lies on the surface, S_v inside the box and S_s on the sensors."""
        geometry, sensors = small_array
        domain = build_sampling_domain(geometry, n_volume=50, boundary_grid=4, ceiling_margin=0.01, seed=1)
        assert domain.s_b.shape == (16, 3)
        np.testing.assert_allclose(domain.s_b[:, 2], 0.0)
        assert domain.s_v.shape == (50, 3)
        assert domain.ceiling == pytest.approx(0.060)
        assert np.all((domain.s_v[:, 2] >= 0.0) & (domain.s_v[:, 2] <= 0.060))
        np.testing.assert_array_equal(domain.s_s, sensors)
        np.testing.assert_allclose(domain.normals, np.tile([0.0, 0.0, -1.0], (16, 1)))
        lower, upper = domain.box
        assert lower[2] == pytest.approx(0.0, abs=1e-12)
        assert upper[2] <= 0.060


class TestSynthesizeDataset:
    """Test suite for config-driven dataset synthesis."""

    def test_shapes_and_reference(self, tiny_config):
        dataset = synthesize_dataset(tiny_config)
        assert dataset.pressure.shape == (3, 8)
        np.testing.assert_allclose(dataset.frequencies, [500.0, 600.0, 700.0])
        np.testing.assert_allclose(dataset.reference_zeta, np.full(3, 2.0 - 1.0j))
        assert dataset.provenance["material"]["kind"] == "constant"

    def test_lateral_offset_shifts_array(self, tiny_config):
        """Test that offset moves every sensor along x."""
        base = synthesize_dataset(tiny_config)
        shifted = synthesize_dataset(tiny_config, offset=0.05)
        np.testing.assert_allclose(shifted.sensors - base.sensors, np.tile([0.05, 0.0, 0.0], (8, 1)))

    def test_raised_surface_keeps_reference_impedance(self, tiny_config):
        """Test that with the array centered above z = 0 the data still satisfy k*p/(j*dp/dn) = zeta on S_b."""
        config = apply_overrides(tiny_config, {"array.center": (0.01, -0.02, 0.1), "excitation.theta_deg": 30.0})
        dataset = synthesize_dataset(config)
        domain = build_sampling_domain(dataset.geometry, n_volume=8, boundary_grid=3)
        np.testing.assert_allclose(domain.s_b[:, 2], 0.1)
        frequency = dataset.frequencies[1]
        k = AIR.wavenumber(frequency)

        def field(point):
            return excitation_field(config, [frequency], point[None, :], dataset.geometry)[0, 0]

        for point in domain.s_b[:3]:
            dp_dn = -_dz_4th_order(field, point, AIR.c0 / frequency / 200)
            assert k * field(point) / (1j * dp_dn) == pytest.approx(dataset.reference_zeta[1], rel=1e-6)
        np.testing.assert_array_equal(
            dataset.pressure, excitation_field(config, dataset.frequencies, dataset.sensors, dataset.geometry)
        )

    def test_oracle_needs_horizontal_surface(self):
        geometry, sensors = build_two_layer_array(2, 2, 0.025, 0.02, 0.03, surface_normal=(1.0, 0.0, 0.0))
        with pytest.raises(DomainError):
            geometry.oracle_coordinates(sensors)

    def test_pressure_shape_mismatch_rejected(self, small_array):
        geometry, sensors = small_array
        with pytest.raises(DomainError):
            PressureDataset(
                medium=AIR,
                frequencies=np.array([500.0, 600.0]),
                sensors=sensors,
                pressure=np.ones((1, len(sensors)), dtype=complex),
                geometry=geometry,
            )

    def test_superposed_excitation(self, tiny_config):
        """Test that a superposed excitation sums its component plane waves."""
        config = apply_overrides(
            tiny_config,
            {
                "excitation": {
                    "kind": "superposed",
                    "waves": [
                        {"theta_deg": 0.0},
                        {"theta_deg": 40.0, "azimuth_deg": 90.0, "amplitude_re": 0.5, "amplitude_im": -0.5},
                    ],
                }
            },
        )
        dataset = synthesize_dataset(config)
        components = [
            PlaneWaveComponent(theta_inc=0.0),
            PlaneWaveComponent(theta_inc=np.deg2rad(40.0), azimuth=np.pi / 2, amplitude=0.5 - 0.5j),
        ]
        expected = superposed_plane_waves(config.material, components, dataset.frequencies, dataset.sensors)
        np.testing.assert_allclose(dataset.pressure, expected, rtol=1e-12)

    def test_superposed_excitation_needs_waves(self, tiny_config):
        with pytest.raises(SchemaError):
            apply_overrides(tiny_config, {"excitation.kind": "superposed"})
