"""
Analytic ground-truth fields above a locally reacting impedance plane.

Local frame: the surface is the plane z = 0, the sound field occupies z > 0
and the outward normal (out of the sound field, into the material) is -z.
Config-driven synthesis shifts points so that plane passes through the array
center.

Provides:
- Two-layer rectangular array geometry and the S_b / S_v / S_s point sets
- Plane-wave, superposed plane-wave and image-source pressure oracles
- Calibrated complex Gaussian noise
- Seeded Latin-hypercube sampling
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.stats import qmc

from impedans.errors import DomainError, SingularityError
from impedans.materials import AIR, AcousticMedium, MaterialSpec, reflection_from_impedance

if TYPE_CHECKING:
    from impedans.config import RunConfig

logger = logging.getLogger(__name__)


class ArrayGeometry(BaseModel):
    """Two-layer rectangular microphone array above the surface."""

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    nx: int = Field(..., ge=2)
    ny: int = Field(..., ge=2)
    spacing: float = Field(..., gt=0)
    d1: float = Field(..., gt=0)
    d2: float = Field(..., gt=0)
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    surface_normal: tuple[float, float, float] = Field((0.0, 0.0, -1.0), alias="normal")

    @field_validator("surface_normal")
    @classmethod
    def _unit_normal(cls, value):
        if abs(np.linalg.norm(value) - 1.0) > 1e-9:
            raise ValueError("surface normal must have unit length")
        return value

    @property
    def sensors_per_layer(self) -> int:
        return self.nx * self.ny

    @property
    def footprint(self) -> tuple[float, float]:
        return ((self.nx - 1) * self.spacing, (self.ny - 1) * self.spacing)

    def frame(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Orthonormal (t1, t2, up) with up pointing into the sound field."""
        up = -np.asarray(self.surface_normal, dtype=float)
        helper = np.array([1.0, 0.0, 0.0]) if abs(up[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        t1 = helper - up * np.dot(helper, up)
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(up, t1)
        return t1, t2, up

    def place(self, lateral_a, lateral_b, height) -> np.ndarray:
        """Map (a, b, h) frame coordinates around the center to physical points."""
        t1, t2, up = self.frame()
        a = np.asarray(lateral_a, dtype=float)[..., None]
        b = np.asarray(lateral_b, dtype=float)[..., None]
        h = np.asarray(height, dtype=float)[..., None]
        return np.asarray(self.center, dtype=float) + a * t1 + b * t2 + h * up

    def sensor_points(self) -> np.ndarray:
        """Lower layer first, then upper layer; sensor i pairs with i + nx*ny."""
        width_a, width_b = self.footprint
        a = np.linspace(-width_a / 2, width_a / 2, self.nx)
        b = np.linspace(-width_b / 2, width_b / 2, self.ny)
        grid_a, grid_b = np.meshgrid(a, b, indexing="ij")
        grid_a, grid_b = grid_a.ravel(), grid_b.ravel()
        layers = [
            self.place(grid_a, grid_b, np.full(grid_a.shape, height))
            for height in (self.d1, self.d1 + self.d2)
        ]
        return np.concatenate(layers, axis=0)

    def oracle_coordinates(self, points) -> np.ndarray:
        """
        Shift points so the surface under the array becomes the oracle plane
        z = 0. Lateral coordinates stay global so sources keep their position.
        """
        if not np.allclose(self.surface_normal, (0.0, 0.0, -1.0)):
            raise DomainError("Oracle fields need a horizontal surface (normal -z)")
        return np.atleast_2d(np.asarray(points, dtype=float)) - np.array([0.0, 0.0, self.center[2]])


def build_two_layer_array(
    nx: int,
    ny: int,
    spacing: float,
    d1: float,
    d2: float,
    center: Sequence[float] = (0.0, 0.0, 0.0),
    surface_normal: Sequence[float] = (0.0, 0.0, -1.0),
) -> tuple[ArrayGeometry, np.ndarray]:
    """Build the array geometry and its 2*nx*ny sensor positions."""
    geometry = ArrayGeometry(
        nx=nx,
        ny=ny,
        spacing=spacing,
        d1=d1,
        d2=d2,
        center=tuple(center),
        surface_normal=tuple(surface_normal),
    )
    return geometry, geometry.sensor_points()


def latin_hypercube_points(n: int, lower: Sequence[float], upper: Sequence[float], seed: int) -> np.ndarray:
    """
    Seeded Latin-hypercube sample inside an axis-aligned box.

    Each axis is cut into n strata holding exactly one sample. Rows come out
    in generation order, which field_complexity relies on.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if n < 1:
        raise DomainError("Latin hypercube needs n >= 1")
    if lower.shape != upper.shape or np.any(upper <= lower):
        raise DomainError("Latin hypercube box is degenerate")
    sampler = qmc.LatinHypercube(d=lower.size, seed=seed)
    return qmc.scale(sampler.random(n), lower, upper)


@dataclass(frozen=True)
class SamplingDomain:
    """Point sets shared by every frequency channel."""

    s_b: np.ndarray
    s_v: np.ndarray
    s_s: np.ndarray
    normals: np.ndarray
    ceiling: float

    @property
    def box(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounding box of every point, used for coordinate scaling."""
        points = np.concatenate([self.s_b, self.s_v, self.s_s], axis=0)
        return points.min(axis=0), points.max(axis=0)


def build_sampling_domain(
    geometry: ArrayGeometry,
    n_volume: int = 512,
    boundary_grid: int = 8,
    ceiling_margin: float = 0.010,
    lateral_margin: Optional[float] = None,
    seed: int = 0,
) -> SamplingDomain:
    """
    Build S_b (regular grid on the surface under the footprint), S_v (Latin
    hypercube over the footprint plus a lateral margin, up to a ceiling above
    the top layer) and S_s (the sensors).
    """
    margin = geometry.spacing if lateral_margin is None else lateral_margin
    width_a, width_b = geometry.footprint
    ceiling = geometry.d1 + geometry.d2 + ceiling_margin

    a = np.linspace(-width_a / 2, width_a / 2, boundary_grid)
    b = np.linspace(-width_b / 2, width_b / 2, boundary_grid)
    grid_a, grid_b = np.meshgrid(a, b, indexing="ij")
    s_b = geometry.place(grid_a.ravel(), grid_b.ravel(), np.zeros(grid_a.size))

    local = latin_hypercube_points(
        n_volume,
        lower=(-width_a / 2 - margin, -width_b / 2 - margin, 0.0),
        upper=(width_a / 2 + margin, width_b / 2 + margin, ceiling),
        seed=seed,
    )
    s_v = geometry.place(local[:, 0], local[:, 1], local[:, 2])

    normals = np.tile(np.asarray(geometry.surface_normal, dtype=float), (len(s_b), 1))
    return SamplingDomain(
        s_b=s_b, s_v=s_v, s_s=geometry.sensor_points(), normals=normals, ceiling=ceiling
    )


@dataclass(frozen=True)
class NoiseMeta:
    snr_db: float
    seed: int


@dataclass(frozen=True)
class PressureDataset:
    """Complex sensor pressures per frequency, raw (not normalized)."""

    medium: AcousticMedium
    frequencies: np.ndarray
    sensors: np.ndarray
    pressure: np.ndarray
    geometry: ArrayGeometry
    noise_meta: Optional[NoiseMeta] = None
    reference_zeta: Optional[np.ndarray] = None
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        n_freq, n_sensors = len(self.frequencies), len(self.sensors)
        if self.pressure.shape != (n_freq, n_sensors):
            raise DomainError(
                f"Pressure matrix shape {self.pressure.shape} does not match "
                f"{n_freq} frequencies x {n_sensors} sensors"
            )
        if not np.all(np.isfinite(self.pressure)):
            raise DomainError("Pressure matrix contains non-finite values")
        if self.reference_zeta is not None and len(self.reference_zeta) != n_freq:
            raise DomainError("Reference impedance must have one value per frequency")

    @property
    def wavenumbers(self) -> np.ndarray:
        return self.medium.wavenumber(self.frequencies)


@dataclass(frozen=True)
class PlaneWaveComponent:
    theta_inc: float
    azimuth: float = 0.0
    amplitude: complex = 1.0 + 0.0j


def plane_wave_over_impedance(
    material: MaterialSpec,
    theta_inc: float,
    azimuth: float,
    frequencies,
    points,
    medium: AcousticMedium = AIR,
    amplitude: complex = 1.0 + 0.0j,
) -> np.ndarray:
    """
    Incident plus specularly reflected plane wave, shape [frequency x point].

    p = A*exp(-j*kt.xt) * (exp(+j*kz*z) + R*exp(-j*kz*z)), kz = k*cos(theta),
    tangential wavevector k*sin(theta)*(cos(azimuth), sin(azimuth)).
    """
    frequencies = np.atleast_1d(np.asarray(frequencies, dtype=float))
    points = np.atleast_2d(np.asarray(points, dtype=float))
    k = medium.wavenumber(frequencies)[:, None]
    reflection = reflection_from_impedance(material.impedance(frequencies, medium), theta_inc)[:, None]

    kz = k * np.cos(theta_inc)
    kx = k * np.sin(theta_inc) * np.cos(azimuth)
    ky = k * np.sin(theta_inc) * np.sin(azimuth)
    x, y, z = points[:, 0][None, :], points[:, 1][None, :], points[:, 2][None, :]
    tangential = np.exp(-1j * (kx * x + ky * y))
    return amplitude * tangential * (np.exp(1j * kz * z) + reflection * np.exp(-1j * kz * z))


def superposed_plane_waves(
    material: MaterialSpec,
    components: Sequence[PlaneWaveComponent],
    frequencies,
    points,
    medium: AcousticMedium = AIR,
) -> np.ndarray:
    """Sum of plane-wave solutions; interference produces nodal lines."""
    if not components:
        raise DomainError("Need at least one plane-wave component")
    return sum(
        plane_wave_over_impedance(
            material, c.theta_inc, c.azimuth, frequencies, points, medium, c.amplitude
        )
        for c in components
    )


def point_source_over_impedance(
    source_pos: Sequence[float],
    strength: float,
    material: MaterialSpec,
    frequencies,
    points,
    medium: AcousticMedium = AIR,
) -> np.ndarray:
    """
    Approximate image-source field of a monopole above the surface.

    The image term is weighted by the plane-wave reflection coefficient at
    each receiver's specular angle. Exact for R = 0 and rigid surfaces.
    """
    source = np.asarray(source_pos, dtype=float)
    if source[2] <= 0:
        raise DomainError("Source must lie inside the sound field (z > 0)")
    frequencies = np.atleast_1d(np.asarray(frequencies, dtype=float))
    points = np.atleast_2d(np.asarray(points, dtype=float))
    image = source * np.array([1.0, 1.0, -1.0])

    r = np.linalg.norm(points - source, axis=1)
    r_image = np.linalg.norm(points - image, axis=1)
    if np.any(r < 1e-12) or np.any(r_image < 1e-12):
        raise SingularityError("Receiver coincides with the source or its image")

    theta_spec = np.arccos(np.clip((points[:, 2] + source[2]) / r_image, 0.0, 1.0))
    zeta = material.impedance(frequencies, medium)[:, None]
    reflection = reflection_from_impedance(zeta, theta_spec[None, :])

    k = medium.wavenumber(frequencies)[:, None]
    direct = strength * np.exp(-1j * k * r[None, :]) / r[None, :]
    reflected = reflection * strength * np.exp(-1j * k * r_image[None, :]) / r_image[None, :]
    return direct + reflected


def add_complex_noise(dataset: PressureDataset, snr_db: float, seed: int) -> PressureDataset:
    """
    Add circular complex Gaussian noise at the given SNR.

    Per frequency the noise standard deviation is rms(|p|)*10^(-snr/20),
    split equally between real and imaginary parts. An infinite SNR returns
    the dataset unchanged.
    """
    if np.isposinf(snr_db):
        return dataset
    if np.isnan(snr_db):
        raise DomainError("SNR must not be NaN")
    rng = np.random.default_rng(seed)
    rms = np.sqrt(np.mean(np.abs(dataset.pressure) ** 2, axis=1, keepdims=True))
    std = rms * 10.0 ** (-snr_db / 20.0)
    draws = rng.standard_normal(dataset.pressure.shape + (2,))
    noise = std / np.sqrt(2.0) * (draws[..., 0] + 1j * draws[..., 1])
    logger.info(f"Added complex noise at {snr_db:g} dB SNR (seed={seed})")
    return dataclasses.replace(
        dataset,
        pressure=dataset.pressure + noise,
        noise_meta=NoiseMeta(snr_db=float(snr_db), seed=seed),
    )


def excitation_field(
    config: "RunConfig", frequencies, points, geometry: Optional[ArrayGeometry] = None
) -> np.ndarray:
    """
    Oracle pressures for the excitation described in a run config. With a
    geometry, heights are measured from the surface under the array.
    """
    excitation = config.excitation
    if geometry is not None:
        points = geometry.oracle_coordinates(points)
    if excitation.kind == "point":
        return point_source_over_impedance(
            excitation.source, excitation.strength, config.material, frequencies, points, config.medium
        )
    if excitation.kind == "superposed":
        components = [
            PlaneWaveComponent(
                theta_inc=np.deg2rad(wave.theta_deg),
                azimuth=np.deg2rad(wave.azimuth_deg),
                amplitude=complex(wave.amplitude_re, wave.amplitude_im),
            )
            for wave in excitation.waves
        ]
        return superposed_plane_waves(config.material, components, frequencies, points, config.medium)
    return plane_wave_over_impedance(
        config.material,
        np.deg2rad(excitation.theta_deg),
        np.deg2rad(excitation.azimuth_deg),
        frequencies,
        points,
        config.medium,
    )


def synthesize_dataset(config: "RunConfig", offset: float = 0.0) -> PressureDataset:
    """
    Clean oracle dataset for the array, material and excitation in a config.

    offset shifts the array laterally along x (m).
    """
    from impedans.config import frequency_grid

    section = config.array
    center = (section.center[0] + offset, section.center[1], section.center[2])
    geometry, sensors = build_two_layer_array(
        section.nx, section.ny, section.spacing, section.d1, section.d2, center
    )
    frequencies = frequency_grid(config.frequencies)
    pressure = excitation_field(config, frequencies, sensors, geometry)
    logger.info(
        f"Synthesized {len(frequencies)} bins x {len(sensors)} sensors "
        f"({config.material.kind}, {config.excitation.kind} excitation)"
    )
    return PressureDataset(
        medium=config.medium,
        frequencies=frequencies,
        sensors=sensors,
        pressure=pressure,
        geometry=geometry,
        reference_zeta=config.material.impedance(frequencies, config.medium),
        provenance={
            "generator": "impedans.oracle",
            "material": config.material.model_dump(mode="json"),
            "excitation": config.excitation.model_dump(mode="json"),
            "offset_m": offset,
        },
    )
