"""
Pytest configuration and fixtures for testing.
"""
import pytest
from procrastinate import testing

from impedans.config import RunConfig, apply_overrides
from impedans.materials import ConstantImpedance, MikiPorousLayer
from impedans.oracle import build_sampling_domain, build_two_layer_array, synthesize_dataset


@pytest.fixture
def porous_layer():
    """40 mm Miki layer with sigma = 39260 Pa*s/m^2."""
    return MikiPorousLayer(sigma=39260.0, thickness=0.040)


@pytest.fixture
def constant_material():
    return ConstantImpedance(zeta_re=2.0, zeta_im=-1.0)


@pytest.fixture
def small_array():
    """2 x 2 per layer, 25 mm pitch, layers at 20 mm and 50 mm."""
    return build_two_layer_array(2, 2, 0.025, 0.020, 0.030)


@pytest.fixture
def tiny_config():
    """
    A run config small enough to train in well under a second.

    Float64 throughout so finite-difference and determinism checks are exact.
    """
    return apply_overrides(
        RunConfig(),
        {
            "material": {"kind": "constant", "zeta_re": 2.0, "zeta_im": -1.0},
            "array.nx": 2,
            "array.ny": 2,
            "domain.n_volume": 24,
            "domain.boundary_grid": 3,
            "network.hidden_width": 8,
            "network.hidden_layers": 2,
            "frequencies.start_hz": 500.0,
            "frequencies.stop_hz": 700.0,
            "frequencies.count": 3,
            "budget.mode": "fixed",
            "budget.epochs": 4,
            "loss.update_period": 2,
            "evaluation.checkpoint_period": 2,
            "evaluation.n_points": 16,
            "execution.dtype": "float64",
        },
    )


@pytest.fixture
def tiny_problem(tiny_config):
    """(dataset, domain, config) for tiny_config."""
    dataset = synthesize_dataset(tiny_config)
    domain = build_sampling_domain(
        dataset.geometry,
        n_volume=tiny_config.domain.n_volume,
        boundary_grid=tiny_config.domain.boundary_grid,
        seed=tiny_config.seeds.sampling,
    )
    return dataset, domain, tiny_config


@pytest.fixture
def in_memory_connector():
    """
    Create an in-memory connector for isolated testing.

    Sweep cells can be deferred and inspected without a database.
    """
    connector = testing.InMemoryConnector()
    yield connector
    connector.reset()


@pytest.fixture
def in_memory_app(in_memory_connector):
    """The sweep queue app with its connector swapped for an in-memory one."""
    from impedans.queue import app

    with app.replace_connector(in_memory_connector) as test_app:
        yield test_app
