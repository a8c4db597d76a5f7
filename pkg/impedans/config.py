try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from functools import lru_cache
from pathlib import Path
from typing import Any, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings

from impedans.errors import SchemaError
from impedans.materials import AcousticMedium, MaterialSpec, MikiPorousLayer


class Settings(BaseSettings):
    """Process settings loaded from environment variables (prefix IMPEDANS_)."""

    # Default output directory for CLI runs
    output_dir: Path = Path("runs")
    log_level: str = "INFO"

    # Tracing
    tracing_enabled: bool = False
    jaeger_endpoint: str = "http://localhost:14268/api/traces"
    tracing_console: bool = False

    # Sweep job queue
    queue_database_url: str = ""
    queue_name: str = "sweep_cells"
    cell_max_attempts: int = 3
    cell_retry_base_delay: float = 2.0  # seconds, doubled per attempt
    cell_retry_max_delay: float = 60.0
    worker_concurrency: int = 2

    # Intra-op threads for torch; None keeps the torch default
    torch_threads: Optional[int] = None

    model_config = {
        "env_prefix": "IMPEDANS_",
        "env_file": ".env",
        "case_sensitive": False,
        "extra": "ignore",
    }


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ArraySection(_Section):
    nx: int = Field(4, ge=2)
    ny: int = Field(4, ge=2)
    spacing: float = Field(0.025, gt=0, description="Microphone spacing (m)")
    d1: float = Field(0.020, gt=0, description="Surface to first layer (m)")
    d2: float = Field(0.030, gt=0, description="Layer to layer (m)")
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)


class DomainSection(_Section):
    n_volume: int = Field(512, ge=1, description="|S_v|")
    boundary_grid: int = Field(8, ge=2, description="S_b is a grid of this size squared")
    ceiling_margin: float = Field(0.010, ge=0, description="Above the top layer (m)")
    lateral_margin: Optional[float] = Field(None, ge=0, description="Defaults to the spacing")
    degenerate_floor: float = Field(1e-12, gt=0)


class NetworkSection(_Section):
    hidden_width: int = Field(64, ge=2)
    hidden_layers: int = Field(3, ge=1)
    omega0: float = Field(30.0, gt=0)
    hidden_omega0: float = Field(1.0, gt=0)


class OptimizerSection(_Section):
    kind: Literal["soap", "adam"] = "soap"
    peak_lr: float = Field(1e-3, gt=0)
    warmup_fraction: float = Field(0.05, gt=0, lt=1)
    floor_fraction: float = Field(0.01, ge=0, le=1)
    beta1: float = Field(0.95, gt=0, lt=1)
    beta2: float = Field(0.95, gt=0, lt=1)
    shampoo_beta: float = Field(0.95, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    precondition_frequency: int = Field(2, ge=1)


class LossSection(_Section):
    huber_delta: float = Field(0.5, gt=0)
    smoothness: bool = True
    update_period: int = Field(100, ge=1)
    alpha_data: float = Field(0.90, gt=0, lt=1)
    alpha_pde: float = Field(0.90, gt=0, lt=1)
    alpha_var: float = Field(0.999, gt=0, lt=1)
    alpha_smooth: Optional[float] = Field(None, gt=0, lt=1, description="None: 1 - 1e4/E^2")
    gradient_floor: float = Field(1e-12, gt=0)
    max_weight: float = Field(1e4, gt=0)


class BudgetSection(_Section):
    mode: Literal["fixed", "adaptive"] = "adaptive"
    epochs: int = Field(5000, ge=0)
    thresholds: tuple[float, float, float] = (1.0, 5.0, 20.0)
    budgets: tuple[int, int, int, int] = (1000, 2500, 5000, 10000)

    @field_validator("thresholds")
    @classmethod
    def _ascending(cls, value):
        if list(value) != sorted(value):
            raise ValueError("thresholds must be ascending")
        return value


class SeedSection(_Section):
    network: int = 0
    sampling: int = 0
    noise: int = 0


class FrequencySection(_Section):
    start_hz: float = Field(500.0, gt=0)
    stop_hz: float = Field(2000.0, gt=0)
    count: int = Field(20, ge=1)


class WaveSection(_Section):
    """One component of a superposed excitation."""

    theta_deg: float = Field(..., ge=0, lt=90)
    azimuth_deg: float = 0.0
    amplitude_re: float = 1.0
    amplitude_im: float = 0.0


class ExcitationSection(_Section):
    kind: Literal["plane", "point", "superposed"] = "plane"
    theta_deg: float = Field(0.0, ge=0, lt=90)
    azimuth_deg: float = 0.0
    source: tuple[float, float, float] = (0.0, 0.0, 1.0)
    strength: float = Field(1.0, gt=0, description="Free-field pressure at 1 m (Pa)")
    # Used when kind = "superposed"; interfering waves give nodal lines
    waves: list[WaveSection] = Field(default_factory=list)

    @model_validator(mode="after")
    def _needs_waves(self):
        if self.kind == "superposed" and not self.waves:
            raise ValueError("a superposed excitation needs at least one [[excitation.waves]] entry")
        return self


class NoiseSection(_Section):
    snr_db: Optional[float] = None


class EvaluationSection(_Section):
    theta_inc_deg: float = Field(0.0, ge=0, lt=90)
    n_points: int = Field(2000, ge=2)
    slab_height: float = Field(0.020, gt=0)
    checkpoint_period: int = Field(100, ge=1)


class ExecutionSection(_Section):
    dtype: Literal["float32", "float64"] = "float32"
    deterministic: bool = True


class RunConfig(_Section):
    """Every experiment parameter, each with a default."""

    medium: AcousticMedium = AcousticMedium()
    material: MaterialSpec = MikiPorousLayer(sigma=39260.0, thickness=0.040)
    excitation: ExcitationSection = ExcitationSection()
    noise: NoiseSection = NoiseSection()
    array: ArraySection = ArraySection()
    domain: DomainSection = DomainSection()
    network: NetworkSection = NetworkSection()
    optimizer: OptimizerSection = OptimizerSection()
    loss: LossSection = LossSection()
    budget: BudgetSection = BudgetSection()
    seeds: SeedSection = SeedSection()
    frequencies: FrequencySection = FrequencySection()
    evaluation: EvaluationSection = EvaluationSection()
    execution: ExecutionSection = ExecutionSection()


def _locations(error: ValidationError) -> list[str]:
    return [".".join(str(part) for part in item["loc"]) for item in error.errors()]


def parse_run_config(data: dict[str, Any], source: str = "config") -> RunConfig:
    """Validate a raw mapping, reporting the dotted location of every bad key."""
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        locations = _locations(e)
        raise SchemaError(
            f"Invalid {source}: {', '.join(locations)}", locations=locations
        ) from e


def load_run_config(path: Optional[Path] = None) -> RunConfig:
    """Load a TOML run config; no path means all defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path, "rb") as handle:
            data = tomllib.load(handle)
    except tomllib.TOMLDecodeError as e:
        raise SchemaError(f"Cannot parse {path}: {e}") from e
    return parse_run_config(data, source=str(path))


def apply_overrides(config: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    """
    Return a copy of config with dotted-key overrides applied.

    Flags win over file values; None values are ignored so unset flags
    leave the file value alone.
    """
    data = config.model_dump(mode="python")
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = data
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    return parse_run_config(data, source="overrides")


def frequency_grid(section: FrequencySection) -> np.ndarray:
    """Linearly spaced analysis frequencies (Hz)."""
    if section.count == 1:
        return np.array([section.start_hz])
    return np.linspace(section.start_hz, section.stop_hz, section.count)


# Named starting points for `impedans synth --preset`
PRESETS: dict[str, dict[str, Any]] = {
    "porous": {
        "material": {"kind": "miki", "sigma": 39260.0, "thickness": 0.040},
        "frequencies": {"start_hz": 80.0, "stop_hz": 2820.0, "count": 200},
    },
    "near_rigid": {
        "material": {"kind": "constant", "zeta_re": 39.0, "zeta_im": 0.0},
        "frequencies": {"start_hz": 80.0, "stop_hz": 1420.0, "count": 98},
    },
}


def apply_preset(config: RunConfig, name: str) -> RunConfig:
    """Overlay a named preset on config."""
    if name not in PRESETS:
        raise SchemaError(f"Unknown preset {name!r}", locations=["preset"])
    return apply_overrides(config, PRESETS[name])
