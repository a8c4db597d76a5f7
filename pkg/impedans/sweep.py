"""
Parameter sweeps: synth -> (noise) -> infer -> eval for every grid cell.

Each cell writes into its own directory; cell.json is written last and only
on success, so a rerun skips finished cells and retries failed ones.
"""

import itertools
import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from impedans.config import RunConfig, apply_overrides
from impedans.errors import ImpedansError, SchemaError
from impedans.io import read_model, write_csv, write_json_model, write_spectrum_csv
from impedans.materials import absorption_at_angle
from impedans.metrics import mae_alpha, mae_zeta, normalized_mae_zeta
from impedans.oracle import add_complex_noise, build_sampling_domain, synthesize_dataset
from impedans.schemas import DatasetFile, ResultBundle
from impedans.tracing import trace_stage
from impedans.trainer import train

logger = logging.getLogger(__name__)

CELL_FILE = "cell.json"
SUMMARY_HEADER = (
    "cell_id",
    "d1 [m]",
    "d2 [m]",
    "array [n x n]",
    "snr [dB]",
    "offset [m]",
    "status",
    "mae_alpha [-]",
    "mae_zeta [-]",
    "normalized_mae_zeta [-]",
    "complexity_index [-]",
    "epochs",
    "error",
)


class SweepGrid(BaseModel):
    """Axes of a sweep; lengths in metres, SNR in dB (inf means noise-free)."""

    model_config = ConfigDict(extra="forbid")

    d1: list[float] = Field(default_factory=lambda: [0.020], min_length=1)
    d2: list[float] = Field(default_factory=lambda: [0.030], min_length=1)
    array: list[int] = Field(default_factory=lambda: [4], min_length=1)
    snr_db: list[float] = Field(default_factory=lambda: [math.inf], min_length=1)
    offset: list[float] = Field(default_factory=lambda: [0.0], min_length=1)

    @field_validator("d1", "d2")
    @classmethod
    def _positive(cls, values):
        if any(v <= 0 for v in values):
            raise ValueError("distances must be > 0")
        return values

    @field_validator("array")
    @classmethod
    def _array_size(cls, values):
        if any(n < 2 for n in values):
            raise ValueError("arrays need at least 2 x 2 sensors per layer")
        return values

    def cells(self) -> list["SweepCell"]:
        return [
            SweepCell(d1=d1, d2=d2, array=n, snr_db=snr, offset=offset)
            for d1, d2, n, snr, offset in itertools.product(
                self.d1, self.d2, self.array, self.snr_db, self.offset
            )
        ]


def load_grid(path: Optional[Path]) -> SweepGrid:
    if path is None:
        return SweepGrid()
    try:
        with open(path, "rb") as handle:
            return SweepGrid.model_validate(tomllib.load(handle))
    except tomllib.TOMLDecodeError as e:
        raise SchemaError(f"Cannot parse {path}: {e}") from e
    except ValidationError as e:
        locations = [".".join(str(p) for p in item["loc"]) for item in e.errors()]
        raise SchemaError(f"Invalid sweep grid {path}: {', '.join(locations)}", locations) from e


@dataclass(frozen=True)
class SweepCell:
    d1: float
    d2: float
    array: int
    snr_db: float = math.inf
    offset: float = 0.0

    @property
    def cell_id(self) -> str:
        snr = "inf" if math.isinf(self.snr_db) else f"{self.snr_db:g}"
        return (
            f"d1={self.d1 * 1e3:g}mm_d2={self.d2 * 1e3:g}mm_n={self.array}"
            f"_snr={snr}_off={self.offset * 1e3:g}mm"
        )

    def to_payload(self) -> dict:
        """JSON-safe form; an infinite SNR travels as None."""
        return {
            "d1": self.d1,
            "d2": self.d2,
            "array": self.array,
            "snr_db": None if math.isinf(self.snr_db) else self.snr_db,
            "offset": self.offset,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "SweepCell":
        snr = payload.get("snr_db")
        return cls(
            d1=payload["d1"],
            d2=payload["d2"],
            array=payload["array"],
            snr_db=math.inf if snr is None else snr,
            offset=payload.get("offset", 0.0),
        )

    def apply(self, config: RunConfig) -> RunConfig:
        return apply_overrides(
            config,
            {
                "array.d1": self.d1,
                "array.d2": self.d2,
                "array.nx": self.array,
                "array.ny": self.array,
                "noise.snr_db": None if math.isinf(self.snr_db) else self.snr_db,
            },
        )


class CellOutcome(BaseModel):
    model_config = ConfigDict(extra="forbid")

    cell_id: str
    d1: float
    d2: float
    array: int
    snr_db: Optional[float]
    offset: float
    status: str
    mae_alpha: Optional[float] = None
    mae_zeta: Optional[float] = None
    normalized_mae_zeta: Optional[float] = None
    complexity_index: Optional[float] = None
    epochs: Optional[int] = None
    error: Optional[str] = None

    @classmethod
    def for_cell(cls, cell: SweepCell, status: str, **fields) -> "CellOutcome":
        payload = cell.to_payload()
        return cls(cell_id=cell.cell_id, status=status, **payload, **fields)

    def row(self) -> list:
        return [
            self.cell_id,
            self.d1,
            self.d2,
            self.array,
            "inf" if self.snr_db is None else self.snr_db,
            self.offset,
            self.status,
            self.mae_alpha,
            self.mae_zeta,
            self.normalized_mae_zeta,
            self.complexity_index,
            self.epochs,
            self.error,
        ]


def run_cell(base_config: RunConfig, cell: SweepCell, output_dir: Path) -> CellOutcome:
    """
    Run one cell, or return its stored outcome if it already finished.

    Domain and numeric failures are returned as a failed outcome; OSError
    propagates so a queue worker can retry the cell.
    """
    cell_dir = Path(output_dir) / cell.cell_id
    done = cell_dir / CELL_FILE
    if done.exists():
        logger.info(f"Cell {cell.cell_id}: already finished, skipping")
        return read_model(done, CellOutcome)

    with trace_stage("sweep_cell", cell=cell.cell_id):
        try:
            config = cell.apply(base_config)
            clean = synthesize_dataset(config, offset=cell.offset)
            dataset = add_complex_noise(clean, cell.snr_db, seed=config.seeds.noise)
            domain = build_sampling_domain(
                dataset.geometry,
                n_volume=config.domain.n_volume,
                boundary_grid=config.domain.boundary_grid,
                ceiling_margin=config.domain.ceiling_margin,
                lateral_margin=config.domain.lateral_margin,
                seed=config.seeds.sampling,
            )
            reference = clean.reference_zeta
            result = train(dataset, domain, config, reference=reference)
        except ImpedansError as e:
            logger.error(f"Cell {cell.cell_id} failed: {e}")
            return CellOutcome.for_cell(cell, "failed", error=f"{type(e).__name__}: {e}")

        bundle = ResultBundle.from_result(result, dataset.provenance)
        write_json_model(cell_dir / "dataset.json", DatasetFile.from_dataset(dataset))
        write_json_model(cell_dir / "result.json", bundle)
        write_spectrum_csv(cell_dir / "spectrum.csv", bundle)

        outcome = CellOutcome.for_cell(
            cell,
            "ok",
            mae_alpha=mae_alpha(result.spectrum.alpha, absorption_at_angle(reference)),
            mae_zeta=mae_zeta(result.zeta, reference),
            normalized_mae_zeta=normalized_mae_zeta(result.zeta, reference),
            complexity_index=result.complexity_index,
            epochs=result.epochs,
        )
        write_json_model(done, outcome)
        logger.info(f"Cell {cell.cell_id}: MAE_alpha={outcome.mae_alpha:.4f}, MAE_zeta={outcome.mae_zeta:.4f}")
        return outcome


def write_summary(output_dir: Path, outcomes: list[CellOutcome]) -> Path:
    """Heatmap-ready table, one row per cell in grid order."""
    return write_csv(Path(output_dir) / "summary.csv", SUMMARY_HEADER, (o.row() for o in outcomes))


def run_sweep(base_config: RunConfig, grid: SweepGrid, output_dir: Path) -> list[CellOutcome]:
    """Run every cell serially in grid order and write summary.csv."""
    cells = grid.cells()
    logger.info(f"Sweep over {len(cells)} cells into {output_dir}")
    outcomes = []
    with trace_stage("sweep", cells=len(cells)):
        for cell in cells:
            try:
                outcomes.append(run_cell(base_config, cell, output_dir))
            except OSError as e:
                logger.error(f"Cell {cell.cell_id} failed on I/O: {e}")
                outcomes.append(CellOutcome.for_cell(cell, "failed", error=f"{type(e).__name__}: {e}"))
    write_summary(output_dir, outcomes)
    failed = sum(o.status != "ok" for o in outcomes)
    if failed:
        logger.warning(f"{failed} of {len(outcomes)} cells failed")
    return outcomes
