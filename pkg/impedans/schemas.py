"""
On-disk file schemas.

Complex numbers are stored as [re, im] pairs; every file carries a
schema_version.
"""

import math
from typing import Any, Literal, Optional

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from impedans.config import RunConfig
from impedans.materials import AcousticMedium, ImpedanceSpectrum
from impedans.network import ModMLPBank, NetworkArch
from impedans.oracle import ArrayGeometry, NoiseMeta, PressureDataset
from impedans.trainer import InferenceResult, PreprocessRecord, predict_pressure

SCHEMA_VERSION = "1.0"

ComplexPair = tuple[float, float]


def to_pairs(values) -> list[list[float]]:
    """Complex array of any shape -> nested lists ending in [re, im]."""
    values = np.asarray(values, dtype=complex)
    return np.stack([values.real, values.imag], axis=-1).tolist()


def from_pairs(pairs) -> np.ndarray:
    array = np.asarray(pairs, dtype=float)
    return array[..., 0] + 1j * array[..., 1]


def _finite_or_none(values) -> list[Optional[float]]:
    return [float(v) if math.isfinite(v) else None for v in np.asarray(values, dtype=float)]


class _File(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: Literal["1.0"] = SCHEMA_VERSION


class NoiseRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    snr_db: float
    seed: int


class DatasetFile(_File):
    """Sensor pressures for one measurement (synthetic or measured)."""

    medium: AcousticMedium
    frequencies_hz: list[float] = Field(..., min_length=1)
    sensors: list[tuple[float, float, float]] = Field(..., min_length=1)
    pressure: list[list[ComplexPair]]
    geometry: ArrayGeometry
    provenance: dict[str, Any] = Field(default_factory=dict)
    noise: Optional[NoiseRecord] = None
    reference_zeta: Optional[list[ComplexPair]] = None

    @model_validator(mode="after")
    def _shapes(self):
        if len(self.pressure) != len(self.frequencies_hz):
            raise ValueError("pressure needs one row per frequency")
        for row in self.pressure:
            if len(row) != len(self.sensors):
                raise ValueError("every pressure row needs one value per sensor")
        if self.reference_zeta is not None and len(self.reference_zeta) != len(self.frequencies_hz):
            raise ValueError("reference_zeta needs one value per frequency")
        return self

    @classmethod
    def from_dataset(cls, dataset: PressureDataset) -> "DatasetFile":
        noise = None
        if dataset.noise_meta is not None:
            noise = NoiseRecord(snr_db=dataset.noise_meta.snr_db, seed=dataset.noise_meta.seed)
        return cls(
            medium=dataset.medium,
            frequencies_hz=np.asarray(dataset.frequencies, dtype=float).tolist(),
            sensors=np.asarray(dataset.sensors, dtype=float).tolist(),
            pressure=to_pairs(dataset.pressure),
            geometry=dataset.geometry,
            provenance=dataset.provenance,
            noise=noise,
            reference_zeta=None if dataset.reference_zeta is None else to_pairs(dataset.reference_zeta),
        )

    def to_dataset(self) -> PressureDataset:
        return PressureDataset(
            medium=self.medium,
            frequencies=np.asarray(self.frequencies_hz, dtype=float),
            sensors=np.asarray(self.sensors, dtype=float),
            pressure=from_pairs(self.pressure),
            geometry=self.geometry,
            noise_meta=None if self.noise is None else NoiseMeta(self.noise.snr_db, self.noise.seed),
            reference_zeta=None if self.reference_zeta is None else from_pairs(self.reference_zeta),
            provenance=dict(self.provenance),
        )


class EvaluationFieldFile(_File):
    """Held-out points in generation order with reference pressures."""

    frequencies_hz: list[float] = Field(..., min_length=1)
    points: list[tuple[float, float, float]] = Field(..., min_length=2)
    reference_pressure: list[list[ComplexPair]]
    provenance: dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _shapes(self):
        if len(self.reference_pressure) != len(self.frequencies_hz):
            raise ValueError("reference_pressure needs one row per frequency")
        if any(len(row) != len(self.points) for row in self.reference_pressure):
            raise ValueError("every reference_pressure row needs one value per point")
        return self


class ReferenceSpectrumFile(_File):
    """Known impedance per frequency, for scoring results."""

    frequencies_hz: list[float] = Field(..., min_length=1)
    zeta: list[ComplexPair]
    source: str = ""

    @model_validator(mode="after")
    def _lengths(self):
        if len(self.zeta) != len(self.frequencies_hz):
            raise ValueError("zeta needs one value per frequency")
        return self


class NamedArray(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    shape: list[int]
    values: list[float]


class NetworkRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    arch: dict[str, Any]
    dtype: Literal["float32", "float64"]
    parameters: list[NamedArray]


class FinalLosses(BaseModel):
    model_config = ConfigDict(extra="forbid")

    data: list[float]
    pde: list[float]
    var_re: list[float]
    var_im: list[float]
    smooth: float
    degenerate_count: list[int]


class ResultBundle(_File):
    """Inference result with the trained network and the exact config used."""

    frequencies_hz: list[float]
    zeta: list[ComplexPair]
    alpha_normal: list[float]
    theta_inc_deg: float
    alpha_oblique: list[float]
    alpha_random: list[Optional[float]]
    final_losses: FinalLosses
    lambda_trajectory: list[dict[str, Any]]
    convergence: list[dict[str, Any]]
    wall_clock_s: float
    seed: int
    epochs: int
    complexity_index: float
    preprocess: dict[str, list]
    network: NetworkRecord
    config: RunConfig
    dataset_provenance: dict[str, Any] = Field(default_factory=dict)
    trace_id: Optional[str] = None

    @classmethod
    def from_result(cls, result: InferenceResult, dataset_provenance: Optional[dict] = None) -> "ResultBundle":
        losses = result.final_losses
        convergence = []
        for entry in result.convergence:
            entry = dict(entry)
            entry["zeta_bar"] = to_pairs(entry["zeta_bar"])
            convergence.append(entry)
        dtype = "float64" if result.bank.box_mid.dtype == torch.float64 else "float32"
        return cls(
            frequencies_hz=result.frequencies.tolist(),
            zeta=to_pairs(result.zeta),
            alpha_normal=result.spectrum.alpha.tolist(),
            theta_inc_deg=result.theta_inc_deg,
            alpha_oblique=np.asarray(result.alpha_oblique, dtype=float).tolist(),
            alpha_random=_finite_or_none(result.alpha_random),
            final_losses=FinalLosses(
                data=losses["data"].tolist(),
                pde=losses["pde"].tolist(),
                var_re=losses["var_re"].tolist(),
                var_im=losses["var_im"].tolist(),
                smooth=losses["smooth"],
                degenerate_count=losses["degenerate_count"].tolist(),
            ),
            lambda_trajectory=result.lambda_trajectory,
            convergence=convergence,
            wall_clock_s=result.wall_clock_s,
            seed=result.seed,
            epochs=result.epochs,
            complexity_index=result.complexity_index,
            preprocess=result.preprocess.to_dict(),
            network=NetworkRecord(
                arch=result.bank.arch.to_dict(),
                dtype=dtype,
                parameters=result.bank.to_named_arrays(),
            ),
            config=result.config,
            dataset_provenance=dataset_provenance or {},
            trace_id=result.trace_id,
        )

    def spectrum(self) -> ImpedanceSpectrum:
        return ImpedanceSpectrum.from_impedance(self.frequencies_hz, from_pairs(self.zeta))

    def preprocess_record(self) -> PreprocessRecord:
        return PreprocessRecord.from_dict(self.preprocess)

    def load_bank(self) -> ModMLPBank:
        """Rebuild the trained network at its training precision."""
        arch = NetworkArch.from_dict(self.network.arch)
        arrays = [item.model_dump() for item in self.network.parameters]
        dtype = torch.float64 if self.network.dtype == "float64" else torch.float32
        return ModMLPBank.from_named_arrays(arch, arrays, dtype=dtype)


def predict_field(bundle: ResultBundle, points) -> np.ndarray:
    """Pressures [F, P] predicted by a saved bundle, in the dataset's units."""
    return predict_pressure(bundle.load_bank(), bundle.preprocess_record(), np.asarray(points, dtype=float))
