"""
Error metrics and the sound-field complexity measure.

All metrics are pure functions over numpy arrays and return Python floats
(or per-frequency arrays where stated).
"""

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np
from scipy import stats

from impedans.errors import DomainError
from impedans.materials import absorption_at_angle
from impedans.oracle import ArrayGeometry, excitation_field, latin_hypercube_points

if TYPE_CHECKING:
    from impedans.config import RunConfig

logger = logging.getLogger(__name__)


def _paired(predicted, reference, dtype) -> tuple[np.ndarray, np.ndarray]:
    predicted = np.atleast_1d(np.asarray(predicted, dtype=dtype))
    reference = np.atleast_1d(np.asarray(reference, dtype=dtype))
    if predicted.shape != reference.shape:
        raise DomainError(f"Length mismatch: {predicted.shape} vs {reference.shape}")
    if predicted.size == 0:
        raise DomainError("Metrics need at least one value")
    return predicted, reference


def mae_alpha(alpha_pred, alpha_ref) -> float:
    """Mean absolute absorption error."""
    predicted, reference = _paired(alpha_pred, alpha_ref, float)
    return float(np.mean(np.abs(predicted - reference)))


def mae_zeta(zeta_pred, zeta_ref) -> float:
    """Component-wise mean absolute impedance error, (|Re dz| + |Im dz|) / 2N."""
    predicted, reference = _paired(zeta_pred, zeta_ref, complex)
    delta = predicted - reference
    return float(np.sum(np.abs(delta.real) + np.abs(delta.imag)) / (2 * delta.size))


def normalized_mae_zeta(zeta_pred, zeta_ref) -> float:
    """mae_zeta divided by the mean reference magnitude."""
    predicted, reference = _paired(zeta_pred, zeta_ref, complex)
    scale = float(np.mean(np.abs(reference)))
    if scale == 0:
        raise DomainError("Reference impedance is identically zero")
    return mae_zeta(predicted, reference) / scale


def absorption_error_per_frequency(zeta_pred, zeta_ref, theta_inc: float = 0.0) -> np.ndarray:
    """|alpha_pred - alpha_ref| per bin."""
    predicted, reference = _paired(zeta_pred, zeta_ref, complex)
    return np.abs(absorption_at_angle(predicted, theta_inc) - absorption_at_angle(reference, theta_inc))


def mae_pressure(predicted, reference) -> float:
    """Mean over points of |Re dp| + |Im dp| for one frequency."""
    predicted, reference = _paired(predicted, reference, complex)
    delta = predicted - reference
    return float(np.mean(np.abs(delta.real) + np.abs(delta.imag)))


def field_complexity(pressure) -> float:
    """
    Mean absolute first difference of the pressure sequence, real and
    imaginary parts combined as sqrt(C_re^2 + C_im^2).

    Depends on point order; pass values in generation order.
    """
    pressure = np.asarray(pressure, dtype=complex).ravel()
    if pressure.size < 2:
        raise DomainError("Field complexity needs at least 2 points")
    steps = np.diff(pressure)
    c_real = np.mean(np.abs(steps.real))
    c_imag = np.mean(np.abs(steps.imag))
    return float(np.hypot(c_real, c_imag))


def spearman_correlation(complexity, errors) -> float:
    """Spearman rank correlation between per-frequency complexity and error."""
    complexity = np.asarray(complexity, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if complexity.shape != errors.shape:
        raise DomainError(f"Length mismatch: {complexity.shape} vs {errors.shape}")
    if complexity.size < 2:
        raise DomainError("Correlation needs at least 2 pairs")
    rho, _ = stats.spearmanr(complexity, errors)
    return float(rho)


@dataclass(frozen=True)
class EvaluationSet:
    """Held-out points (generation order) with reference pressures [F, P]."""

    frequencies: np.ndarray
    points: np.ndarray
    reference_pressure: np.ndarray

    def __post_init__(self):
        expected = (len(self.frequencies), len(self.points))
        if self.reference_pressure.shape != expected:
            raise DomainError(
                f"Reference pressure shape {self.reference_pressure.shape} does not match {expected}"
            )

    def complexity(self) -> np.ndarray:
        return np.array([field_complexity(row) for row in self.reference_pressure])

    def pressure_errors(self, predicted: np.ndarray) -> np.ndarray:
        predicted = np.asarray(predicted, dtype=complex)
        if predicted.shape != self.reference_pressure.shape:
            raise DomainError(
                f"Predicted pressure shape {predicted.shape} does not match "
                f"{self.reference_pressure.shape}"
            )
        return np.array(
            [mae_pressure(p, ref) for p, ref in zip(predicted, self.reference_pressure)]
        )


def build_evaluation_set(
    geometry: ArrayGeometry,
    frequencies,
    config: "RunConfig",
    seed: Optional[int] = None,
) -> EvaluationSet:
    """
    Latin-hypercube points over the array footprint up to slab_height above
    the surface, with oracle pressures for the config's material and
    excitation.
    """
    width_a, width_b = geometry.footprint
    local = latin_hypercube_points(
        config.evaluation.n_points,
        lower=(-width_a / 2, -width_b / 2, 0.0),
        upper=(width_a / 2, width_b / 2, config.evaluation.slab_height),
        seed=config.seeds.sampling + 1 if seed is None else seed,
    )
    points = geometry.place(local[:, 0], local[:, 1], local[:, 2])
    frequencies = np.asarray(frequencies, dtype=float)
    reference = excitation_field(config, frequencies, points, geometry)
    logger.info(f"Built evaluation set: {len(points)} points x {len(frequencies)} bins")
    return EvaluationSet(frequencies=frequencies, points=points, reference_pressure=reference)
