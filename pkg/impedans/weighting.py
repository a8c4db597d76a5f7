"""
Self-adaptive loss weights.

Every update period the un-weighted per-term gradient norms
G_q,i = ||grad_theta_i L_q,i|| set targets relative to the combined
data-and-residual scale S_i = G_data,i + G_pde,i:

    lambda_hat_q,i = S_i / G_q,i

and each weight follows an exponential moving average with its own factor:

    lambda <- alpha_q*lambda + (1 - alpha_q)*lambda_hat
"""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GradientNorms:
    data: np.ndarray
    pde: np.ndarray
    var_re: np.ndarray
    var_im: np.ndarray
    smooth: Optional[float] = None


def smooth_alpha(total_epochs: int, lower: float = 0.9, upper: float = 0.9999) -> float:
    """alpha_smooth = 1 - 1e4/E^2, clamped so short budgets stay in (0, 1)."""
    if total_epochs <= 0:
        return lower
    return float(np.clip(1.0 - 1e4 / total_epochs**2, lower, upper))


@dataclass(frozen=True)
class AdaptiveWeightState:
    data: np.ndarray
    pde: np.ndarray
    var_re: np.ndarray
    var_im: np.ndarray
    smooth: float = 1.0
    alpha_data: float = 0.90
    alpha_pde: float = 0.90
    alpha_var: float = 0.999
    alpha_smooth: float = 0.99
    update_period: int = 100
    floor: float = 1e-12
    max_weight: float = 1e4

    def __post_init__(self):
        for alpha in (self.alpha_data, self.alpha_pde, self.alpha_var, self.alpha_smooth):
            if not 0 < alpha < 1:
                raise ValueError(f"Smoothing factor {alpha} outside (0, 1)")

    @classmethod
    def initial(cls, n_frequencies: int, **kwargs) -> "AdaptiveWeightState":
        ones = np.ones(n_frequencies)
        return cls(data=ones, pde=ones.copy(), var_re=ones.copy(), var_im=ones.copy(), **kwargs)

    def is_update_epoch(self, epoch: int) -> bool:
        return epoch % self.update_period == 0

    def summary(self) -> dict[str, float]:
        return {
            "lambda_data": float(np.mean(self.data)),
            "lambda_pde": float(np.mean(self.pde)),
            "lambda_var_re": float(np.mean(self.var_re)),
            "lambda_var_im": float(np.mean(self.var_im)),
            "lambda_smooth": float(self.smooth),
        }


def _ema(current, target, alpha):
    return alpha * current + (1.0 - alpha) * target


def update_adaptive_weights(state: AdaptiveWeightState, norms: GradientNorms) -> AdaptiveWeightState:
    """One EMA step towards the gradient-balanced targets; zero norms are floored."""

    def target(scale, norm):
        return np.minimum(scale / np.maximum(norm, state.floor), state.max_weight)

    scale = np.asarray(norms.data) + np.asarray(norms.pde)
    updated = dataclasses.replace(
        state,
        data=_ema(state.data, target(scale, norms.data), state.alpha_data),
        pde=_ema(state.pde, target(scale, norms.pde), state.alpha_pde),
        var_re=_ema(state.var_re, target(scale, norms.var_re), state.alpha_var),
        var_im=_ema(state.var_im, target(scale, norms.var_im), state.alpha_var),
    )
    if norms.smooth is not None:
        smooth_target = float(target(np.mean(scale), norms.smooth))
        updated = dataclasses.replace(
            updated, smooth=_ema(state.smooth, smooth_target, state.alpha_smooth)
        )
    logger.debug(f"Adaptive weights updated: {updated.summary()}")
    return updated
