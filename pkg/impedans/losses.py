"""
Composite physics-informed loss.

Per frequency channel i:
    data      mean over S_s of |p_hat - p|^2
    pde       mean over S_v u S_s of |lap p_hat + k^2 p_hat|^2
    var_re    population variance over S_b of Re(zeta(x))
    var_im    population variance over S_b of Im(zeta(x))
and one global term:
    smooth    mean Huber curvature of the averaged reflection spectrum

All per-frequency terms are tensors of shape [F]; they stay differentiable
with respect to the network parameters.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple, Protocol

import numpy as np
import torch
import torch.nn.functional as F

from impedans.errors import DegenerateBoundaryError, DomainError, PoleError
from impedans.network import FieldEvaluation

logger = logging.getLogger(__name__)

PER_FREQUENCY_TERMS = ("data", "pde", "var_re", "var_im")


@dataclass(frozen=True)
class LossConfig:
    huber_delta: float = 0.5
    degenerate_floor: float = 1e-12

    def __post_init__(self):
        if self.huber_delta <= 0:
            raise DomainError("huber_delta must be > 0")


class BoundaryImpedance(NamedTuple):
    zeta: torch.Tensor  # [F, B] complex
    valid: torch.Tensor  # [F, B] bool
    zeta_bar: torch.Tensor  # [F] complex, NaN where no point is valid

    @property
    def degenerate_count(self) -> torch.Tensor:
        return (~self.valid).sum(dim=1)


@dataclass
class LossBreakdown:
    data: torch.Tensor
    pde: torch.Tensor
    var_re: torch.Tensor
    var_im: torch.Tensor
    smooth: torch.Tensor
    zeta_bar: torch.Tensor
    degenerate_count: torch.Tensor

    def term(self, name: str) -> torch.Tensor:
        return getattr(self, name)

    def detached(self) -> dict[str, np.ndarray]:
        """Plain numpy copy for reporting."""
        result = {name: self.term(name).detach().cpu().double().numpy() for name in PER_FREQUENCY_TERMS}
        result["smooth"] = float(self.smooth.detach())
        result["zeta_bar"] = self.zeta_bar.detach().cpu().to(torch.complex128).numpy()
        result["degenerate_count"] = self.degenerate_count.cpu().numpy()
        return result


class LossWeights(Protocol):
    data: np.ndarray
    pde: np.ndarray
    var_re: np.ndarray
    var_im: np.ndarray
    smooth: float


def data_loss(predicted: torch.Tensor, measured: torch.Tensor) -> torch.Tensor:
    """Mean squared complex residual over sensors, per frequency."""
    if predicted.shape[-1] == 0:
        raise DomainError("Data loss needs at least one sensor")
    if predicted.shape != measured.shape:
        raise DomainError(f"Shape mismatch {tuple(predicted.shape)} vs {tuple(measured.shape)}")
    residual = predicted - measured.to(predicted.dtype)
    return (residual.real**2 + residual.imag**2).mean(dim=-1)


def pde_loss(evaluation: FieldEvaluation, k: torch.Tensor) -> torch.Tensor:
    """Mean squared Helmholtz residual, per frequency."""
    if evaluation.value.shape[-1] == 0:
        raise DomainError("PDE loss needs at least one point")
    k = k.to(evaluation.value.real.dtype)
    residual = evaluation.laplacian + (k**2).unsqueeze(-1) * evaluation.value
    return (residual.real**2 + residual.imag**2).mean(dim=-1)


def boundary_impedance(
    evaluation: FieldEvaluation,
    normals: torch.Tensor,
    k: torch.Tensor,
    floor: float = 1e-12,
) -> BoundaryImpedance:
    """
    zeta(x) = k*p(x) / (j*dp/dn(x)) at each boundary point, and its mean.

    Points with |dp/dn| < floor*|k*p|, or dp/dn = 0 exactly, are flagged
    degenerate and left out of the mean.
    """
    k = k.to(evaluation.value.real.dtype).unsqueeze(-1)
    kp = k * evaluation.value
    dn = evaluation.normal_derivative(normals)
    valid = (dn.abs() >= floor * kp.abs()) & (dn.abs() > 0)
    safe_dn = torch.where(valid, dn, torch.ones_like(dn))
    zeta = kp / (1j * safe_dn)
    weights = valid.to(zeta.real.dtype)
    count = weights.sum(dim=1)
    zeta_bar = (zeta * weights).sum(dim=1) / count
    return BoundaryImpedance(zeta=zeta, valid=valid, zeta_bar=zeta_bar)


def variance_losses(boundary: BoundaryImpedance) -> tuple[torch.Tensor, torch.Tensor]:
    """Population variance of Re(zeta) and Im(zeta) over the valid boundary points."""
    weights = boundary.valid.to(boundary.zeta.real.dtype)
    count = weights.sum(dim=1)
    if torch.any(count < 2):
        index = int(torch.nonzero(count < 2)[0, 0])
        raise DegenerateBoundaryError(
            f"Channel {index} has fewer than 2 non-degenerate boundary points", frequency_index=index
        )

    def variance(values):
        mean = (values * weights).sum(dim=1) / count
        return (((values - mean.unsqueeze(-1)) ** 2) * weights).sum(dim=1) / count

    return variance(boundary.zeta.real), variance(boundary.zeta.imag)


def averaged_reflection(zeta_bar: torch.Tensor) -> torch.Tensor:
    """R_bar = (zeta_bar - 1) / (zeta_bar + 1)."""
    denominator = zeta_bar + 1
    if torch.any(denominator.abs() == 0):
        raise PoleError("zeta_bar = -1 has no reflection coefficient")
    return (zeta_bar - 1) / denominator


def smoothness_loss(zeta_bar: torch.Tensor, huber_delta: float = 0.5) -> torch.Tensor:
    """Mean Huber penalty on the second difference of R_bar over interior bins."""
    if zeta_bar.shape[0] < 3:
        raise DomainError("Smoothness loss needs at least 3 frequencies")
    reflection = averaged_reflection(zeta_bar)
    curvature = reflection[2:] - 2 * reflection[1:-1] + reflection[:-2]
    parts = torch.cat([curvature.real, curvature.imag])
    penalty = F.huber_loss(parts, torch.zeros_like(parts), reduction="none", delta=huber_delta)
    return penalty.sum() / curvature.shape[0]


def total_loss(breakdown: LossBreakdown, weights: LossWeights) -> torch.Tensor:
    """Weighted sum of all terms."""
    dtype = breakdown.data.dtype
    total = torch.zeros((), dtype=dtype)
    for name in PER_FREQUENCY_TERMS:
        lam = torch.as_tensor(getattr(weights, name), dtype=dtype)
        total = total + (lam * breakdown.term(name)).sum()
    return total + float(weights.smooth) * breakdown.smooth


def compute_breakdown(
    evaluation: FieldEvaluation,
    measured: torch.Tensor,
    k: torch.Tensor,
    normals: torch.Tensor,
    n_sensors: int,
    n_volume: int,
    config: LossConfig,
    with_smoothness: bool = True,
) -> LossBreakdown:
    """
    Evaluate every term from one derivative pass over the concatenated points
    [S_s, S_v, S_b].
    """
    sensors = evaluation.select(slice(0, n_sensors))
    collocation = evaluation.select(slice(0, n_sensors + n_volume))
    boundary_eval = evaluation.select(slice(n_sensors + n_volume, None))

    boundary = boundary_impedance(boundary_eval, normals, k, config.degenerate_floor)
    var_re, var_im = variance_losses(boundary)
    if with_smoothness:
        smooth = smoothness_loss(boundary.zeta_bar, config.huber_delta)
    else:
        smooth = torch.zeros((), dtype=var_re.dtype)
    return LossBreakdown(
        data=data_loss(sensors.value, measured),
        pde=pde_loss(collocation, k),
        var_re=var_re,
        var_im=var_im,
        smooth=smooth,
        zeta_bar=boundary.zeta_bar,
        degenerate_count=boundary.degenerate_count,
    )
