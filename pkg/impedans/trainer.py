"""
End-to-end impedance inference.

Pipeline for one dataset:
1. Frequency-wise preprocessing (scale to unit peak, phase-align to the peak sensor)
2. Complexity index -> epoch budget
3. Full-batch training of the frequency-parallel network bank with the
   composite loss, self-adaptive weights and a warmup-cosine schedule
4. Final evaluation of the averaged boundary impedance and absorption
"""

import bisect
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np
import torch

from impedans.config import ExecutionSection, OptimizerSection, RunConfig, Settings
from impedans.errors import DegenerateBoundaryError, DomainError, TrainingAbortedError
from impedans.losses import (
    PER_FREQUENCY_TERMS,
    LossBreakdown,
    LossConfig,
    compute_breakdown,
    total_loss,
)
from impedans.materials import ImpedanceSpectrum, absorption_at_angle, paris_random_absorption
from impedans.metrics import mae_alpha, normalized_mae_zeta
from impedans.network import ModMLPBank, NetworkArch, init_network, parameter_gradients
from impedans.oracle import ArrayGeometry, PressureDataset, SamplingDomain
from impedans.schedule import EPOCH_BUDGETS, TrainSchedule, lr_at_epoch, set_learning_rate
from impedans.soap import SOAP
from impedans.tracing import get_current_trace_id, trace_stage
from impedans.weighting import AdaptiveWeightState, GradientNorms, smooth_alpha, update_adaptive_weights

logger = logging.getLogger(__name__)

COMPLEXITY_SCALE = 1e4


@dataclass(frozen=True)
class PreprocessRecord:
    """Per-frequency normalization; enough to undo it."""

    scale: np.ndarray
    reference_sensor: np.ndarray
    phase_shift: np.ndarray

    def __post_init__(self):
        if np.any(self.scale <= 0):
            raise DomainError("Preprocessing scale must be > 0")

    def _factor(self) -> np.ndarray:
        return (self.scale * np.exp(1j * self.phase_shift))[:, None]

    def apply(self, pressure: np.ndarray) -> np.ndarray:
        return np.asarray(pressure, dtype=complex) / self._factor()

    def invert(self, pressure: np.ndarray) -> np.ndarray:
        return np.asarray(pressure, dtype=complex) * self._factor()

    def to_dict(self) -> dict[str, list]:
        return {
            "scale": self.scale.tolist(),
            "reference_sensor": self.reference_sensor.tolist(),
            "phase_shift": self.phase_shift.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PreprocessRecord":
        return cls(
            scale=np.asarray(data["scale"], dtype=float),
            reference_sensor=np.asarray(data["reference_sensor"], dtype=int),
            phase_shift=np.asarray(data["phase_shift"], dtype=float),
        )


def preprocess_dataset(dataset: PressureDataset) -> tuple[PressureDataset, PreprocessRecord]:
    """
    Divide each frequency row by its peak magnitude and rotate it so the
    peak sensor reads exactly 1 + 0j.

    Raises:
        DomainError: If any frequency row is all zeros
    """
    magnitude = np.abs(dataset.pressure)
    scale = magnitude.max(axis=1)
    if np.any(scale == 0):
        bad = int(np.argmax(scale == 0))
        raise DomainError(f"All sensors read zero at {dataset.frequencies[bad]:.2f} Hz")
    reference = magnitude.argmax(axis=1)
    rows = np.arange(len(scale))
    phase = np.angle(dataset.pressure[rows, reference])

    record = PreprocessRecord(scale=scale, reference_sensor=reference, phase_shift=phase)
    normalized = record.apply(dataset.pressure)
    normalized[rows, reference] = 1.0 + 0.0j
    return dataclasses.replace(dataset, pressure=normalized), record


def _check_layer_pairing(dataset: PressureDataset, geometry: ArrayGeometry) -> int:
    n = geometry.sensors_per_layer
    sensors = dataset.sensors
    if len(sensors) != 2 * n:
        raise DomainError(f"Expected {2 * n} sensors in two layers, found {len(sensors)}")
    _, _, up = geometry.frame()
    if not np.allclose(sensors[n:] - sensors[:n], geometry.d2 * up, atol=1e-9):
        raise DomainError("Sensor i of the lower layer is not paired with sensor i + n above it")
    return n


def budget_for_index(
    index: float,
    thresholds: Sequence[float] = (1.0, 5.0, 20.0),
    budgets: Sequence[int] = EPOCH_BUDGETS,
) -> int:
    """Larger complexity index -> larger budget."""
    if len(budgets) != len(thresholds) + 1:
        raise DomainError("Need exactly one more budget than thresholds")
    return int(budgets[bisect.bisect_right(list(thresholds), index)])


def complexity_index(
    dataset: PressureDataset,
    geometry: Optional[ArrayGeometry] = None,
    thresholds: Sequence[float] = (1.0, 5.0, 20.0),
    budgets: Sequence[int] = EPOCH_BUDGETS,
) -> tuple[float, int]:
    """
    I = 1e4 * mean_f |mean_x(p_upper - p_lower)| / (k*d2*mean_x|p|)

    Raises:
        DomainError: If the sensors are not two paired layers
    """
    geometry = geometry or dataset.geometry
    n = _check_layer_pairing(dataset, geometry)
    pressure = dataset.pressure
    difference = np.abs(np.mean(pressure[:, n:] - pressure[:, :n], axis=1))
    mean_magnitude = np.mean(np.abs(pressure), axis=1)
    if np.any(mean_magnitude == 0):
        raise DomainError("Complexity index is undefined for an all-zero frequency row")
    per_frequency = difference / (dataset.wavenumbers * geometry.d2 * mean_magnitude)
    index = float(np.mean(per_frequency) * COMPLEXITY_SCALE)
    return index, budget_for_index(index, thresholds, budgets)


@dataclass
class InferenceResult:
    """Everything one training run produces."""

    spectrum: ImpedanceSpectrum
    alpha_oblique: np.ndarray
    theta_inc_deg: float
    alpha_random: np.ndarray
    final_losses: dict[str, Any]
    lambda_trajectory: list[dict[str, float]]
    convergence: list[dict[str, Any]]
    wall_clock_s: float
    seed: int
    epochs: int
    complexity_index: float
    preprocess: PreprocessRecord
    bank: ModMLPBank
    config: RunConfig
    trace_id: Optional[str] = field(default=None, compare=False)

    @property
    def frequencies(self) -> np.ndarray:
        return self.spectrum.frequencies

    @property
    def zeta(self) -> np.ndarray:
        return self.spectrum.zeta


def configure_torch(settings: Settings, execution: ExecutionSection) -> None:
    """Process-wide torch knobs; call once before training."""
    if settings.torch_threads:
        torch.set_num_threads(settings.torch_threads)
    if execution.deterministic:
        torch.use_deterministic_algorithms(True)


def torch_dtype(execution: ExecutionSection) -> torch.dtype:
    return torch.float64 if execution.dtype == "float64" else torch.float32


def build_optimizer(bank: ModMLPBank, section: OptimizerSection) -> torch.optim.Optimizer:
    """SOAP with one preconditioner per frequency channel, or plain Adam."""
    if section.kind == "adam":
        return torch.optim.Adam(
            bank.parameters(), lr=section.peak_lr, betas=(section.beta1, section.beta2), eps=section.eps
        )
    return SOAP(
        bank.parameters(),
        lr=section.peak_lr,
        betas=(section.beta1, section.beta2),
        shampoo_beta=section.shampoo_beta,
        eps=section.eps,
        precondition_frequency=section.precondition_frequency,
        batch_dims=1,
    )


def measure_gradient_norms(
    bank: ModMLPBank, breakdown: LossBreakdown, with_smoothness: bool
) -> GradientNorms:
    """
    Per-channel parameter-gradient norms of each un-weighted term.

    The smoothness term couples every channel, so its norm is global.
    """
    norms = {}
    for name in PER_FREQUENCY_TERMS:
        term = breakdown.term(name).sum()
        grads = parameter_gradients(lambda: term, bank, retain_graph=True)
        norms[name] = bank.frequency_slice_norms(list(grads.values())).cpu().double().numpy()

    smooth = None
    if with_smoothness:
        grads = parameter_gradients(lambda: breakdown.smooth, bank, retain_graph=True)
        smooth = float(torch.sqrt(sum(g.double().pow(2).sum() for g in grads.values())))
    return GradientNorms(smooth=smooth, **norms)


class _Problem:
    """Tensors shared by every epoch of one run."""

    def __init__(
        self,
        normalized: PressureDataset,
        domain: SamplingDomain,
        config: RunConfig,
        dtype: torch.dtype,
    ):
        self.frequencies = normalized.frequencies
        self.points = torch.as_tensor(
            np.concatenate([domain.s_s, domain.s_v, domain.s_b], axis=0), dtype=dtype
        )
        complex_dtype = torch.complex128 if dtype == torch.float64 else torch.complex64
        self.measured = torch.as_tensor(normalized.pressure, dtype=complex_dtype)
        self.k = torch.as_tensor(normalized.wavenumbers, dtype=dtype)
        self.normals = torch.as_tensor(domain.normals, dtype=dtype)
        self.n_sensors = len(domain.s_s)
        self.n_volume = len(domain.s_v)
        self.loss_config = LossConfig(
            huber_delta=config.loss.huber_delta, degenerate_floor=config.domain.degenerate_floor
        )
        self.with_smoothness = config.loss.smoothness

    def breakdown(self, bank: ModMLPBank, epoch: Optional[int]) -> LossBreakdown:
        evaluation = bank.evaluate_with_spatial_derivatives(self.points)
        try:
            return compute_breakdown(
                evaluation,
                self.measured,
                self.k,
                self.normals,
                self.n_sensors,
                self.n_volume,
                self.loss_config,
                with_smoothness=self.with_smoothness,
            )
        except DegenerateBoundaryError as e:
            raise TrainingAbortedError(
                "Boundary normal derivative vanishes at almost every S_b point",
                epoch=epoch,
                frequency_hz=float(self.frequencies[e.frequency_index]),
            ) from e

    def first_bad_frequency(self, per_frequency: np.ndarray) -> Optional[float]:
        bad = np.nonzero(~np.isfinite(per_frequency))[0]
        return float(self.frequencies[bad[0]]) if bad.size else None


def _check_finite(problem: _Problem, breakdown: LossBreakdown, epoch: int) -> None:
    per_frequency = sum(breakdown.term(name).detach() for name in PER_FREQUENCY_TERMS)
    if torch.all(torch.isfinite(per_frequency)) and torch.isfinite(breakdown.smooth):
        return
    raise TrainingAbortedError(
        "Non-finite loss",
        epoch=epoch,
        frequency_hz=problem.first_bad_frequency(per_frequency.cpu().double().numpy()),
    )


def _check_finite_gradients(problem: _Problem, bank: ModMLPBank, epoch: int) -> None:
    norms = bank.frequency_slice_norms([p.grad for p in bank.parameters()])
    norms = norms.cpu().double().numpy()
    if not np.all(np.isfinite(norms)):
        raise TrainingAbortedError(
            "Non-finite parameter gradient",
            epoch=epoch,
            frequency_hz=problem.first_bad_frequency(norms),
        )


def _checkpoint_entry(
    epoch: int,
    elapsed: float,
    lr: float,
    breakdown: LossBreakdown,
    total: float,
    weights: AdaptiveWeightState,
    reference: Optional[np.ndarray],
) -> dict[str, Any]:
    losses = breakdown.detached()
    record: dict[str, Any] = {"epoch": epoch, "elapsed_s": elapsed, "lr": lr, "total": total}
    for name in PER_FREQUENCY_TERMS:
        record[name] = float(np.mean(losses[name]))
    record["smooth"] = losses["smooth"]
    record.update(weights.summary())
    zeta_bar = losses["zeta_bar"]
    if reference is not None and np.all(np.isfinite(zeta_bar)):
        record["mae_alpha"] = mae_alpha(absorption_at_angle(zeta_bar), absorption_at_angle(reference))
        record["normalized_mae_zeta"] = normalized_mae_zeta(zeta_bar, reference)
    record["zeta_bar"] = zeta_bar
    return record


def _random_incidence(zeta: np.ndarray) -> np.ndarray:
    """Paris absorption where Re(zeta) > 0, NaN elsewhere."""
    alpha = np.full(zeta.shape, np.nan)
    passive = zeta.real > 0
    if np.any(passive):
        alpha[passive] = paris_random_absorption(zeta[passive])
    return alpha


def train(
    dataset: PressureDataset,
    domain: SamplingDomain,
    config: RunConfig,
    reference: Optional[np.ndarray] = None,
) -> InferenceResult:
    """
    Infer the impedance spectrum of one dataset.

    Args:
        dataset: Raw (un-normalized) sensor pressures
        domain: Point sets; domain.s_s must coincide with dataset.sensors
        config: Run configuration
        reference: Optional true impedance per frequency, used to score
            convergence checkpoints

    Raises:
        DomainError: On mismatched sensors or too few frequencies for the
            smoothness term
        TrainingAbortedError: On a non-finite loss or a fully degenerate boundary
    """
    n_frequencies = len(dataset.frequencies)
    if dataset.sensors.shape != domain.s_s.shape or not np.allclose(dataset.sensors, domain.s_s, atol=1e-12):
        raise DomainError("Dataset sensors do not coincide with the sampling domain's S_s")
    if config.loss.smoothness and n_frequencies < 3:
        raise DomainError("The smoothness term needs at least 3 frequencies; disable it or add bins")
    if reference is not None and len(reference) != n_frequencies:
        raise DomainError("Reference impedance must have one value per frequency")

    dtype = torch_dtype(config.execution)
    normalized, record = preprocess_dataset(dataset)
    index, adaptive_budget = complexity_index(
        dataset, dataset.geometry, config.budget.thresholds, config.budget.budgets
    )
    epochs = adaptive_budget if config.budget.mode == "adaptive" else config.budget.epochs
    schedule = TrainSchedule(
        total_epochs=epochs,
        peak_lr=config.optimizer.peak_lr,
        warmup_fraction=config.optimizer.warmup_fraction,
        floor_fraction=config.optimizer.floor_fraction,
        complexity_index=index,
    )
    logger.info(
        f"Complexity index I={index:.3f}; training {n_frequencies} channels for "
        f"{epochs} epochs ({config.budget.mode} budget, {config.optimizer.kind})"
    )

    lower, upper = domain.box
    arch = NetworkArch(
        box_lower=tuple(float(v) for v in lower),
        box_upper=tuple(float(v) for v in upper),
        hidden_width=config.network.hidden_width,
        hidden_layers=config.network.hidden_layers,
        omega0=config.network.omega0,
        hidden_omega0=config.network.hidden_omega0,
    )
    bank = init_network(arch, n_frequencies, seed=config.seeds.network, dtype=dtype)
    problem = _Problem(normalized, domain, config, dtype)
    optimizer = build_optimizer(bank, config.optimizer)
    weights = AdaptiveWeightState.initial(
        n_frequencies,
        alpha_data=config.loss.alpha_data,
        alpha_pde=config.loss.alpha_pde,
        alpha_var=config.loss.alpha_var,
        alpha_smooth=config.loss.alpha_smooth or smooth_alpha(epochs),
        update_period=config.loss.update_period,
        floor=config.loss.gradient_floor,
        max_weight=config.loss.max_weight,
    )

    trajectory: list[dict[str, float]] = []
    convergence: list[dict[str, Any]] = []
    checkpoint_period = config.evaluation.checkpoint_period
    started = time.perf_counter()

    with trace_stage(
        "train", frequencies=n_frequencies, epochs=epochs, complexity_index=index
    ) as span:
        for epoch in range(epochs):
            breakdown = problem.breakdown(bank, epoch)
            _check_finite(problem, breakdown, epoch)

            if weights.is_update_epoch(epoch):
                with trace_stage("weights", epoch=epoch):
                    norms = measure_gradient_norms(bank, breakdown, problem.with_smoothness)
                    weights = update_adaptive_weights(weights, norms)
                trajectory.append({"epoch": epoch, **weights.summary()})
                logger.info(f"Epoch {epoch}: adaptive weights {weights.summary()}")

            total = total_loss(breakdown, weights)

            lr = lr_at_epoch(schedule, epoch)
            set_learning_rate(optimizer, lr)
            optimizer.zero_grad(set_to_none=True)
            total.backward()
            _check_finite_gradients(problem, bank, epoch)

            if epoch % checkpoint_period == 0:
                convergence.append(
                    _checkpoint_entry(epoch, time.perf_counter() - started, lr, breakdown, float(total.detach()), weights, reference)
                )
                degenerate = int(breakdown.degenerate_count.sum())
                if degenerate:
                    logger.warning(f"Epoch {epoch}: {degenerate} degenerate boundary points excluded")
                logger.info(f"Epoch {epoch}/{epochs}: total loss {float(total.detach()):.4e}, lr {lr:.2e}")

            optimizer.step()

        with torch.no_grad():
            final = problem.breakdown(bank, epochs)
            final_total = float(total_loss(final, weights))
        wall_clock = time.perf_counter() - started
        convergence.append(_checkpoint_entry(epochs, wall_clock, 0.0, final, final_total, weights, reference))
        span.set_attribute("impedans.wall_clock_s", wall_clock)
        trace_id = get_current_trace_id()

    losses = final.detached()
    zeta_bar = losses["zeta_bar"]
    if not np.all(np.isfinite(zeta_bar)):
        raise TrainingAbortedError(
            "Final boundary impedance is not finite",
            epoch=epochs,
            frequency_hz=problem.first_bad_frequency(zeta_bar),
        )
    theta = np.deg2rad(config.evaluation.theta_inc_deg)
    logger.info(f"Training finished in {wall_clock:.1f} s")
    return InferenceResult(
        spectrum=ImpedanceSpectrum.from_impedance(dataset.frequencies, zeta_bar),
        alpha_oblique=absorption_at_angle(zeta_bar, theta),
        theta_inc_deg=config.evaluation.theta_inc_deg,
        alpha_random=_random_incidence(zeta_bar),
        final_losses=losses,
        lambda_trajectory=trajectory,
        convergence=convergence,
        wall_clock_s=wall_clock,
        seed=config.seeds.network,
        epochs=epochs,
        complexity_index=index,
        preprocess=record,
        bank=bank,
        config=config,
        trace_id=trace_id,
    )


def predict_pressure(bank: ModMLPBank, record: PreprocessRecord, points: np.ndarray) -> np.ndarray:
    """Pressures [F, P] in the dataset's original units at arbitrary points."""
    dtype = bank.box_mid.dtype
    with torch.no_grad():
        values = bank.evaluate(torch.as_tensor(np.asarray(points, dtype=float), dtype=dtype))
    return record.invert(values.cpu().to(torch.complex128).numpy())
