import math
from dataclasses import dataclass
from typing import Optional

import torch

from impedans.errors import DomainError

EPOCH_BUDGETS = (1000, 2500, 5000, 10000)


@dataclass(frozen=True)
class TrainSchedule:
    """Warmup-cosine learning rate schedule over a fixed epoch budget."""

    total_epochs: int
    peak_lr: float = 1e-3
    warmup_fraction: float = 0.05
    floor_fraction: float = 0.01
    complexity_index: Optional[float] = None

    def __post_init__(self):
        if self.total_epochs < 0:
            raise DomainError("total_epochs must be >= 0")
        if not 0 < self.warmup_fraction < 1:
            raise DomainError("warmup_fraction must lie in (0, 1)")

    @property
    def warmup_epochs(self) -> int:
        # Leave at least one decay epoch after the peak.
        return max(1, min(math.ceil(self.warmup_fraction * self.total_epochs), self.total_epochs - 2))


def lr_at_epoch(schedule: TrainSchedule, epoch: int) -> float:
    """
    Linear ramp from 0 to peak_lr over the warmup epochs, then cosine decay
    reaching floor_fraction*peak_lr at the last epoch.
    """
    total = schedule.total_epochs
    if not 0 <= epoch < total:
        raise DomainError(f"epoch {epoch} outside [0, {total})")
    peak = schedule.peak_lr
    if total < 3:
        return peak
    warmup = schedule.warmup_epochs
    if epoch < warmup:
        return peak * epoch / warmup
    floor = schedule.floor_fraction * peak
    progress = (epoch - warmup) / (total - 1 - warmup)
    return floor + (peak - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


def set_learning_rate(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr
