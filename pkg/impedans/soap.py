r"""
SOAP: Adam in the eigenbasis of Shampoo's Kronecker-factored preconditioner.

For a matrix parameter W (m x n) with gradient G:
    L <- b*L + (1 - b)*G G^T,   R <- b*R + (1 - b)*G^T G
    every `precondition_frequency` steps: Q_L, Q_R = eigenvectors(L), eigenvectors(R)
    G' = Q_L^T G Q_R; Adam moments on G'; update = Q_L (m'/(sqrt(v') + eps)) Q_R^T

Parameters may carry `batch_dims` leading dimensions (set per param group);
each batch slice gets its own preconditioner, so per-frequency channels stay
independent. Parameters with fewer than two non-batch dimensions take plain
Adam steps.
"""

import logging
from typing import Iterable

import torch

logger = logging.getLogger(__name__)


def _identity_like(size: int, batch_shape: torch.Size, like: torch.Tensor) -> torch.Tensor:
    eye = torch.eye(size, dtype=like.dtype, device=like.device)
    return eye.expand(*batch_shape, size, size).clone()


class SOAP(torch.optim.Optimizer):
    def __init__(
        self,
        params: Iterable,
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.95, 0.95),
        shampoo_beta: float = 0.95,
        eps: float = 1e-8,
        precondition_frequency: int = 2,
        batch_dims: int = 0,
    ):
        if lr < 0.0:
            raise ValueError(f"Invalid learning rate: {lr}")
        if precondition_frequency < 1:
            raise ValueError(f"Invalid precondition frequency: {precondition_frequency}")
        defaults = {
            "lr": lr,
            "betas": betas,
            "shampoo_beta": shampoo_beta,
            "eps": eps,
            "precondition_frequency": precondition_frequency,
            "batch_dims": batch_dims,
        }
        super().__init__(params, defaults)

    @staticmethod
    def _is_matrix(p: torch.Tensor, batch_dims: int) -> bool:
        return p.ndim - batch_dims >= 2

    def _init_state(self, p: torch.Tensor, state: dict, batch_dims: int) -> None:
        state["step"] = 0
        state["exp_avg"] = torch.zeros_like(p)
        state["exp_avg_sq"] = torch.zeros_like(p)
        if self._is_matrix(p, batch_dims):
            batch_shape = p.shape[:-2]
            m, n = p.shape[-2], p.shape[-1]
            state["GG_left"] = torch.zeros(*batch_shape, m, m, dtype=p.dtype, device=p.device)
            state["GG_right"] = torch.zeros(*batch_shape, n, n, dtype=p.dtype, device=p.device)
            state["Q_left"] = _identity_like(m, batch_shape, p)
            state["Q_right"] = _identity_like(n, batch_shape, p)

    @staticmethod
    def _project(x: torch.Tensor, state: dict) -> torch.Tensor:
        return state["Q_left"].mT @ x @ state["Q_right"]

    @staticmethod
    def _project_back(x: torch.Tensor, state: dict) -> torch.Tensor:
        return state["Q_left"] @ x @ state["Q_right"].mT

    def _refresh_eigenbasis(self, p: torch.Tensor, state: dict) -> None:
        """Recompute Q_L, Q_R and carry the first moment into the new basis."""
        exp_avg = self._project_back(state["exp_avg"], state)
        try:
            _, q_left = torch.linalg.eigh(state["GG_left"])
            _, q_right = torch.linalg.eigh(state["GG_right"])
        except RuntimeError as e:
            logger.warning(
                f"Eigendecomposition failed for parameter of shape {tuple(p.shape)}: {e}; "
                "falling back to unrotated Adam step"
            )
            batch_shape = p.shape[:-2]
            q_left = _identity_like(p.shape[-2], batch_shape, p)
            q_right = _identity_like(p.shape[-1], batch_shape, p)
        state["Q_left"], state["Q_right"] = q_left, q_right
        state["exp_avg"] = self._project(exp_avg, state)

    @torch.no_grad()
    def step(self, closure=None):
        """Performs a single optimization step."""
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()

        for group in self.param_groups:
            beta1, beta2 = group["betas"]
            shampoo_beta = group["shampoo_beta"]
            batch_dims = group["batch_dims"]

            for p in group["params"]:
                if p.grad is None:
                    continue
                grad = p.grad
                state = self.state[p]
                if not state:
                    self._init_state(p, state, batch_dims)
                state["step"] += 1
                step = state["step"]
                is_matrix = "Q_left" in state

                rotated = self._project(grad, state) if is_matrix else grad
                state["exp_avg"].lerp_(rotated, 1 - beta1)
                state["exp_avg_sq"].mul_(beta2).addcmul_(rotated, rotated, value=1 - beta2)

                m_hat = state["exp_avg"] / (1 - beta1**step)
                v_hat = state["exp_avg_sq"] / (1 - beta2**step)
                update = m_hat / (v_hat.sqrt() + group["eps"])
                if is_matrix:
                    update = self._project_back(update, state)
                p.add_(update, alpha=-group["lr"])

                if is_matrix:
                    state["GG_left"].lerp_(grad @ grad.mT, 1 - shampoo_beta)
                    state["GG_right"].lerp_(grad.mT @ grad, 1 - shampoo_beta)
                    if step % group["precondition_frequency"] == 0:
                        self._refresh_eigenbasis(p, state)

        return loss
