"""
Frequency-parallel SIREN-ModMLP bank.

One independent network per frequency bin, stored as batched parameters with
a leading frequency dimension so every channel is evaluated by the same
tensor contractions. Channel i maps a physical point x to (Re p_i, Im p_i).

Spatial derivatives come from a derivative-propagating forward pass that
carries (value, 3 first derivatives, 3 second derivatives along the physical
axes) through every layer with closed-form rules for affine maps, sine and
the gating combination. Parameter gradients of any loss built on that pass
come from torch autograd.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
import torch
from torch import nn

from impedans.errors import NumericError

logger = logging.getLogger(__name__)

INPUT_DIM = 3
OUTPUT_DIM = 2


@dataclass(frozen=True)
class NetworkArch:
    """Architecture shared by every frequency channel."""

    box_lower: tuple[float, float, float]
    box_upper: tuple[float, float, float]
    hidden_width: int = 64
    hidden_layers: int = 3
    omega0: float = 30.0
    hidden_omega0: float = 1.0

    def __post_init__(self):
        if self.hidden_width < 2 or self.hidden_layers < 1 or self.omega0 <= 0 or self.hidden_omega0 <= 0:
            raise ValueError("Invalid network architecture")
        if any(u <= l for l, u in zip(self.box_lower, self.box_upper)):
            raise ValueError("Normalization box is degenerate")

    @property
    def box_mid(self) -> np.ndarray:
        return (np.asarray(self.box_lower) + np.asarray(self.box_upper)) / 2

    @property
    def box_half(self) -> np.ndarray:
        return (np.asarray(self.box_upper) - np.asarray(self.box_lower)) / 2

    def to_dict(self) -> dict:
        return {
            "box_lower": list(self.box_lower),
            "box_upper": list(self.box_upper),
            "hidden_width": self.hidden_width,
            "hidden_layers": self.hidden_layers,
            "omega0": self.omega0,
            "hidden_omega0": self.hidden_omega0,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkArch":
        return cls(
            box_lower=tuple(data["box_lower"]),
            box_upper=tuple(data["box_upper"]),
            hidden_width=data["hidden_width"],
            hidden_layers=data["hidden_layers"],
            omega0=data["omega0"],
            hidden_omega0=data["hidden_omega0"],
        )


class FieldEvaluation(NamedTuple):
    """Complex pressure and its derivatives per physical meter, [frequency x point]."""

    value: torch.Tensor  # [F, P]
    gradient: torch.Tensor  # [F, P, 3]
    second_diag: torch.Tensor  # [F, P, 3]

    @property
    def laplacian(self) -> torch.Tensor:
        return self.second_diag.sum(dim=-1)

    def normal_derivative(self, normals: torch.Tensor) -> torch.Tensor:
        """n . grad p for per-point unit normals [P, 3]."""
        return (self.gradient * normals.to(self.gradient.real.dtype)).sum(dim=-1)

    def select(self, index: slice) -> "FieldEvaluation":
        return FieldEvaluation(
            self.value[:, index], self.gradient[:, index], self.second_diag[:, index]
        )


class _Jet(NamedTuple):
    """Value with first/second derivatives along each axis: [F,P,W], [F,P,3,W], [F,P,3,W]."""

    value: torch.Tensor
    d1: torch.Tensor
    d2: torch.Tensor


def _sine(jet: _Jet, omega: float) -> _Jet:
    s = torch.sin(omega * jet.value)
    c = torch.cos(omega * jet.value)
    s_, c_ = s.unsqueeze(-2), c.unsqueeze(-2)
    d1 = omega * c_ * jet.d1
    d2 = -(omega**2) * s_ * jet.d1**2 + omega * c_ * jet.d2
    return _Jet(s, d1, d2)


def _affine(jet: _Jet, weight: torch.Tensor, bias: torch.Tensor) -> _Jet:
    value = torch.einsum("fpw,fvw->fpv", jet.value, weight) + bias.unsqueeze(1)
    d1 = torch.einsum("fpaw,fvw->fpav", jet.d1, weight)
    d2 = torch.einsum("fpaw,fvw->fpav", jet.d2, weight)
    return _Jet(value, d1, d2)


def _gate(z: _Jet, u: _Jet, v: _Jet) -> _Jet:
    """h = (1 - z)*u + z*v = u + z*(v - u)."""
    diff = v.value - u.value
    diff_d1 = v.d1 - u.d1
    z_ = z.value.unsqueeze(-2)
    value = u.value + z.value * diff
    d1 = u.d1 + z.d1 * diff.unsqueeze(-2) + z_ * diff_d1
    d2 = u.d2 + z.d2 * diff.unsqueeze(-2) + 2.0 * z.d1 * diff_d1 + z_ * (v.d2 - u.d2)
    return _Jet(value, d1, d2)


class ModMLPBank(nn.Module):
    """
    Batched SIREN-ModMLP, one channel per frequency.

    Forward pass per channel, with x~ the box-normalized input:
        u = sin(w0*(Wu x~ + bu)), v = sin(w0*(Wv x~ + bv)), h = x~
        for each hidden layer: z = sin(w*(W h + b)); h = (1 - z)*u + z*v
        out = Wo h + bo  ->  (Re p, Im p)
    w is omega0 on the first hidden layer and hidden_omega0 after it.
    """

    def __init__(
        self,
        arch: NetworkArch,
        n_frequencies: int,
        seed: int = 0,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        self.arch = arch
        self.n_frequencies = n_frequencies
        generator = torch.Generator().manual_seed(seed)
        width = arch.hidden_width

        def uniform(shape, bound):
            tensor = torch.rand(shape, generator=generator, dtype=dtype)
            return nn.Parameter((2.0 * tensor - 1.0) * bound)

        first_bound = 1.0 / INPUT_DIM
        self.encoder_u_weight = uniform((n_frequencies, width, INPUT_DIM), first_bound)
        self.encoder_u_bias = uniform((n_frequencies, width), first_bound)
        self.encoder_v_weight = uniform((n_frequencies, width, INPUT_DIM), first_bound)
        self.encoder_v_bias = uniform((n_frequencies, width), first_bound)

        weights, biases = [], []
        for layer in range(arch.hidden_layers):
            if layer == 0:
                fan_in, bound = INPUT_DIM, first_bound
            else:
                fan_in = width
                bound = math.sqrt(6.0 / fan_in) / arch.hidden_omega0
            weights.append(uniform((n_frequencies, width, fan_in), bound))
            biases.append(uniform((n_frequencies, width), bound))
        self.hidden_weights = nn.ParameterList(weights)
        self.hidden_biases = nn.ParameterList(biases)

        self.output_weight = uniform((n_frequencies, OUTPUT_DIM, width), math.sqrt(6.0 / width))
        self.output_bias = nn.Parameter(torch.zeros((n_frequencies, OUTPUT_DIM), dtype=dtype))

        self.register_buffer("box_mid", torch.as_tensor(arch.box_mid, dtype=dtype))
        self.register_buffer("box_half", torch.as_tensor(arch.box_half, dtype=dtype))

    def _input_jet(self, points: torch.Tensor) -> _Jet:
        points = points.to(self.box_mid.dtype)
        n_points = points.shape[0]
        value = ((points - self.box_mid) / self.box_half).unsqueeze(0).expand(self.n_frequencies, -1, -1)
        d1 = torch.diag(1.0 / self.box_half).expand(self.n_frequencies, n_points, INPUT_DIM, INPUT_DIM)
        d2 = torch.zeros_like(d1)
        return _Jet(value, d1, d2)

    def _jet_forward(self, points: torch.Tensor) -> _Jet:
        arch = self.arch
        x = self._input_jet(points)
        u = _sine(_affine(x, self.encoder_u_weight, self.encoder_u_bias), arch.omega0)
        v = _sine(_affine(x, self.encoder_v_weight, self.encoder_v_bias), arch.omega0)
        h = x
        for layer, (weight, bias) in enumerate(zip(self.hidden_weights, self.hidden_biases)):
            omega = arch.omega0 if layer == 0 else arch.hidden_omega0
            z = _sine(_affine(h, weight, bias), omega)
            h = _gate(z, u, v)
        return _affine(h, self.output_weight, self.output_bias)

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        """Real output channels [F, P, 2]."""
        arch = self.arch
        x = ((points.to(self.box_mid.dtype) - self.box_mid) / self.box_half).unsqueeze(0)
        x = x.expand(self.n_frequencies, -1, -1)

        def affine(h, weight, bias):
            return torch.einsum("fpw,fvw->fpv", h, weight) + bias.unsqueeze(1)

        u = torch.sin(arch.omega0 * affine(x, self.encoder_u_weight, self.encoder_u_bias))
        v = torch.sin(arch.omega0 * affine(x, self.encoder_v_weight, self.encoder_v_bias))
        h = x
        for layer, (weight, bias) in enumerate(zip(self.hidden_weights, self.hidden_biases)):
            omega = arch.omega0 if layer == 0 else arch.hidden_omega0
            z = torch.sin(omega * affine(h, weight, bias))
            h = u + z * (v - u)
        return affine(h, self.output_weight, self.output_bias)

    def evaluate(self, points: torch.Tensor) -> torch.Tensor:
        """Complex pressure [F, P]."""
        out = self.forward(points)
        return torch.complex(out[..., 0], out[..., 1])

    def evaluate_with_spatial_derivatives(self, points: torch.Tensor) -> FieldEvaluation:
        """Complex pressure with exact gradient and second diagonal per physical meter."""
        jet = self._jet_forward(points)
        return FieldEvaluation(
            value=torch.complex(jet.value[..., 0], jet.value[..., 1]),
            gradient=torch.complex(jet.d1[..., 0], jet.d1[..., 1]),
            second_diag=torch.complex(jet.d2[..., 0], jet.d2[..., 1]),
        )

    def frequency_slice_norms(self, gradients: Sequence[Optional[torch.Tensor]]) -> torch.Tensor:
        """Per-channel l2 norm of a gradient structure congruent to parameters()."""
        total = torch.zeros(self.n_frequencies, dtype=self.box_mid.dtype)
        for grad in gradients:
            if grad is not None:
                total = total + grad.detach().reshape(self.n_frequencies, -1).pow(2).sum(dim=1)
        return total.sqrt()

    def to_named_arrays(self) -> list[dict]:
        """Flat list of named real arrays with shapes, for result bundles."""
        return [
            {
                "name": name,
                "shape": list(tensor.shape),
                "values": tensor.detach().cpu().double().reshape(-1).tolist(),
            }
            for name, tensor in self.named_parameters()
        ]

    @classmethod
    def from_named_arrays(
        cls, arch: NetworkArch, arrays: Sequence[dict], dtype: torch.dtype = torch.float64
    ) -> "ModMLPBank":
        by_name = {item["name"]: item for item in arrays}
        n_frequencies = by_name["output_bias"]["shape"][0]
        bank = cls(arch, n_frequencies, seed=0, dtype=dtype)
        with torch.no_grad():
            for name, parameter in bank.named_parameters():
                item = by_name[name]
                values = torch.tensor(item["values"], dtype=dtype).reshape(item["shape"])
                parameter.copy_(values)
        return bank


def init_network(
    arch: NetworkArch, n_frequencies: int, seed: int, dtype: torch.dtype = torch.float32
) -> ModMLPBank:
    """Deterministically initialized bank for n_frequencies channels."""
    bank = ModMLPBank(arch, n_frequencies, seed=seed, dtype=dtype)
    n_params = sum(p.numel() for p in bank.parameters())
    logger.info(
        f"Initialized {n_frequencies} SIREN-ModMLP channels "
        f"({arch.hidden_layers}x{arch.hidden_width}, {n_params} parameters, seed={seed})"
    )
    return bank


def parameter_gradients(
    loss_closure: Callable[[], torch.Tensor],
    bank: ModMLPBank,
    retain_graph: bool = False,
) -> dict[str, torch.Tensor]:
    """
    Exact gradient of a scalar loss with respect to every parameter.

    Raises:
        NumericError: If the loss or any gradient entry is non-finite
    """
    names, params = zip(*bank.named_parameters())
    loss = loss_closure()
    if not torch.isfinite(loss):
        raise NumericError("Loss is not finite", location="loss closure")
    if not loss.requires_grad:
        return {name: torch.zeros_like(p) for name, p in zip(names, params)}
    grads = torch.autograd.grad(loss, params, allow_unused=True, retain_graph=retain_graph)
    result = {}
    for name, param, grad in zip(names, params, grads):
        grad = torch.zeros_like(param) if grad is None else grad
        if not torch.all(torch.isfinite(grad)):
            raise NumericError("Non-finite parameter gradient", location=name)
        result[name] = grad
    return result
