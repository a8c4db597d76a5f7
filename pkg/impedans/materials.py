"""
Closed-form impedance, reflection and absorption for locally reacting surfaces.

Time convention is e^{+jwt} throughout. Under it the boundary relation
j*zeta*dp/dn = k*p (n pointing out of the sound field) and the hard-backed
layer formula zeta = -j*Zc*cot(kc*d) are consistent, and lossy media have
Im(Zc) < 0 and Im(kc) < 0.

All functions accept scalars or numpy arrays and broadcast.
"""

import logging
from dataclasses import dataclass
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from impedans.errors import DomainError, PoleError, SingularityError

logger = logging.getLogger(__name__)

RHO0 = 1.2  # kg/m^3
C0 = 343.2  # m/s

# Miki (1990) coefficients with X = 1e3 * f / sigma
_MIKI_Z_RE = 5.50
_MIKI_Z_IM = 8.43
_MIKI_Z_EXP = -0.632
_MIKI_K_RE = 7.81
_MIKI_K_IM = 11.41
_MIKI_K_EXP = -0.618


class AcousticMedium(BaseModel):
    """Fluid the sound field lives in."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    rho0: float = Field(RHO0, gt=0, description="Mass density (kg/m^3)")
    c0: float = Field(C0, gt=0, description="Speed of sound (m/s)")

    def wavenumber(self, frequencies) -> np.ndarray:
        """k = 2*pi*f/c0 (rad/m)."""
        return 2.0 * np.pi * np.asarray(frequencies, dtype=float) / self.c0


AIR = AcousticMedium()


class ConstantImpedance(BaseModel):
    """Frequency independent normalized impedance."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["constant"] = "constant"
    zeta_re: float = Field(..., ge=0)
    zeta_im: float = 0.0

    @property
    def zeta(self) -> complex:
        return complex(self.zeta_re, self.zeta_im)

    def impedance(self, frequencies, medium: AcousticMedium = AIR) -> np.ndarray:
        frequencies = np.asarray(frequencies, dtype=float)
        return np.full(frequencies.shape, self.zeta, dtype=complex)


class MikiPorousLayer(BaseModel):
    """Hard-backed porous layer described by the Miki model."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["miki"] = "miki"
    sigma: float = Field(..., gt=0, description="Flow resistivity (Pa*s/m^2)")
    thickness: float = Field(..., gt=0, description="Layer thickness (m)")

    def impedance(self, frequencies, medium: AcousticMedium = AIR) -> np.ndarray:
        return porous_surface_impedance(frequencies, self.sigma, self.thickness, medium)


MaterialSpec = Annotated[
    Union[ConstantImpedance, MikiPorousLayer], Field(discriminator="kind")
]


def miki_bulk(f, sigma, medium: AcousticMedium = AIR):
    """
    Normalized characteristic impedance and complex wavenumber of a porous medium.

    Args:
        f: Frequency in Hz
        sigma: Flow resistivity in Pa*s/m^2
        medium: Surrounding fluid

    Returns:
        (Zc, kc): Zc normalized by rho0*c0, kc in rad/m

    Raises:
        DomainError: If f or sigma is not strictly positive
    """
    f = np.asarray(f, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(f <= 0) or np.any(sigma <= 0):
        raise DomainError("Miki model needs f > 0 and sigma > 0")

    ratio = f / sigma
    if np.any((ratio <= 0.01) | (ratio >= 1.0)):
        logger.warning(
            f"f/sigma spans [{ratio.min():.4g}, {ratio.max():.4g}], outside the Miki fit range (0.01, 1)"
        )

    x = 1e3 * ratio
    zc = 1.0 + _MIKI_Z_RE * x**_MIKI_Z_EXP - 1j * _MIKI_Z_IM * x**_MIKI_Z_EXP
    kc = (2.0 * np.pi * f / medium.c0) * (
        1.0 + _MIKI_K_RE * x**_MIKI_K_EXP - 1j * _MIKI_K_IM * x**_MIKI_K_EXP
    )
    return zc, kc


def porous_surface_impedance(f, sigma, d, medium: AcousticMedium = AIR):
    """
    Normalized surface impedance of a rigidly backed Miki layer.

    zeta = -j*Zc*cot(kc*d), evaluated as Zc*(1 + q)/(1 - q) with
    q = exp(-2j*kc*d) so thick, lossy layers do not overflow.

    Raises:
        DomainError: If d is not strictly positive
        SingularityError: If kc*d sits on a real zero of sin
    """
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise DomainError("Layer thickness must be > 0")
    zc, kc = miki_bulk(f, sigma, medium)
    q = np.exp(-2j * kc * d)
    denominator = 1.0 - q
    if np.any(denominator == 0):
        raise SingularityError("cot(kc*d) is singular for this layer")
    return zc * (1.0 + q) / denominator


def _cos_incidence(theta_inc) -> np.ndarray:
    theta = np.asarray(theta_inc, dtype=float)
    if np.any(theta < 0) or np.any(theta >= np.pi / 2):
        raise DomainError("Incidence angle must lie in [0, pi/2)")
    return np.cos(theta)


def reflection_from_impedance(zeta, theta_inc=0.0):
    """R = (zeta*cos(theta) - 1) / (zeta*cos(theta) + 1)."""
    zc = np.asarray(zeta, dtype=complex) * _cos_incidence(theta_inc)
    denominator = zc + 1.0
    if np.any(denominator == 0):
        raise PoleError("zeta*cos(theta) = -1 has no reflection coefficient")
    return (zc - 1.0) / denominator


def impedance_from_reflection(reflection, theta_inc=0.0):
    """Inverse of reflection_from_impedance."""
    reflection = np.asarray(reflection, dtype=complex)
    cos_theta = _cos_incidence(theta_inc)
    denominator = (1.0 - reflection) * cos_theta
    if np.any(denominator == 0):
        raise PoleError("R = 1 corresponds to an infinite impedance")
    return (1.0 + reflection) / denominator


def absorption_at_angle(zeta, theta_inc=0.0):
    """alpha = 1 - |R|^2 at the given incidence angle."""
    return 1.0 - np.abs(reflection_from_impedance(zeta, theta_inc)) ** 2


def paris_random_absorption(zeta):
    """
    Random-incidence absorption of a locally reacting surface (Paris formula).

    The arctan(x/(r+1))/x factor is replaced by its limit 1/(r+1) at x = 0.

    Raises:
        DomainError: If Re(zeta) <= 0
    """
    zeta = np.asarray(zeta, dtype=complex)
    r = zeta.real
    x = zeta.imag
    if np.any(r <= 0):
        raise DomainError("Paris formula needs Re(zeta) > 0")

    m2 = r**2 + x**2
    safe_x = np.where(x == 0, 1.0, x)
    atan_over_x = np.where(x == 0, 1.0 / (r + 1.0), np.arctan(x / (r + 1.0)) / safe_x)
    bracket = (
        1.0
        - r / m2 * np.log((r + 1.0) ** 2 + x**2)
        + (r**2 - x**2) / m2 * atan_over_x
    )
    return 8.0 * r / m2 * bracket


@dataclass(frozen=True)
class ImpedanceSpectrum:
    """Per-frequency impedance with its absorption."""

    frequencies: np.ndarray
    zeta: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        if not (len(self.frequencies) == len(self.zeta) == len(self.alpha)):
            raise DomainError("Spectrum lists must have equal length")

    @classmethod
    def from_impedance(cls, frequencies, zeta, theta_inc: float = 0.0) -> "ImpedanceSpectrum":
        zeta = np.asarray(zeta, dtype=complex)
        return cls(
            frequencies=np.asarray(frequencies, dtype=float),
            zeta=zeta,
            alpha=absorption_at_angle(zeta, theta_inc),
        )

    @property
    def reflection(self) -> np.ndarray:
        return reflection_from_impedance(self.zeta)
