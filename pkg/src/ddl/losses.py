"""Classification cost functions and the derivative quantities used by DSC.

Every loss is a function of the signed margin ``z = l * (w^T x + b)``.  The
Newton-linearised sparse coder only needs the second derivative and the
ratio of first to second derivative; classifier training needs all three.

All functions accept scalars or arrays and are vectorised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

SQUARE = "square"
EXPONENTIAL = "exp"
LOGISTIC = "logistic"
SMOOTH_HINGE = "hinge"

KINDS = (SQUARE, EXPONENTIAL, LOGISTIC, SMOOTH_HINGE)

_ALIASES = {
    "square": SQUARE,
    "sq": SQUARE,
    "exp": EXPONENTIAL,
    "exponential": EXPONENTIAL,
    "logistic": LOGISTIC,
    "log": LOGISTIC,
    "hinge": SMOOTH_HINGE,
    "smooth_hinge": SMOOTH_HINGE,
    "smoothhinge": SMOOTH_HINGE,
}

# exp(709) is the largest finite double exponent.
_EXP_CLIP = 700.0


class DomainError(ValueError):
    """Raised when a loss is evaluated at a non-finite margin."""


@dataclass(frozen=True)
class LossKind:
    """A classification cost family.

    ``rho`` and ``eps`` only matter for the smooth hinge: ``rho`` is the half
    width of the transition band around ``z = 1`` and ``eps`` the curvature
    floor that keeps the surrogate strictly convex.
    """

    name: str
    rho: float = 0.05
    eps: float = 1e-4

    def __post_init__(self):
        name = _ALIASES.get(str(self.name).lower())
        if name is None:
            raise ValueError(f"unknown loss {self.name!r}; expected one of {KINDS}")
        object.__setattr__(self, "name", name)
        if name == SMOOTH_HINGE and not (self.rho > 0 and self.eps > 0):
            raise ValueError("smooth hinge needs rho > 0 and eps > 0")

    @property
    def is_quadratic(self) -> bool:
        return self.name == SQUARE

    def value(self, z):
        return loss_value(self, z)

    def d1(self, z):
        return loss_d1(self, z)

    def d2(self, z):
        return loss_d2(self, z)

    def ratio12(self, z):
        return loss_ratio12(self, z)

    def to_dict(self) -> dict:
        return {"name": self.name, "rho": float(self.rho), "eps": float(self.eps)}

    @classmethod
    def from_dict(cls, d: dict) -> "LossKind":
        return cls(d["name"], float(d.get("rho", 0.05)), float(d.get("eps", 1e-4)))


def as_loss(kind) -> LossKind:
    if isinstance(kind, LossKind):
        return kind
    return LossKind(kind)


def _margin(z):
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DomainError("loss evaluated at a non-finite margin")
    return z


def _out(z, v):
    return float(v) if np.ndim(z) == 0 else v


def _hinge_parts(z, rho):
    """Return the band mask and ``u = 1 - z`` for the smooth hinge."""
    u = 1.0 - z
    return u, np.abs(u) <= rho


def loss_value(kind, z):
    """Cost Omega(z) >= 0."""
    kind = as_loss(kind)
    z = _margin(z)
    if kind.name == SQUARE:
        v = (1.0 - z) ** 2
    elif kind.name == EXPONENTIAL:
        v = np.exp(np.minimum(-z, _EXP_CLIP))
    elif kind.name == LOGISTIC:
        v = np.logaddexp(0.0, -z)
    else:
        rho, eps = kind.rho, kind.eps
        u, band = _hinge_parts(z, rho)
        ub = np.where(band, u, 0.0)
        inner = 3.0 * ub**2 / (8.0 * rho) - ub**4 / (16.0 * rho**3) + ub / 2.0 + 3.0 * rho / 16.0
        v = eps * u**2 + np.where(band, inner, np.maximum(u, 0.0))
    return _out(z, v)


def loss_d1(kind, z):
    """First derivative dOmega/dz."""
    kind = as_loss(kind)
    z = _margin(z)
    if kind.name == SQUARE:
        v = 2.0 * (z - 1.0)
    elif kind.name == EXPONENTIAL:
        v = -np.exp(np.minimum(-z, _EXP_CLIP))
    elif kind.name == LOGISTIC:
        v = -expit(-z)
    else:
        rho, eps = kind.rho, kind.eps
        u, band = _hinge_parts(z, rho)
        ub = np.where(band, u, 0.0)
        inner = 0.5 + 3.0 * ub / (4.0 * rho) - ub**3 / (4.0 * rho**3)
        slope = np.where(band, inner, (u > rho).astype(float))
        v = -2.0 * eps * u - slope
    return _out(z, v)


def loss_d2(kind, z):
    """Second derivative; strictly positive for every family."""
    kind = as_loss(kind)
    z = _margin(z)
    if kind.name == SQUARE:
        v = np.full_like(z, 2.0)
    elif kind.name == EXPONENTIAL:
        v = np.exp(np.minimum(-z, _EXP_CLIP))
    elif kind.name == LOGISTIC:
        v = expit(z) * expit(-z)
    else:
        rho, eps = kind.rho, kind.eps
        u, band = _hinge_parts(z, rho)
        bump = 3.0 / (4.0 * rho) - 3.0 * u**2 / (4.0 * rho**3)
        v = 2.0 * eps + np.where(band, bump, 0.0)
    return _out(z, v)


def loss_ratio12(kind, z):
    """Ratio Omega_1 / Omega_2, computed in closed form where one exists."""
    kind = as_loss(kind)
    z = _margin(z)
    if kind.name == SQUARE:
        v = z - 1.0
    elif kind.name == EXPONENTIAL:
        v = np.full_like(z, -1.0)
    elif kind.name == LOGISTIC:
        # -(1 + e^{-z}), clipped like the exponential
        v = -(1.0 + np.exp(np.minimum(-z, _EXP_CLIP)))
    else:
        v = np.asarray(loss_d1(kind, z)) / np.asarray(loss_d2(kind, z))
    return _out(z, v)
