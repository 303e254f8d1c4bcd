"""Diagonal linear part, its stable/unstable splitting and the gap condition."""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, DomainError

_BACKWARD_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DichotomySplit:
    """Eigenvalues of A in an orthonormal eigenbasis plus dichotomy constants.

    ``alpha`` bounds the unstable spectrum from below, ``beta`` the stable
    spectrum from above; ``bound_K`` is the dichotomy constant (1 for an
    orthonormal eigenbasis).
    """

    eigenvalues: np.ndarray = field(repr=False)
    stable: np.ndarray = field(repr=False)
    unstable: np.ndarray = field(repr=False)
    alpha: float
    beta: float
    bound_K: float = 1.0

    @classmethod
    def from_eigenvalues(cls, eigenvalues, alpha=None, beta=None, bound_K=1.0):
        lam = np.array(eigenvalues, dtype=float).ravel()
        lam.setflags(write=False)
        if lam.size == 0:
            raise ConfigurationError("need at least one eigenvalue")
        if np.any(lam == 0.0):
            raise ConfigurationError("zero eigenvalue: no exponential dichotomy")
        stable = np.flatnonzero(lam < 0)
        unstable = np.flatnonzero(lam > 0)
        if stable.size == 0 or unstable.size == 0:
            raise ConfigurationError("need both stable and unstable eigenvalues")
        alpha = float(lam[unstable].min()) if alpha is None else float(alpha)
        beta = float(lam[stable].max()) if beta is None else float(beta)
        split = cls(lam, stable, unstable, alpha, beta, float(bound_K))
        split.validate()
        return split

    def validate(self):
        lam = self.eigenvalues
        if not (self.alpha > 0 > self.beta):
            raise ConfigurationError(f"need alpha > 0 > beta, got {self.alpha}, {self.beta}")
        if self.bound_K < 1:
            raise ConfigurationError("bound_K must be >= 1")
        idx = np.concatenate([self.stable, self.unstable])
        if sorted(idx.tolist()) != list(range(lam.size)):
            raise ConfigurationError("stable/unstable sets must partition the indices")
        if np.any(lam[self.unstable] < self.alpha) or np.any(lam[self.stable] > self.beta):
            raise ConfigurationError("alpha/beta do not bound the spectrum")

    @property
    def dim(self):
        return self.eigenvalues.size

    @property
    def stable_mask(self):
        m = np.zeros(self.dim, dtype=bool)
        m[self.stable] = True
        return m

    @property
    def unstable_mask(self):
        return ~self.stable_mask


def _coords(split, v):
    v = np.asarray(v, dtype=float)
    if v.shape[-1:] != (split.dim,):
        raise ConfigurationError(f"expected trailing dimension {split.dim}, got shape {v.shape}")
    return v


def project_stable(split, v):
    """P^s v: unstable coordinates zeroed (works on stacked vectors)."""
    v = _coords(split, v)
    return np.where(split.stable_mask, v, 0.0)


def project_unstable(split, v):
    """P^u v = v - P^s v."""
    v = _coords(split, v)
    return np.where(split.unstable_mask, v, 0.0)


def semigroup_apply(split, t, v):
    """e^{At} v; for t < 0 only defined on the unstable range."""
    v = _coords(split, v)
    if t < 0:
        if np.any(np.abs(v[..., split.stable]) > _BACKWARD_TOL):
            raise DomainError("e^{At} for t < 0 is only defined on the unstable range")
        v = project_unstable(split, v)
    return np.exp(split.eigenvalues * t) * v


class GapReport(NamedTuple):
    satisfied: bool
    margin: float
    value: float


def gap_value(bound_K, lipschitz_LF, alpha, beta, eta):
    """K * L_F * (1/(eta - beta) + 1/(alpha - eta))."""
    if not (beta < eta < alpha):
        raise ConfigurationError(f"eta={eta} must lie strictly inside ({beta}, {alpha})")
    if lipschitz_LF < 0:
        raise ConfigurationError("Lipschitz constant must be non-negative")
    return bound_K * lipschitz_LF * (1.0 / (eta - beta) + 1.0 / (alpha - eta))


def check_gap_condition(split, lipschitz_LF, eta):
    value = gap_value(split.bound_K, lipschitz_LF, split.alpha, split.beta, eta)
    return GapReport(value < 1.0, 1.0 - value, value)


def default_eta(split):
    """Weight exponent maximizing the gap margin.

    1/(eta - beta) + 1/(alpha - eta) is symmetric about the midpoint and
    convex, so the midpoint is the exact maximizer for any K and L_F.
    """
    return 0.5 * (split.alpha + split.beta)
