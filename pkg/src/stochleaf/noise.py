"""Brownian paths and the Ornstein-Uhlenbeck functionals derived from them.

A path lives on a uniform two-sided grid ``t_min = -n_back*dt, ..., 0, ...,
n_fwd*dt = t_max`` with ``W(0) = 0``.  The stationary OU value

    Z(theta_t omega) = int_{-inf}^t exp(tau - t) dW(tau)

is computed on the same grid with left-endpoint (Ito) sums truncated at
``t_min``; the recursion ``Z[k+1] = exp(-dt) * (Z[k] + dW[k])`` is the
shift identity restricted to one grid cell.
"""

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels
from .errors import ConfigurationError, TruncationError

DEFAULT_T_MIN = -20.0
DEFAULT_TAIL_TOL = 1e-8

# grid points are accepted if they sit within this fraction of dt of a node
_GRID_SNAP = 1e-6


def _steps(span, dt, what):
    n = int(round(span / dt))
    if n <= 0 or abs(n * dt - span) > 1e-9 * max(1.0, abs(span)):
        raise ConfigurationError(f"{what}={span!r} is not an integer multiple of dt={dt!r}")
    return n


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """Discretized scalar Wiener path (one realization omega)."""

    seed: int
    t_min: float
    t_max: float
    dt: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        n_back = _steps(-self.t_min, self.dt, "t_min")
        n_fwd = _steps(self.t_max, self.dt, "t_max")
        if self.values.shape != (n_back + n_fwd + 1,):
            raise ConfigurationError("values do not match the grid")
        if self.values[n_back] != 0.0:
            raise ConfigurationError("W(0) must be exactly 0")

    @property
    def n_back(self):
        return int(round(-self.t_min / self.dt))

    @property
    def n_fwd(self):
        return int(round(self.t_max / self.dt))

    @property
    def origin(self):
        """Index of t = 0."""
        return self.n_back

    @cached_property
    def times(self):
        return _readonly(self.dt * np.arange(-self.n_back, self.n_fwd + 1))

    @cached_property
    def increments(self):
        return _readonly(np.diff(self.values))

    def index_of(self, t):
        k = (t - self.t_min) / self.dt
        kr = int(round(k))
        if abs(k - kr) > _GRID_SNAP or kr < 0 or kr >= self.values.size:
            raise ConfigurationError(f"t={t!r} is not a grid point of [{self.t_min}, {self.t_max}]")
        return kr

    def scaled(self, c):
        """The path c*W on the same grid (seed kept for bookkeeping)."""
        return BrownianPath(self.seed, self.t_min, self.t_max, self.dt, _readonly(c * self.values))

    @classmethod
    def zero(cls, t_min=DEFAULT_T_MIN, t_max=20.0, dt=1e-3):
        n = _steps(-t_min, dt, "t_min") + _steps(t_max, dt, "t_max") + 1
        return cls(-1, float(t_min), float(t_max), float(dt), _readonly(np.zeros(n)))


def generate_brownian_path(seed, t_min=DEFAULT_T_MIN, t_max=20.0, dt=1e-3):
    """Seeded two-sided Brownian path with W(0) = 0.

    Forward increments are drawn first, then the backward ones; both come from
    ``numpy.random.default_rng(seed)`` so a seed fixes the path bit for bit.
    """
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt!r}")
    if not (t_min < 0 < t_max):
        raise ConfigurationError(f"need t_min < 0 < t_max, got [{t_min}, {t_max}]")
    n_back = _steps(-t_min, dt, "t_min")
    n_fwd = _steps(t_max, dt, "t_max")
    rng = np.random.default_rng(seed)
    sd = np.sqrt(dt)
    fwd = rng.standard_normal(n_fwd) * sd
    back = rng.standard_normal(n_back) * sd
    values = np.empty(n_back + n_fwd + 1)
    values[n_back] = 0.0
    values[n_back + 1 :] = np.cumsum(fwd)
    values[:n_back] = np.cumsum(back)[::-1]
    return BrownianPath(int(seed), float(t_min), float(t_max), float(dt), _readonly(values))


@dataclass(frozen=True, eq=False)
class OUProcess:
    """Stationary OU values Z(theta_t omega) on the path grid."""

    path: BrownianPath = field(repr=False)
    z0: float
    values: np.ndarray = field(repr=False)

    @property
    def dt(self):
        return self.path.dt

    @property
    def times(self):
        return self.path.times

    def at(self, t):
        return float(self.values[self.path.index_of(t)])

    @cached_property
    def _cumulative(self):
        # trapezoidal running integral from t_min
        v = self.values
        c = np.concatenate(([0.0], np.cumsum(0.5 * self.dt * (v[1:] + v[:-1]))))
        return _readonly(c)

    def forward(self, horizon):
        """Grid samples on [0, horizon]: returns (times, Z, int_0^t Z)."""
        k0 = self.path.origin
        k1 = self.path.index_of(horizon)
        if k1 <= k0:
            raise ConfigurationError(f"horizon must be positive, got {horizon!r}")
        z = self.values[k0 : k1 + 1]
        cum = self._cumulative[k0 : k1 + 1] - self._cumulative[k0]
        return self.times[k0 : k1 + 1] - self.times[k0], z, cum


def ou_stationary(path, tail_tol=DEFAULT_TAIL_TOL):
    """Stationary OU process driven by ``path``.

    ``Z(omega)`` is the left-endpoint sum of ``e^tau dW`` over [t_min, 0];
    the neglected part has standard deviation ``exp(t_min)/sqrt(2)`` and is
    required to satisfy ``exp(t_min) <= tail_tol`` (skip with ``tail_tol=None``).
    """
    if tail_tol is not None and np.exp(path.t_min) > tail_tol:
        need = float(np.log(tail_tol))
        raise TruncationError(
            f"t_min={path.t_min} leaves a tail exp(t_min)={np.exp(path.t_min):.3g} > {tail_tol:g}; "
            f"use t_min <= {need:.3f}",
            required_t_min=need,
        )
    values = _kernels.ou_recursion(path.increments, np.exp(-path.dt))
    return OUProcess(path, float(values[path.origin]), _readonly(values))


def integral_z(ou, t0, t1):
    """Trapezoidal integral of Z(theta_tau omega) over [t0, t1] (unscaled by eps)."""
    lo, hi = ou.path.t_min, ou.path.t_max
    if not (lo <= t0 <= t1 <= hi):
        raise ConfigurationError(f"[{t0}, {t1}] not inside [{lo}, {hi}]")
    if t0 == t1:
        return 0.0
    c = np.interp([t0, t1], ou.times, ou._cumulative)
    return float(c[1] - c[0])


def ito_integral(path, integrand, t0, t1):
    """Left-endpoint Ito sum of a deterministic integrand over [t0, t1].

    ``integrand`` is called once with the array of left endpoints.
    """
    k0 = path.index_of(t0)
    k1 = path.index_of(t1)
    if k1 < k0:
        raise ConfigurationError(f"t1={t1} precedes t0={t0}")
    if k1 == k0:
        return 0.0
    left = path.times[k0:k1]
    f = np.broadcast_to(np.asarray(integrand(left), dtype=float), left.shape)
    if not np.all(np.isfinite(f)):
        raise ConfigurationError("integrand is not finite on the grid")
    return float(np.dot(f, path.increments[k0:k1]))


def write_path_csv(ou, filename):
    """Dump ``t,W,Z`` with 17 significant digits."""
    with open(filename, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "W", "Z"])
        for t, w, z in zip(ou.times, ou.path.values, ou.values):
            writer.writerow([f"{t:.17g}", f"{w:.17g}", f"{z:.17g}"])
