"""Direct (non-asymptotic) stable leaves of the random equation.

du/dt = A u + z(theta_t omega) u + G(theta_t omega, u),  z = eps Z,
G(omega, u) = e^{-z(omega)} F(e^{z(omega)} u).

A point phi0 + psi(0) lies on the stable leaf through phi0 iff the
difference psi stays in the weighted space with norm
sup_t e^{-eta t - int_0^t z} |psi(t)|.  :func:`lyapunov_perron_leaf` finds
that psi as a fixed point; :func:`verify_leaf_membership` checks a given
point by forward integration.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .dichotomy import default_eta
from .errors import BlowUpError, ConfigurationError
from .expansion import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    Propagator,
    TimeGrid,
    _as_fiber_batch,
    _gap_notice,
    noise_on_grid,
    weighted_sup,
)


@dataclass(frozen=True)
class FixedPointReport:
    iterations: int
    final_residual: float
    converged: bool
    leaf_point: np.ndarray
    residuals: tuple = ()

    def to_dict(self):
        d = asdict(self)
        d["leaf_point"] = [float(x) for x in self.leaf_point]
        d["residuals"] = [float(x) for x in self.residuals]
        return d


def solve_base_orbit(model, phi0, epsilon, ou, grid):
    """RK4 solution of the random equation from phi0 on ``grid``."""
    z, _ = noise_on_grid(ou, grid)
    phi0 = np.asarray(phi0, dtype=float).reshape(1, model.dimension)
    traj, bad = _kernels.rk4_rde(phi0, model.eigenvalues, model.kernel_args, epsilon, z, grid.dt, model.blowup_limit())
    if bad >= 0:
        raise BlowUpError(f"base orbit left the admissible region at t={bad * grid.dt:.6g}", bad * grid.dt)
    return traj[0]


def _G(model, u, z, epsilon):
    if epsilon == 0.0:
        return model.F(u)
    g = np.exp(epsilon * z)[:, None]
    return model.F(g * u) / g


def lyapunov_perron_batch(model, xi, phi0, epsilon, ou, eta=None, horizon=20.0, tol=DEFAULT_TOL, max_iterations=DEFAULT_MAX_ITER):
    """Fixed-point iteration for a stack of fiber coordinates.

    Returns (leaf values l^s (batch, N), psi (batch, n, N), residual history).
    Iteration starts from the homogeneous term e^{At + int z} (xi - P^s phi0).
    """
    split = model.split
    if epsilon < 0:
        raise ConfigurationError("epsilon must be non-negative")
    eta = default_eta(split) if eta is None else float(eta)
    _gap_notice(model, eta)
    grid = TimeGrid(ou.dt, horizon)
    z, integral = noise_on_grid(ou, grid)
    phi0 = np.asarray(phi0, dtype=float).reshape(model.dimension)
    xi = _as_fiber_batch(model, xi)
    phi = solve_base_orbit(model, phi0, epsilon, ou, grid)
    prop = Propagator(split, grid)
    growth = np.exp(epsilon * integral)[None, :, None]
    damp = np.exp(-epsilon * integral)[None, :, None]
    free = prop.free(xi - np.where(split.stable_mask, phi0, 0.0))
    G_phi = _G(model, phi, z, epsilon)
    times = grid.times
    weight = epsilon * integral

    psi = growth * free
    history = []
    for _ in range(max_iterations):
        delta = _G(model, psi + phi, z, epsilon) - G_phi
        new = growth * (free + prop.integrals(damp * delta))
        if not np.all(np.isfinite(new)):
            raise BlowUpError("Lyapunov-Perron iteration produced non-finite values")
        history.append(weighted_sup(new - psi, times, eta, weight))
        psi = new
        if history[-1] < tol:
            break
    leaf = np.where(split.unstable_mask, phi0 + psi[:, 0], 0.0)
    return leaf, psi, history


def lyapunov_perron_leaf(model, xi, phi0, epsilon, ou, eta=None, horizon=20.0, tol=DEFAULT_TOL, max_iterations=DEFAULT_MAX_ITER):
    """Stable-leaf value l^s(xi, phi0, omega) = P^u phi0 + P^u psi*(0)."""
    leaf, _, history = lyapunov_perron_batch(model, xi, phi0, epsilon, ou, eta, horizon, tol, max_iterations)
    return FixedPointReport(
        iterations=len(history),
        final_residual=history[-1],
        converged=history[-1] < tol,
        leaf_point=leaf[0],
        residuals=tuple(history),
    )


@dataclass(frozen=True)
class MembershipResult:
    weighted_sup: float
    decaying: bool
    times: np.ndarray
    weighted_norm: np.ndarray
    escaped: bool = False


# growth guard for models without cut-off (cut-off fields are globally Lipschitz)
_ESCAPE_RADIUS = 1e8


def verify_leaf_membership(model, tilde_phi0, phi0, epsilon, ou, eta=None, horizon=5.0):
    """Forward check that tilde_phi0 lies on the stable leaf through phi0.

    Both orbits of the random equation are integrated by RK4 and the
    weighted difference e^{-eta t - eps int_0^t Z} |psi(t)| is returned on the
    grid.  ``decaying`` means the weighted norm at the horizon is below its
    initial value (trivially true when the two points coincide).  Errors of
    size delta off the leaf grow like delta e^{(alpha - eta) t}, so the
    horizon sets the resolution of the test.  An orbit that escapes to
    infinity ends the curve early and counts as not decaying.
    """
    eta = default_eta(model.split) if eta is None else float(eta)
    grid = TimeGrid(ou.dt, horizon)
    z, integral = noise_on_grid(ou, grid)
    pair = np.stack([np.asarray(tilde_phi0, dtype=float), np.asarray(phi0, dtype=float)])
    limit = np.inf if model.cutoff_radius is not None else _ESCAPE_RADIUS
    traj, bad = _kernels.rk4_rde(pair, model.eigenvalues, model.kernel_args, epsilon, z, grid.dt, limit)
    times = grid.times
    if bad >= 0:
        traj, times, integral = traj[:, :bad], times[:bad], integral[:bad]
    psi = traj[0] - traj[1]
    wn = np.exp(-eta * times - epsilon * integral) * np.linalg.norm(psi, axis=-1)
    if bad >= 0:
        return MembershipResult(np.inf, False, times, wn, escaped=True)
    sup = float(np.max(wn))
    decaying = bool(wn[-1] < wn[0] or sup == 0.0)
    return MembershipResult(sup, decaying, times, wn)
