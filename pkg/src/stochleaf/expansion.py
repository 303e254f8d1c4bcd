"""First-order expansion of a random stable leaf in the noise intensity.

The leaf through ``phi0`` is the graph ``xi + l(xi)`` over the stable space.
Expanding in ``eps`` gives ``l = l_d + eps * l_1 + O(eps^2)``:

* ``l_d`` comes from the deterministic difference equation along the
  deterministic base orbit ``phi_d``;
* ``l_1`` comes from the first variation of the same problem, forced by the
  OU process ``Z(theta_t omega)`` and its running integral ``I(t)``.

Both are computed as fixed points of a Lyapunov-Perron operator on the whole
trajectory: stable modes are integrated forward from 0, unstable modes
backward from the horizon ``T`` (truncating the improper integral).  The
discrete operators are exactly the ones used by :mod:`stochleaf.leaf_solver`
at ``eps = 0`` and their derivative in ``eps``, so expansion and direct
solution differ only by the O(eps^2) remainder.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _kernels
from .dichotomy import check_gap_condition, default_eta
from .errors import BlowUpError, ConfigurationError, ConvergenceError

log = logging.getLogger(__name__)

DEFAULT_HORIZON = 20.0
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 200


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    horizon: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        n = int(round(self.horizon / self.dt))
        if n < 1 or abs(n * self.dt - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise ConfigurationError(f"horizon {self.horizon} is not a multiple of dt {self.dt}")

    @property
    def steps(self):
        return int(round(self.horizon / self.dt))

    @property
    def times(self):
        return self.dt * np.arange(self.steps + 1)


def noise_on_grid(ou, grid):
    """(Z, I) on ``grid`` where I(t) = int_0^t Z; grids must coincide."""
    if abs(ou.dt - grid.dt) > 1e-12 * grid.dt:
        raise ConfigurationError(f"noise grid dt={ou.dt} differs from solver dt={grid.dt}")
    if grid.horizon > ou.path.t_max + 1e-9 * grid.horizon:
        raise ConfigurationError(f"horizon {grid.horizon} exceeds path support {ou.path.t_max}")
    _, z, integral = ou.forward(grid.horizon)
    return np.asarray(z), np.asarray(integral)


# ---------------------------------------------------------------------------
# exponential quadrature of the variation-of-constants integrals
# ---------------------------------------------------------------------------


def _phi12(w):
    """phi_1(w) = (e^w - 1)/w and phi_2(w) = (e^w - 1 - w)/w^2."""
    w = np.asarray(w, dtype=float)
    small = np.abs(w) < 1e-2
    ws = np.where(small, 1.0, w)
    phi1 = np.where(small, 1.0, np.expm1(ws) / ws)
    phi2 = np.where(small, 0.5, (np.expm1(ws) - ws) / ws**2)
    series1 = 1 + w / 2 + w**2 / 6 + w**3 / 24 + w**4 / 120 + w**5 / 720
    series2 = 0.5 + w / 6 + w**2 / 24 + w**3 / 120 + w**4 / 720 + w**5 / 5040
    return np.where(small, series1, phi1), np.where(small, series2, phi2)


class Propagator:
    """Discrete Lyapunov-Perron integrals on a uniform grid.

    For a forcing ``g`` sampled on the grid (shape ``(batch, n, N)``),
    :meth:`integrals` returns

        int_0^t e^{A(t-s)} P^s g(s) ds  -  int_t^T e^{A(t-s)} P^u g(s) ds

    with ``g`` interpolated linearly between nodes and the exponential
    integrated exactly (stable for stiff modes).
    """

    def __init__(self, split, grid):
        self.split = split
        self.grid = grid
        h = grid.dt
        lam = split.eigenvalues
        ws = lam[split.stable] * h
        p1, p2 = _phi12(ws)
        self._fwd = (np.exp(ws), h * (p1 - p2), h * p2)
        wu = -lam[split.unstable] * h
        p1, p2 = _phi12(wu)
        # backward recursion run forward on the time-reversed forcing
        self._bwd = (np.exp(wu), -h * (p1 - p2), -h * p2)
        t = grid.times
        self.homogeneous = np.exp(np.outer(t, lam[split.stable]))

    def free(self, xi_stable):
        """e^{At} applied to stable initial data, shape (batch, n, N)."""
        xi_stable = np.atleast_2d(xi_stable)
        out = np.zeros((xi_stable.shape[0], self.grid.steps + 1, self.split.dim))
        out[:, :, self.split.stable] = self.homogeneous[None] * xi_stable[:, None, self.split.stable]
        return out

    def integrals(self, g):
        s, u = self.split.stable, self.split.unstable
        out = np.empty_like(g)
        out[:, :, s] = _kernels.linear_recursion(g[:, :, s], *self._fwd)
        rev = g[:, ::-1, :][:, :, u]
        out[:, :, u] = _kernels.linear_recursion(rev, *self._bwd)[:, ::-1, :]
        return out


def weighted_sup(diff, times, eta, eps_integral=None):
    """sup_t e^{-eta t - eps I(t)} |diff(t)|, maximized over the batch too."""
    norms = np.linalg.norm(diff, axis=-1)
    with np.errstate(divide="ignore"):
        logs = np.log(norms) - eta * times
    if eps_integral is not None:
        logs = logs - eps_integral
    top = np.max(logs)
    return float(np.exp(top)) if np.isfinite(top) else (0.0 if top < 0 else float("inf"))


def tail_estimate(model, forcing, times, eta):
    """K e^{(eta-alpha)T} sup_s e^{-eta s}|P^u g(s)| / (alpha - eta)."""
    split = model.split
    sup = weighted_sup(forcing[..., split.unstable], times, eta)
    T = times[-1]
    return float(split.bound_K * np.exp((eta - split.alpha) * T) * sup / (split.alpha - eta))


# ---------------------------------------------------------------------------
# time stepping of the order-0 and order-1 differential equations
# ---------------------------------------------------------------------------


def _check(first_bad, grid, what):
    if first_bad >= 0:
        raise BlowUpError(f"{what} left the admissible region at t={first_bad * grid.dt:.6g}", first_bad * grid.dt)


def solve_phi_d(model, phi0, grid):
    """Deterministic base orbit dPhi/dt = A Phi + F(Phi) by classical RK4."""
    phi0 = np.asarray(phi0, dtype=float).reshape(1, model.dimension)
    z = np.zeros(grid.steps + 1)
    traj, bad = _kernels.rk4_rde(phi0, model.eigenvalues, model.kernel_args, 0.0, z, grid.dt, model.blowup_limit())
    _check(bad, grid, "base orbit")
    return traj[0]


def solve_psi_d(model, xi, phi0, l_d_value, grid):
    """Forward RK4 of the order-0 difference equation.

    psi' = A psi + F(psi + Phi_d) - F(Phi_d),  psi(0) = xi + l_d - phi0.
    Integrated as the difference of two RK4 orbits, which is the same
    discrete scheme.  Unstable modes amplify any error in ``l_d`` by
    e^{alpha t}; use short horizons.
    """
    phi0 = np.asarray(phi0, dtype=float)
    start = np.asarray(xi, dtype=float) + np.asarray(l_d_value, dtype=float)
    z = np.zeros(grid.steps + 1)
    pair = np.stack([start, phi0])
    traj, bad = _kernels.rk4_rde(pair, model.eigenvalues, model.kernel_args, 0.0, z, grid.dt, model.blowup_limit())
    _check(bad, grid, "order-0 difference orbit")
    return traj[0] - traj[1]


def solve_phi_1(model, phi0, ou, grid):
    """Base orbit and its first variation in eps, (Phi_d, Phi_1).

    Phi_1' = (A + F_u(Phi_d)) Phi_1 + B,  Phi_1(0) = 0, with
    B = -Z(theta_t omega) (-Phi_d + F(Phi_d) - F_u(Phi_d) Phi_d).
    """
    z, _ = noise_on_grid(ou, grid)
    phi0 = np.asarray(phi0, dtype=float).reshape(1, model.dimension)
    tu, tw, bad = _kernels.rk4_tangent(
        phi0, np.zeros_like(phi0), model.eigenvalues, model.kernel_args, z, grid.dt, model.blowup_limit()
    )
    _check(bad, grid, "base orbit")
    return tu[0], tw[0]


def solve_psi_1(model, state, ou, l_1_guess, index=0):
    """Forward RK4 of the order-1 difference equation from psi_1(0) = l_1_guess.

    psi_1' = (A + F_u(psi_d + Phi_d)) psi_1 + lambda~; integrated as the
    difference of the first variations along the perturbed and the base
    orbit.  Like :func:`solve_psi_d` this is a forward shooting check.
    """
    l_1_guess = np.asarray(l_1_guess, dtype=float)
    if np.any(np.abs(l_1_guess[model.split.stable]) > 0):
        raise ConfigurationError("psi_1(0) must have zero stable component")
    z, _ = noise_on_grid(ou, state.grid)
    start = state.psi_d[index, 0] + state.base_point
    u0 = np.stack([start, state.base_point])
    w0 = np.stack([l_1_guess, np.zeros(model.dimension)])
    tu, tw, bad = _kernels.rk4_tangent(u0, w0, model.eigenvalues, model.kernel_args, z, state.grid.dt, model.blowup_limit())
    _check(bad, state.grid, "order-1 difference orbit")
    return tw[0] - tw[1]


# ---------------------------------------------------------------------------
# forcing terms
# ---------------------------------------------------------------------------


def forcing_B(model, phi_d, z, derivative=None):
    """B~ = -Z (-Phi_d + F(Phi_d) - F_u(Phi_d) Phi_d) on the grid."""
    deriv = model.F_derivative if derivative is None else derivative
    z = np.asarray(z)[..., None]
    return -z * (-phi_d + model.F(phi_d) - deriv(phi_d, phi_d))


def forcing_lambda(model, psi_d, phi_d, phi_1, z, derivative=None):
    """lambda~ of the order-1 difference equation on the grid."""
    deriv = model.F_derivative if derivative is None else derivative
    z = np.asarray(z)[..., None]
    full = psi_d + phi_d
    return (
        z * (psi_d + model.F(phi_d) - model.F(full))
        + deriv(full, phi_1 + z * full)
        - deriv(phi_d, phi_1 + z * phi_d)
    )


def correction_integrand(model, psi_d, phi_d, psi_1, phi_1, z, integral, derivative=None):
    """Integrand of the unstable-mode correction l_1.

    (-int_0^s Z - Z(theta_s omega)) (F(psi_d + Phi_d) - F(Phi_d))
      + F_u(psi_d + Phi_d)(psi_1 + Phi_1 + Z (psi_d + Phi_d))
      - F_u(Phi_d)(Phi_1 + Z Phi_d)

    The last line vanishes when Phi_d = 0 but is needed for the leaf through
    phi0 to contain phi0 itself.
    """
    deriv = model.F_derivative if derivative is None else derivative
    z = np.asarray(z)[..., None]
    weight = -(np.asarray(integral)[..., None] + z)
    full = psi_d + phi_d
    delta = model.F(full) - model.F(phi_d)
    return weight * delta + deriv(full, psi_1 + phi_1 + z * full) - deriv(phi_d, phi_1 + z * phi_d)


# ---------------------------------------------------------------------------
# fixed points
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExpansionState:
    """Per-path solution bundle for a batch of fiber coordinates ``xi``."""

    grid: TimeGrid
    base_point: np.ndarray
    xi: np.ndarray
    eta: float
    phi_d: np.ndarray = field(repr=False)
    psi_d: np.ndarray = field(repr=False)
    l_d: np.ndarray
    phi_1: Optional[np.ndarray] = field(default=None, repr=False)
    psi_1: Optional[np.ndarray] = field(default=None, repr=False)
    l_1: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict, repr=False)


def _as_fiber_batch(model, xi):
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if xi.shape[-1] != model.dimension:
        raise ConfigurationError(f"xi must have {model.dimension} coordinates")
    if np.any(np.abs(xi[:, model.split.unstable]) > 1e-12):
        raise ConfigurationError("xi must lie in the stable subspace")
    xi = xi.copy()
    xi[:, model.split.unstable] = 0.0
    return xi


def _iterate(step, start, times, eta, tol, max_iter, what, model, eta_for_gap):
    psi = start
    history = []
    for it in range(1, max_iter + 1):
        new = step(psi)
        if not np.all(np.isfinite(new)):
            raise BlowUpError(f"{what}: iteration produced non-finite values")
        res = weighted_sup(new - psi, times, eta)
        history.append(res)
        psi = new
        if res < tol:
            return psi, history
        if it >= 8 and history[-1] > history[-4] and history[-1] > 1e3 * tol:
            break
    gap = check_gap_condition(model.split, model.lipschitz_LF, eta_for_gap)
    raise ConvergenceError(
        f"{what}: no contraction after {len(history)} sweeps (residual {history[-1]:.3g}); "
        f"gap value {gap.value:.3g} ({'satisfied' if gap.satisfied else 'violated'})",
        residual=history[-1],
        iterations=len(history),
    )


_gap_warned = set()


def _gap_notice(model, eta):
    gap = check_gap_condition(model.split, model.lipschitz_LF, eta)
    key = (model.name, model.lipschitz_LF, eta)
    if not gap.satisfied and key not in _gap_warned:
        _gap_warned.add(key)
        log.warning(
            "%s: gap condition fails (value %.4g at eta=%.4g); contraction not guaranteed",
            model.name, gap.value, eta,
        )
    return gap


def solve_order0(model, phi0, xi, grid, eta=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, phi_d=None):
    """Deterministic leaf values l_d for a batch of stable coordinates.

    Sweeps start from psi = e^{At}(xi - P^s phi0), i.e. from l = P^u phi0,
    and stop when the weighted sup-norm of the update drops below ``tol``.
    """
    split = model.split
    eta = default_eta(split) if eta is None else float(eta)
    gap = _gap_notice(model, eta)
    phi0 = np.asarray(phi0, dtype=float).reshape(model.dimension)
    xi = _as_fiber_batch(model, xi)
    if phi_d is None:
        phi_d = solve_phi_d(model, phi0, grid)
    prop = Propagator(split, grid)
    free = prop.free(xi - np.where(split.stable_mask, phi0, 0.0))
    F_phi = model.F(phi_d)
    times = grid.times

    def step(psi):
        return free + prop.integrals(model.F(psi + phi_d) - F_phi)

    psi_d, history = _iterate(step, free, times, eta, tol, max_iter, "order-0 leaf", model, eta)
    l_d = np.where(split.unstable_mask, phi0 + psi_d[:, 0], 0.0)
    forcing = model.F(psi_d + phi_d) - F_phi
    info = {
        "order0_iterations": len(history),
        "order0_residual": history[-1],
        "order0_residuals": history,
        "order0_tail_bound": tail_estimate(model, forcing, times, eta),
        "gap_value": gap.value,
        "gap_margin": gap.margin,
        "gap_satisfied": bool(gap.satisfied),
    }
    return ExpansionState(grid, phi0, xi, eta, phi_d, psi_d, l_d, info=info)


def _order1_core(model, state, z, integral, phi_d, phi_1, tol, max_iter):
    """Order-1 fixed point for several noise paths at once.

    ``z`` and ``integral`` have shape (paths, n); ``phi_d``/``phi_1`` have
    shape (paths, n, N).  Returns psi_1 with shape (paths, batch, n, N).
    """
    prop = Propagator(model.split, state.grid)
    z = z[:, None, :]
    integral = integral[:, None, :]
    phi_d = phi_d[:, None]
    phi_1 = phi_1[:, None]
    psi_d = state.psi_d[None]
    drift = integral[..., None] * psi_d
    shape = drift.shape

    def step(psi_1):
        g = correction_integrand(model, psi_d, phi_d, psi_1, phi_1, z, integral)
        return drift + prop.integrals(g.reshape(-1, *shape[2:])).reshape(shape)

    psi_1, history = _iterate(step, drift, state.grid.times, state.eta, tol, max_iter, "order-1 leaf", model, state.eta)
    g = correction_integrand(model, psi_d, phi_d, psi_1, phi_1, z, integral)
    tail = tail_estimate(model, g, state.grid.times, state.eta)
    return psi_1, history, tail


def _base_variation(model, state, ous):
    n = state.grid.steps + 1
    if np.all(state.base_point == 0.0):
        # F(0) = 0 and DF(0) = 0 keep the base orbit and its variation at rest
        zeros = np.zeros((len(ous), n, model.dimension))
        return zeros, zeros
    pairs = [solve_phi_1(model, state.base_point, ou, state.grid) for ou in ous]
    return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


def solve_order1(model, state, ou, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """First-order correction l_1 for every fiber in ``state``.

    psi_1 = I(t) psi_d + LP[correction_integrand], with I(t) = int_0^t Z;
    the stable part of psi_1(0) is zero and l_1 = P^u psi_1(0).
    """
    z, integral = noise_on_grid(ou, state.grid)
    phi_d, phi_1 = _base_variation(model, state, [ou])
    psi_1, history, tail = _order1_core(model, state, z[None], integral[None], phi_d, phi_1, tol, max_iter)
    psi_1 = psi_1[0]
    l_1 = np.where(model.split.unstable_mask, psi_1[:, 0], 0.0)
    info = dict(state.info)
    info.update(
        order1_iterations=len(history),
        order1_residual=history[-1],
        order1_residuals=history,
        order1_tail_bound=tail,
        seed=ou.path.seed,
    )
    return replace(state, phi_1=phi_1[0], psi_1=psi_1, l_1=l_1, info=info)


def first_order_many(model, state, ous, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """l_1 for many noise paths sharing one order-0 state, shape (paths, batch, N)."""
    if not ous:
        return np.zeros((0,) + state.l_d.shape)
    noise = [noise_on_grid(ou, state.grid) for ou in ous]
    z = np.stack([a for a, _ in noise])
    integral = np.stack([b for _, b in noise])
    phi_d, phi_1 = _base_variation(model, state, ous)
    psi_1, _, _ = _order1_core(model, state, z, integral, phi_d, phi_1, tol, max_iter)
    return np.where(model.split.unstable_mask, psi_1[:, :, 0], 0.0)


def compute_l_d(model, xi, phi0, horizon=DEFAULT_HORIZON, dt=1e-3, tol=DEFAULT_TOL, eta=None):
    """l_d(xi) in H^u; ``xi`` may be one point or a stack of points."""
    state = solve_order0(model, phi0, xi, TimeGrid(dt, horizon), eta=eta, tol=tol)
    return state.l_d[0] if np.ndim(xi) == 1 else state.l_d


def compute_l_1(model, state, ou, tol=DEFAULT_TOL):
    """l_1(xi, omega) in H^u for the fibers of an order-0 ``state``."""
    return solve_order1(model, state, ou, tol=tol).l_1


# ---------------------------------------------------------------------------
# leaf assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LeafApproximation:
    """Sampled graph xi -> xi + l_d(xi) + eps * l_1(xi, omega)."""

    base_point: np.ndarray
    epsilon: float
    xi: np.ndarray
    l_d: np.ndarray
    l_1: np.ndarray
    horizon: float
    dt: float
    eta: float
    order: int = 1
    metadata: dict = field(default_factory=dict, repr=False)

    @property
    def leaf_map(self):
        """l(xi) truncated at the requested order (unstable coordinates)."""
        if self.order == 0:
            return self.l_d
        return self.l_d + self.epsilon * self.l_1

    @property
    def prediction(self):
        return self.xi + self.leaf_map


def assemble_leaf(model, phi0, xi_grid, epsilon, ou, horizon=DEFAULT_HORIZON, tol=DEFAULT_TOL, eta=None, order=1, state0=None):
    """Expansion leaf through ``phi0`` sampled at ``xi_grid`` for one path."""
    if epsilon < 0:
        raise ConfigurationError("epsilon must be non-negative")
    if order not in (0, 1):
        raise ConfigurationError("order must be 0 or 1")
    grid = TimeGrid(ou.dt, horizon)
    if state0 is None:
        state0 = solve_order0(model, phi0, xi_grid, grid, eta=eta, tol=tol)
    state = solve_order1(model, state0, ou, tol=tol)
    meta = {k: v for k, v in state.info.items() if not k.endswith("_residuals")}
    return LeafApproximation(
        state.base_point, float(epsilon), state.xi, state.l_d, state.l_1,
        float(horizon), float(ou.dt), state.eta, order, meta,
    )
