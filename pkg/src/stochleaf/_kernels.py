"""Hot numerical kernels.

Every kernel exists twice: a numba ``@njit`` version and a pure numpy/scipy
version.  The active path is picked at import time from the environment
variable ``STOCHLEAF_BACKEND`` (``auto`` | ``numba`` | ``numpy``) and can be
switched at runtime with :func:`use_backend`.

Polynomial nonlinearities are passed to the kernels as flat arrays
(see :class:`stochleaf.models.PolynomialField`)::

    s = S @ u                               node values
    v_k = coef_k * prod_j s[idx_j] ** pw_j  one monomial per term k
    f = Bm @ v                              projection back to modes
    F(u) = chi(|u| / rho) * f               smooth radial cut-off
"""

import contextlib
import os
import warnings

import numpy as np
from scipy.signal import lfilter

try:
    import numba
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f


def _initial_backend():
    requested = os.environ.get("STOCHLEAF_BACKEND", "auto").strip().lower()
    if requested not in ("auto", "numba", "numpy"):
        warnings.warn(f"unknown STOCHLEAF_BACKEND={requested!r}, using auto")
        requested = "auto"
    if requested == "numpy":
        return "numpy"
    if not NUMBA_AVAILABLE:
        if requested == "numba":
            warnings.warn("numba requested but not importable; using numpy")
        return "numpy"
    return "numba"


_BACKEND = _initial_backend()


def get_backend():
    return _BACKEND


def set_backend(name):
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"backend must be 'numba' or 'numpy', got {name!r}")
    if name == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba is not available")
    _BACKEND = name


@contextlib.contextmanager
def use_backend(name):
    previous = _BACKEND
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


# ---------------------------------------------------------------------------
# cut-off profile: 1 on [0, 1], 0 on [2, inf), quintic smoothstep in between
# ---------------------------------------------------------------------------

# sup |chi''| of the quintic taper, attained at x = (3 - sqrt 3) / 6
CHI_SECOND_DERIVATIVE_BOUND = 5.7736


@njit(cache=True)
def _chi_scalar(s):
    if s <= 1.0:
        return 1.0
    if s >= 2.0:
        return 0.0
    x = s - 1.0
    return 1.0 - x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)


@njit(cache=True)
def _dchi_scalar(s):
    if s <= 1.0 or s >= 2.0:
        return 0.0
    x = s - 1.0
    return -30.0 * x * x * (1.0 - x) * (1.0 - x)


def chi(s):
    s = np.asarray(s, dtype=float)
    x = np.clip(s - 1.0, 0.0, 1.0)
    return 1.0 - x**3 * (10.0 - 15.0 * x + 6.0 * x**2)


def dchi(s):
    s = np.asarray(s, dtype=float)
    x = np.clip(s - 1.0, 0.0, 1.0)
    return -30.0 * x**2 * (1.0 - x) ** 2


# ---------------------------------------------------------------------------
# polynomial field, batched numpy version (used on whole time grids)
# ---------------------------------------------------------------------------


def _term_products(factors, ptr):
    return np.multiply.reduceat(factors, ptr[:-1], axis=-1)


def field_eval(u, S, coef, ptr, idx, pw, Bm, rho):
    """F(u) for states stacked along leading axes of ``u``."""
    u = np.asarray(u, dtype=float)
    s = u @ S.T
    v = coef * _term_products(s[..., idx] ** pw, ptr)
    f = v @ Bm.T
    if rho > 0.0:
        r = np.linalg.norm(u, axis=-1)
        f = f * chi(r / rho)[..., None]
    return f


def field_deriv(u, w, S, coef, ptr, idx, pw, Bm, rho):
    """Directional derivative DF(u)[w], batched over leading axes."""
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    u, w = np.broadcast_arrays(u, w)
    s = u @ S.T
    ds = w @ S.T
    factors = s[..., idx] ** pw
    dfactors = pw * s[..., idx] ** (pw - 1) * ds[..., idx]
    lengths = np.diff(ptr)
    position = np.arange(idx.size) - np.repeat(ptr[:-1], lengths)
    dv = np.zeros(s.shape[:-1] + (coef.size,))
    for p in range(int(lengths.max())):
        mixed = np.where(position == p, dfactors, factors)
        dv += np.where(lengths > p, _term_products(mixed, ptr), 0.0)
    df = (coef * dv) @ Bm.T
    if rho > 0.0:
        r = np.linalg.norm(u, axis=-1)
        c = chi(r / rho)
        dc = dchi(r / rho)
        safe_r = np.where(r > 0.0, r, 1.0)
        radial = np.where(r > 0.0, dc * np.sum(u * w, axis=-1) / (rho * safe_r), 0.0)
        f = (coef * _term_products(factors, ptr)) @ Bm.T
        df = c[..., None] * df + radial[..., None] * f
    return df


# ---------------------------------------------------------------------------
# polynomial field, scalar numba version (used inside time steppers)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _nb_field(u, S, coef, ptr, idx, pw, Bm, rho, s, v, out):
    m, n = S.shape
    for j in range(m):
        acc = 0.0
        for i in range(n):
            acc += S[j, i] * u[i]
        s[j] = acc
    for k in range(coef.size):
        prod = coef[k]
        for e in range(ptr[k], ptr[k + 1]):
            prod *= s[idx[e]] ** pw[e]
        v[k] = prod
    scale = 1.0
    if rho > 0.0:
        r = 0.0
        for i in range(n):
            r += u[i] * u[i]
        scale = _chi_scalar(np.sqrt(r) / rho)
    for i in range(n):
        acc = 0.0
        for k in range(coef.size):
            acc += Bm[i, k] * v[k]
        out[i] = scale * acc


@njit(cache=True)
def _nb_field_deriv(u, w, S, coef, ptr, idx, pw, Bm, rho, s, ds, v, dv, out):
    m, n = S.shape
    for j in range(m):
        a = 0.0
        b = 0.0
        for i in range(n):
            a += S[j, i] * u[i]
            b += S[j, i] * w[i]
        s[j] = a
        ds[j] = b
    for k in range(coef.size):
        prod = 1.0
        for e in range(ptr[k], ptr[k + 1]):
            prod *= s[idx[e]] ** pw[e]
        v[k] = coef[k] * prod
        total = 0.0
        for e in range(ptr[k], ptr[k + 1]):
            term = pw[e] * s[idx[e]] ** (pw[e] - 1) * ds[idx[e]]
            for e2 in range(ptr[k], ptr[k + 1]):
                if e2 != e:
                    term *= s[idx[e2]] ** pw[e2]
            total += term
        dv[k] = coef[k] * total
    c = 1.0
    radial = 0.0
    if rho > 0.0:
        r2 = 0.0
        uw = 0.0
        for i in range(n):
            r2 += u[i] * u[i]
            uw += u[i] * w[i]
        r = np.sqrt(r2)
        c = _chi_scalar(r / rho)
        if r > 0.0:
            radial = _dchi_scalar(r / rho) * uw / (rho * r)
    for i in range(n):
        a = 0.0
        b = 0.0
        for k in range(coef.size):
            a += Bm[i, k] * dv[k]
            b += Bm[i, k] * v[k]
        out[i] = c * a + radial * b


# ---------------------------------------------------------------------------
# Ornstein-Uhlenbeck recursion  Z[k+1] = q * (Z[k] + dW[k]),  Z[0] = 0
# ---------------------------------------------------------------------------


@njit(cache=True)
def _nb_ou_recursion(dW, q):
    out = np.empty(dW.size + 1)
    out[0] = 0.0
    z = 0.0
    for k in range(dW.size):
        z = q * (z + dW[k])
        out[k + 1] = z
    return out


def _np_ou_recursion(dW, q):
    out = np.empty(dW.size + 1)
    out[0] = 0.0
    out[1:] = lfilter([q], [1.0, -q], dW)
    return out


def ou_recursion(dW, q):
    dW = np.ascontiguousarray(dW, dtype=float)
    if _BACKEND == "numba":
        return _nb_ou_recursion(dW, float(q))
    return _np_ou_recursion(dW, float(q))


# ---------------------------------------------------------------------------
# exponential convolution recursion along the time axis
#   y[0] = 0,  y[k+1] = a * y[k] + c_prev * f[k] + c_next * f[k+1]
# f has shape (batch, time, modes); a, c_prev, c_next have shape (modes,)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _nb_linear_recursion(f, a, c_prev, c_next):
    nb, nt, nm = f.shape
    y = np.zeros_like(f)
    for b in range(nb):
        for m in range(nm):
            acc = 0.0
            am = a[m]
            cp = c_prev[m]
            cn = c_next[m]
            for k in range(nt - 1):
                acc = am * acc + cp * f[b, k, m] + cn * f[b, k + 1, m]
                y[b, k + 1, m] = acc
    return y


def _np_linear_recursion(f, a, c_prev, c_next):
    y = np.zeros_like(f)
    for m in range(f.shape[2]):
        col = f[:, :, m]
        zi = (-c_next[m] * col[:, 0])[:, None]
        y[:, :, m], _ = lfilter([c_next[m], c_prev[m]], [1.0, -a[m]], col, axis=1, zi=zi)
        y[:, 0, m] = 0.0
    return y


def linear_recursion(f, a, c_prev, c_next):
    """y[0] = 0, y[k+1] = a y[k] + c_prev f[k] + c_next f[k+1] per mode.

    ``f`` has shape (batch, steps, modes); coefficients are per mode (scalars broadcast).
    """
    f = np.ascontiguousarray(f, dtype=float)
    nm = f.shape[2]
    a, c_prev, c_next = (np.ascontiguousarray(np.broadcast_to(np.asarray(c, dtype=float), (nm,))) for c in (a, c_prev, c_next))
    if _BACKEND == "numba":
        return _nb_linear_recursion(f, a, c_prev, c_next)
    return _np_linear_recursion(f, a, c_prev, c_next)


# ---------------------------------------------------------------------------
# classical RK4 for  du/dt = lam*u + eps*Z(t)*u + exp(-eps Z) F(exp(eps Z) u)
# Z between grid points is linearly interpolated (midpoint = average).
# Returns the trajectory and the first step index exceeding ``limit`` (-1 if none).
# ---------------------------------------------------------------------------


@njit(cache=True)
def _nb_rde_rhs(u, zval, eps, lam, S, coef, ptr, idx, pw, Bm, rho, s, v, tmp, fo, out):
    n = u.size
    if eps != 0.0:
        g = np.exp(eps * zval)
        for i in range(n):
            tmp[i] = g * u[i]
        _nb_field(tmp, S, coef, ptr, idx, pw, Bm, rho, s, v, fo)
        for i in range(n):
            out[i] = lam[i] * u[i] + eps * zval * u[i] + fo[i] / g
    else:
        _nb_field(u, S, coef, ptr, idx, pw, Bm, rho, s, v, fo)
        for i in range(n):
            out[i] = lam[i] * u[i] + fo[i]


@njit(cache=True)
def _nb_rk4_rde(u0, lam, S, coef, ptr, idx, pw, Bm, rho, eps, zgrid, h, limit):
    nb, n = u0.shape
    nt = zgrid.size
    traj = np.empty((nb, nt, n))
    s = np.empty(S.shape[0])
    v = np.empty(coef.size)
    tmp = np.empty(n)
    fo = np.empty(n)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    stage = np.empty(n)
    first_bad = -1
    for b in range(nb):
        u = u0[b].copy()
        traj[b, 0] = u
        for k in range(nt - 1):
            z0 = zgrid[k]
            z1 = zgrid[k + 1]
            zm = 0.5 * (z0 + z1)
            _nb_rde_rhs(u, z0, eps, lam, S, coef, ptr, idx, pw, Bm, rho, s, v, tmp, fo, k1)
            for i in range(n):
                stage[i] = u[i] + 0.5 * h * k1[i]
            _nb_rde_rhs(stage, zm, eps, lam, S, coef, ptr, idx, pw, Bm, rho, s, v, tmp, fo, k2)
            for i in range(n):
                stage[i] = u[i] + 0.5 * h * k2[i]
            _nb_rde_rhs(stage, zm, eps, lam, S, coef, ptr, idx, pw, Bm, rho, s, v, tmp, fo, k3)
            for i in range(n):
                stage[i] = u[i] + h * k3[i]
            _nb_rde_rhs(stage, z1, eps, lam, S, coef, ptr, idx, pw, Bm, rho, s, v, tmp, fo, k4)
            norm2 = 0.0
            for i in range(n):
                u[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                norm2 += u[i] * u[i]
            traj[b, k + 1] = u
            if not norm2 <= limit * limit:
                if first_bad < 0 or k + 1 < first_bad:
                    first_bad = k + 1
                for kk in range(k + 2, nt):
                    traj[b, kk] = np.nan
                break
    return traj, first_bad


def _np_rde_rhs(u, zval, eps, lam, field):
    if eps != 0.0:
        g = np.exp(eps * zval)
        return lam * u + eps * zval * u + field_eval(g * u, *field) / g
    return lam * u + field_eval(u, *field)


def _np_rk4_rde(u0, lam, field, eps, zgrid, h, limit):
    nb, n = u0.shape
    nt = zgrid.size
    traj = np.full((nb, nt, n), np.nan)
    u = u0.copy()
    traj[:, 0] = u
    alive = np.ones(nb, dtype=bool)
    first_bad = -1
    for k in range(nt - 1):
        z0, z1 = zgrid[k], zgrid[k + 1]
        zm = 0.5 * (z0 + z1)
        k1 = _np_rde_rhs(u, z0, eps, lam, field)
        k2 = _np_rde_rhs(u + 0.5 * h * k1, zm, eps, lam, field)
        k3 = _np_rde_rhs(u + 0.5 * h * k2, zm, eps, lam, field)
        k4 = _np_rde_rhs(u + h * k3, z1, eps, lam, field)
        u = u + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        traj[alive, k + 1] = u[alive]
        bad = alive & ~(np.sum(u * u, axis=1) <= limit * limit)
        if bad.any():
            if first_bad < 0:
                first_bad = k + 1
            alive &= ~bad
            if not alive.any():
                break
    return traj, first_bad


def rk4_rde(u0, lam, field, eps, zgrid, h, limit):
    u0 = np.ascontiguousarray(np.atleast_2d(u0), dtype=float)
    lam = np.ascontiguousarray(lam, dtype=float)
    zgrid = np.ascontiguousarray(zgrid, dtype=float)
    if _BACKEND == "numba":
        return _nb_rk4_rde(u0, lam, *field, float(eps), zgrid, float(h), float(limit))
    return _np_rk4_rde(u0, lam, field, float(eps), zgrid, float(h), float(limit))


# ---------------------------------------------------------------------------
# RK4 for the pair (u, v) with u' = lam*u + F(u) and its first variation in
# the noise intensity at eps = 0:
#   v' = (lam + DF(u)) v + Z(t) * (u - F(u) + DF(u) u)
# Integrating both together makes v the exact eps-derivative of the discrete
# RK4 solution of the random equation.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _nb_tangent_rhs(u, w, zval, lam, S, coef, ptr, idx, pw, Bm, rho, s, ds, v, dv, fo, dfo, du, dw):
    n = u.size
    _nb_field(u, S, coef, ptr, idx, pw, Bm, rho, s, v, fo)
    _nb_field_deriv(u, w, S, coef, ptr, idx, pw, Bm, rho, s, ds, v, dv, dfo)
    for i in range(n):
        du[i] = lam[i] * u[i] + fo[i]
        dw[i] = lam[i] * w[i] + dfo[i]
    if zval != 0.0:
        _nb_field_deriv(u, u, S, coef, ptr, idx, pw, Bm, rho, s, ds, v, dv, dfo)
        for i in range(n):
            dw[i] += zval * (u[i] - fo[i] + dfo[i])


@njit(cache=True)
def _nb_rk4_tangent(u0, w0, lam, S, coef, ptr, idx, pw, Bm, rho, zgrid, h, limit):
    nb, n = u0.shape
    nt = zgrid.size
    tu = np.empty((nb, nt, n))
    tw = np.empty((nb, nt, n))
    m = S.shape[0]
    s = np.empty(m)
    ds = np.empty(m)
    v = np.empty(coef.size)
    dv = np.empty(coef.size)
    fo = np.empty(n)
    dfo = np.empty(n)
    ku = np.empty((4, n))
    kw = np.empty((4, n))
    su = np.empty(n)
    sw = np.empty(n)
    first_bad = -1
    for b in range(nb):
        u = u0[b].copy()
        w = w0[b].copy()
        tu[b, 0] = u
        tw[b, 0] = w
        for k in range(nt - 1):
            z0 = zgrid[k]
            z1 = zgrid[k + 1]
            zm = 0.5 * (z0 + z1)
            _nb_tangent_rhs(u, w, z0, lam, S, coef, ptr, idx, pw, Bm, rho, s, ds, v, dv, fo, dfo, ku[0], kw[0])
            for i in range(n):
                su[i] = u[i] + 0.5 * h * ku[0, i]
                sw[i] = w[i] + 0.5 * h * kw[0, i]
            _nb_tangent_rhs(su, sw, zm, lam, S, coef, ptr, idx, pw, Bm, rho, s, ds, v, dv, fo, dfo, ku[1], kw[1])
            for i in range(n):
                su[i] = u[i] + 0.5 * h * ku[1, i]
                sw[i] = w[i] + 0.5 * h * kw[1, i]
            _nb_tangent_rhs(su, sw, zm, lam, S, coef, ptr, idx, pw, Bm, rho, s, ds, v, dv, fo, dfo, ku[2], kw[2])
            for i in range(n):
                su[i] = u[i] + h * ku[2, i]
                sw[i] = w[i] + h * kw[2, i]
            _nb_tangent_rhs(su, sw, z1, lam, S, coef, ptr, idx, pw, Bm, rho, s, ds, v, dv, fo, dfo, ku[3], kw[3])
            norm2 = 0.0
            for i in range(n):
                u[i] += h / 6.0 * (ku[0, i] + 2.0 * ku[1, i] + 2.0 * ku[2, i] + ku[3, i])
                w[i] += h / 6.0 * (kw[0, i] + 2.0 * kw[1, i] + 2.0 * kw[2, i] + kw[3, i])
                norm2 += u[i] * u[i]
            tu[b, k + 1] = u
            tw[b, k + 1] = w
            if not norm2 <= limit * limit:
                if first_bad < 0 or k + 1 < first_bad:
                    first_bad = k + 1
                for kk in range(k + 2, nt):
                    tu[b, kk] = np.nan
                    tw[b, kk] = np.nan
                break
    return tu, tw, first_bad


def _np_tangent_rhs(u, w, zval, lam, field):
    fu = field_eval(u, *field)
    du = lam * u + fu
    dw = lam * w + field_deriv(u, w, *field)
    if zval != 0.0:
        dw = dw + zval * (u - fu + field_deriv(u, u, *field))
    return du, dw


def _np_rk4_tangent(u0, w0, lam, field, zgrid, h, limit):
    nb, n = u0.shape
    nt = zgrid.size
    tu = np.full((nb, nt, n), np.nan)
    tw = np.full((nb, nt, n), np.nan)
    u, w = u0.copy(), w0.copy()
    tu[:, 0], tw[:, 0] = u, w
    alive = np.ones(nb, dtype=bool)
    first_bad = -1
    for k in range(nt - 1):
        z0, z1 = zgrid[k], zgrid[k + 1]
        zm = 0.5 * (z0 + z1)
        a1, b1 = _np_tangent_rhs(u, w, z0, lam, field)
        a2, b2 = _np_tangent_rhs(u + 0.5 * h * a1, w + 0.5 * h * b1, zm, lam, field)
        a3, b3 = _np_tangent_rhs(u + 0.5 * h * a2, w + 0.5 * h * b2, zm, lam, field)
        a4, b4 = _np_tangent_rhs(u + h * a3, w + h * b3, z1, lam, field)
        u = u + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        w = w + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        tu[alive, k + 1] = u[alive]
        tw[alive, k + 1] = w[alive]
        bad = alive & ~(np.sum(u * u, axis=1) <= limit * limit)
        if bad.any():
            if first_bad < 0:
                first_bad = k + 1
            alive &= ~bad
            if not alive.any():
                break
    return tu, tw, first_bad


def rk4_tangent(u0, w0, lam, field, zgrid, h, limit):
    u0 = np.ascontiguousarray(np.atleast_2d(u0), dtype=float)
    w0 = np.ascontiguousarray(np.atleast_2d(w0), dtype=float)
    lam = np.ascontiguousarray(lam, dtype=float)
    zgrid = np.ascontiguousarray(zgrid, dtype=float)
    if _BACKEND == "numba":
        return _nb_rk4_tangent(u0, w0, lam, *field, zgrid, float(h), float(limit))
    return _np_rk4_tangent(u0, w0, lam, field, zgrid, float(h), float(limit))
