"""Concrete evolution equations dU/dt = AU + F(U) in an eigenbasis of A."""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from . import _kernels
from .dichotomy import DichotomySplit
from .errors import ConfigurationError
from .noise import ito_integral


@dataclass(frozen=True, eq=False)
class PolynomialField:
    """Polynomial map f(u) = Bm @ (coef * prod_j (S u)[idx_j] ** pw_j).

    Terms are stored in CSR layout: term ``k`` owns entries
    ``ptr[k]:ptr[k+1]`` of ``idx``/``pw``.  ``norm_bounds(r)`` must return
    upper bounds of ``|f(u)|`` and ``|Df(u)|`` over ``|u| <= r``; when omitted
    a monomial bound valid for ``S = I`` is used.
    """

    S: np.ndarray = field(repr=False)
    coef: np.ndarray = field(repr=False)
    ptr: np.ndarray = field(repr=False)
    idx: np.ndarray = field(repr=False)
    pw: np.ndarray = field(repr=False)
    Bm: np.ndarray = field(repr=False)
    norm_bounds: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        if np.any(np.diff(self.ptr) < 1):
            raise ConfigurationError("every term needs at least one factor")
        if np.any(self.pw < 1):
            raise ConfigurationError("powers must be positive")
        degrees = np.add.reduceat(self.pw, self.ptr[:-1]) if self.pw.size else np.array([])
        if np.any(degrees < 2):
            raise ConfigurationError("terms of degree < 2 violate F(0) = 0, DF(0) = 0")
        if self.norm_bounds is None and not (
            self.S.shape[0] == self.S.shape[1] and np.array_equal(self.S, np.eye(self.S.shape[0]))
        ):
            raise ConfigurationError("norm_bounds is required when S is not the identity")

    @classmethod
    def from_monomials(cls, dim, terms):
        """Build from ``(component, coefficient, exponents)`` triples."""
        coef, ptr, idx, pw = [], [0], [], []
        Bm = np.zeros((dim, max(len(terms), 1)))
        for k, (component, c, exponents) in enumerate(terms):
            exponents = list(exponents)
            if len(exponents) != dim or not 0 <= component < dim:
                raise ConfigurationError(f"bad monomial term {component, c, exponents}")
            for j, e in enumerate(exponents):
                if e < 0 or int(e) != e:
                    raise ConfigurationError("exponents must be non-negative integers")
                if e > 0:
                    idx.append(j)
                    pw.append(int(e))
            ptr.append(len(idx))
            coef.append(float(c))
            Bm[component, k] = 1.0
        if not terms:
            # F = 0: one dummy quadratic term with zero weight
            coef, ptr, idx, pw = [0.0], [0, 1], [0], [2]
        return cls(
            np.eye(dim),
            np.array(coef, dtype=float),
            np.array(ptr, dtype=np.int64),
            np.array(idx, dtype=np.int64),
            np.array(pw, dtype=np.int64),
            Bm,
        )

    def bounds(self, r):
        if self.norm_bounds is not None:
            return self.norm_bounds(r)
        degrees = np.add.reduceat(self.pw, self.ptr[:-1])
        weights = np.abs(self.coef)[None, :] * np.abs(self.Bm)
        m0 = weights @ (r ** degrees.astype(float))
        m1 = weights @ (degrees * r ** (degrees - 1.0))
        return float(np.linalg.norm(m0)), float(np.linalg.norm(m1))


def cutoff_lipschitz(poly, radius, samples=8192):
    """Upper bound of the Lipschitz constant of chi(|u|/radius) * f(u).

    Uses |D(chi f)| <= chi |Df| + |chi'| |f| / radius on the ball of radius
    2*radius; each grid cell is bounded with monotone end-point values.
    """
    s = np.linspace(0.0, 2.0, samples + 1)
    lo, hi = s[:-1], s[1:]
    m0 = np.array([poly.bounds(x * radius)[0] for x in hi])
    m1 = np.array([poly.bounds(x * radius)[1] for x in hi])
    dchi_max = np.maximum(np.abs(_kernels.dchi(lo)), np.abs(_kernels.dchi(hi)))
    dchi_max += (hi - lo) * _kernels.CHI_SECOND_DERIVATIVE_BOUND
    per_cell = _kernels.chi(lo) * m1 + dchi_max * m0 / radius
    return float(per_cell.max())


def radius_for_lipschitz(poly, target, lo=1e-6, hi=1e3):
    """Cut-off radius whose Lipschitz bound equals ``target``."""
    f = lambda r: cutoff_lipschitz(poly, r) - target
    if not target > 0 or f(lo) > 0 or f(hi) < 0:
        raise ConfigurationError(f"no radius in [{lo}, {hi}] gives Lipschitz constant {target}")
    return float(optimize.brentq(f, lo, hi, xtol=1e-14, rtol=1e-14))


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Linear part (through its dichotomy split) plus cut-off nonlinearity."""

    name: str
    split: DichotomySplit
    poly: PolynomialField = field(repr=False)
    lipschitz_LF: float
    cutoff_radius: Optional[float] = None
    labels: tuple = ()

    def __post_init__(self):
        if not self.labels:
            object.__setattr__(self, "labels", tuple(str(i + 1) for i in range(self.dimension)))
        if len(self.labels) != self.dimension:
            raise ConfigurationError("one label per coordinate")

    @property
    def dimension(self):
        return self.split.dim

    @property
    def eigenvalues(self):
        return self.split.eigenvalues

    @property
    def kernel_args(self):
        p = self.poly
        rho = -1.0 if self.cutoff_radius is None else float(self.cutoff_radius)
        return (p.S, p.coef, p.ptr, p.idx, p.pw, p.Bm, rho)

    def F(self, u):
        return _kernels.field_eval(u, *self.kernel_args)

    def F_derivative(self, base, direction):
        return _kernels.field_deriv(base, direction, *self.kernel_args)

    def blowup_limit(self):
        if self.cutoff_radius is None:
            return np.inf
        return 10.0 * self.cutoff_radius

    def with_lipschitz(self, lipschitz_LF):
        """Same model with the declared Lipschitz constant replaced (gap reports only)."""
        return ModelSpec(self.name, self.split, self.poly, float(lipschitz_LF), self.cutoff_radius, self.labels)


def _polynomial_model(name, eigenvalues, poly, cutoff_radius, labels=()):
    split = DichotomySplit.from_eigenvalues(eigenvalues)
    if cutoff_radius is None:
        lip = np.inf if np.any(poly.coef != 0) else 0.0
    else:
        if not cutoff_radius > 0:
            raise ConfigurationError("cutoff_radius must be positive")
        lip = cutoff_lipschitz(poly, cutoff_radius)
    return ModelSpec(name, split, poly, lip, cutoff_radius, tuple(labels))


# --------------------------------------------------------------------------
# Example 1:  x' = -x,  y' = y + x^2
# --------------------------------------------------------------------------


def example1_model(cutoff_radius=2.0):
    poly = PolynomialField.from_monomials(2, [(1, 1.0, (2, 0))])
    return _polynomial_model("example1", [-1.0, 1.0], poly, cutoff_radius, ("x", "y"))


def example1_linear_model():
    """Example 1 with F = 0 (gap value 0, flat foliation)."""
    poly = PolynomialField.from_monomials(2, [])
    return _polynomial_model("example1_linear", [-1.0, 1.0], poly, None, ("x", "y"))


def example1_analytic_leaf(x, x0, y0, eps, ou, horizon):
    """First-order closed-form stable leaf of Example 1 through (x0, y0).

    y = y0 - (x^2 - x0^2)/3 * (1 + eps * (Z(omega) + int_0^horizon e^{-3 tau} dW)).
    """
    if horizon > ou.path.t_max:
        raise ConfigurationError(f"horizon {horizon} exceeds path support t_max={ou.path.t_max}")
    x = np.asarray(x, dtype=float)
    d = (x**2 - x0**2) / 3.0
    noise = ou.z0 + ito_integral(ou.path, lambda t: np.exp(-3.0 * t), 0.0, horizon)
    return y0 - d - eps * d * noise


# --------------------------------------------------------------------------
# Example 2:  U_t = U_xx + 10 U - U^3 on (0, 1), Dirichlet, Galerkin modes
# --------------------------------------------------------------------------


def galerkin_eigenvalues(num_modes):
    n = np.arange(1, num_modes + 1)
    return 10.0 - (n * np.pi) ** 2


def _sinpi(y):
    # sin(pi y), exactly zero at integers
    r = np.mod(y, 2.0)
    out = np.sin(np.pi * r)
    out[(r == 0.0) | (r == 1.0)] = 0.0
    return out


def galerkin_basis(num_modes, x):
    """e_n(x) = sqrt(2) sin(n pi x), returned with shape (len(x), num_modes)."""
    n = np.arange(1, num_modes + 1)
    return np.sqrt(2.0) * _sinpi(np.outer(np.atleast_1d(np.asarray(x, dtype=float)), n))


@dataclass(frozen=True)
class GalerkinField:
    """Truncated sine series u(x) = sum_n a_n e_n(x)."""

    coefficients: np.ndarray

    def __call__(self, x):
        a = np.asarray(self.coefficients, dtype=float)
        return galerkin_basis(a.size, x) @ a


def example2_model(num_modes=8, cutoff_radius=1.0, num_nodes=None):
    """Galerkin truncation of the Chafee-Infante type SPDE with -u^3.

    The cubic is evaluated pseudo-spectrally on ``num_nodes`` (default 4N)
    midpoint nodes; the midpoint rule integrates cos(k pi x) exactly for
    k < 2 * num_nodes, which covers all products of four modes.
    """
    num_modes = int(num_modes)
    if num_modes < 2:
        raise ConfigurationError("example2 needs at least 2 modes")
    m = 4 * num_modes if num_nodes is None else int(num_nodes)
    if m < 2 * num_modes + 1:
        raise ConfigurationError("num_nodes too small for exact projection of the cubic")
    nodes = (np.arange(m) + 0.5) / m
    S = galerkin_basis(num_modes, nodes)
    Bm = S.T / m

    def norm_bounds(r):
        # |u|_inf <= sqrt(2N) |u|_2 for N sine modes
        sup2 = 2.0 * num_modes * r * r
        return sup2 * r, 3.0 * sup2

    poly = PolynomialField(
        S,
        -np.ones(m),
        np.arange(m + 1, dtype=np.int64),
        np.arange(m, dtype=np.int64),
        np.full(m, 3, dtype=np.int64),
        Bm,
        norm_bounds,
    )
    return _polynomial_model(f"example2", galerkin_eigenvalues(num_modes), poly, cutoff_radius)


def polynomial_model(eigenvalues, terms, cutoff_radius=None, name="custom", labels=()):
    """User model: eigenvalues of A plus ``(component, coef, exponents)`` terms."""
    dim = len(eigenvalues)
    poly = PolynomialField.from_monomials(dim, [tuple(t) for t in terms])
    return _polynomial_model(name, eigenvalues, poly, cutoff_radius, labels)


MODELS = {
    "example1": example1_model,
    "example1_linear": example1_linear_model,
    "example2": example2_model,
}


def get_model(name, **kwargs):
    try:
        factory = MODELS[name]
    except KeyError:
        raise ConfigurationError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return factory(**kwargs)
