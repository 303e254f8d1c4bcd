"""Stable leaves of random invariant foliations for equations with small
multiplicative noise: first-order expansion plus a direct fixed-point oracle."""

from importlib.metadata import PackageNotFoundError as _NotInstalled
from importlib.metadata import version as _dist_version

from ._kernels import get_backend, set_backend, use_backend
from .dichotomy import (
    DichotomySplit,
    GapReport,
    check_gap_condition,
    default_eta,
    gap_value,
    project_stable,
    project_unstable,
    semigroup_apply,
)
from .errors import (
    BlowUpError,
    ConfigurationError,
    ConvergenceError,
    DomainError,
    StochLeafError,
    TruncationError,
)
from .expansion import (
    ExpansionState,
    LeafApproximation,
    TimeGrid,
    assemble_leaf,
    compute_l_1,
    compute_l_d,
    first_order_many,
    solve_order0,
    solve_order1,
)
from .leaf_solver import (
    FixedPointReport,
    MembershipResult,
    lyapunov_perron_batch,
    lyapunov_perron_leaf,
    verify_leaf_membership,
)
from .models import (
    GalerkinField,
    ModelSpec,
    PolynomialField,
    example1_analytic_leaf,
    example1_linear_model,
    example1_model,
    example2_model,
    galerkin_basis,
    galerkin_eigenvalues,
    get_model,
    polynomial_model,
)
from .noise import (
    BrownianPath,
    OUProcess,
    generate_brownian_path,
    integral_z,
    ito_integral,
    ou_stationary,
    write_path_csv,
)

try:
    __version__ = _dist_version("artifact")
except _NotInstalled:  # running from a source tree
    __version__ = "0.1.0"
