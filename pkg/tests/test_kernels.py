import os
import subprocess
import sys

import numpy as np
import pytest

from stochleaf import _kernels
from stochleaf.expansion import TimeGrid, solve_order0, solve_order1

from conftest import ou_for

pytestmark = pytest.mark.skipif(not _kernels.NUMBA_AVAILABLE, reason="numba not installed")


def both(fn):
    with _kernels.use_backend("numba"):
        a = fn()
    with _kernels.use_backend("numpy"):
        b = fn()
    return a, b


def _close(a, b, tol):
    if isinstance(a, tuple):
        for x, y in zip(a, b):
            _close(x, y, tol)
    else:
        np.testing.assert_allclose(a, b, rtol=tol, atol=tol)


@pytest.mark.parametrize("name", ["ex1", "ex2", "ex1_nocut"])
def test_field_parity(name, request, rng):
    m = request.getfixturevalue(name)
    u = rng.standard_normal((50, m.dimension)) * (m.cutoff_radius or 1.0)
    w = rng.standard_normal(u.shape)
    args = m.kernel_args
    _close(*both(lambda: _kernels.field_eval(u, *args)), 1e-13)
    _close(*both(lambda: _kernels.field_deriv(u, w, *args)), 1e-13)


def test_recursion_parity(rng):
    dW = rng.standard_normal(2000) * 0.03
    _close(*both(lambda: _kernels.ou_recursion(dW, np.exp(-1e-3))), 1e-13)
    f = rng.standard_normal((4, 300, 3))
    a, cp, cn = np.array([0.99, 0.5, 1.01]), rng.random(3), rng.random(3)
    _close(*both(lambda: _kernels.linear_recursion(f, a, cp, cn)), 1e-12)
    y = _kernels.linear_recursion(f, a, cp, cn)
    assert np.all(y[:, 0] == 0)
    np.testing.assert_allclose(y[:, 5], a * y[:, 4] + cp * f[:, 4] + cn * f[:, 5])


@pytest.mark.parametrize("name", ["ex1", "ex2"])
def test_integrator_parity(name, request, rng):
    m = request.getfixturevalue(name)
    z = ou_for(0, t_max=1.0).forward(1.0)[1]
    u0 = 0.3 * rng.standard_normal((3, m.dimension))
    w0 = rng.standard_normal(u0.shape)
    args = (m.eigenvalues, m.kernel_args)
    _close(*both(lambda: _kernels.rk4_rde(u0, *args, 0.2, z, 1e-3, m.blowup_limit())), 1e-11)
    _close(*both(lambda: _kernels.rk4_tangent(u0, w0, *args, z, 1e-3, m.blowup_limit())), 1e-11)


def test_blowup_index_parity(ex1):
    z = np.zeros(5001)
    u0 = np.array([[0.0, 1.0], [0.0, 0.0]])
    (_, bad_nb), (_, bad_np) = both(lambda: _kernels.rk4_rde(u0, ex1.eigenvalues, ex1.kernel_args, 0.0, z, 1e-3, 5.0))
    assert bad_nb == bad_np > 0


def test_pipeline_parity(ex1):
    xi = np.array([[0.5, 0.0], [-1.0, 0.0]])
    grid = TimeGrid(1e-2, 10.0)

    def run():
        s = solve_order0(ex1, [0.0, 0.0], xi, grid)
        return s.l_d, solve_order1(ex1, s, ou_for(1, t_max=10.0, dt=1e-2)).l_1

    _close(*both(run), 1e-11)


def test_backend_switching():
    before = _kernels.get_backend()
    with _kernels.use_backend("numpy"):
        assert _kernels.get_backend() == "numpy"
    assert _kernels.get_backend() == before
    with pytest.raises(ValueError):
        _kernels.set_backend("fortran")


@pytest.mark.parametrize("flag, expected", [("numpy", "numpy"), ("numba", "numba"), ("auto", "numba")])
def test_environment_flag(flag, expected):
    env = dict(os.environ, STOCHLEAF_BACKEND=flag)
    out = subprocess.run(
        [sys.executable, "-c", "from stochleaf import get_backend; print(get_backend())"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == expected
