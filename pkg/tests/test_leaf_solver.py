import json

import numpy as np
import pytest

from stochleaf.dichotomy import check_gap_condition
from stochleaf.errors import ConfigurationError
from stochleaf.expansion import TimeGrid, assemble_leaf, noise_on_grid
from stochleaf.leaf_solver import (
    lyapunov_perron_batch,
    lyapunov_perron_leaf,
    solve_base_orbit,
    verify_leaf_membership,
)
from stochleaf.models import example1_analytic_leaf, example1_model, radius_for_lipschitz

from conftest import ou_for

XS = np.linspace(-1, 1, 9)
XI = np.stack([XS, 0 * XS], axis=1)


def test_linear_model_is_flat(ex1_linear):
    ou = ou_for(0)
    eps = 0.2
    leaf, psi, hist = lyapunov_perron_batch(ex1_linear, XI, [0.1, 0.3], eps, ou, horizon=5.0)
    np.testing.assert_array_equal(leaf, np.tile([0.0, 0.3], (len(XI), 1)))
    grid = TimeGrid(ou.dt, 5.0)
    _, integral = noise_on_grid(ou, grid)
    expected = np.exp(-grid.times + eps * integral)[None, :] * (XS - 0.1)[:, None]
    np.testing.assert_allclose(psi[:, :, 0], expected, rtol=1e-12, atol=1e-15)
    assert len(hist) == 1 and hist[0] == 0.0


def test_deterministic_leaf(ex1):
    leaf, _, _ = lyapunov_perron_batch(ex1, XI, [0.0, 0.0], 0.0, ou_for(0))
    np.testing.assert_allclose(leaf[:, 1], -XS**2 / 3.0, atol=1e-6)
    assert np.all(leaf[:, 0] == 0.0)


def test_eps_zero_is_seed_independent(ex1):
    a, _, _ = lyapunov_perron_batch(ex1, XI, [0.0, 0.0], 0.0, ou_for(0))
    b, _, _ = lyapunov_perron_batch(ex1, XI, [0.0, 0.0], 0.0, ou_for(1))
    assert a.tobytes() == b.tobytes()


def test_matches_analytic_leaf_to_second_order(ex1):
    eps, dt = 0.1, 1e-3
    for seed in range(5):
        ou = ou_for(seed)
        leaf, _, _ = lyapunov_perron_batch(ex1, XI, [0.0, 0.0], eps, ou)
        ref = example1_analytic_leaf(XS, 0.0, 0.0, eps, ou, 20.0)
        assert np.max(np.abs(leaf[:, 1] - ref)) <= 1.0 * eps**2 + 10 * dt


def test_contraction_rate_within_gap_value(ex1):
    m = example1_model(radius_for_lipschitz(ex1.poly, 0.4))
    gap = check_gap_condition(m.split, m.lipschitz_LF, 0.0)
    assert gap.satisfied
    for x in (0.05, 0.1, 0.3):
        rep = lyapunov_perron_leaf(m, [x, 0.0], [0.0, 0.0], 0.1, ou_for(2), tol=1e-14)
        res = np.array(rep.residuals)
        assert rep.converged and len(res) >= 2
        assert np.all(res[1:] <= (gap.value + 0.1) * res[:-1])


def test_report_contract(ex1):
    rep = lyapunov_perron_leaf(ex1, [0.8, 0.0], [0.0, 0.0], 0.05, ou_for(3))
    assert rep.converged and rep.final_residual < 1e-10
    assert rep.iterations == len(rep.residuals) <= 200
    assert rep.leaf_point[0] == 0.0
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["iterations"] == rep.iterations and len(d["leaf_point"]) == 2
    short = lyapunov_perron_leaf(ex1, [0.8, 0.0], [0.0, 0.0], 0.05, ou_for(3), max_iterations=1)
    assert not short.converged and short.iterations == 1


def test_rejects_bad_input(ex1):
    with pytest.raises(ConfigurationError):
        lyapunov_perron_batch(ex1, XI, [0, 0], -0.1, ou_for(0))
    with pytest.raises(ConfigurationError):
        lyapunov_perron_batch(ex1, [[0.1, 0.2]], [0, 0], 0.1, ou_for(0))


def test_base_orbit_at_rest(ex1):
    orbit = solve_base_orbit(ex1, [0.0, 0.0], 0.3, ou_for(0), TimeGrid(1e-3, 5.0))
    assert np.all(orbit == 0.0)


def test_membership_same_point(ex1):
    r = verify_leaf_membership(ex1, [0.2, 0.1], [0.2, 0.1], 0.05, ou_for(0))
    assert r.weighted_sup == 0.0 and r.decaying and np.all(r.weighted_norm == 0.0)


def test_membership_leaf_points_and_controls(ex1):
    decaying = 0
    total = 0
    for seed in range(3):
        ou = ou_for(seed)
        leaf = assemble_leaf(ex1, [0, 0], XI, 0.05, ou)
        for p in leaf.prediction:
            r = verify_leaf_membership(ex1, p, [0.0, 0.0], 0.05, ou)
            decaying += r.decaying
            total += 1
            c = verify_leaf_membership(ex1, p + [0.0, 0.5], [0.0, 0.0], 0.05, ou)
            assert not c.decaying
    assert decaying >= 0.95 * total
    ctrl = verify_leaf_membership(ex1, [0.0, 0.5], [0.0, 0.0], 0.05, ou_for(0))
    assert not ctrl.decaying and ctrl.weighted_norm[-1] > ctrl.weighted_norm[0]


def test_membership_escape_counts_as_failure(ex1_nocut):
    r = verify_leaf_membership(ex1_nocut, [0.0, 5.0], [0.0, 0.0], 0.0, ou_for(0), horizon=20.0)
    assert r.escaped and not r.decaying and r.weighted_sup == np.inf
    assert r.times.size == r.weighted_norm.size < 20001
