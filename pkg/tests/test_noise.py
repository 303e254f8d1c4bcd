import csv

import numpy as np
import pytest
from hypothesis import given, settings
from scipy.integrate import trapezoid
from hypothesis import strategies as st

from stochleaf.errors import ConfigurationError, TruncationError
from stochleaf.noise import (
    BrownianPath,
    generate_brownian_path,
    integral_z,
    ito_integral,
    ou_stationary,
    write_path_csv,
)

N_MC = 10_000


def within_3se(sample, target, variance=True):
    n = sample.size
    if variance:
        est = sample.var(ddof=1)
        se = est * np.sqrt(2.0 / (n - 1))
    else:
        est = sample.mean()
        se = sample.std(ddof=1) / np.sqrt(n)
    return abs(est - target) <= 3 * se, est, se


@pytest.fixture(scope="module")
def ensemble():
    """10^4 coarse paths on [-20, 10] shared by the Monte Carlo checks."""
    return [ou_stationary(generate_brownian_path(s, -20.0, 10.0, 1e-2)) for s in range(N_MC)]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_origin_pinned(seed):
    p = generate_brownian_path(seed, -1.0, 1.0, 1e-2)
    assert p.values[p.index_of(0.0)] == 0.0


def test_same_seed_identical():
    a = generate_brownian_path(42, -2.0, 3.0, 1e-3)
    b = generate_brownian_path(42, -2.0, 3.0, 1e-3)
    assert a.values.tobytes() == b.values.tobytes()
    assert not np.array_equal(a.values, generate_brownian_path(43, -2.0, 3.0, 1e-3).values)


def test_increments_are_scaled_normals():
    dt = 1e-3
    p = generate_brownian_path(5, -1.0, 2.0, dt)
    draws = np.random.default_rng(5).standard_normal(p.n_fwd + p.n_back)
    np.testing.assert_allclose(p.increments[p.origin :], draws[: p.n_fwd] * np.sqrt(dt), rtol=0, atol=1e-13)
    # backward part extends from 0 toward t_min
    back = np.cumsum(draws[p.n_fwd :] * np.sqrt(dt))
    np.testing.assert_allclose(p.values[: p.origin][::-1], back, rtol=0, atol=1e-13)
    assert np.allclose(np.diff(p.times), dt)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(t_min=-1.0, t_max=1.0, dt=0.0),
        dict(t_min=-1.0, t_max=1.0, dt=-1e-3),
        dict(t_min=-1.0, t_max=1.0, dt=0.3),
        dict(t_min=0.0, t_max=1.0, dt=0.1),
        dict(t_min=-1.0, t_max=-0.5, dt=0.1),
    ],
)
def test_bad_grids(kwargs):
    with pytest.raises(ConfigurationError):
        generate_brownian_path(0, **kwargs)


def test_variance_of_w1():
    w1 = np.array([generate_brownian_path(s, -1e-3, 1.0, 1e-3).values[-1] for s in range(N_MC)])
    ok, est, se = within_3se(w1, 1.0)
    assert ok, (est, se)


def test_zero_path_gives_zero_ou():
    ou = ou_stationary(BrownianPath.zero(t_max=2.0, dt=1e-2))
    assert ou.z0 == 0.0
    assert np.all(ou.values == 0.0)
    assert integral_z(ou, -3.0, 1.5) == 0.0


def test_z0_variance(ensemble):
    z0 = np.array([o.z0 for o in ensemble])
    ok, est, se = within_3se(z0, 0.5)
    assert ok, (est, se)


def test_truncation_error_reports_required_t_min():
    with pytest.raises(TruncationError) as info:
        ou_stationary(generate_brownian_path(0, -5.0, 1.0, 1e-2))
    assert info.value.required_t_min == pytest.approx(np.log(1e-8))
    # explicit opt-out
    ou_stationary(generate_brownian_path(0, -5.0, 1.0, 1e-2), tail_tol=None)


def test_z_at_zero_is_z0():
    ou = ou_stationary(generate_brownian_path(9, -20.0, 1.0, 1e-3))
    assert ou.at(0.0) == ou.z0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_shift_identity(seed):
    dt = 1e-3
    ou = ou_stationary(generate_brownian_path(seed, -20.0, 2.0, dt))
    t, z, _ = ou.forward(2.0)
    # e^{-t} z0 + e^{-t} int_0^t e^tau dW by direct left-endpoint sums
    incr = ou.path.increments[ou.path.origin :]
    direct = np.exp(-t) * (ou.z0 + np.concatenate(([0.0], np.cumsum(np.exp(t[:-1]) * incr))))
    assert abs(ou.at(1.0) - direct[1000]) <= 10 * dt
    assert np.max(np.abs(z - direct)) <= 10 * dt


def test_integral_z_basics():
    ou = ou_stationary(generate_brownian_path(4, -20.0, 2.0, 1e-3))
    assert integral_z(ou, 0.7, 0.7) == 0.0
    _, z, cum = ou.forward(1.0)
    assert integral_z(ou, 0.0, 1.0) == pytest.approx(trapezoid(z, dx=1e-3), abs=1e-12)
    assert cum[-1] == pytest.approx(integral_z(ou, 0.0, 1.0), abs=1e-12)
    with pytest.raises(ConfigurationError):
        integral_z(ou, 0.0, 3.0)


def test_integral_z_mean_zero(ensemble):
    vals = np.array([integral_z(o, 0.0, 1.0) for o in ensemble])
    ok, est, se = within_3se(vals, 0.0, variance=False)
    assert ok, (est, se)


def test_ito_trivial_integrands():
    p = generate_brownian_path(11, -1.0, 2.0, 1e-3)
    w = lambda t: p.values[p.index_of(t)]
    assert ito_integral(p, lambda t: np.ones_like(t), 0.5, 1.5) == pytest.approx(w(1.5) - w(0.5), abs=1e-12)
    assert ito_integral(p, lambda t: 0.0 * t, -1.0, 2.0) == 0.0
    assert ito_integral(p, lambda t: t, 1.0, 1.0) == 0.0
    with pytest.raises(ConfigurationError):
        ito_integral(p, lambda t: t, 0.0, 3.0)
    with pytest.raises(ConfigurationError):
        ito_integral(p, lambda t: np.full_like(t, np.inf), 0.0, 1.0)


@pytest.mark.parametrize("a", [1.0, 3.0])
def test_ito_isometry(ensemble, a):
    vals = np.array([ito_integral(o.path, lambda t: np.exp(-a * t), 0.0, 10.0) for o in ensemble])
    ok, est, se = within_3se(vals, 1.0 / (2.0 * a))
    assert ok, (a, est, se)


def test_path_csv_round_trip(tmp_path):
    ou = ou_stationary(generate_brownian_path(3, -20.0, 0.5, 1e-2))
    f = tmp_path / "path.csv"
    write_path_csv(ou, f)
    with open(f) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "W", "Z"]
    data = np.array(rows[1:], dtype=float)
    assert np.array_equal(data[:, 1], ou.path.values)
    assert np.array_equal(data[:, 2], ou.values)


def test_scaled_path_is_linear():
    p = generate_brownian_path(2, -20.0, 1.0, 1e-2)
    a, b = ou_stationary(p), ou_stationary(p.scaled(-2.0))
    np.testing.assert_allclose(b.values, -2.0 * a.values, rtol=1e-12, atol=1e-15)
