"""Time the numba kernels against the pure-numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 3] [--steps 20000]

The first numba call (JIT compile, or cache load) is timed separately and
excluded from the steady-state numbers.  Outputs are checked for agreement
before any timing is reported.
"""

import argparse
import time

import numpy as np

from stochleaf import _kernels
from stochleaf.models import example1_model, example2_model
from stochleaf.noise import generate_brownian_path, ou_stationary


def _cases(steps, dt):
    ou = ou_stationary(generate_brownian_path(0, -20.0, steps * dt, dt))
    z = ou.values[ou.path.origin :]
    m1 = example1_model()
    m2 = example2_model(8)
    rng = np.random.default_rng(1)
    u1 = rng.uniform(-1, 1, (16, 2))
    u2 = 0.05 * rng.standard_normal((4, 8))
    f = rng.standard_normal((64, steps + 1, 2))
    a = np.exp(-dt * np.array([-1.0, 1.0]))
    return {
        "ou_recursion": lambda: _kernels.ou_recursion(ou.path.increments, np.exp(-dt)),
        "linear_recursion": lambda: _kernels.linear_recursion(f, a, 0.5 * dt, 0.5 * dt),
        "rk4_rde ex1": lambda: _kernels.rk4_rde(u1, m1.eigenvalues, m1.kernel_args, 0.1, z, dt, np.inf)[0],
        "rk4_rde ex2": lambda: _kernels.rk4_rde(u2, m2.eigenvalues, m2.kernel_args, 0.1, z, dt, np.inf)[0],
        "rk4_tangent ex1": lambda: _kernels.rk4_tangent(u1, 0 * u1, m1.eigenvalues, m1.kernel_args, z, dt, np.inf)[1],
    }


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--steps", type=int, default=20000)
    ap.add_argument("--dt", type=float, default=1e-3)
    args = ap.parse_args()

    cases = _cases(args.steps, args.dt)
    print(f"{'kernel':<18}{'first numba':>12}{'numba':>12}{'numpy':>12}{'speedup':>10}{'max diff':>11}")
    for name, fn in cases.items():
        with _kernels.use_backend("numba"):
            t0 = time.perf_counter()
            ref = fn()
            first = time.perf_counter() - t0
            t_nb = _time(fn, args.repeat)
        with _kernels.use_backend("numpy"):
            out = fn()
            t_np = _time(fn, args.repeat)
        diff = float(np.nanmax(np.abs(np.asarray(ref) - np.asarray(out))))
        print(f"{name:<18}{first:>11.3f}s{t_nb:>11.4f}s{t_np:>11.4f}s{t_np / t_nb:>9.1f}x{diff:>11.2e}")


if __name__ == "__main__":
    main()
