"""Run configurations and the experiment drivers behind the CLI verbs.

Every driver writes CSV files (17 significant digits, header row) together
with a JSON manifest holding the full configuration and library version, so
a run can be repeated bit for bit.  Seed ensembles are ``seed + k``.
"""

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from itertools import product
from pathlib import Path
from typing import Optional

import numpy as np
import tomli
from scipy import stats

from . import __version__
from .dichotomy import default_eta, gap_value
from .errors import BlowUpError, ConfigurationError, ConvergenceError
from .expansion import TimeGrid, first_order_many, solve_order0, solve_order1
from .leaf_solver import lyapunov_perron_batch, verify_leaf_membership
from .models import MODELS, get_model, polynomial_model
from .noise import generate_brownian_path, ito_integral, ou_stationary

log = logging.getLogger(__name__)

OUT_ENV = "STOCHLEAF_OUT"
MC_CHUNK = 500

# per-verb defaults; a config file and then CLI flags override them
VERB_DEFAULTS = {
    "leaf": {},
    "converge": {"epsilon": (0.02, 0.04, 0.08, 0.16), "seeds": tuple(range(10))},
    "mc": {"dt": 1e-2, "t_max": 10.0, "xi_grid": "1", "seeds": tuple(range(10_000))},
    "gap": {},
    "membership": {"epsilon": (0.05,), "seeds": tuple(range(5))},
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _floats(value, what):
    if isinstance(value, str):
        parts = [p for p in value.replace(" ", "").split(",") if p]
        try:
            return tuple(float(p) for p in parts)
        except ValueError:
            raise ConfigurationError(f"{what}: cannot parse {value!r}") from None
    if isinstance(value, (int, float)):
        return (float(value),)
    return tuple(float(v) for v in value)


def parse_seeds(value):
    """``7`` -> (7,); ``"1,2,5"`` -> list; ``"0:100"`` -> range(0, 100)."""
    if isinstance(value, bool):
        raise ConfigurationError("seeds must be integers")
    if isinstance(value, int):
        return (value,)
    if isinstance(value, str):
        text = value.replace(" ", "")
        if ":" in text:
            try:
                a, b = (int(p) for p in text.split(":"))
            except ValueError:
                raise ConfigurationError(f"bad seed range {value!r}") from None
            if b <= a:
                raise ConfigurationError(f"empty seed range {value!r}")
            return tuple(range(a, b))
        try:
            return tuple(int(p) for p in text.split(",") if p)
        except ValueError:
            raise ConfigurationError(f"bad seed list {value!r}") from None
    return tuple(int(v) for v in value)


def _axis(spec):
    parts = spec.split(":")
    try:
        nums = [float(p) for p in parts]
    except ValueError:
        raise ConfigurationError(f"bad grid axis {spec!r}") from None
    if len(nums) == 1:
        return np.array(nums)
    if len(nums) != 3:
        raise ConfigurationError(f"grid axis {spec!r} must be start:stop:step")
    start, stop, step = nums
    if step <= 0:
        raise ConfigurationError(f"grid step must be positive in {spec!r}")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    if count < 1:
        raise ConfigurationError(f"grid axis {spec!r} has no points")
    return start + step * np.arange(count)


def parse_xi_grid(spec, model, phi0):
    """Cartesian grid of stable coordinates, shape (points, N).

    ``spec`` holds one comma-separated axis per stable coordinate, each
    ``start:stop:step`` (stop included) or a single value; stable
    coordinates without an axis stay at the base point's value.
    """
    axes = [a for a in spec.replace(" ", "").split(",") if a]
    stable = model.split.stable
    if not axes or len(axes) > stable.size:
        raise ConfigurationError(f"xi_grid needs 1..{stable.size} axes, got {len(axes)}")
    values = [_axis(a) for a in axes]
    pts = np.array(list(product(*values)))
    xi = np.zeros((len(pts), model.dimension))
    xi[:, stable] = np.asarray(phi0)[stable]
    xi[:, stable[: len(axes)]] = pts
    return xi


@dataclass(frozen=True)
class RunConfig:
    model: str = "example1"
    cutoff_radius: Optional[float] = None
    num_modes: Optional[int] = None
    eigenvalues: Optional[tuple] = None
    terms: Optional[tuple] = None
    phi0: Optional[tuple] = None
    xi_grid: str = "-1:1:0.25"
    epsilon: tuple = (0.1,)
    seeds: tuple = (0,)
    dt: float = 1e-3
    t_max: float = 20.0
    t_min: float = -20.0
    eta: Optional[float] = None
    tol: float = 1e-10
    order: int = 1
    out: Optional[str] = None
    workers: int = 1
    membership_horizon: float = 5.0
    control_offset: float = 0.5
    curve_stride: int = 10

    @classmethod
    def from_mapping(cls, mapping):
        """Build from flat key/value pairs (dashes allowed in keys)."""
        known = {f.name for f in fields(cls)}
        data = {}
        count = None
        for key, value in mapping.items():
            key = key.replace("-", "_")
            if isinstance(value, dict):
                raise ConfigurationError(f"nested table {key!r} not supported; use flat keys")
            if value is None:
                continue
            if key == "seed":
                key = "seeds"
            if key == "count":
                count = value
                continue
            if key not in known:
                raise ConfigurationError(f"unknown configuration key {key!r}")
            data[key] = value
        try:
            cfg = cls(**cls._coerce(data, count))
        except ConfigurationError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad configuration value: {exc}") from None
        cfg.validate()
        return cfg

    @staticmethod
    def _coerce(data, count):
        if "epsilon" in data:
            data["epsilon"] = _floats(data["epsilon"], "epsilon")
        if "phi0" in data:
            data["phi0"] = _floats(data["phi0"], "phi0")
        if "eigenvalues" in data:
            data["eigenvalues"] = _floats(data["eigenvalues"], "eigenvalues")
        if "terms" in data:
            data["terms"] = tuple((int(c), float(a), tuple(int(e) for e in ex)) for c, a, ex in data["terms"])
        if "eta" in data and data["eta"] == "auto":
            del data["eta"]
        if "seeds" in data:
            data["seeds"] = parse_seeds(data["seeds"])
        if count is not None:
            count = int(count)
            if count < 1:
                raise ConfigurationError("seed count must be positive")
            base = data.get("seeds", (0,))[0]
            data["seeds"] = tuple(range(base, base + count))
        for key in ("dt", "t_max", "t_min", "tol", "membership_horizon", "control_offset", "cutoff_radius", "eta"):
            if key in data:
                data[key] = float(data[key])
        for key in ("order", "workers", "curve_stride", "num_modes"):
            if key in data:
                data[key] = int(data[key])
        return data

    def validate(self):
        if self.model not in MODELS and self.model != "custom":
            raise ConfigurationError(f"unknown model {self.model!r}; choose from {sorted(MODELS) + ['custom']}")
        if self.model == "custom" and (self.eigenvalues is None or self.terms is None):
            raise ConfigurationError("model 'custom' needs eigenvalues and terms")
        if not self.epsilon:
            raise ConfigurationError("need at least one epsilon")
        if any(not (e >= 0) for e in self.epsilon):
            raise ConfigurationError("epsilon must be non-negative")
        if not self.seeds:
            raise ConfigurationError("need at least one seed")
        if not self.dt > 0 or not self.t_max > 0 or not self.t_min < 0:
            raise ConfigurationError("need dt > 0, t_max > 0 and t_min < 0")
        if not self.tol > 0:
            raise ConfigurationError("tol must be positive")
        if self.order not in (0, 1):
            raise ConfigurationError("order must be 0 or 1")
        if self.workers < 1 or self.curve_stride < 1:
            raise ConfigurationError("workers and curve_stride must be positive")
        if not 0 < self.membership_horizon <= self.t_max:
            raise ConfigurationError("membership_horizon must lie in (0, t_max]")
        TimeGrid(self.dt, self.t_max)

    def build_model(self):
        if self.model == "custom":
            return polynomial_model(self.eigenvalues, self.terms, self.cutoff_radius)
        kwargs = {}
        if self.cutoff_radius is not None:
            kwargs["cutoff_radius"] = self.cutoff_radius
        if self.num_modes is not None:
            if self.model != "example2":
                raise ConfigurationError("num_modes only applies to example2")
            kwargs["num_modes"] = self.num_modes
        try:
            return get_model(self.model, **kwargs)
        except TypeError:
            raise ConfigurationError(f"model {self.model!r} does not accept {sorted(kwargs)}") from None

    def base_point(self, model):
        if self.phi0 is None:
            return np.zeros(model.dimension)
        if len(self.phi0) != model.dimension:
            raise ConfigurationError(f"phi0 needs {model.dimension} coordinates")
        return np.array(self.phi0)

    def output_dir(self):
        out = Path(self.out or os.environ.get(OUT_ENV) or ".")
        out.mkdir(parents=True, exist_ok=True)
        return out

    def to_dict(self):
        d = asdict(self)
        for key, value in d.items():
            if isinstance(value, tuple):
                d[key] = json.loads(json.dumps(value))
        return d


def load_config(path):
    """Read a flat TOML file into a plain dict (nested tables rejected)."""
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"config {path}: {exc}") from None
    for key, value in data.items():
        if isinstance(value, dict):
            raise ConfigurationError(f"config {path}: nested table {key!r} not supported")
    return data


def make_config(verb, file_values=None, flags=None):
    """Verb defaults, then config-file values, then flags (flags win)."""
    layered = dict(VERB_DEFAULTS.get(verb, {}))
    for layer in (file_values or {}, flags or {}):
        layer = {k.replace("-", "_"): v for k, v in layer.items() if v is not None}
        if "seed" in layer or "seeds" in layer:
            layered.pop("seeds", None)
            layered.pop("seed", None)
        layered.update(layer)
    if "count" in layered and "seed" not in layered and "seeds" in layered:
        # a count alone keeps the base seed of the defaults
        layered["seed"] = parse_seeds(layered.pop("seeds"))[0]
    return RunConfig.from_mapping(layered)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def write_manifest(path, verb, cfg, outputs, results):
    manifest = {
        "command": verb,
        "version": __version__,
        "config": cfg.to_dict(),
        "outputs": [Path(p).name for p in outputs],
        "results": results,
    }
    with open(path, "w") as fh:
        json.dump(_jsonable(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _path(cfg, seed):
    return ou_stationary(generate_brownian_path(seed, cfg.t_min, cfg.t_max, cfg.dt))


def _labels(model, which):
    mask = {"stable": model.split.stable_mask, "unstable": model.split.unstable_mask}[which]
    return [lab for lab, m in zip(model.labels, mask) if m]


def _map(fn, tasks, workers):
    """Ordered map; a process pool when ``workers > 1``."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*tasks)))


_state_cache = {}


def _order0_state(cfg, xi_spec=None):
    """Order-0 state for ``cfg`` (cached per process)."""
    key = (cfg, xi_spec)
    if key not in _state_cache:
        model = cfg.build_model()
        phi0 = cfg.base_point(model)
        xi = parse_xi_grid(cfg.xi_grid if xi_spec is None else xi_spec, model, phi0)
        state = solve_order0(model, phi0, xi, TimeGrid(cfg.dt, cfg.t_max), eta=cfg.eta, tol=cfg.tol)
        _state_cache.clear()
        _state_cache[key] = (model, state)
    return _state_cache[key]


# ---------------------------------------------------------------------------
# leaf
# ---------------------------------------------------------------------------


def _leaf_rows(model, xi, l_d, l_1, eps):
    s, u = model.split.stable, model.split.unstable
    pred = xi + l_d + eps * l_1
    return [list(xi[k, s]) + list(l_d[k, u]) + list(l_1[k, u]) + list(pred[k]) for k in range(len(xi))]


def _leaf_header(model):
    st, un = _labels(model, "stable"), _labels(model, "unstable")
    return (
        [f"xi_{a}" for a in st]
        + [f"l_d_{a}" for a in un]
        + [f"l_1_{a}" for a in un]
        + [f"leaf_pred_{a}" for a in model.labels]
    )


def _leaf_task(cfg, seed):
    model, state = _order0_state(cfg)
    s1 = solve_order1(model, state, _path(cfg, seed), tol=cfg.tol)
    return s1.l_1, s1.info["order1_iterations"], s1.info["order1_residual"]


def run_leaf(cfg):
    """Per-seed leaf CSVs plus the deterministic (eps = 0) leaf and a manifest."""
    model, state = _order0_state(cfg)
    out = cfg.output_dir()
    header = _leaf_header(model)
    zeros = np.zeros_like(state.l_d)
    outputs = [write_csv(out / "leaf_deterministic.csv", header, _leaf_rows(model, state.xi, state.l_d, zeros, 0.0))]
    per_seed = _map(_leaf_task, [(cfg, s) for s in cfg.seeds], cfg.workers)
    order1 = {}
    for seed, (l_1, iters, res) in zip(cfg.seeds, per_seed):
        if cfg.order == 0:
            l_1 = zeros
        order1[str(seed)] = {"iterations": iters, "residual": res}
        for eps in cfg.epsilon:
            name = f"leaf_seed{seed}_eps{eps:.6g}.csv"
            outputs.append(write_csv(out / name, header, _leaf_rows(model, state.xi, state.l_d, l_1, eps)))
    results = {
        "gap_value": state.info["gap_value"],
        "gap_margin": state.info["gap_margin"],
        "gap_satisfied": state.info["gap_satisfied"],
        "eta": state.eta,
        "order0_iterations": state.info["order0_iterations"],
        "order0_residuals": state.info["order0_residuals"],
        "order0_tail_bound": state.info["order0_tail_bound"],
        "order1": order1,
    }
    manifest = write_manifest(out / "leaf_manifest.json", "leaf", cfg, outputs, results)
    return {"outputs": outputs, "manifest": manifest, "results": results}


# ---------------------------------------------------------------------------
# convergence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceReport:
    epsilons: tuple
    mean_errors: tuple
    slope: float
    slope_ci: tuple
    per_seed_slopes: tuple
    seeds: tuple
    errors: np.ndarray = field(repr=False)
    order: int = 1
    excluded: int = 0

    def to_dict(self):
        d = asdict(self)
        d["errors"] = self.errors.tolist()
        return d


def fit_slope(epsilons, errors):
    """Least-squares slope of log(error) against log(epsilon)."""
    x = np.log(np.asarray(epsilons, dtype=float))
    y = np.log(np.asarray(errors, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def _converge_task(cfg, seed):
    model, state = _order0_state(cfg)
    ou = _path(cfg, seed)
    l_1 = solve_order1(model, state, ou, tol=cfg.tol).l_1 if cfg.order == 1 else np.zeros_like(state.l_d)
    errs = []
    for eps in cfg.epsilon:
        try:
            leaf, _, hist = lyapunov_perron_batch(model, state.xi, state.base_point, eps, ou, cfg.eta, cfg.t_max, cfg.tol)
        except (ConvergenceError, BlowUpError) as exc:
            log.warning("seed %d, eps %g: oracle failed (%s)", seed, eps, exc)
            errs.append(np.nan)
            continue
        if hist[-1] >= cfg.tol:
            log.warning("seed %d, eps %g: oracle residual %.3g above tol", seed, eps, hist[-1])
            errs.append(np.nan)
            continue
        errs.append(float(np.max(np.abs(leaf - (state.l_d + eps * l_1)))))
    return errs


def run_converge(cfg):
    eps = tuple(cfg.epsilon)
    if any(e <= 0 for e in eps):
        raise ConfigurationError("epsilon = 0 has no logarithm; use strictly positive epsilons")
    if len(eps) < 3:
        raise ConfigurationError("convergence study needs at least 3 epsilons")
    if any(b <= a for a, b in zip(eps, eps[1:])):
        raise ConfigurationError("epsilons must be strictly increasing")
    if len(cfg.seeds) < 5:
        raise ConfigurationError("convergence study needs at least 5 seeds")
    _order0_state(cfg)
    errors = np.array(_map(_converge_task, [(cfg, s) for s in cfg.seeds], cfg.workers))
    excluded = int(np.isnan(errors).sum())
    if excluded:
        log.warning("%d (seed, epsilon) oracle runs excluded", excluded)
    mean = np.nanmean(errors, axis=0)
    if not np.all(mean > 0):
        raise ConfigurationError("errors must be positive for a log-log fit (is the model linear?)")
    slope = fit_slope(eps, mean)
    good = [r for r in errors if np.all(np.isfinite(r)) and np.all(r > 0)]
    per_seed = np.array([fit_slope(eps, r) for r in good])
    if per_seed.size >= 2:
        half = stats.t.ppf(0.975, per_seed.size - 1) * per_seed.std(ddof=1) / np.sqrt(per_seed.size)
        ci = (float(per_seed.mean() - half), float(per_seed.mean() + half))
    else:
        ci = (math.nan, math.nan)
    report = ConvergenceReport(eps, tuple(float(m) for m in mean), slope, ci, tuple(per_seed.tolist()),
                               tuple(cfg.seeds), errors, cfg.order, excluded)
    out = cfg.output_dir()
    rows = [(s, e, errors[i, j]) for i, s in enumerate(cfg.seeds) for j, e in enumerate(eps)]
    outputs = [
        write_csv(out / "converge_errors.csv", ["seed", "epsilon", "error"], rows),
        write_csv(out / "converge_summary.csv", ["epsilon", "mean_error"], list(zip(eps, mean))),
    ]
    results = {"slope": slope, "slope_ci": ci, "per_seed_slopes": per_seed, "mean_errors": mean,
               "order": cfg.order, "excluded": excluded}
    write_manifest(out / "converge_manifest.json", "converge", cfg, outputs, results)
    return report


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


def _mc_task(cfg, seeds):
    model, state = _order0_state(cfg)
    ous = [_path(cfg, s) for s in seeds]
    l_1 = first_order_many(model, state, ous, tol=cfg.tol)
    z0 = np.array([o.z0 for o in ous])
    tail = np.array([ito_integral(o.path, lambda t: np.exp(-3.0 * t), 0.0, cfg.t_max) for o in ous])
    return l_1, z0, tail


def _mean_var(x):
    n = x.shape[0]
    mean = x.mean(axis=0)
    var = x.var(axis=0, ddof=1)
    return mean, var, np.sqrt(var / n), var * np.sqrt(2.0 / (n - 1))


def run_mc(cfg):
    """Sample mean and variance of l_1 at each grid point over the seed ensemble."""
    if len(cfg.seeds) < 100:
        raise ConfigurationError("Monte Carlo needs at least 100 seeds")
    model, state = _order0_state(cfg)
    chunks = [cfg.seeds[i : i + MC_CHUNK] for i in range(0, len(cfg.seeds), MC_CHUNK)]
    parts = _map(_mc_task, [(cfg, c) for c in chunks], cfg.workers)
    l_1 = np.concatenate([p[0] for p in parts])
    z0 = np.concatenate([p[1] for p in parts])
    tail = np.concatenate([p[2] for p in parts])
    n = l_1.shape[0]
    s, u = model.split.stable, model.split.unstable
    mean, var, se_mean, se_var = _mean_var(l_1)
    header = [f"xi_{a}" for a in _labels(model, "stable")]
    un = _labels(model, "unstable")
    for a in un:
        header += [f"l_d_{a}", f"mean_l_1_{a}", f"var_l_1_{a}", f"se_mean_l_1_{a}", f"se_var_l_1_{a}"]
    eps_cols = [f"mean_leaf_{a}_eps{e:.6g}" for e in cfg.epsilon for a in un]
    header += eps_cols
    example1 = model.name == "example1"
    if example1:
        header += ["mean_g", "var_g", "se_mean_g", "se_var_g"]
    rows = []
    stats_g = []
    x0 = state.base_point[0]
    for k in range(len(state.xi)):
        row = list(state.xi[k, s])
        for j in u:
            row += [state.l_d[k, j], mean[k, j], var[k, j], se_mean[k, j], se_var[k, j]]
        for e in cfg.epsilon:
            row += [state.l_d[k, j] + e * mean[k, j] for j in u]
        if example1:
            scale = -(state.xi[k, 0] ** 2 - x0**2) / 3.0
            if scale != 0.0:
                g = l_1[:, k, 1] / scale
                gm, gv, gse, gsv = _mean_var(g)
            else:
                gm = gv = gse = gsv = math.nan
            row += [gm, gv, gse, gsv]
            stats_g.append({"mean_g": gm, "var_g": gv, "se_mean_g": gse, "se_var_g": gsv})
        rows.append(row)
    out = cfg.output_dir()
    outputs = [write_csv(out / "mc_statistics.csv", header, rows)]
    zs = _mean_var(z0)
    ts = _mean_var(tail)
    results = {
        "paths": n,
        "var_z0": zs[1], "se_var_z0": zs[3],
        "var_exp3_integral": ts[1], "se_var_exp3_integral": ts[3],
    }
    if example1:
        results["g"] = stats_g
    write_manifest(out / "mc_manifest.json", "mc", cfg, outputs, results)
    return {"outputs": outputs, "results": results, "l_1": l_1, "z0": z0, "exp3_integral": tail, "xi": state.xi}


# ---------------------------------------------------------------------------
# gap condition
# ---------------------------------------------------------------------------


def run_gap(cfg, bound_K=None, lipschitz=None, alpha=None, beta=None, eta=None):
    """Gap report; explicit arguments replace the model's constants."""
    model = cfg.build_model()
    split = model.split
    K = split.bound_K if bound_K is None else float(bound_K)
    L = model.lipschitz_LF if lipschitz is None else float(lipschitz)
    a = split.alpha if alpha is None else float(alpha)
    b = split.beta if beta is None else float(beta)
    if eta is None:
        eta = cfg.eta
    if eta is None:
        eta = default_eta(split) if alpha is None and beta is None else 0.5 * (a + b)
    value = gap_value(K, L, a, b, float(eta))
    return {
        "model": model.name,
        "alpha": a,
        "beta": b,
        "K": K,
        "L_F": L,
        "eta": float(eta),
        "gap_value": value,
        "margin": 1.0 - value,
        "satisfied": bool(value < 1.0),
    }


# ---------------------------------------------------------------------------
# membership
# ---------------------------------------------------------------------------


def _membership_task(cfg, seed):
    model, state = _order0_state(cfg)
    ou = _path(cfg, seed)
    l_1 = solve_order1(model, state, ou, tol=cfg.tol).l_1 if cfg.order == 1 else np.zeros_like(state.l_d)
    u0 = model.split.unstable[0]
    results = []
    for eps in cfg.epsilon:
        points = state.xi + state.l_d + eps * l_1
        controls = points.copy()
        controls[:, u0] += cfg.control_offset
        for kind, pts in (("leaf", points), ("control", controls)):
            for k, p in enumerate(pts):
                r = verify_leaf_membership(model, p, state.base_point, eps, ou, cfg.eta, cfg.membership_horizon)
                results.append((seed, eps, kind, k, p, r))
    return results


def run_membership(cfg):
    """Decay test for expansion-leaf points and unstable-offset controls."""
    model, state = _order0_state(cfg)
    per_seed = _map(_membership_task, [(cfg, s) for s in cfg.seeds], cfg.workers)
    header = ["point", "seed", "epsilon", "kind", "grid_index"] + [f"u_{a}" for a in model.labels]
    header += ["weighted_sup", "final_weighted_norm", "decaying"]
    rows, curves = [], []
    counts = {"leaf": [0, 0], "control": [0, 0]}
    stride = cfg.curve_stride
    for block in per_seed:
        for seed, eps, kind, k, p, r in block:
            idx = len(rows)
            rows.append([idx, seed, eps, kind, k] + list(p) + [r.weighted_sup, r.weighted_norm[-1], r.decaying])
            counts[kind][0] += int(r.decaying)
            counts[kind][1] += 1
            sel = slice(0, None, stride)
            curves.extend([idx, t, w] for t, w in zip(r.times[sel], r.weighted_norm[sel]))
    out = cfg.output_dir()
    outputs = [
        write_csv(out / "membership.csv", header, rows),
        write_csv(out / "membership_curves.csv", ["point", "t", "weighted_norm"], curves),
    ]
    results = {
        "leaf_decaying_fraction": counts["leaf"][0] / max(counts["leaf"][1], 1),
        "control_decaying_fraction": counts["control"][0] / max(counts["control"][1], 1),
        "leaf_points": counts["leaf"][1],
        "control_points": counts["control"][1],
    }
    write_manifest(out / "membership_manifest.json", "membership", cfg, outputs, results)
    return {"outputs": outputs, "results": results, "rows": rows}
