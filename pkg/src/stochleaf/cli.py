"""``stochleaf`` command line.

Exit status: 0 success, 1 gap or validation failure, 2 numerical
non-convergence.
"""

import logging
import sys

import click

from . import __version__
from .errors import BlowUpError, ConfigurationError, ConvergenceError, DomainError
from .experiments import (
    load_config,
    make_config,
    run_converge,
    run_gap,
    run_leaf,
    run_mc,
    run_membership,
)

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


def _common(fn):
    options = [
        click.option("--model", help="example1 | example1_linear | example2 | custom"),
        click.option("--cutoff-radius", type=float, help="radius rho of the smooth cut-off"),
        click.option("--num-modes", type=int, help="Galerkin modes (example2)"),
        click.option("--phi0", help="base point, comma separated"),
        click.option("--xi-grid", help="start:stop:step per stable coordinate, comma separated"),
        click.option("--epsilon", help="noise intensity or comma-separated list"),
        click.option("--seed", type=int, help="single seed (also the base seed for --count)"),
        click.option("--seeds", help="seed list '1,2,3' or range 'a:b'"),
        click.option("--count", type=int, help="use seeds base+k, k < count"),
        click.option("--dt", type=float),
        click.option("--t-max", type=float, help="forward horizon T (also the path length)"),
        click.option("--t-min", type=float, help="start of the two-sided path"),
        click.option("--eta", help="weight exponent or 'auto'"),
        click.option("--tol", type=float),
        click.option("--out", envvar="STOCHLEAF_OUT", help="output directory [env STOCHLEAF_OUT]"),
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="flat TOML file"),
        click.option("--workers", type=int, help="worker processes"),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def _config(verb, config_path, **flags):
    file_values = load_config(config_path) if config_path else {}
    if flags.get("eta") == "auto":
        flags["eta"] = None
        file_values = {k: v for k, v in file_values.items() if k != "eta"}
    return make_config(verb, file_values, flags)


@click.group()
@click.version_option(__version__, prog_name="stochleaf")
@click.option("-v", "--verbose", count=True)
def cli(verbose):
    """Random stable leaves: expansion, oracle and experiments."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@_common
@click.option("--order", type=click.IntRange(0, 1), help="expansion order of the written leaves")
def leaf(config_path, **flags):
    """Leaf curves per seed plus the deterministic leaf."""
    cfg = _config("leaf", config_path, **flags)
    res = run_leaf(cfg)
    for p in res["outputs"]:
        click.echo(f"wrote {p}")
    click.echo(f"wrote {res['manifest']}")
    return EXIT_OK


@cli.command()
@_common
@click.option("--order0", is_flag=True, default=None, help="drop the first-order term")
def converge(config_path, order0, **flags):
    """Remainder slope of |oracle - expansion| against epsilon."""
    if order0:
        flags["order"] = 0
    cfg = _config("converge", config_path, **flags)
    rep = run_converge(cfg)
    for e, m in zip(rep.epsilons, rep.mean_errors):
        click.echo(f"epsilon={e:.6g} mean_error={m:.6e}")
    click.echo(f"slope={rep.slope:.6f} ci=({rep.slope_ci[0]:.4f}, {rep.slope_ci[1]:.4f}) order={rep.order}")
    if rep.excluded:
        click.echo(f"excluded oracle runs: {rep.excluded}")
    return EXIT_OK


@cli.command()
@_common
def mc(config_path, **flags):
    """Monte Carlo statistics of the first-order correction."""
    cfg = _config("mc", config_path, **flags)
    res = run_mc(cfg)
    r = res["results"]
    click.echo(f"paths={r['paths']} var_z0={r['var_z0']:.6f} (se {r['se_var_z0']:.2g})")
    for k, g in enumerate(r.get("g", [])):
        click.echo(f"xi[{k}] mean_g={g['mean_g']:.6f} var_g={g['var_g']:.6f} (se {g['se_var_g']:.2g})")
    for p in res["outputs"]:
        click.echo(f"wrote {p}")
    return EXIT_OK


@cli.command()
@_common
@click.option("--K", "bound_K", type=float, help="dichotomy constant")
@click.option("--lipschitz", type=float, help="Lipschitz constant L_F")
@click.option("--alpha", type=float)
@click.option("--beta", type=float)
def gap(config_path, bound_K, lipschitz, alpha, beta, **flags):
    """Gap condition report; exit 1 when it fails."""
    eta = flags.get("eta")
    cfg = _config("gap", config_path, **flags)
    rep = run_gap(cfg, bound_K, lipschitz, alpha, beta, None if eta in (None, "auto") else float(eta))
    for key in ("model", "alpha", "beta", "K", "L_F", "eta", "gap_value", "margin", "satisfied"):
        v = rep[key]
        click.echo(f"{key} = {v!r}" if isinstance(v, float) else f"{key} = {v}")
    return EXIT_OK if rep["satisfied"] else EXIT_INVALID


@cli.command()
@_common
@click.option("--order", type=click.IntRange(0, 1))
@click.option("--horizon", "membership_horizon", type=float, help="forward horizon of the decay test")
@click.option("--control-offset", type=float, help="unstable offset of the control points")
@click.option("--curve-stride", type=int, help="time-step stride of the emitted curves")
def membership(config_path, **flags):
    """Forward decay test on expansion-leaf points and unstable controls."""
    cfg = _config("membership", config_path, **flags)
    res = run_membership(cfg)
    r = res["results"]
    click.echo(f"leaf points decaying: {r['leaf_decaying_fraction']:.2%} of {r['leaf_points']}")
    click.echo(f"control points decaying: {r['control_decaying_fraction']:.2%} of {r['control_points']}")
    for p in res["outputs"]:
        click.echo(f"wrote {p}")
    return EXIT_OK


def main(argv=None):
    """Run the CLI and return the exit status instead of exiting."""
    try:
        rv = cli.main(args=argv, prog_name="stochleaf", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except (click.UsageError, click.Abort) as exc:
        if isinstance(exc, click.UsageError):
            exc.show()
        return EXIT_INVALID
    except (ConfigurationError, DomainError, click.ClickException) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_INVALID
    except (ConvergenceError, BlowUpError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return EXIT_NUMERICAL
    return rv if isinstance(rv, int) else EXIT_OK


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
