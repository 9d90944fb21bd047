"""Command-line front end.

Subcommands::

    nuvmpc run CONFIG [--out-dir D] [--max-iters N] [--tol X] [--svg] [--version V]
    nuvmpc scalar-sweep --prior box --a -1 --b 1 --gamma 1 --s2 0.5,2 --mu-range -3:3:61
    nuvmpc verify [--suite NAME ...] [--inject-fault]
    nuvmpc export-model CONFIG --out model.json

``run`` exits 0 when the solver converged, 2 when it hit the iteration
limit and 1 on any error (in which case nothing is written).
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import datetime as _dt
import io
import json
import logging
import os
import sys
import tempfile

import numpy as np

from . import __version__
from . import iake as _iake
from . import priors as _priors
from . import scalar_lab as _sl
from .lssm import LinearizationError, model_to_dict
from .mbf import SmootherSingularity
from .priors import ContractError, NuvKind, NuvSpec, PriorParams, initial_params
from .scalar_lab import NumericFailure

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2

SOLVER_ERRORS = (ContractError, NumericFailure, SmootherSingularity, LinearizationError,
                 ArithmeticError, np.linalg.LinAlgError, OSError)

PRIOR_NAMES = {
    "box": NuvKind.BOX,
    "half-space-lower": NuvKind.HALF_SPACE_LOWER,
    "half-space-upper": NuvKind.HALF_SPACE_UPPER,
    "binarizing-am": NuvKind.BINARIZING_AM,
    "binarizing-em": NuvKind.BINARIZING_EM,
    "l1": NuvKind.L1,
    "plain": NuvKind.PLAIN,
}


def _err(msg: str):
    print(f"error: {msg}", file=sys.stderr)


def worker_count(n_jobs: int) -> int:
    """Worker cap from ``NUVMPC_THREADS`` (default: CPU count)."""
    raw = os.environ.get("NUVMPC_THREADS")
    cap = os.cpu_count() or 1
    if raw:
        try:
            cap = max(1, int(raw))
        except ValueError:
            raise ContractError(f"NUVMPC_THREADS must be an integer, got {raw!r}")
    return max(1, min(cap, n_jobs))


def _manifest(args, command: str) -> dict:
    return {
        "command": command,
        "config": getattr(args, "config_path", None),
        "seed": args.seed,
        "out_dir": os.path.abspath(args.out_dir),
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


def _write_all(out_dir: str, files: dict):
    """Write every file or none: stage in a temporary directory, then move."""
    os.makedirs(out_dir, exist_ok=True)
    with tempfile.TemporaryDirectory(dir=out_dir) as tmp:
        for name, text in files.items():
            with open(os.path.join(tmp, name), "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        for name in files:
            os.replace(os.path.join(tmp, name), os.path.join(out_dir, name))


def _load_scenario(args):
    from .scenarios import load_config

    overrides = {}
    if getattr(args, "scenario_version", None) is not None:
        overrides["version"] = args.scenario_version
    iake = {}
    if getattr(args, "max_iters", None) is not None:
        iake["max_iters"] = args.max_iters
    if getattr(args, "tol", None) is not None:
        iake["param_tol"] = args.tol
    return load_config(args.config_path, overrides, iake)


def _config_path(args):
    path = args.config or args.config_pos
    if path is None:
        raise ContractError("a scenario config is required (positional or --config)")
    args.config_path = path
    return path


def cmd_run(args) -> int:
    from .scenarios import ConfigError, run_scenario
    from .scenarios.io import summary_json, trace_csv
    from .svg import scenario_svg

    try:
        _config_path(args)
        cfg = _load_scenario(args)
    except (ConfigError, ContractError, OSError) as err:
        _err(f"{getattr(args, 'config_path', '')}: {err}")
        return EXIT_ERROR
    if args.out_dir is None:
        args.out_dir = cfg.output.dir
    try:
        outcome = run_scenario(cfg)
        prefix = cfg.prefix
        files = {
            f"{prefix}_trace.csv": trace_csv(outcome),
            f"{prefix}_summary.json": summary_json(outcome, _manifest(args, "run"), cfg.to_dict()),
        }
        if args.svg or cfg.output.svg:
            extra = []
            if cfg.kind == "racetrack":
                from .scenarios.racetrack import cartesian_path

                K = cfg.params.K
                extra = [cartesian_path(cfg.params, np.full(K + 1, s * cfg.params.z_max))
                         for s in (-1.0, 1.0)]
            files[f"{prefix}.svg"] = scenario_svg(outcome, extra)
        _write_all(args.out_dir, files)
    except SOLVER_ERRORS as err:
        _err(f"{type(err).__name__}: {err}")
        return EXIT_ERROR
    status = "converged" if outcome.converged else "did not converge"
    if not args.quiet:
        print(f"{cfg.kind}: {status} after {outcome.iterations} iterations "
              f"({outcome.wall_time:.2f} s)")
        for k, v in outcome.metrics.items():
            print(f"  {k}: {v}")
    return EXIT_OK if outcome.converged else EXIT_NOT_CONVERGED


def parse_mu_range(text: str):
    """``start:stop:num`` (inclusive, like ``numpy.linspace``)."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ContractError(f"mu range must look like start:stop:num, got {text!r}")
    start, stop = float(parts[0]), float(parts[1])
    num = int(parts[2])
    if num < 0:
        raise ContractError("mu range count must be nonnegative")
    if num > 0 and stop < start:
        raise ContractError("mu range stop must not be below start")
    return np.linspace(start, stop, num)


def parse_list(text: str):
    vals = [float(v) for v in text.split(",") if v.strip()]
    if not vals:
        raise ContractError("expected a comma-separated list of numbers")
    return vals


def cmd_scalar_sweep(args) -> int:
    try:
        spec = NuvSpec(PRIOR_NAMES[args.prior], gamma=args.gamma, a=args.a, b=args.b)
        s2s = parse_list(args.s2)
        if any(not s > 0 for s in s2s):
            raise ContractError("every s2 must be positive")
        mus = parse_mu_range(args.mu_range)
        init = initial_params(spec)
        if args.init_mean is not None or args.init_var is not None:
            init = PriorParams(init.fwd_mean if args.init_mean is None else args.init_mean,
                               init.fwd_variance if args.init_var is None else args.init_var)
        rows = _sl.sweep(spec, mus, s2s, init, args.max_iters, args.tol)
    except (ContractError, NumericFailure, ValueError) as err:
        _err(str(err))
        return EXIT_ERROR
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mu", "s2", "x_hat", "iterations", "converged"])
    for mu, s2, x, it, conv in rows:
        w.writerow([format(mu, ".17g"), format(s2, ".17g"), format(x, ".17g"), it, int(conv)])
    if args.out:
        try:
            _write_all(os.path.dirname(os.path.abspath(args.out)),
                       {os.path.basename(args.out): buf.getvalue()})
        except OSError as err:
            _err(str(err))
            return EXIT_ERROR
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


@contextlib.contextmanager
def perturbed_rules(shift: float = 0.1):
    """Shift every NUV mean update; used to check that ``verify`` catches broken rules."""
    orig_update, orig_arrays = _sl.update, _iake.rule_arrays

    def bad_update(spec, post):
        p = orig_update(spec, post)
        return PriorParams(p.fwd_mean + shift, p.fwd_variance)

    def bad_arrays(*a, **kw):
        m, v = orig_arrays(*a, **kw)
        return m + shift, v

    _sl.update, _iake.rule_arrays = bad_update, bad_arrays
    try:
        yield
    finally:
        _sl.update, _iake.rule_arrays = orig_update, orig_arrays


def cmd_verify(args) -> int:
    from .verify import SUITES, format_table, run_suites

    names = args.suite or [n for n in SUITES if n != "timing" or not args.no_timing]
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        _err(f"unknown suite(s) {', '.join(unknown)}; choose from {', '.join(SUITES)}")
        return EXIT_ERROR
    try:
        workers = worker_count(len(names))
    except ContractError as err:
        _err(str(err))
        return EXIT_ERROR
    ctx = perturbed_rules() if args.inject_fault else contextlib.nullcontext()
    with ctx:
        checks = run_suites(names, args.seed, workers)
    print(format_table(checks))
    ok = all(c.passed for c in checks)
    print(f"{sum(c.passed for c in checks)}/{len(checks)} checks passed")
    return EXIT_OK if ok else EXIT_ERROR


def cmd_export_model(args) -> int:
    from .scenarios import ConfigError, build_scenario
    from .scenarios.base import LinearProblem

    try:
        _config_path(args)
        cfg = _load_scenario(args)
        prob = build_scenario(cfg)
        if isinstance(prob, LinearProblem):
            model, bc = prob.model, prob.bc
        else:  # linearized around the initial trajectory
            model, bc = prob.linearize(prob.x_init, prob.u_init)
        doc = model_to_dict(model, bc, prob.attachments)
        doc["scenario"] = cfg.to_dict()
        text = json.dumps(doc, indent=1) + "\n"
        out = args.out or f"{cfg.prefix}_model.json"
        _write_all(os.path.dirname(os.path.abspath(out)), {os.path.basename(out): text})
    except (ConfigError, *SOLVER_ERRORS) as err:
        _err(str(err))
        return EXIT_ERROR
    if not args.quiet:
        print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nuvmpc",
                                description="Constrained MPC with NUV priors and Kalman smoothing.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("config_pos", nargs="?", metavar="CONFIG", help="scenario JSON")
            sp.add_argument("--config", help="scenario JSON (alternative to the positional)")
        sp.add_argument("--seed", type=int, default=1234, help="64-bit seed (default 1234)")
        sp.add_argument("--quiet", action="store_true")

    r = sub.add_parser("run", help="run a scenario")
    common(r)
    r.add_argument("--out-dir", default=None, help="output directory (default from config or .)")
    r.add_argument("--max-iters", type=int, default=None)
    r.add_argument("--tol", type=float, default=None, help="parameter convergence tolerance")
    r.add_argument("--svg", action="store_true", help="also write an SVG plot")
    r.add_argument("--version", dest="scenario_version", type=int, default=None,
                   help="corridor version 1-5 (overrides params.version)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("scalar-sweep", help="scalar estimate over a grid of (mu, s2)")
    s.add_argument("--prior", choices=sorted(PRIOR_NAMES), default="box")
    s.add_argument("--a", type=float, default=0.0)
    s.add_argument("--b", type=float, default=1.0)
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--s2", default="0.3", help="comma-separated likelihood variances")
    s.add_argument("--mu-range", default="-1:2:31", help="start:stop:num")
    s.add_argument("--init-mean", type=float, default=None)
    s.add_argument("--init-var", type=float, default=None)
    s.add_argument("--max-iters", type=int, default=10_000)
    s.add_argument("--tol", type=float, default=1e-9)
    s.add_argument("--out", default=None, help="CSV path (default stdout)")
    s.add_argument("--seed", type=int, default=1234)
    s.set_defaults(func=cmd_scalar_sweep)

    v = sub.add_parser("verify", help="run the oracle suites")
    v.add_argument("--suite", action="append", help="suite to run (repeatable; default all)")
    v.add_argument("--no-timing", action="store_true", help="skip the K-scaling timing suite")
    v.add_argument("--inject-fault", action="store_true",
                   help="perturb the NUV update rules (the suites should then fail)")
    v.add_argument("--seed", type=int, default=1234)
    v.set_defaults(func=cmd_verify)

    e = sub.add_parser("export-model", help="write the scenario's (linearized) model as JSON")
    common(e)
    e.add_argument("--out", default=None)
    e.add_argument("--out-dir", default=".", help=argparse.SUPPRESS)
    e.add_argument("--version", dest="scenario_version", type=int, default=None,
                   help="corridor version 1-5")
    e.set_defaults(func=cmd_export_model)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
