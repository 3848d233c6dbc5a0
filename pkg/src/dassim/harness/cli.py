"""Command line entry point: ``dassim {generate,run,sample,transport}``.

Exit status is 0 on success, 2 for configuration or usage errors and 3 for
numerical failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .. import rng as rngmod
from ..errors import ConfigError, NumericalError
from ..prob import GaussianDensity
from ..samplers import bayes_linear_target, burn_in, gaussian_target, hmc_chain, mc_standard_error
from ..transport import discrete_optimal_coupling, squared_distance_cost
from .config import load_config
from .experiment import run_twin_experiment, twin_data, write_twin_data

log = logging.getLogger("dassim")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _config(args):
    if args.config is None:
        raise ConfigError("--config is required")
    return load_config(args.config).with_overrides(seed=args.seed, output=args.output,
                                                    oracle=getattr(args, "oracle", False))


def cmd_generate(args):
    cfg = _config(args)
    data = twin_data(cfg)
    out = cfg.output or "."
    write_twin_data(data, out)
    log.info("wrote twin data for %d steps to %s", cfg.n_steps, out)
    return EXIT_OK


def cmd_run(args):
    cfg = _config(args)
    rec = run_twin_experiment(cfg, output=cfg.output or ".")
    print(json.dumps({"filter": cfg.filter_name, **rec.summary()}, sort_keys=True))
    return EXIT_OK


def cmd_sample(args):
    if args.target == "gaussian":
        t = gaussian_target(np.zeros(args.dim), np.eye(args.dim))
    else:
        # default conjugate problem: 2D prior, one scalar observation of x1 + x2
        prior = GaussianDensity(np.zeros(2), np.array([[1.0, 0.3], [0.3, 2.0]]))
        t = bayes_linear_target(prior, [[1.0, 1.0]], [[0.5]], [2.0])
    rng = rngmod.stream(args.seed, "sampler")
    res = hmc_chain(t, np.zeros(t.dim), args.eps, args.L, args.n, rng)
    kept = burn_in(res.samples)
    summary = {
        "target": args.target,
        "acceptance_rate": res.acceptance_rate,
        "mean": kept.mean(axis=0).tolist(),
        "std_error": mc_standard_error(kept).tolist(),
    }
    if args.output:
        d = Path(args.output)
        d.mkdir(parents=True, exist_ok=True)
        np.savetxt(d / "samples.csv", res.samples, delimiter=",", fmt="%.17g",
                   header=",".join(f"x_{i}" for i in range(1, t.dim + 1)), comments="")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _load_vector(path, what):
    try:
        return np.atleast_1d(np.loadtxt(path, delimiter=",", ndmin=1).astype(float).ravel())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read {what} from {path}: {exc}") from None


def cmd_transport(args):
    p = _load_vector(args.source, "source weights")
    q = _load_vector(args.target, "target weights")
    xs = _load_vector(args.source_points, "source points") if args.source_points else np.arange(p.size, dtype=float)
    ys = _load_vector(args.target_points, "target points") if args.target_points else np.arange(q.size, dtype=float)
    if xs.size != p.size or ys.size != q.size:
        raise ConfigError("support points and weights have different lengths")
    try:
        T = discrete_optimal_coupling(p, q, squared_distance_cost(xs, ys))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cost = T.cost(squared_distance_cost(xs, ys))
    if args.output:
        d = Path(args.output)
        d.mkdir(parents=True, exist_ok=True)
        np.savetxt(d / "coupling.csv", T.entries, delimiter=",", fmt="%.17g")
    print(json.dumps({"transport_cost": cost, "wasserstein2": float(np.sqrt(max(cost, 0.0)))}))
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="dassim", description="Ensemble data assimilation twin experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def experiment_flags(sp, oracle):
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--output", metavar="DIR", help="output directory (default: config or .)")
        if oracle:
            sp.add_argument("--oracle", action="store_true", help="add the exact Kalman reference columns")

    sp = sub.add_parser("generate", help="simulate truth and observations")
    experiment_flags(sp, False)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("run", help="run a twin experiment")
    experiment_flags(sp, True)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sample", help="MALA/HMC sampling of a built-in target")
    sp.add_argument("--target", choices=("gaussian", "bayes-linear"), default="gaussian")
    sp.add_argument("--dim", type=int, default=1)
    sp.add_argument("--eps", type=float, default=0.25)
    sp.add_argument("--L", type=int, default=1, help="leapfrog steps per proposal (1 = MALA)")
    sp.add_argument("--n", type=int, default=10000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output", metavar="DIR")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("transport", help="optimal coupling between two weight vectors")
    sp.add_argument("--source", required=True, metavar="PATH", help="comma/newline separated weights")
    sp.add_argument("--target", required=True, metavar="PATH")
    sp.add_argument("--source-points", metavar="PATH", help="1-D support points (default 0..M-1)")
    sp.add_argument("--target-points", metavar="PATH")
    sp.add_argument("--output", metavar="DIR")
    sp.set_defaults(func=cmd_transport)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
