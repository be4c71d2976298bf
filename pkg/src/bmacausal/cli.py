"""Command line entry point: ``gen``, ``bench``, ``estimate`` and ``ate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .exact import PriorConfig
from .experiments import (
    ATE_METHODS,
    ESTIMATORS,
    ExperimentConfig,
    emit_report,
    estimate_ate,
    load_csv_dataset,
    mie_estimate,
    run_benchmark,
    write_csv_dataset,
)
from .scm import load_space, sample_model, simulate
from .vb import VBConfig

log = logging.getLogger("bmacausal")

SCM_METHODS = tuple(e for e in ESTIMATORS if e != "ipw")


def _add_prior_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--coeff-var", type=float, default=1.0, help="prior variance of each coefficient")
    p.add_argument("--noise-precision", type=float, default=1.0, help="known error precision")


def _add_vb_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kappa", type=float, default=1e-6)
    p.add_argument("--nu", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-6)


def _prior(args) -> PriorConfig:
    return PriorConfig(args.coeff_var, args.noise_precision)


def _vb(args) -> VBConfig:
    return VBConfig(args.kappa, args.nu, args.noise_precision, args.max_iter, args.tol)


def _cmd_gen(args) -> int:
    space = load_space(args.space)
    scm = sample_model(space, args.coeff_var, args.noise_precision, rng_seed=[args.seed, 0])
    data = simulate(scm, args.n, rng_seed=[args.seed, 1])
    write_csv_dataset(data, args.output)
    if args.truth:
        truth = {
            "edges": [{"from": a, "to": b, "weight": scm.weights[e]}
                      for (a, b), e in zip(scm.dag.edge_names(), scm.dag.edges)],
            "noise_precision": scm.noise_precision,
        }
        with open(args.truth, "w", encoding="utf-8") as fh:
            json.dump(truth, fh, indent=2)
            fh.write("\n")
    return 0


def _bench_config(args) -> ExperimentConfig:
    base = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base = json.load(fh)
    cfg = ExperimentConfig.from_dict(base)
    overrides = {"master_seed": args.seed}
    for flag, key in [("n1", "n1"), ("n2", "n2"), ("edge_prob", "edge_prob"),
                      ("trials", "trials"), ("x_value", "x_value"), ("mc_samples", "mc_samples")]:
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    if args.sample_sizes:
        overrides["sample_sizes"] = tuple(args.sample_sizes)
    if args.estimators:
        overrides["estimators"] = tuple(args.estimators)
    if args.no_direct_xy:
        overrides["include_direct_xy"] = False
    prior = dict(cfg.prior.__dict__)
    vb = dict(cfg.vb.__dict__)
    for flag, target, key in [("coeff_var", prior, "coeff_var"),
                              ("noise_precision", prior, "noise_precision"),
                              ("noise_precision", vb, "noise_precision"),
                              ("kappa", vb, "kappa"), ("nu", vb, "nu"),
                              ("max_iter", vb, "max_iter"), ("tol", vb, "tol")]:
        value = getattr(args, flag)
        if value is not None:
            target[key] = value
    overrides["prior"] = PriorConfig(**prior)
    overrides["vb"] = VBConfig(**vb)
    merged = cfg.to_dict()
    merged.update(overrides)
    return ExperimentConfig(**merged)


def _cmd_bench(args) -> int:
    cfg = _bench_config(args)

    def progress(t):
        if (t + 1) % max(1, cfg.trials // 10) == 0:
            log.info("trial %d/%d", t + 1, cfg.trials)

    report = run_benchmark(cfg, progress)
    emit_report(report, args.output)
    return 0


def _cmd_estimate(args) -> int:
    space = load_space(args.space)
    data = load_csv_dataset(args.data, columns=list(space.nodes), center=args.center)
    value = mie_estimate(space, data, args.method, args.x, args.y, args.x_value, _prior(args),
                         _vb(args), args.mc_samples, args.seed)
    print(repr(float(value)))
    return 0


def _cmd_ate(args) -> int:
    data = load_csv_dataset(args.data)
    value = estimate_ate(data, args.treatment, args.outcome, args.covariates, args.method,
                         _prior(args), _vb(args), edge_prob=args.edge_prob,
                         center=not args.no_center, lam=args.penalty)
    print(repr(float(value)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bmacausal", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="sample a model from a graph space and simulate a dataset")
    gen.add_argument("--space", required=True, help="graph-space JSON file")
    gen.add_argument("--n", type=int, required=True, help="number of rows")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--output", "-o", required=True, help="dataset CSV to write")
    gen.add_argument("--truth", help="optional JSON file for the sampled coefficients")
    _add_prior_flags(gen)
    gen.set_defaults(func=_cmd_gen)

    bench = sub.add_parser("bench", help="run the synthetic W/X/Z/Y benchmark")
    bench.add_argument("--seed", type=int, required=True, help="master seed")
    bench.add_argument("--config", help="JSON file with ExperimentConfig fields")
    bench.add_argument("--output", "-o", required=True, help="report CSV to write")
    bench.add_argument("--n1", type=int)
    bench.add_argument("--n2", type=int)
    bench.add_argument("--edge-prob", type=float)
    bench.add_argument("--no-direct-xy", action="store_true", help="drop the X->Y candidate edge")
    bench.add_argument("--sample-sizes", type=int, nargs="+")
    bench.add_argument("--trials", type=int)
    bench.add_argument("--estimators", nargs="+", choices=ESTIMATORS)
    bench.add_argument("--x-value", type=float)
    bench.add_argument("--mc-samples", type=int)
    bench.add_argument("--coeff-var", type=float)
    bench.add_argument("--noise-precision", type=float)
    bench.add_argument("--kappa", type=float)
    bench.add_argument("--nu", type=float)
    bench.add_argument("--max-iter", type=int)
    bench.add_argument("--tol", type=float)
    bench.set_defaults(func=_cmd_bench)

    est = sub.add_parser("estimate", help="estimate the mean intervention effect of x on y")
    est.add_argument("--data", required=True)
    est.add_argument("--space", required=True)
    est.add_argument("--method", choices=SCM_METHODS, default="vb")
    est.add_argument("--x", required=True)
    est.add_argument("--y", required=True)
    est.add_argument("--x-value", type=float, default=1.0)
    est.add_argument("--mc-samples", type=int, default=1000)
    est.add_argument("--seed", type=int, default=0, help="seed for the mc method")
    est.add_argument("--center", action="store_true", help="subtract column means first")
    _add_prior_flags(est)
    _add_vb_flags(est)
    est.set_defaults(func=_cmd_estimate)

    ate = sub.add_parser("ate", help="average treatment effect of a binary treatment")
    ate.add_argument("--data", required=True)
    ate.add_argument("--treatment", required=True)
    ate.add_argument("--outcome", required=True)
    ate.add_argument("--covariates", nargs="*", default=[])
    ate.add_argument("--method", choices=ATE_METHODS, default="vb")
    ate.add_argument("--edge-prob", type=float, default=0.5)
    ate.add_argument("--penalty", type=float, help="L1 penalty for ipw (default 1/sqrt(N))")
    ate.add_argument("--no-center", action="store_true")
    _add_prior_flags(ate)
    _add_vb_flags(ate)
    ate.set_defaults(func=_cmd_ate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"bmacausal: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
