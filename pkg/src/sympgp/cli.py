"""Batch command-line front end.

Subcommands: gen-data, train, eval, energy, drift, bound, validate.
Exit codes: 0 success, 2 usage/config errors, 3 missing prerequisite
artifacts, 4 numerical or pipeline failures.

The output directory is resolved from --out, then the SYMPGP_OUT
environment variable, then ./artifacts.  A JSON config file mirrors
ExperimentConfig; individual flags override its fields.
"""

import argparse
import json
import os
import sys

import numpy as np

from .errors import SympgpError
from .harness import (Dataset, ExperimentConfig, generate_dataset,
                      run_bound_experiment, run_drift_experiment,
                      run_energy_experiment, run_prediction_sweep,
                      subsample_training)
from .rng import child_rng

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_FAILURE = 4


def _add_common(p):
    p.add_argument("--config", help="JSON experiment config file")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--out", help="output directory (fallback: $SYMPGP_OUT, ./artifacts)")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="parallel worker processes (default: available cores)")
    p.add_argument("--system", help="system kind override")
    p.add_argument("--param", help="comma-separated parameterizations")
    p.add_argument("--sizes", help="comma-separated training sizes")
    p.add_argument("--restarts", type=int, help="hyperparameter restarts")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    p = argparse.ArgumentParser(prog="sympgp",
                                description="variational-integrator GP experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name, desc in [
        ("gen-data", "generate ground-truth datasets"),
        ("train", "fit GP integrator bundles per training size"),
        ("eval", "multi-step prediction error sweep (summary CSV)"),
        ("energy", "energy-error comparison on the pendulum"),
        ("drift", "constraint-drift comparison on the double pendulum"),
        ("bound", "Lipschitz estimate and uncertainty-bound calibration"),
        ("validate", "run shipped oracle/invariant self-checks"),
    ]:
        sp = sub.add_parser(name, help=desc)
        _add_common(sp)
    return p


def _resolve_out(args) -> str:
    return args.out or os.environ.get("SYMPGP_OUT") or "artifacts"


def _load_config(args) -> ExperimentConfig:
    fields = {}
    if args.config:
        try:
            with open(args.config) as fh:
                fields = json.load(fh)
        except FileNotFoundError:
            raise _UsageError(f"config file not found: {args.config}")
        except json.JSONDecodeError as exc:
            raise _UsageError(f"config file is not valid JSON: {exc}")
    try:
        cfg = ExperimentConfig.from_dict(fields)
    except (TypeError, SympgpError) as exc:
        raise _UsageError(f"bad config: {exc}")
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.system:
        updates["system"] = args.system
    if args.param:
        updates["parameterizations"] = tuple(args.param.split(","))
    if args.sizes:
        updates["sizes"] = tuple(int(s) for s in args.sizes.split(","))
    if args.restarts is not None:
        updates["restarts"] = args.restarts
    if updates:
        from dataclasses import replace
        try:
            cfg = replace(cfg, **updates)
        except SympgpError as exc:
            raise _UsageError(f"bad flag value: {exc}")
    return cfg


class _UsageError(Exception):
    pass


def _load_dataset(out_dir, cfg) -> Dataset:
    return Dataset.load(out_dir, cfg.system, cfg.parameterizations)


def _cmd_gen_data(args):
    cfg = _load_config(args)
    out = _resolve_out(args)
    ds = generate_dataset(cfg)
    ds.save(out)
    for param in cfg.parameterizations:
        print(f"wrote {out}/data/{cfg.system}/{param}/dataset.json "
              f"({ds.train[param].n} training pairs)")
    return EXIT_OK


def _cmd_train(args):
    from .gpvi import train as train_model
    from .systems import build_system
    cfg = _load_config(args)
    out = _resolve_out(args)
    ds = _load_dataset(out, cfg)
    prior = cfg.resolved_prior_mean()
    for param in cfg.parameterizations:
        view = build_system(cfg.system, param)
        for size in cfg.sizes:
            rng = child_rng(cfg.seed, "subsample", cfg.system, param, size, 0)
            subset = subsample_training(ds.train[param], size, rng)
            seed = int(child_rng(cfg.seed, "fit-seed", cfg.system, param,
                                 size, 0).integers(2 ** 31))
            model = train_model(view, subset, cfg.coarse_dt, cfg.restarts,
                                seed, prior_mean=prior)
            path = os.path.join(out, "models", cfg.system, param,
                                f"model_n{size}.json")
            model.save(path)
            if args.verbose:
                print(f"wrote {path}")
    print(f"trained {len(cfg.parameterizations) * len(cfg.sizes)} model bundles")
    return EXIT_OK


def _cmd_eval(args):
    cfg = _load_config(args)
    out = _resolve_out(args)
    ds = _load_dataset(out, cfg)
    summary, summary_avg = run_prediction_sweep(ds, jobs=args.jobs)
    base = os.path.join(out, "results", cfg.system)
    summary.write_csv(os.path.join(base, "summary.csv"))
    summary_avg.write_csv(os.path.join(base, "summary_stepavg.csv"))
    print(f"wrote {base}/summary.csv")
    for row in summary.sorted_rows():
        print(f"  {row['variant']:>8s} n={row['n_samples']:<4d} "
              f"median={row['median_mse']:.3e} failures={row['failures']}")
    return EXIT_OK


def _cmd_energy(args):
    cfg = _load_config(args)
    out = _resolve_out(args)
    path = os.path.join(out, "results", "pendulum", "energy.csv")
    run_energy_experiment(seed=cfg.seed, restarts=cfg.restarts,
                          out_path=path)
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_drift(args):
    cfg = _load_config(args)
    out = _resolve_out(args)
    path = os.path.join(out, "results", "double_pendulum", "drift.csv")
    run_drift_experiment(seed=cfg.seed, restarts=cfg.restarts,
                         out_path=path)
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_bound(args):
    cfg = _load_config(args)
    out = _resolve_out(args)
    ds = _load_dataset(out, cfg)
    param = cfg.parameterizations[-1]
    path = os.path.join(out, "results", cfg.system, "bound.json")
    report = run_bound_experiment(ds, param=param, jobs=args.jobs, out_path=path)
    print(f"wrote {path}")
    print(f"  L={report['lipschitz_L']:.4f} beta={report['beta']:.4f} "
          f"gamma={report['gamma']:.4f} violation_rate={report['violation_rate']:.4f} "
          f"(delta={report['delta']})")
    return EXIT_OK


def _cmd_validate(args):
    from .validate import run_validation
    results = run_validation(verbose=args.verbose)
    ok = True
    for name, passed, detail in results:
        print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
        ok = ok and passed
    return EXIT_OK if ok else EXIT_FAILURE


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "energy": _cmd_energy,
    "drift": _cmd_drift,
    "bound": _cmd_bound,
    "validate": _cmd_validate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"sympgp: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"sympgp: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except SympgpError as exc:
        print(f"sympgp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except np.linalg.LinAlgError as exc:   # pragma: no cover - defensive
        print(f"sympgp: linear algebra failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE


def entry_point():   # console script hook
    sys.exit(main())
