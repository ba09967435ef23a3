"""Command-line interface: ``stlt complete | synth | check-derivs | eval``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .harness import EXIT_BAD_INPUT, EXIT_INTERNAL, EXIT_OK, ConfigError, RunConfig, load_problem, run_completion
from .tensor_core import TensorShapeError, read_tns, write_tns


def _ints(text):
    try:
        return tuple(int(t) for t in text.replace("x", ",").split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _add_run_flags(p):
    p.add_argument("--constraint", choices=("none", "nonneg", "hankel"))
    p.add_argument("--tau", type=_ints, help="Hankel window sizes, e.g. 5,5")
    p.add_argument("--rank", type=_ints, help="per-mode ranks, e.g. 4,4")
    p.add_argument("--lambda", dest="lam", type=float, help="total regularization weight (split over modes)")
    p.add_argument("--cost-C", dest="C", type=float)
    p.add_argument("--solver", choices=("rcg", "rtr"))
    p.add_argument("--eps", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--max-time", type=float, help="wall-clock budget in seconds")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--record-time", action="store_true", help="keep wall_ms in history.csv")
    p.add_argument("--no-plots", action="store_true")


def _overrides(args):
    pairs = {
        "constraint": args.constraint, "tau": args.tau, "ranks": args.rank, "lam": args.lam, "C": args.C,
        "solver": args.solver, "eps": args.eps, "max_iters": args.max_iters,
        "max_time": args.max_time, "seed": args.seed, "out": args.out,
    }
    out = {k: v for k, v in pairs.items() if v is not None}
    if args.record_time:
        out["record_wall_time"] = True
    if args.no_plots:
        out["plots"] = False
    return out


def _summarize(config):
    """Run one config and reduce the outcome to plain data (safe to send between processes)."""
    o = run_completion(config)
    summary = {"exit_code": o.exit_code, "status": o.status, "out": str(o.out_dir), "message": o.message,
               "metrics": o.metrics}
    if o.result is not None:
        last = o.result.history[-1]
        summary.update(records=len(o.result.history), grad_norm=last.grad_norm, rel_gap=last.rel_gap)
    return summary


def _report(s):
    if s["exit_code"] == EXIT_BAD_INPUT:
        print(f"error: {s['message']}", file=sys.stderr)
    elif s["exit_code"] == EXIT_INTERNAL:
        print(f"internal error: {s['message']}", file=sys.stderr)
    else:
        print(f"{s['out']}: {s['status']} after {s['records']} records, "
              f"grad_norm {s['grad_norm']:.3e}, rel_gap {s['rel_gap']:.3e}")
        if s["metrics"]:
            m = s["metrics"]
            print(f"  held-out rmse {m['test_rmse']:.4g} (truth rms {m['test_rms_truth']:.4g})")
    return s["exit_code"]


def cmd_complete(args):
    base = {}
    configs = []
    if args.config:
        for path in args.config:
            try:
                cfg = RunConfig.from_json(path)
            except (ConfigError, OSError, TypeError) as exc:
                print(f"error: {path}: {exc}", file=sys.stderr)
                return EXIT_BAD_INPUT
            configs.append(cfg)
    else:
        configs.append(RunConfig())
    overrides = _overrides(args)
    if args.input:
        base["input"] = args.input
        base["synthetic"] = None
    configs = [c.replace(**base, **overrides) for c in configs]
    if len(configs) > 1 and args.out:
        # one shared --out becomes a parent directory of isolated runs
        configs = [c.replace(out=str(Path(args.out) / f"run{i:03d}")) for i, c in enumerate(configs)]
    if args.jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_summarize, configs))
    else:
        outcomes = [_summarize(c) for c in configs]
    return max(_report(o) for o in outcomes)


def cmd_synth(args):
    from .synth import generate_synthetic

    try:
        Y, W = generate_synthetic(args.kind, args.dims, args.true_rank, args.fraction, seed=args.seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_tns(out / "Y.tns", Y)
    write_tns(out / "W_true.tns", W)
    print(f"wrote {out / 'Y.tns'} ({Y.nnz} observed of {W.size}) and {out / 'W_true.tns'}")
    return EXIT_OK


def cmd_check_derivs(args):
    from .checks import check_derivatives

    cfg = RunConfig.from_json(args.config) if args.config else RunConfig()
    cfg = cfg.replace(**_overrides(args))
    if args.input:
        cfg = cfg.replace(input=args.input, synthetic=None)
    try:
        cfg.validate()
        spec, _ = load_problem(cfg)
    except (ConfigError, TensorShapeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    rep = check_derivatives(spec, n_points=args.points, seed=cfg.seed, hessian=spec.kind != "nonneg")
    for line in rep.lines():
        print(line)
    return EXIT_OK if rep.passed else 2


def cmd_eval(args):
    from .synth import eval_recovery

    try:
        W_hat = read_tns(args.estimate).to_dense()
        W_true = read_tns(args.truth).to_dense()
        omega = read_tns(args.observed)
        metrics = eval_recovery(W_hat, W_true, omega)
    except (TensorShapeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    print(json.dumps(metrics, indent=2))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="stlt", description="Structured low-rank tensor completion.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("complete", help="complete a tensor and write history, manifest and plots")
    p.add_argument("input", nargs="?", help=".tns file of observed entries")
    p.add_argument("--config", nargs="+", help="JSON run configs (a previous manifest.json also works)")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes for several configs")
    _add_run_flags(p)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("synth", help="generate a synthetic problem")
    p.add_argument("kind", choices=("none", "nonneg", "hankel"))
    p.add_argument("--dims", type=_ints, required=True)
    p.add_argument("--true-rank", type=_ints, required=True)
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="synth")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("check-derivs", help="finite-difference gradient and Hessian checks")
    p.add_argument("input", nargs="?")
    p.add_argument("--config")
    p.add_argument("--points", type=int, default=3)
    _add_run_flags(p)
    p.set_defaults(func=cmd_check_derivs)

    p = sub.add_parser("eval", help="held-out error of an estimate against ground truth")
    p.add_argument("estimate")
    p.add_argument("truth")
    p.add_argument("observed")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
