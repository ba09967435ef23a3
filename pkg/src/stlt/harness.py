"""Run configuration, end-to-end completion runs and their output files."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .constraints import ConstraintKind
from .dual import recover_primal
from .inner import SolverParams
from .manifold import IterationRecord, default_solver, outer_solve
from .problem import ProblemSpec, default_lambdas
from .synth import eval_recovery, generate_synthetic
from .tensor_core import TensorShapeError, read_tns, write_tns

log = logging.getLogger(__name__)

EXIT_OK, EXIT_BAD_INPUT, EXIT_NOT_CONVERGED, EXIT_INTERNAL = 0, 1, 2, 3

# outer statuses that count as a normal finish
SUCCESS_STATUSES = ("converged", "stagnated")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration (exit code 1)."""


@dataclass
class RunConfig:
    """Everything needed to reproduce one completion run.

    Exactly one of ``input`` (a ``.tns`` file) and ``synthetic`` (keyword
    arguments of :func:`stlt.synth.generate_synthetic`) must be given.
    ``lam`` is the total weight split evenly over modes; ``None`` selects the
    default ``K / ||Y_omega||``. ``lambdas`` overrides the per-mode values.
    """

    input: str | None = None
    synthetic: dict | None = None
    constraint: str = "none"
    tau: tuple | None = None
    ranks: tuple = ()
    lam: float | None = None
    lambdas: tuple | None = None
    C: float = 1.0
    solver: str | None = None
    eps: float = 1e-6
    max_iters: int = 200
    max_time: float | None = None
    seed: int = 0
    inner: dict = field(default_factory=dict)
    out: str = "out"
    record_wall_time: bool = False
    plots: bool = True

    def __post_init__(self):
        self.ranks = tuple(int(r) for r in self.ranks)
        if self.tau is not None:
            self.tau = tuple(int(t) for t in self.tau)
        if self.lambdas is not None:
            self.lambdas = tuple(float(x) for x in self.lambdas)
        if self.synthetic is not None:
            self.synthetic = dict(self.synthetic)

    def validate(self):
        if (self.input is None) == (self.synthetic is None):
            raise ConfigError("give exactly one of an input file or a synthetic spec")
        if self.constraint not in ("none", "nonneg", "hankel"):
            raise ConfigError(f"unknown constraint {self.constraint!r}")
        if not self.ranks:
            raise ConfigError("ranks are required")
        if self.solver not in (None, "rcg", "rtr"):
            raise ConfigError(f"unknown solver {self.solver!r}")
        if self.max_time is not None and self.max_time <= 0:
            raise ConfigError("max_time must be positive")
        if self.eps < 0 or self.max_iters < 0:
            raise ConfigError("eps and max_iters must be nonnegative")
        if self.C <= 0:
            raise ConfigError("C must be positive")
        if self.lam is not None and self.lam < 0:
            raise ConfigError("lambda must be nonnegative")
        unknown = set(self.inner) - {f.name for f in dataclasses.fields(SolverParams)}
        if unknown:
            raise ConfigError(f"unknown inner solver settings: {sorted(unknown)}")
        return self

    def to_dict(self):
        d = dataclasses.asdict(self)
        for key in ("tau", "ranks", "lambdas"):
            if d[key] is not None:
                d[key] = list(d[key])
        if d["synthetic"] is not None:
            d["synthetic"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["synthetic"].items()}
        return d

    @classmethod
    def from_dict(cls, d):
        """Build from a mapping; a run manifest is accepted and its ``config`` used."""
        if "config" in d and isinstance(d["config"], dict):
            d = d["config"]
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(data)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def solver_params(self):
        return SolverParams(**self.inner)


def load_problem(config):
    """``(ProblemSpec, ground truth or None)`` for a validated config."""
    truth = None
    if config.synthetic is not None:
        syn = dict(config.synthetic)
        syn.setdefault("kind", config.constraint)
        syn.setdefault("seed", config.seed)
        try:
            Y, truth = generate_synthetic(**syn)
        except TypeError as exc:
            raise ConfigError(f"bad synthetic spec: {exc}") from exc
    else:
        Y = read_tns(config.input)
    if Y.nnz == 0:
        raise ConfigError("no observed entries")
    if config.lambdas is not None:
        lambdas = config.lambdas
    elif config.lam is not None:
        lambdas = (config.lam / Y.ndim,) * Y.ndim
    else:
        lambdas = default_lambdas(Y)
    kind = ConstraintKind(config.constraint, config.tau)
    spec = ProblemSpec(Y, config.ranks, lambdas, config.C, kind)
    return spec, truth


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_history(path, history, wall_time=False):
    """Write ``history.csv``.

    Values use ``repr`` so the file is byte-identical across identical runs.
    Wall-clock time varies between runs, so the ``wall_ms`` column is left
    blank unless ``wall_time`` is set.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(IterationRecord.CSV_FIELDS)
        for r in history:
            row = [_fmt(getattr(r, f)) for f in IterationRecord.CSV_FIELDS[:-1]]
            row.append(_fmt(r.wall_ms) if wall_time else "")
            w.writerow(row)


DIAGNOSTIC_FIELDS = ("iter", "wall_ms", "feasibility", "rel_feasibility", "gap_confident", "raw_rel_gap",
                     "accepted", "step", "decrease", "rho", "radius", "model_decrease", "actual_decrease",
                     "tcg_iters", "boundary", "cauchy", "step_norm")


def write_diagnostics(path, history):
    """Per-iteration solver diagnostics, including wall time."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIAGNOSTIC_FIELDS)
        for r in history:
            vals = {"iter": r.iter, "wall_ms": r.wall_ms, "feasibility": r.feasibility, **r.extra}
            w.writerow(["" if vals.get(f) is None else vals[f] for f in DIAGNOSTIC_FIELDS])


def versions():
    import matplotlib
    import scipy

    return {
        "stlt": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "matplotlib": matplotlib.__version__,
    }


@dataclass
class RunOutcome:
    exit_code: int
    status: str
    out_dir: Path
    result: object = None
    spec: object = None
    metrics: dict | None = None
    message: str = ""


def run_completion(config, callback=None):
    """Run one configured completion and write its outputs.

    Writes ``history.csv``, ``diagnostics.csv``, ``manifest.json``,
    ``W_hat.tns`` and ``plots/{grad_norm,rel_gap}.svg`` into ``config.out``.
    Never raises for bad input or solver failures; the outcome carries the
    exit code (1 bad input, 2 no convergence, 3 internal error).
    """
    out = Path(config.out)
    try:
        config.validate()
        spec, truth = load_problem(config)
        params = config.solver_params()
    except (ConfigError, TensorShapeError, ValueError, OSError) as exc:
        return RunOutcome(EXIT_BAD_INPUT, "bad_input", out, message=str(exc))
    try:
        out.mkdir(parents=True, exist_ok=True)
        solver = config.solver or default_solver(spec.kind)
        t0 = time.perf_counter()
        res = outer_solve(spec, solver=solver, eps=config.eps, max_iters=config.max_iters, seed=config.seed,
                          params=params, callback=callback, max_time=config.max_time)
        runtime = time.perf_counter() - t0
        W = recover_primal(res.U, res.sol, spec)
        metrics = eval_recovery(W, truth, spec.Y) if truth is not None else None
        write_history(out / "history.csv", res.history, config.record_wall_time)
        write_diagnostics(out / "diagnostics.csv", res.history)
        write_tns(out / "W_hat.tns", W)
        plots = []
        if config.plots:
            from .plotting import plot_history

            plots = [str(p.relative_to(out)) for p in plot_history(out / "history.csv", out / "plots",
                                                                   title=f"{spec.kind}, ranks {spec.ranks}")]
        last = res.history[-1]
        code = EXIT_OK if res.status in SUCCESS_STATUSES else EXIT_NOT_CONVERGED
        manifest = {
            "config": config.to_dict(),
            "resolved": {"solver": solver, "lambdas": list(spec.lambdas), "C": spec.C, "dims": list(spec.dims),
                         "nnz": spec.Y.nnz, "inner": dataclasses.asdict(params)},
            "versions": versions(),
            "status": res.status,
            "exit_code": code,
            "iterations": len(res.history),
            "final": {"g_value": last.g_value, "grad_norm": last.grad_norm, "duality_gap": last.duality_gap,
                      "rel_gap": last.rel_gap, "inner_converged": bool(res.sol.converged),
                      "inner_messages": list(res.sol.messages)},
            "runtime_s": runtime,
            "metrics": metrics,
            "files": ["history.csv", "diagnostics.csv", "W_hat.tns", *plots],
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        return RunOutcome(code, res.status, out, res, spec, metrics)
    except Exception as exc:  # noqa: BLE001 - mapped to an exit code
        log.exception("internal error")
        return RunOutcome(EXIT_INTERNAL, "internal_error", out, message=f"{type(exc).__name__}: {exc}")
