"""Command-line front end: ``popmc solve model.gcm ...``.

Exit codes:

====  ==========================================
0     success
1     I/O failure (unreadable model, unwritable output)
2     usage error (inconsistent options)
3     parse or model error (including invalid rates)
4     uniformization rate exceeded (``--lambda`` too small)
5     state-space capacity exhausted
6     numerical divergence
====  ==========================================
"""

from __future__ import annotations

import argparse
import math
import sys
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .ctmc import UniformizationConfig, fast_adaptive_uniformization, rk4_cme, \
    standard_uniformization
from .dtmc import PropagationConfig, TransientResult, dtmc_transient
from .errors import CapacityError, DivergenceError, ModelError, RateExceeded
from .io import (write_distribution, write_marginals, write_state, write_summary,
                 write_trajectory)
from .meanfield import MeanFieldResult, dtmc_mean_field, rre_mean_field
from .model import Model, load_model
from .store import CHUNK

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_MODEL, EXIT_RATE, EXIT_CAPACITY, EXIT_DIVERGENCE = range(7)

METHOD_ALIASES = {"standard-uniformization": "su", "fast-adaptive-uniformization": "fau"}
CTMC_METHODS = ("fau", "su", "rk4")


class UsageError(Exception):
    pass


@dataclass
class RunSpec:
    model: str
    out: str
    mode: str = "stochastic"
    method: str | None = None
    semantics: str | None = None
    time: float | None = None
    steps: int | None = None
    dump: float | None = None
    delta: float = 1e-15
    epsilon: float = 1e-8
    lam: float | None = None
    h: float | None = None
    capacity: int = CHUNK
    max_states: int | None = None


def resolve_spec(spec: RunSpec, model: Model) -> tuple[RunSpec, Model]:
    """Apply the semantics override and check option consistency."""
    if spec.semantics and spec.semantics != model.semantics:
        print(f"warning: semantics '{spec.semantics}' overrides '{model.semantics}' "
              f"declared in {spec.model}", file=sys.stderr)
        model = model.with_semantics(spec.semantics)
    sem = model.semantics
    method = METHOD_ALIASES.get(spec.method, spec.method)
    if spec.mode not in ("stochastic", "deterministic"):
        raise UsageError(f"unknown mode {spec.mode!r}")
    if sem == "ctmc":
        if spec.time is None or spec.steps is not None:
            raise UsageError("CTMC models need --time and no --steps")
        if not (spec.time >= 0 and math.isfinite(spec.time)):
            raise UsageError("--time must be a finite non-negative number")
    else:
        if spec.steps is None or spec.time is not None:
            raise UsageError("DTMC models need --steps and no --time")
        if spec.steps < 0:
            raise UsageError("--steps must be non-negative")
        if spec.dump is not None and not float(spec.dump).is_integer():
            raise UsageError("for DTMC models --dump counts steps and must be an integer")
    if spec.mode == "stochastic":
        allowed = CTMC_METHODS if sem == "ctmc" else ("propagate",)
        method = method or allowed[0]
        if method not in allowed:
            raise UsageError(
                f"method '{method}' does not apply to {sem} models; choose from "
                f"{', '.join(allowed)}")
    elif method is not None:
        raise UsageError("--method only applies to stochastic mode")
    if (method == "su") != (spec.lam is not None):
        raise UsageError("--lambda is required for standard uniformization "
                         "and not accepted otherwise")
    if spec.dump is not None and not spec.dump > 0:
        raise UsageError("--dump must be positive")
    if spec.h is not None and not spec.h > 0:
        raise UsageError("--h must be positive")
    if not 0 < spec.epsilon < 1:
        raise UsageError("--epsilon must lie in (0, 1)")
    if spec.delta < 0:
        raise UsageError("--delta must be non-negative")
    if spec.capacity < 1:
        raise UsageError("--capacity must be positive")
    if spec.max_states is not None and spec.max_states < 1:
        raise UsageError("--max-states must be positive")
    spec = RunSpec(**{**spec.__dict__, "method": method, "semantics": sem})
    return spec, model


def _execute(spec: RunSpec, model: Model):
    if spec.mode == "deterministic":
        if model.semantics == "ctmc":
            return rre_mean_field(model, spec.time, spec.h, spec.dump)
        dump = int(spec.dump) if spec.dump is not None else None
        return dtmc_mean_field(model, spec.steps, dump)
    if spec.method == "propagate":
        dump = int(spec.dump) if spec.dump is not None else None
        return dtmc_transient(model, spec.steps, PropagationConfig(
            delta=spec.delta, dump_every=dump, capacity=spec.capacity,
            max_states=spec.max_states))
    if spec.method == "rk4":
        return rk4_cme(model, spec.time, spec.h, spec.delta, spec.dump, spec.capacity,
                       spec.max_states)
    cfg = UniformizationConfig(spec.time, spec.dump, spec.epsilon, spec.delta,
                               lambda_user=spec.lam, capacity=spec.capacity,
                               max_states=spec.max_states)
    if spec.method == "su":
        return standard_uniformization(model, cfg)
    return fast_adaptive_uniformization(model, cfg)


def _tag(i: int, n: int) -> str:
    return str(i).zfill(max(3, len(str(n))))


def _emit(result, spec: RunSpec, model: Model, out: Path) -> dict:
    names = model.variables
    dumps = []
    if isinstance(result, TransientResult):
        n = len(result.snapshots)
        for i, snap in enumerate(result.snapshots, 1):
            tag = _tag(i, n)
            path = write_distribution(snap, out / f"dist_{tag}.csv", names)
            write_marginals(snap, out, names, tag)
            dumps.append({"index": i, "point": snap.point, "file": path.name,
                          "error": max(0.0, 1.0 - snap.total()),
                          "active_states": snap.active_states})
        final = result.final
        total_error = max(0.0, 1.0 - final.total())
        return {
            "dumps": dumps,
            "error": total_error,
            "truncation_error": result.truncation_error,
            "dropped_error": result.dropped_error,
            "active_states": final.active_states,
            "peak_states": result.peak_states,
            "steps": result.steps,
        }
    assert isinstance(result, MeanFieldResult)
    axis = "time" if model.semantics == "ctmc" else "step"
    n = len(result.points) - 1
    for i in range(1, n + 1):
        tag = _tag(i, n)
        path = write_state(result.states[i], out / f"state_{tag}.csv", names)
        dumps.append({"index": i, "point": result.points[i].item(), "file": path.name})
    write_trajectory(result.points, result.states, out / "trajectory.csv", names, axis)
    return {"dumps": dumps, "final_state": dict(zip(names, result.final.tolist())),
            "steps": result.steps, "clamped": result.clamped,
            "hard_guard_flips": result.hard_flips}


def run(spec: RunSpec) -> int:
    """Execute one analysis and write its result files; returns the exit code."""
    started = time.perf_counter()
    try:
        model = load_model(spec.model)
    except ModelError as e:
        print(f"error: {spec.model}: {e}", file=sys.stderr)
        return EXIT_MODEL
    except OSError as e:
        print(f"error: cannot read model: {e}", file=sys.stderr)
        return EXIT_IO
    try:
        spec, model = resolve_spec(spec, model)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(spec.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        print(f"error: cannot create output directory: {e}", file=sys.stderr)
        return EXIT_IO
    summary = {"model": Path(spec.model).name, "mode": spec.mode, "method": spec.method,
               "semantics": model.semantics, "time": spec.time, "steps_requested": spec.steps,
               "dump": spec.dump, "delta": spec.delta, "epsilon": spec.epsilon,
               "lambda": spec.lam, "h": spec.h, "version": __version__}
    code, status = EXIT_OK, "ok"
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = _show_warning
            result = _execute(spec, model)
        summary.update(_emit(result, spec, model, out))
    except ModelError as e:
        code, status, msg = EXIT_MODEL, "model_error", str(e)
    except RateExceeded as e:
        code, status, msg = EXIT_RATE, "rate_exceeded", str(e)
    except (CapacityError, MemoryError) as e:
        code, status, msg = EXIT_CAPACITY, "capacity_exceeded", str(e) or "out of memory"
    except DivergenceError as e:
        code, status, msg = EXIT_DIVERGENCE, "diverged", str(e)
    except OSError as e:
        code, status, msg = EXIT_IO, "io_error", str(e)
    if code:
        print(f"error: {msg}", file=sys.stderr)
        summary["message"] = msg
    summary["status"] = status
    summary["wall_time_s"] = time.perf_counter() - started
    try:
        write_summary(summary, out / "summary.json")
    except OSError as e:
        print(f"error: cannot write summary: {e}", file=sys.stderr)
        return code or EXIT_IO
    if code == EXIT_OK:
        line = f"{spec.method or spec.mode}: {len(summary['dumps'])} dump(s) written to {out}"
        if "error" in summary:
            line += (f"; error {summary['error']:.3g}, {summary['active_states']} active / "
                     f"{summary['peak_states']} peak states")
        print(line)
    return code


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: usage error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="popmc", description="Transient analysis of guarded-command "
                     "population models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("solve", help="run one analysis and write result files")
    p.add_argument("model", help="model file in the guarded-command format")
    p.add_argument("--mode", choices=("stochastic", "deterministic"), default="stochastic")
    p.add_argument("--method", choices=("fau", "su", "rk4", "propagate", *METHOD_ALIASES),
                   help="stochastic solver (default: fau for CTMC, propagate for DTMC)")
    p.add_argument("--semantics", choices=("ctmc", "dtmc"),
                   help="override the semantics declared in the model file")
    horizon = p.add_mutually_exclusive_group(required=True)
    horizon.add_argument("--time", type=float, help="time horizon (CTMC)")
    horizon.add_argument("--steps", type=int, help="number of steps (DTMC)")
    p.add_argument("--dump", type=float, help="dump interval (time units, or steps for DTMC)")
    p.add_argument("--delta", type=float, default=1e-15, help="significance threshold")
    p.add_argument("--epsilon", type=float, default=1e-8,
                   help="jump-series truncation tolerance")
    p.add_argument("--lambda", dest="lam", type=float,
                   help="uniformization rate (standard uniformization only)")
    p.add_argument("--h", type=float, help="RK4 step size")
    p.add_argument("--capacity", type=int, default=CHUNK,
                   help="initial state-store capacity (nodes)")
    p.add_argument("--max-states", type=int,
                   help="abort with exit code 5 when the store would grow past this size")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = RunSpec(model=args.model, out=args.out, mode=args.mode, method=args.method,
                   semantics=args.semantics, time=args.time, steps=args.steps,
                   dump=args.dump, delta=args.delta, epsilon=args.epsilon, lam=args.lam,
                   h=args.h, capacity=args.capacity, max_states=args.max_states)
    return run(spec)


if __name__ == "__main__":
    sys.exit(main())
