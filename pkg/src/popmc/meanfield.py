"""Deterministic (mean-field) analysis over real-valued populations.

For CTMC semantics the reaction rate equations ``dx/dt = sum_j v_j rate_j(x)``
are integrated with classical RK4.  For DTMC semantics the expected change
``x <- x + sum_j p_j(x) v_j`` is iterated, with ``p_j`` the normalised step
probabilities of the enabled commands.

Guards are evaluated on the real state and act as 0/1 factors on the rates.
The integer non-negativity check applied by the stochastic engines is not
used here.  When a guard flips while the rate on its enabled side is
still noticeably positive, the vector field is discontinuous there and a
warning says so.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .ctmc import dump_points
from .errors import DivergenceError
from .model import Model, compile_field

_FLIP_RATE = 1e-12
DEFAULT_STEPS = 1e4
STABILITY = 2.0   # RK4 is stable on the negative real axis up to about 2.78


@dataclass
class MeanFieldResult:
    variables: tuple[str, ...]
    points: np.ndarray          # times (CTMC) or step numbers (DTMC), starting at 0
    states: np.ndarray          # one row per point
    method: str
    steps: int = 0
    clamped: int = 0            # number of entries clamped from negative to 0
    hard_flips: int = 0         # guard switches with a non-vanishing rate

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def trajectory(self) -> list[tuple[float, np.ndarray]]:
        return list(zip(self.points.tolist(), self.states))


class _Field:
    """Command rates at a real-valued state, with guard-flip bookkeeping."""

    def __init__(self, model: Model):
        self.commands = model.commands
        self.change = model.change.astype(np.float64)
        self.rates_fn, self.drift_fn = compile_field(model)
        self.last_guards: tuple[bool, ...] | None = None
        self.last_x: list[float] = []
        self.hard_flips = 0

    def rates(self, x) -> np.ndarray:
        return np.array(self.rates_fn(*x), dtype=np.float64)

    def drift(self, x) -> np.ndarray:
        return np.array(self.drift_fn(*x), dtype=np.float64)

    def note_guards(self, xs: list[float]):
        g = tuple(bool(c.guard_fn(xs)) for c in self.commands)
        if self.last_guards is not None and g != self.last_guards:
            for j, (a, b) in enumerate(zip(self.last_guards, g)):
                # the rate just outside the guard shows whether it jumps there
                if a != b and self._raw_rate(j, self.last_x if b else xs) > _FLIP_RATE:
                    self.hard_flips += 1
                    if self.hard_flips == 1:
                        warnings.warn(
                            f"guard of {self.commands[j].describe(j)} switches at {tuple(xs)} "
                            "with a non-zero rate; mean-field results are approximate "
                            "near this switching surface", RuntimeWarning, stacklevel=3)
        self.last_guards = g
        self.last_x = list(xs)

    def _raw_rate(self, j: int, xs) -> float:
        try:
            r = self.commands[j].rate_fn(xs)
        except (ZeroDivisionError, OverflowError, ValueError):
            return math.inf
        return abs(r) if math.isfinite(r) else math.inf

    def stable_step(self, xs: list[float]) -> float:
        """A step keeping RK4 stable for the linearisation at ``xs`` (inf if flat)."""
        n = len(xs)
        f0 = self.drift_fn(*xs)
        jac = np.zeros((n, n))
        for k in range(n):
            eta = 1e-6 * max(1.0, abs(xs[k]))
            y = list(xs)
            y[k] += eta
            jac[:, k] = (np.array(self.drift_fn(*y)) - f0) / eta
        if not np.isfinite(jac).all():
            return math.inf
        rho = float(np.max(np.abs(np.linalg.eigvals(jac)), initial=0.0))
        return STABILITY / rho if rho > 0 else math.inf


def _clamp(x: list[float]) -> int:
    n = 0
    for i, v in enumerate(x):
        if v < 0:
            x[i] = 0.0
            n += 1
    return n


def rre_mean_field(model: Model, t: float, h: float | None = None,
                   dump: float | None = None) -> MeanFieldResult:
    """RK4 integration of the reaction rate equations up to time ``t``.

    The trajectory is sampled at 0 and at the dump points; each segment
    between dump points is split into equal steps no longer than ``h``.
    Without ``h`` the step is ``t / 10**4``, shortened where needed so that
    the linearisation at the start of each segment stays inside the RK4
    stability region.
    """
    if not (t >= 0.0) or not math.isfinite(t):
        raise ValueError("time horizon must be finite and non-negative")
    if h is not None and not h > 0.0:
        raise ValueError("step size must be positive")
    field = _Field(model)
    f = field.drift_fn
    x = [float(v) for v in model.initial]
    field.note_guards(x)
    points, states = [0.0], [list(x)]
    steps = clamped = 0
    prev = 0.0
    for point in dump_points(t, dump):
        dt = point - prev
        hmax = h
        if hmax is None:
            hmax = min(t / DEFAULT_STEPS, field.stable_step(x)) if t > 0 else 1.0
        n = max(1, math.ceil(dt / hmax - 1e-9)) if dt > 0 else 0
        hh = dt / n if n else 0.0
        half, sixth = 0.5 * hh, hh / 6.0
        for _ in range(n):
            try:
                k1 = f(*x)
                k2 = f(*[a + half * b for a, b in zip(x, k1)])
                k3 = f(*[a + half * b for a, b in zip(x, k2)])
                k4 = f(*[a + hh * b for a, b in zip(x, k3)])
            except (ZeroDivisionError, OverflowError, ValueError) as e:
                raise DivergenceError(
                    f"rate evaluation failed near {tuple(x)}: {e}", last=(prev, list(x))) from None
            new = [a + sixth * (p + 2.0 * q + 2.0 * r + u)
                   for a, p, q, r, u in zip(x, k1, k2, k3, k4)]
            steps += 1
            if not all(map(math.isfinite, new)):
                raise DivergenceError(
                    f"mean-field integration diverged after {steps} steps; "
                    f"last finite state {tuple(x)}", last=(prev, list(x)))
            clamped += _clamp(new)
            x = new
            field.note_guards(x)
        points.append(point)
        states.append(list(x))
        prev = point
    if clamped:
        warnings.warn(f"{clamped} negative concentrations were clamped to 0",
                      RuntimeWarning, stacklevel=2)
    return MeanFieldResult(model.variables, np.array(points), np.array(states), "rre",
                           steps=steps, clamped=clamped, hard_flips=field.hard_flips)


def dtmc_mean_field(model: Model, k: int, dump_every: int | None = None) -> MeanFieldResult:
    """Iterate the expected one-step change ``k`` times from the initial state.

    A state where no command is enabled (or all rates vanish) is a fixed
    point.
    """
    if k < 0:
        raise ValueError("number of steps must be non-negative")
    if dump_every is not None and dump_every < 1:
        raise ValueError("dump interval must be at least 1")
    field = _Field(model)
    V = field.change
    x = np.array(model.initial, dtype=np.float64)
    field.note_guards(x.tolist())
    points, states = [0], [x.copy()]
    clamped = 0
    for i in range(1, k + 1):
        try:
            r = field.rates(x.tolist())
        except (ZeroDivisionError, OverflowError, ValueError) as e:
            raise DivergenceError(f"rate evaluation failed at {tuple(x.tolist())}: {e}",
                                  last=(i - 1, x.copy())) from None
        total = math.fsum(r.tolist())
        if not math.isfinite(total) or (r < 0).any():
            raise DivergenceError(
                f"invalid step probabilities at {tuple(x.tolist())}", last=(i - 1, x.copy()))
        if total > 0:
            x = x + (r / total) @ V
            xs = x.tolist()
            clamped += _clamp(xs)
            x = np.array(xs)
            field.note_guards(xs)
        if (dump_every and i % dump_every == 0) or i == k:
            points.append(i)
            states.append(x.copy())
    if clamped:
        warnings.warn(f"{clamped} negative expected populations were clamped to 0",
                      RuntimeWarning, stacklevel=2)
    return MeanFieldResult(model.variables, np.array(points), np.array(states), "dtmc",
                           steps=k, clamped=clamped, hard_flips=field.hard_flips)
