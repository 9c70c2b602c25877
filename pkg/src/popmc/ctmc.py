"""Transient CTMC analysis: uniformization (standard and adaptive) and RK4.

Both uniformization variants run the uniformized DTMC with the propagation
machinery of :mod:`popmc.dtmc` and sum ``w_k * p(k)`` into an accumulator
that lives next to the store.  The accumulator follows the store through
deactivation, slot reuse and compaction, so mass accumulated for a state
that is later dropped and rediscovered is not lost.

Dump times ``t_d, 2 t_d, ..., t`` split the horizon into segments, and the
jump-weight series restarts at every segment with ``epsilon`` divided
evenly among them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dtmc import Propagator, Snapshot, TransientResult, new_store, snapshot_of
from .errors import DivergenceError
from .jump import BirthWeights, poisson_weights
from .model import Model
from .store import CHUNK, StateStore

SAFETY = 1.0001
NEGATIVE_TOL = 1e-9
DEFECT_TOL = 1e-3


@dataclass
class UniformizationConfig:
    t: float
    dump: float | None = None
    epsilon: float = 1e-8
    delta: float = 1e-15
    lambda_user: float | None = None
    safety: float = SAFETY
    capacity: int = CHUNK
    max_states: int | None = None

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if not (self.t >= 0.0) or not math.isfinite(self.t):
            raise ValueError("time horizon must be finite and non-negative")
        if self.dump is not None and not self.dump > 0.0:
            raise ValueError("dump interval must be positive")
        if self.delta < 0:
            raise ValueError("significance threshold must be non-negative")
        if self.lambda_user is not None and not self.lambda_user > 0.0:
            raise ValueError("uniformization rate must be positive")
        if self.safety < 1.0:
            raise ValueError("safety factor must be at least 1")


def dump_points(t: float, dump: float | None) -> list[float]:
    """The points ``dump, 2*dump, ...`` up to and including ``t``."""
    if dump is None or dump >= t:
        return [t]
    n = int(math.floor(t / dump + 1e-9))
    pts = [i * dump for i in range(1, n + 1)]
    if t - pts[-1] > 1e-9 * t:
        pts.append(t)
    else:
        pts[-1] = t
    return pts


class Accumulator:
    """Per-state running sum kept in step with a store's slot layout."""

    def __init__(self, store: StateStore):
        self.store = store
        self.acc = np.zeros(store.capacity)
        self.spill: dict[tuple[int, ...], float] = {}
        store.listeners.append(self)

    # store listener protocol
    def on_grow(self, capacity: int):
        new = np.zeros(capacity)
        new[:self.acc.size] = self.acc
        self.acc = new

    def on_insert(self, idx: np.ndarray, keys):
        if self.spill:
            for i, key in zip(idx.tolist(), keys):
                v = self.spill.pop(key, None)
                if v is not None:
                    self.acc[i] = v

    def on_deactivate(self, idx: np.ndarray, keys):
        vals = self.acc[idx]
        for k in np.flatnonzero(vals).tolist():
            key = keys[k]
            self.spill[key] = self.spill.get(key, 0.0) + float(vals[k])
        self.acc[idx] = 0.0

    def on_compress(self, order: np.ndarray):
        n = order.size
        self.acc[:n] = self.acc[order]
        self.acc[n:] = 0.0

    # accumulation
    def add(self, w: float):
        if w:
            n = self.store.n_used
            self.acc[:n] += w * self.store.prob[:n]

    def commit(self):
        """Replace the store's probabilities by the accumulated sums."""
        s = self.store
        n = s.n_used
        s.prob[:n] = self.acc[:n]
        self.acc[:n] = 0.0
        spilled, self.spill = self.spill, {}
        if spilled:
            keys = list(spilled)
            idx, _ = s.insert_many(np.array(keys, dtype=np.int64))
            s.prob[idx] = [spilled[k] for k in keys]
            self.acc[idx] = 0.0

    def detach(self):
        self.store.listeners.remove(self)


def _segment_loop(model: Model, cfg: UniformizationConfig, method: str, run_segment):
    store = new_store(model, cfg.capacity, cfg.max_states)
    prop = Propagator(store, model)
    acc = Accumulator(store)
    points = dump_points(cfg.t, cfg.dump)
    eps_seg = cfg.epsilon / len(points)
    stats = {"steps": 0, "truncation": 0.0, "peak": store.n_active}
    snapshots = []
    prev = 0.0
    try:
        for point in points:
            mass_in = store.total_mass()
            trunc = run_segment(store, prop, acc, point - prev, eps_seg, stats)
            stats["truncation"] += mass_in * trunc
            acc.commit()
            prop.threshold(cfg.delta)
            stats["peak"] = max(stats["peak"], store.n_active)
            snapshots.append(_finish_snapshot(store, point))
            prev = point
    finally:
        acc.detach()
    return _result(model, method, snapshots, stats)


def _finish_snapshot(store: StateStore, point: float) -> Snapshot:
    snap = snapshot_of(store, point, 0.0)
    snap.error = max(0.0, 1.0 - snap.total())
    return snap


def _result(model, method, snapshots, stats) -> TransientResult:
    final = snapshots[-1]
    trunc = min(stats["truncation"], final.error)
    return TransientResult(model.variables, final, final.error, method,
                           steps=stats["steps"], truncation_error=trunc,
                           dropped_error=final.error - trunc,
                           peak_states=stats["peak"], snapshots=snapshots)


def standard_uniformization(model: Model, cfg: UniformizationConfig) -> TransientResult:
    """Uniformization with the fixed user rate ``cfg.lambda_user``.

    Raises RateExceeded as soon as a state carrying probability leaves
    faster than that rate.
    """
    if cfg.lambda_user is None:
        raise ValueError("standard uniformization needs a uniformization rate")
    lam = float(cfg.lambda_user)

    def segment(store, prop, acc, dt, eps, stats):
        jw = poisson_weights(lam * dt, eps)
        for k in range(jw.right + 1):
            if k >= jw.left:
                acc.add(jw[k])
            if k < jw.right:
                prop.step(cfg.delta, lam, strict=True)
                stats["steps"] += 1
                stats["peak"] = max(stats["peak"], store.n_active)
        return jw.truncation_error

    return _segment_loop(model, cfg, "su", segment)


def fast_adaptive_uniformization(model: Model, cfg: UniformizationConfig) -> TransientResult:
    """Adaptive uniformization driven by the exit rates of the significant states.

    The k-th DTMC step is uniformized at the largest exit rate among the
    states that carry probability, times ``cfg.safety``.  Only those states
    emit mass during the step, so the step is exact for that rate and never
    has to be redone.
    """

    def segment(store, prop, acc, dt, eps, stats):
        bw = BirthWeights(dt, eps)
        while True:
            prop.prepare()
            rate, _ = prop.max_exit(prop.sources())
            lam = rate * cfg.safety
            acc.add(bw.push_rate(lam))
            if bw.converged:
                break
            prop.step(cfg.delta, lam)
            stats["steps"] += 1
            stats["peak"] = max(stats["peak"], store.n_active)
        return bw.truncation_error

    return _segment_loop(model, cfg, "fau", segment)


def rk4_cme(model: Model, t: float, h: float | None = None, delta: float = 1e-15,
            dump: float | None = None, capacity: int = CHUNK,
            max_states: int | None = None) -> TransientResult:
    """Classical RK4 on the master equation restricted to the explored states.

    Before each step the successors of every state carrying probability
    are added to the store, so the derivative sees one ring of fringe
    states.  Mass that flows past the ring is reported as mass defect.
    """
    if not (t >= 0.0) or not math.isfinite(t):
        raise ValueError("time horizon must be finite and non-negative")
    if h is None:
        h = t / 1e4 if t > 0 else 1.0
    if not h > 0.0:
        raise ValueError("step size must be positive")
    if delta < 0:
        raise ValueError("significance threshold must be non-negative")
    store = new_store(model, capacity, max_states)
    prop = Propagator(store, model)
    snapshots = []
    steps = 0
    peak = store.n_active
    seen = -1
    prev = 0.0
    for point in dump_points(t, dump):
        dt = point - prev
        n_steps = max(1, math.ceil(dt / h - 1e-9)) if dt > 0 else 0
        hh = dt / n_steps if n_steps else 0.0
        for _ in range(n_steps):
            plan = prop.prepare()
            if store.version != seen:
                prop.expand()
                prop.resolve(store.active_indices(), create=False)
                plan = prop.plan()
                seen = store.version
            n = store.n_used
            tgt, src, rate = plan.tgt, plan.src_rep, plan.rate

            def deriv(v):
                return np.bincount(tgt, weights=v[src] * rate, minlength=n)

            p0 = store.prob[:n].copy()
            k1 = deriv(p0)
            k2 = deriv(p0 + 0.5 * hh * k1)
            k3 = deriv(p0 + 0.5 * hh * k2)
            k4 = deriv(p0 + hh * k3)
            new = p0 + (hh / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            steps += 1
            if not np.isfinite(new).all() or new.min(initial=0.0) < -NEGATIVE_TOL:
                worst = int(np.argmin(np.where(np.isfinite(new), new, -np.inf)))
                raise DivergenceError(
                    f"RK4 step {steps} produced probability {new[worst]!r} at state "
                    f"{store.state_of(worst)}; use a smaller step size than h={hh!r}",
                    last=snapshot_of(store, prev, 0.0))
            np.maximum(new, 0.0, out=new)
            store.prob[:n] = new
            prop.threshold(delta)
            peak = max(peak, store.n_active)
            defect = abs(1.0 - store.total_mass() - store.dropped_mass)
            if defect > DEFECT_TOL:
                raise DivergenceError(
                    f"RK4 mass defect {defect:.3g} after step {steps} exceeds {DEFECT_TOL}; "
                    f"use a smaller step size than h={hh!r}",
                    last=snapshot_of(store, prev, 0.0))
        snapshots.append(_finish_snapshot(store, point))
        prev = point
    final = snapshots[-1]
    dropped = min(store.dropped_mass, final.error)
    return TransientResult(model.variables, final, final.error, "rk4", steps=steps,
                           truncation_error=final.error - dropped, dropped_error=dropped,
                           peak_states=peak, snapshots=snapshots)
