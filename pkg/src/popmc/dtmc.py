"""DTMC transient analysis by on-the-fly propagation.

One propagation step is the product ``p <- p P`` restricted to the states
currently held by a :class:`~popmc.store.StateStore`.  ``P`` is never built
for the whole chain; each node caches its command rates and successor
slots, and a step flattens those caches into (source, target, coefficient)
triples that are summed with ``np.bincount``.  The flattened form is cached
until the store changes structurally, which makes long runs over a settled
state space cheap.

Two flavours of ``P`` share the machinery:

* embedded chain (DTMC semantics): ``P(s, succ_j) = rate_j(s) / exit(s)``,
  and states with no enabled command keep their mass;
* uniformized chain with rate ``lam``: ``P(s, succ_j) = rate_j(s) / lam`` and
  ``P(s, s) = 1 - exit(s) / lam``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import RateExceeded
from .model import Model, enabled, eval_rate
from .store import CHUNK, UNRESOLVED, StateStore

DEFAULT_DELTA = 1e-15


@dataclass
class PropagationConfig:
    delta: float = DEFAULT_DELTA
    max_steps: int | None = None
    dump_every: int | None = None
    capacity: int = CHUNK
    max_states: int | None = None

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("significance threshold must be non-negative")
        if self.dump_every is not None and self.dump_every < 1:
            raise ValueError("dump interval must be at least 1")


@dataclass
class Snapshot:
    """A frozen distribution, rows sorted lexicographically by state."""

    point: float
    states: np.ndarray
    probs: np.ndarray
    error: float
    active_states: int

    @classmethod
    def from_arrays(cls, point, states, probs, error, active_states=None) -> "Snapshot":
        states = np.asarray(states, dtype=np.int64)
        probs = np.asarray(probs, dtype=np.float64)
        if states.size:
            order = np.lexsort(states.T[::-1])
            states, probs = states[order], probs[order]
        return cls(point, states, probs, float(error),
                   len(probs) if active_states is None else active_states)

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {tuple(s): float(p) for s, p in zip(self.states.tolist(), self.probs)}

    def total(self) -> float:
        return math.fsum(self.probs.tolist())

    def marginal(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        if self.states.size == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        values, inv = np.unique(self.states[:, i], return_inverse=True)
        return values, np.bincount(inv, weights=self.probs, minlength=values.size)

    def prob_of(self, s) -> float:
        return self.as_dict().get(tuple(s), 0.0)


@dataclass
class TransientResult:
    variables: tuple[str, ...]
    final: Snapshot
    accumulated_error: float
    method: str
    steps: int = 0
    truncation_error: float = 0.0
    dropped_error: float = 0.0
    peak_states: int = 0
    snapshots: list[Snapshot] = field(default_factory=list)

    @property
    def distribution(self) -> dict[tuple[int, ...], float]:
        return self.final.as_dict()

    @property
    def active_states(self) -> int:
        return self.final.active_states

    @property
    def point(self) -> float:
        return self.final.point

    def prob(self, s) -> float:
        return self.final.prob_of(s)


def step_probabilities(model: Model, s) -> list[tuple[int, float]]:
    """Normalised probabilities of the commands enabled at ``s``."""
    rates = [(j, eval_rate(model, cmd, s, _index=j))
             for j, cmd in enumerate(model.commands) if enabled(model, cmd, s)]
    rates = [(j, r) for j, r in rates if r > 0]
    total = math.fsum(r for _, r in rates)
    if total == 0:
        return []
    return [(j, r / total) for j, r in rates]


@dataclass
class _Plan:
    version: int
    src_rep: np.ndarray    # source slot of each flattened entry
    tgt: np.ndarray        # target slot of each entry
    rate: np.ndarray       # generator entry: rate for links, -exit for the self entry
    is_self: np.ndarray
    unlinked: np.ndarray   # slots with an enabled command whose successor is missing
    coef: np.ndarray | None = None
    coef_key: object = None


class Propagator:
    """Vectorised propagation over the nodes of a store."""

    def __init__(self, store: StateStore, model: Model):
        self.store = store
        self.model = model
        self._plan: _Plan | None = None

    def expand(self):
        """Evaluate command rates of active nodes that do not have them yet."""
        s = self.store
        n = s.n_used
        todo = np.flatnonzero(s.active[:n] & ~s.expanded[:n])
        if todo.size:
            r = self.model.rate_matrix(s.states[todo])
            s.rates[todo] = r
            s.exit[todo] = r.sum(axis=1)
            s.expanded[todo] = True
            s.succ[todo] = UNRESOLVED
            s.version += 1

    def sources(self) -> np.ndarray:
        """Slots carrying positive probability."""
        s = self.store
        return np.flatnonzero(s.prob[:s.n_used] > 0)

    def _live(self, rows: np.ndarray) -> np.ndarray:
        s = self.store
        succ = s.succ[rows]
        return (succ >= 0) & (s.gen[np.where(succ >= 0, succ, 0)] == s.succ_gen[rows])

    def resolve(self, src: np.ndarray, create: bool = True):
        """Make successor links of ``src`` point at live nodes.

        With ``create`` missing successors are inserted (probability 0);
        otherwise links to states that are not present stay unresolved.
        """
        s = self.store
        if src.size == 0:
            return
        stale = (s.rates[src] > 0) & ~self._live(src)
        rows, cols = np.nonzero(stale)
        if rows.size == 0:
            return
        owners = src[rows]
        targets = s.states[owners] + self.model.change[cols]
        if create:
            idx, _ = s.insert_many(targets)
        else:
            get = s.index.get
            idx = np.array([get(tuple(t), UNRESOLVED) for t in targets.tolist()],
                           dtype=np.int64)
            found = idx >= 0
            owners, cols, idx = owners[found], cols[found], idx[found]
            if idx.size == 0:
                return
        s.succ[owners, cols] = idx
        s.succ_gen[owners, cols] = s.gen[idx]
        s.version += 1

    def plan(self) -> _Plan:
        """Flattened transitions of all active nodes, cached per store version."""
        s = self.store
        p = self._plan
        if p is not None and p.version == s.version:
            return p
        src = s.active_indices()
        a = src.size
        rates = s.rates[src]
        enabled_ = rates > 0
        link = enabled_ & self._live(src)
        mask = np.concatenate([np.ones((a, 1), dtype=bool), link], axis=1)
        tgt = np.concatenate([src[:, None], s.succ[src]], axis=1)[mask]
        rate = np.concatenate([-s.exit[src][:, None], rates], axis=1)[mask]
        is_self = np.zeros(mask.shape, dtype=bool)
        is_self[:, 0] = True
        src_rep = np.repeat(src, mask.sum(axis=1))
        unlinked = src[(enabled_ & ~link).any(axis=1)]
        self._plan = _Plan(s.version, src_rep, tgt, rate, is_self[mask], unlinked)
        return self._plan

    def prepare(self, src: np.ndarray | None = None, create: bool = True) -> _Plan:
        """Expand new nodes and make sure every positive-mass node is fully linked."""
        s = self.store
        self.expand()
        p = self._plan
        if p is None or p.version != s.version or (
                p.unlinked.size and (s.prob[p.unlinked] > 0).any()):
            self.resolve(self.sources() if src is None else src, create)
        return self.plan()

    def coefficients(self, plan: _Plan, lam: float | None) -> np.ndarray:
        """Transition probabilities of the plan entries.

        ``lam=None`` selects the embedded chain, otherwise the chain
        uniformized at rate ``lam``.
        """
        key = ("embedded",) if lam is None else ("uniform", lam)
        if plan.coef_key == key:
            return plan.coef
        if lam is None:
            exit_ = self.store.exit[plan.src_rep]
            denom = np.where(exit_ > 0, exit_, 1.0)
        else:
            denom = lam
        coef = plan.rate / denom + plan.is_self
        plan.coef, plan.coef_key = coef, key
        return coef

    def max_exit(self, src: np.ndarray) -> tuple[float, int]:
        if src.size == 0:
            return 0.0, -1
        e = self.store.exit[src]
        k = int(np.argmax(e))
        return float(e[k]), int(src[k])

    def step(self, delta: float, lam: float | None = None, strict: bool = False):
        """One propagation step, followed by thresholding and compaction.

        ``strict`` checks that no source leaves faster than ``lam``.
        """
        s = self.store
        plan = self.prepare()
        if strict and lam is not None:
            rate, i = self.max_exit(self.sources())
            if rate > lam:
                raise RateExceeded(s.state_of(i), rate, lam)
        coef = self.coefficients(plan, lam)
        n = s.n_used
        s.prob[:n] = np.bincount(plan.tgt, weights=s.prob[plan.src_rep] * coef, minlength=n)
        self.threshold(delta)

    def threshold(self, delta: float):
        s = self.store
        if delta <= 0:
            return
        n = s.n_used
        low = np.flatnonzero(s.active[:n] & (s.prob[:n] < delta))
        if low.size:
            s.deactivate_many(low)
            s.maybe_compress()


def new_store(model: Model, capacity: int = CHUNK, max_states: int | None = None,
              **kw) -> StateStore:
    """A store holding the initial state with probability 1."""
    if max_states is not None:
        capacity = min(capacity, max_states)
    store = StateStore(model.n_vars, model.n_commands, capacity=capacity,
                       max_nodes=max_states, **kw)
    i, _ = store.find_or_insert(model.initial)
    store.prob[i] = 1.0
    return store


def snapshot_of(store: StateStore, point, error: float) -> Snapshot:
    """Freeze the states with positive probability; fringe nodes at 0 are left out."""
    states, probs = store.snapshot()
    keep = probs > 0
    states, probs = states[keep], probs[keep]
    return Snapshot.from_arrays(point, states, probs, error, store.n_active)


def propagate_step(store: StateStore, model: Model, cfg: PropagationConfig | None = None):
    """One step of the embedded DTMC over the nodes held by ``store``."""
    cfg = cfg or PropagationConfig()
    Propagator(store, model).step(cfg.delta)


def dtmc_transient(model: Model, k: int, cfg: PropagationConfig | None = None,
                   store: StateStore | None = None) -> TransientResult:
    """Distribution after ``k`` steps of the embedded DTMC, from the initial state."""
    cfg = cfg or PropagationConfig()
    if k < 0:
        raise ValueError("number of steps must be non-negative")
    if cfg.max_steps is not None and k > cfg.max_steps:
        raise ValueError(f"{k} steps exceed the configured maximum {cfg.max_steps}")
    store = store or new_store(model, cfg.capacity, cfg.max_states)
    prop = Propagator(store, model)
    snapshots = []
    peak = store.n_active
    for i in range(1, k + 1):
        prop.step(cfg.delta)
        peak = max(peak, store.n_active)
        if cfg.dump_every and i % cfg.dump_every == 0 and i != k:
            snapshots.append(snapshot_of(store, i, store.dropped_mass))
    final = snapshot_of(store, k, store.dropped_mass)
    snapshots.append(final)
    return TransientResult(model.variables, final, store.dropped_mass, "propagate",
                           steps=k, dropped_error=store.dropped_mass,
                           peak_states=peak, snapshots=snapshots)
