"""Hybrid array + hash container for the dynamically discovered state space.

Node fields live in parallel numpy arrays indexed by node slot, so that a
propagation step can touch every node with a handful of vectorised calls.
A dict maps population tuples to slots.  Deleted nodes are not erased:
they are zeroed and pushed on ``inactive_nodes`` for reuse, and the array
is compacted once inactive slots make up more than ``compress_threshold``
of all used slots.

Successor links are cached per (node, command) together with the
generation counter of the target slot at the time the link was made.
Every deactivation bumps the slot's generation, so a link into a slot that
was freed (and possibly reused by a different state) is detected as stale
by a single vectorised comparison.
"""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from .errors import CapacityError

CHUNK = 2 ** 20
COMPRESS_THRESHOLD = 0.20
UNRESOLVED = -1


class StateStore:
    def __init__(self, n_vars: int, n_commands: int, capacity: int = CHUNK,
                 chunk: int | None = None, compress_threshold: float = COMPRESS_THRESHOLD,
                 max_nodes: int | None = None):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.n_vars = n_vars
        self.n_commands = n_commands
        self.chunk = chunk or CHUNK
        self.compress_threshold = compress_threshold
        self.max_nodes = max_nodes
        self.index: dict[tuple[int, ...], int] = {}
        self.inactive_nodes: list[int] = []
        self.dropped_mass = 0.0
        self.n_used = 0       # high-water mark: slots ever handed out since the last compress
        self.version = 0      # bumped on every structural change
        self.peak_active = 0
        self.listeners: list = []
        self._allocate(capacity)

    # -- storage

    def _allocate(self, capacity: int):
        try:
            self.states = np.zeros((capacity, self.n_vars), dtype=np.int64)
            self.prob = np.zeros(capacity)
            self.active = np.zeros(capacity, dtype=bool)
            self.gen = np.zeros(capacity, dtype=np.int64)
            self.expanded = np.zeros(capacity, dtype=bool)
            self.rates = np.zeros((capacity, self.n_commands))
            self.exit = np.zeros(capacity)
            self.succ = np.full((capacity, self.n_commands), UNRESOLVED, dtype=np.int64)
            self.succ_gen = np.zeros((capacity, self.n_commands), dtype=np.int64)
        except MemoryError:
            raise CapacityError(
                f"cannot allocate {capacity} nodes") from None

    _FIELDS = ("states", "prob", "active", "gen", "expanded", "rates", "exit",
               "succ", "succ_gen")

    @property
    def capacity(self) -> int:
        return self.prob.shape[0]

    @property
    def n_active(self) -> int:
        return self.n_used - len(self.inactive_nodes)

    def _grow(self):
        new_cap = self.capacity + self.chunk
        if self.max_nodes is not None:
            new_cap = min(new_cap, self.max_nodes)
        if new_cap <= self.capacity:
            raise CapacityError(
                f"state space exhausted: {self.n_active} active states, limit {self.max_nodes}")
        old = {f: getattr(self, f) for f in self._FIELDS}
        n = self.n_used
        try:
            self._allocate(new_cap)
        except CapacityError:
            for f, arr in old.items():
                setattr(self, f, arr)
            raise CapacityError(
                f"out of memory growing the state space beyond {self.n_active} active states"
            ) from None
        for f, arr in old.items():
            getattr(self, f)[:n] = arr[:n]
        for obj in self.listeners:
            obj.on_grow(new_cap)

    def _take_slot(self) -> int:
        if self.inactive_nodes:
            return self.inactive_nodes.pop()
        if self.n_used == self.capacity:
            self._grow()
        i = self.n_used
        self.n_used += 1
        return i

    # -- lookup and insertion

    def find(self, s: Sequence[int]) -> int | None:
        return self.index.get(tuple(int(v) for v in s))

    def find_or_insert(self, s: Sequence[int]) -> tuple[int, bool]:
        key = tuple(int(v) for v in s)
        if len(key) != self.n_vars or min(key) < 0:
            raise ValueError(f"malformed state {key}")
        i = self.index.get(key)
        if i is not None:
            return i, False
        idx, _ = self.insert_many(np.array([key], dtype=np.int64))
        return int(idx[0]), True

    def insert_many(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Batch find_or_insert; returns (node indices, was_new mask)."""
        keys = [tuple(r) for r in np.asarray(states).tolist()]
        out = np.empty(len(keys), dtype=np.int64)
        new = np.zeros(len(keys), dtype=bool)
        fresh_idx, fresh_keys = [], []
        index = self.index
        for k, key in enumerate(keys):
            i = index.get(key)
            if i is None:
                i = self._take_slot()
                index[key] = i
                fresh_idx.append(i)
                fresh_keys.append(key)
                new[k] = True
            out[k] = i
        if fresh_idx:
            fi = np.array(fresh_idx, dtype=np.int64)
            self.states[fi] = np.array(fresh_keys, dtype=np.int64)
            self.prob[fi] = 0.0
            self.active[fi] = True
            self.expanded[fi] = False
            self.rates[fi] = 0.0
            self.exit[fi] = 0.0
            self.succ[fi] = UNRESOLVED
            self.version += 1
            self.peak_active = max(self.peak_active, self.n_active)
            for obj in self.listeners:
                obj.on_insert(fi, fresh_keys)
        return out, new

    # -- deletion and compaction

    def deactivate(self, i: int):
        assert self.active[i], f"node {i} is already inactive"
        self.deactivate_many(np.array([i], dtype=np.int64))

    def deactivate_many(self, idx: np.ndarray):
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size == 0:
            return
        assert self.active[idx].all(), "deactivating an inactive node"
        keys = [tuple(r) for r in self.states[idx].tolist()]
        for obj in self.listeners:
            obj.on_deactivate(idx, keys)
        for p in self.prob[idx].tolist():
            self.dropped_mass += p
        self.prob[idx] = 0.0
        self.active[idx] = False
        self.expanded[idx] = False
        self.gen[idx] += 1
        index = self.index
        for key in keys:
            del index[key]
        self.inactive_nodes.extend(idx.tolist())
        self.version += 1

    def maybe_compress(self) -> bool:
        inactive = len(self.inactive_nodes)
        total = self.n_used
        if total == 0 or inactive / total <= self.compress_threshold:
            return False
        order = np.flatnonzero(self.active[:total])  # surviving slots, ascending
        n = order.size
        remap = np.full(total, UNRESOLVED, dtype=np.int64)
        remap[order] = np.arange(n)
        for f in ("states", "prob", "gen", "expanded", "rates", "exit", "succ_gen"):
            arr = getattr(self, f)
            arr[:n] = arr[order]
        succ = self.succ[order]
        # links into removed slots (or stale ones) become unresolved
        tgt = np.where(succ >= 0, succ, 0)
        valid = (succ >= 0) & (self.gen[:n][remap[tgt].clip(0)] == self.succ_gen[:n]) \
            & (remap[tgt] >= 0)
        self.succ[:n] = np.where(valid, remap[tgt], UNRESOLVED)
        self.active[:n] = True
        self.active[n:total] = False
        self.prob[n:total] = 0.0
        self.expanded[n:total] = False
        self.succ[n:total] = UNRESOLVED
        # vacated slots get fresh generations so no surviving link can match them
        self.gen[n:total] = self.gen[:total].max(initial=0) + 1
        self.n_used = n
        self.inactive_nodes.clear()
        self.index = {tuple(r): i for i, r in enumerate(self.states[:n].tolist())}
        self.version += 1
        for obj in self.listeners:
            obj.on_compress(order)
        return True

    # -- queries

    def iterate_active(self) -> Iterator[int]:
        return iter(self.active_indices().tolist())

    def active_indices(self) -> np.ndarray:
        return np.flatnonzero(self.active[:self.n_used])

    def total_mass(self) -> float:
        return float(np.sum(self.prob[:self.n_used]))

    def state_of(self, i: int) -> tuple[int, ...]:
        return tuple(int(v) for v in self.states[i])

    def snapshot(self) -> tuple[np.ndarray, np.ndarray]:
        """Copies of (states, probabilities) of the active nodes, in slot order."""
        idx = self.active_indices()
        return self.states[idx].copy(), self.prob[idx].copy()

    def check_invariants(self):
        """Assert the index/array bijection and inactive-slot bookkeeping."""
        n = self.n_used
        act = self.active_indices()
        assert len(self.index) == act.size
        for i in act.tolist():
            assert self.index[self.state_of(i)] == i
        inactive = set(self.inactive_nodes)
        assert len(inactive) == len(self.inactive_nodes)
        assert inactive == set(np.flatnonzero(~self.active[:n]).tolist())
        assert all(self.prob[i] == 0.0 for i in inactive)
        assert n <= self.capacity
        assert (self.prob[:n] >= 0).all()
