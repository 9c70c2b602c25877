"""Shared fixtures and dense reference solvers.

The dense oracles below never call into the package's evaluation code:
random models are generated together with plain-Python descriptions of
their guards and rates, and the reference generator is built from those.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import pytest

from popmc import parse_model

FLIP_TEXT = """
var a = 1;
var b = 0;
a > 0 |- 1 -> a := a - 1, b := b + 1;
b > 0 |- 1 -> a := a + 1, b := b - 1;
"""


@pytest.fixture
def flip():
    return parse_model(FLIP_TEXT)


def flip_exact(t: float) -> float:
    """Probability of the initial state of the unit-rate flip chain at time t."""
    return (1.0 + math.exp(-2.0 * t)) / 2.0


@dataclass
class FiniteCase:
    """A bounded random model with an independent description of its transitions."""

    text: str
    bounds: tuple[int, ...]
    initial: tuple[int, ...]
    commands: list      # (change vector, a, b, k) with rate a + b * x[k]
    semantics: str = "ctmc"

    def states(self):
        return list(itertools.product(*(range(b + 1) for b in self.bounds)))

    def enabled(self, s, change) -> bool:
        return all(0 <= x + v <= b for x, v, b in zip(s, change, self.bounds))

    def generator(self):
        states = self.states()
        pos = {s: i for i, s in enumerate(states)}
        q = np.zeros((len(states), len(states)))
        for s in states:
            for change, a, b, k in self.commands:
                if self.enabled(s, change):
                    t = tuple(x + v for x, v in zip(s, change))
                    q[pos[s], pos[t]] += a + b * s[k]
        np.fill_diagonal(q, q.diagonal() - q.sum(axis=1))
        return states, q

    def embedded(self):
        states, q = self.generator()
        p = q.copy()
        np.fill_diagonal(p, 0.0)
        exit_ = p.sum(axis=1)
        for i, e in enumerate(exit_):
            if e > 0:
                p[i] /= e
            else:
                p[i, i] = 1.0
        return states, p

    def start(self, states):
        p0 = np.zeros(len(states))
        p0[states.index(self.initial)] = 1.0
        return p0


def random_finite_case(rng: np.random.Generator, semantics: str = "ctmc") -> FiniteCase:
    n = int(rng.integers(1, 3))
    bounds = tuple(int(rng.integers(2, 10 if n == 2 else 60)) for _ in range(n))
    initial = tuple(int(rng.integers(0, b + 1)) for b in bounds)
    m = int(rng.integers(1, 5))
    names = [f"x{i}" for i in range(n)]
    lines = [f"var {nm} = {v};" for nm, v in zip(names, initial)]
    lines.append(f"semantics {semantics};")
    commands = []
    for _ in range(m):
        change = [0] * n
        while not any(change):
            change = [int(c) for c in rng.integers(-2, 3, size=n)]
        a = float(np.round(rng.uniform(0.1, 2.0), 3))
        b = float(np.round(rng.uniform(0.0, 0.5), 3))
        k = int(rng.integers(0, n))
        guard = " and ".join(
            f"{nm} <= {bd - v}" if v > 0 else f"{nm} >= {-v}"
            for nm, v, bd in zip(names, change, bounds) if v)
        upd = ", ".join(f"{nm} := {nm} {'+' if v > 0 else '-'} {abs(v)}"
                        for nm, v in zip(names, change) if v)
        lines.append(f"{guard} |- {a} + {b}*{names[k]} -> {upd};")
        commands.append((change, a, b, k))
    return FiniteCase("\n".join(lines), bounds, initial, commands, semantics)


def dist_vector(result, states) -> np.ndarray:
    d = result.distribution
    return np.array([d.get(tuple(s), 0.0) for s in states])


# lines printed by the acceptance checks, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
