"""Step-count distributions of the jump processes used by uniformization.

Standard uniformization weights the DTMC iterates with Poisson
probabilities.  Adaptive uniformization replaces the Poisson process by a
pure birth process whose k-th rate is the uniformization rate used for the
k-th DTMC step; those rates are only known one at a time, so
:class:`BirthWeights` is incremental: ``push_rate(rate_k)`` returns the
probability that the birth process sits in state k at the horizon.

Birth probabilities are obtained by uniformizing the birth process itself
with a rate ``cap`` above every rate seen so far.  The embedded chain moves
from k to k+1 with probability ``rate_k / cap``; the distribution of its
position after n steps is built one birth state (column) at a time with a
first-order linear recurrence over n, and the column is then weighted with
Poisson(cap * t) probabilities.  All terms are non-negative, so nothing
cancels.  When a rate above ``cap`` arrives, ``cap`` is raised and the
columns are replayed from the recorded rate history.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

# Poisson windows are scanned until the scaled terms fall below this bound,
# which fixes the normalisation constant far beyond any requested epsilon.
_SCAN_TAIL = 1e-20
_LEFT_CUTOFF = 25.0


@dataclass
class JumpWeights:
    left: int
    weights: np.ndarray
    truncation_error: float

    @property
    def right(self) -> int:
        return self.left + len(self.weights) - 1

    def __getitem__(self, k: int) -> float:
        if self.left <= k <= self.right:
            return float(self.weights[k - self.left])
        return 0.0


def _tail_ok(w: float, q: float, bound: float) -> bool:
    # geometric bound on everything beyond a term w whose successors shrink by <= q
    return q < 1.0 and w * q / (1.0 - q) <= bound


def poisson_weights(lambda_t: float, epsilon: float) -> JumpWeights:
    """Poisson(lambda_t) probabilities truncated to total omitted mass <= epsilon.

    Terms are generated outward from the mode with the ratio recurrence and
    normalised by their sum over a window wide enough that the unscanned
    tails are negligible, so no factorial or exp(-lambda_t) is ever formed.
    Left truncation is only used for lambda_t > 25.
    """
    if not (lambda_t >= 0.0) or not math.isfinite(lambda_t):
        raise ValueError(f"lambda_t must be a finite non-negative number, got {lambda_t!r}")
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    if lambda_t == 0.0:
        return JumpWeights(0, np.array([1.0]), 0.0)

    truncate_left = lambda_t > _LEFT_CUTOFF
    mode = int(math.floor(lambda_t))
    right_terms = [1.0]          # scaled so that term(mode) = 1
    k, w = mode, 1.0
    while True:
        w *= lambda_t / (k + 1)
        k += 1
        right_terms.append(w)
        if w == 0.0 or _tail_ok(w, lambda_t / (k + 2), _SCAN_TAIL):
            break
    left_terms = []
    k, w = mode, 1.0
    while k > 0:
        w *= k / lambda_t
        k -= 1
        left_terms.append(w)
        if truncate_left and (w == 0.0 or _tail_ok(w, k / lambda_t, _SCAN_TAIL)):
            break
    lo = mode - len(left_terms)
    scaled = np.array(left_terms[::-1] + right_terms)
    probs = scaled / math.fsum(scaled)

    a = 0
    if truncate_left:
        # drop the longest prefix whose mass stays within epsilon/2
        a = min(int(np.searchsorted(np.cumsum(probs), epsilon / 2, side="right")), mode - lo)
    tail = np.cumsum(probs[::-1])[::-1]          # tail[i] = mass of entries i..end
    over = np.flatnonzero(tail > epsilon / 2)
    b = max(int(over[-1]) if over.size else 0, mode - lo)
    weights = probs[a:b + 1].copy()
    return JumpWeights(lo + a, weights, max(0.0, 1.0 - math.fsum(weights)))


class BirthWeights:
    """Incremental birth-process weights at horizon ``t``.

    Each call ``push_rate(r)`` appends the rate of the current birth state and
    returns its probability at time ``t``.  A zero rate makes the state
    absorbing and ends the sequence.
    """

    GROWTH = 1.25

    def __init__(self, t: float, epsilon: float, inner_epsilon: float | None = None):
        if not (t >= 0.0) or not math.isfinite(t):
            raise ValueError(f"t must be finite and non-negative, got {t!r}")
        if not 0.0 < epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {epsilon!r}")
        self.t = float(t)
        self.epsilon = epsilon
        self.inner_epsilon = inner_epsilon if inner_epsilon is not None else \
            min(1e-14, epsilon * 1e-3)
        self.rates: list[float] = []
        self.weights: list[float] = []
        self.cumulative = 0.0
        self.finished = False
        self.cap = 0.0
        self._pois: JumpWeights | None = None
        self._col: np.ndarray | None = None   # P(chain at current birth state after n steps)
        self._col_start = 0                   # n-offset of _col[0]

    @property
    def converged(self) -> bool:
        return self.finished or self.cumulative >= 1.0 - self.epsilon

    @property
    def truncation_error(self) -> float:
        return max(0.0, 1.0 - self.cumulative)

    def push_rate(self, rate: float) -> float:
        if self.finished:
            raise ValueError("birth sequence already ended with an absorbing state")
        if not math.isfinite(rate) or rate < 0.0:
            raise ValueError(f"birth rates must be finite and non-negative, got {rate!r}")
        k = len(self.rates)
        self.rates.append(float(rate))
        if self.t == 0.0:
            w = 1.0 if k == 0 else 0.0
            self.finished = True
        elif rate == 0.0:
            # absorbing: all mass that has reached state k stays there
            w = max(0.0, self._window_mass() - self.cumulative) if k else 1.0
            self.finished = True
        else:
            if rate > self.cap:
                self._rebuild(rate * self.GROWTH)
            else:
                self._advance(k)
            w = self._weight()
        self.weights.append(w)
        self.cumulative += w
        return w

    # -- internals

    def _window_mass(self) -> float:
        if self._pois is None:
            return 1.0
        return 1.0 - self._pois.truncation_error

    def _weight(self) -> float:
        pois = self._pois
        lo = max(pois.left, self._col_start)
        hi = min(pois.right, self._col_start + self._col.size - 1)
        if hi < lo:
            return 0.0
        col = self._col[lo - self._col_start:hi - self._col_start + 1]
        return float(np.dot(pois.weights[lo - pois.left:hi - pois.left + 1], col))

    def _first_column(self):
        n = np.arange(self._pois.right + 1, dtype=np.float64)
        stay = 1.0 - self.rates[0] / self.cap
        self._col = stay ** n if stay > 0.0 else (n == 0).astype(np.float64)
        self._col_start = 0

    def _advance(self, k: int):
        """Replace column k-1 by column k (k >= 1)."""
        prev, start = self._col, self._col_start
        up = self.rates[k - 1] / self.cap
        stay = 1.0 - self.rates[k] / self.cap
        # col_k[n] = stay * col_k[n-1] + up * col_{k-1}[n-1]; nothing before n = k
        end = self._pois.right
        first = max(k, start + 1)
        if first > end:
            self._col = np.zeros(0)
            self._col_start = end + 1
            return
        x = prev[first - 1 - start:end - start]   # col_{k-1}[first-1 .. end-1]
        self._col = lfilter([up], [1.0, -stay], x)
        self._col_start = first
        self._trim()

    def _trim(self):
        # drop leading entries that are exactly zero or negligible; they only
        # feed later columns through tiny multiples
        col = self._col
        if col.size == 0:
            return
        nz = np.flatnonzero(col > 1e-300)
        if nz.size == 0:
            self._col = np.zeros(0)
            return
        first = int(nz[0])
        if first:
            self._col = col[first:]
            self._col_start += first

    def _rebuild(self, cap: float):
        self.cap = cap
        self._pois = poisson_weights(cap * self.t, self.inner_epsilon)
        self._first_column()
        for k in range(1, len(self.rates)):
            self._advance(k)


def birth_weights(rates, t: float, epsilon: float) -> JumpWeights:
    """Birth-process jump-count probabilities for the given rate sequence.

    Consumes rates until the cumulative weight reaches ``1 - epsilon`` or the
    sequence ends; a finite sequence that ends early leaves the remainder in
    ``truncation_error``.
    """
    if isinstance(rates, (list, tuple, np.ndarray)):
        arr = np.asarray(rates, dtype=np.float64)
        if (arr < 0).any():
            raise ValueError("birth rates must be non-negative")
        if (arr[:-1] == 0).any():
            raise ValueError("non-positive rate in the interior of the rate sequence")
    bw = BirthWeights(t, epsilon)
    seen_zero = False
    for r in rates:
        if seen_zero:
            raise ValueError("non-positive rate in the interior of the rate sequence")
        if r < 0:
            raise ValueError(f"negative birth rate {r!r}")
        bw.push_rate(r)
        seen_zero = r == 0
        if bw.converged:
            break
    if not bw.weights:
        raise ValueError("rate sequence is empty")
    weights = np.array(bw.weights)
    return JumpWeights(0, weights, max(0.0, 1.0 - math.fsum(weights)))
