"""Result files: CSV distributions, marginals, deterministic states and a JSON summary.

All CSV files start with a one-line header.  Probabilities are written with
``repr`` so that they read back bit-for-bit; integral values drop the
trailing ``.0``.  Rows of joint files are sorted lexicographically by
state, which makes repeated runs byte-identical.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .dtmc import Snapshot


def format_real(v: float) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_distribution(snapshot: Snapshot, path, variables: Sequence[str]) -> Path:
    """Joint distribution: populations then probability, one state per row."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow([*variables, "probability"])
        for s, p in zip(snapshot.states.tolist(), snapshot.probs.tolist()):
            w.writerow([*s, format_real(p)])
    return path


def write_marginals(snapshot: Snapshot, directory, variables: Sequence[str],
                    tag: str) -> list[Path]:
    """One ``marginal_<var>_<tag>.csv`` per variable with value,probability rows."""
    out = []
    for i, name in enumerate(variables):
        values, probs = snapshot.marginal(i)
        path = Path(directory) / f"marginal_{name}_{tag}.csv"
        with path.open("w", newline="") as fh:
            w = _writer(fh)
            w.writerow([name, "probability"])
            for v, p in zip(values.tolist(), probs.tolist()):
                w.writerow([v, format_real(p)])
        out.append(path)
    return out


def write_state(x: np.ndarray, path, variables: Sequence[str]) -> Path:
    """A single deterministic state vector."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(list(variables))
        w.writerow([format_real(v) for v in x])
    return path


def write_trajectory(points, states, path, variables: Sequence[str], axis: str) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow([axis, *variables])
        for t, x in zip(np.asarray(points).tolist(), states):
            w.writerow([format_real(t), *(format_real(v) for v in x)])
    return path


def write_summary(summary: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return path


def read_distribution(path) -> tuple[list[str], dict[tuple[int, ...], float]]:
    """Inverse of :func:`write_distribution`."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0][:-1]
    return header, {tuple(int(v) for v in r[:-1]): float(r[-1]) for r in rows[1:]}
