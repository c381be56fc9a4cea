"""Bipartite matching and cycle-consistent clustering of affinities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

# stands in for -inf during the assignment solve; any matching that avoids a
# forbidden pair beats any matching that includes one
_FORBIDDEN = -1e15


def hungarian_max(a: np.ndarray) -> list[tuple[int, int]]:
    """Maximum-total-weight assignment over a dense score matrix.

    Rectangular inputs match min(N, M) pairs. Entries of -inf are never part
    of the result; their rows/columns simply stay unmatched.
    """
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return []
    masked = np.where(np.isneginf(a), _FORBIDDEN, a)
    rows, cols = linear_sum_assignment(masked, maximize=True)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if not np.isneginf(a[r, c])]


def filter_matches(pairs, a: np.ndarray, threshold: float):
    """Split an assignment into accepted pairs and leftover rows/columns.

    A pair survives iff its score is finite and >= threshold.
    """
    a = np.asarray(a, dtype=float)
    accepted = [(r, c) for r, c in pairs
                if np.isfinite(a[r, c]) and a[r, c] >= threshold]
    rows = {r for r, _ in accepted}
    cols = {c for _, c in accepted}
    unmatched_rows = [r for r in range(a.shape[0]) if r not in rows]
    unmatched_cols = [c for c in range(a.shape[1]) if c not in cols]
    return accepted, unmatched_rows, unmatched_cols


@dataclass(frozen=True)
class Partition:
    """Cluster labels per item; labels are contiguous ints from 0."""

    labels: np.ndarray

    def clusters(self) -> list[list[int]]:
        out: dict[int, list[int]] = {}
        for i, lab in enumerate(self.labels):
            out.setdefault(int(lab), []).append(i)
        return [out[k] for k in sorted(out)]


def partition_cycle_consistent(a: np.ndarray, max_exact: int = 12) -> Partition:
    """Cluster items to maximize the sum of within-cluster affinities.

    The induced pairwise decisions are transitive by construction (the result
    is a partition), and -inf pairs are never co-clustered, which is how
    same-camera exclusivity is encoded. Up to max_exact items the optimum is
    found by branch and bound over set partitions; larger inputs fall back to
    greedy agglomeration, merging the best positive-sum cluster pair until
    none remains.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if n == 0:
        return Partition(np.zeros(0, dtype=int))
    if n <= max_exact:
        labels = _partition_exact(a)
    else:
        labels = _partition_greedy(a)
    if __debug__:
        for i in range(n):
            for j in range(i + 1, n):
                assert not (np.isneginf(a[i, j]) and labels[i] == labels[j])
    return Partition(_canonical_labels(labels))


def _canonical_labels(labels):
    remap: dict[int, int] = {}
    out = np.empty(len(labels), dtype=int)
    for i, lab in enumerate(labels):
        out[i] = remap.setdefault(int(lab), len(remap))
    return out


def _partition_exact(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    forbidden = np.isneginf(a)
    gain = np.where(np.isfinite(a), a, 0.0)
    pos = np.where(gain > 0, gain, 0.0)
    # suffix[i]: optimistic extra weight from pairs whose larger index is >= i
    suffix = np.zeros(n + 1)
    for q in range(n - 1, -1, -1):
        suffix[q] = suffix[q + 1] + pos[:q, q].sum()

    best_obj = -np.inf
    best = np.arange(n)
    labels = np.zeros(n, dtype=int)
    members: list[list[int]] = []

    def rec(i: int, obj: float):
        nonlocal best_obj, best
        if obj + suffix[i] <= best_obj:
            return
        if i == n:
            best_obj = obj
            best = labels[:n].copy()
            return
        for ci, mem in enumerate(members):
            add = 0.0
            ok = True
            for j in mem:
                if forbidden[i, j]:
                    ok = False
                    break
                add += gain[i, j]
            if not ok:
                continue
            labels[i] = ci
            mem.append(i)
            rec(i + 1, obj + add)
            mem.pop()
        labels[i] = len(members)
        members.append([i])
        rec(i + 1, obj)
        members.pop()

    rec(0, 0.0)
    return best


def _partition_greedy(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    bad = np.isneginf(a)
    cross = np.where(np.isfinite(a), a, 0.0).copy()
    np.fill_diagonal(cross, 0.0)
    alive = np.ones(n, dtype=bool)
    owner = np.arange(n)
    while True:
        cand = cross.copy()
        cand[bad] = -np.inf
        cand[~alive, :] = -np.inf
        cand[:, ~alive] = -np.inf
        cand[np.tril_indices(n)] = -np.inf
        i, j = np.unravel_index(np.argmax(cand), cand.shape)
        if not np.isfinite(cand[i, j]) or cand[i, j] <= 0.0:
            break
        # fold cluster j into cluster i
        cross[i, :] += cross[j, :]
        cross[:, i] += cross[:, j]
        bad[i, :] |= bad[j, :]
        bad[:, i] |= bad[:, j]
        cross[i, i] = 0.0
        alive[j] = False
        owner[owner == j] = i
    return owner
