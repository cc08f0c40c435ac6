"""Cost-matrix construction and optimal assignment with a distance gate.

Distances are BEV Euclidean (x, y only): moving objects separate mainly in
the ground plane while z is dominated by sensor noise. The solver is
scipy's linear_sum_assignment with a refinement pass that, among all
optimal assignments, returns the lexicographically smallest pair list so
golden tests stay stable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import NonFiniteCost

_COST_RTOL = 1e-9


@dataclass(frozen=True)
class Assignment:
    """Optimal row-column matching plus the leftovers on both sides."""

    pairs: tuple[tuple[int, int], ...]
    unmatched_rows: tuple[int, ...]
    unmatched_cols: tuple[int, ...]
    total_cost: float


def cost_matrix(a, b) -> np.ndarray:
    """(len(a), len(b)) matrix of BEV center distances in meters."""
    ca = np.array([box.center[:2] for box in a], dtype=float).reshape(len(a), 2)
    cb = np.array([box.center[:2] for box in b], dtype=float).reshape(len(b), 2)
    diff = ca[:, None, :] - cb[None, :, :]
    return np.hypot(diff[:, :, 0], diff[:, :, 1])


def _lexicographic_pairs(cost: np.ndarray, optimum: float) -> list[tuple[int, int]]:
    """Smallest pair list (sorted by row, then column) achieving the optimum."""
    n_rows, n_cols = cost.shape
    size = min(n_rows, n_cols)
    tol = _COST_RTOL * max(1.0, abs(optimum))
    pairs: list[tuple[int, int]] = []
    free_cols = list(range(n_cols))
    fixed = 0.0
    for row in range(n_rows):
        need = size - len(pairs)
        if need == 0:
            break
        chosen = None
        for col in free_cols:
            total = fixed + cost[row, col]
            if need > 1:
                rest_cols = [c for c in free_cols if c != col]
                sub = cost[np.ix_(range(row + 1, n_rows), rest_cols)]
                if min(sub.shape) < need - 1:
                    continue
                ri, ci = linear_sum_assignment(sub)
                total += float(sub[ri, ci].sum())
            if total <= optimum + tol:
                chosen = col
                break
        if chosen is not None:
            pairs.append((row, chosen))
            free_cols.remove(chosen)
            fixed += float(cost[row, chosen])
        # otherwise the row stays unmatched in every optimal completion
    return pairs


def hungarian(cost) -> Assignment:
    """Minimum-cost assignment of size min(rows, cols).

    Rectangular matrices are fine; ties between optimal assignments break
    deterministically (lexicographically smallest pair list). Raises
    NonFiniteCost on NaN or infinite entries.
    """
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2:
        c = c.reshape(len(c), -1) if c.size else c.reshape(0, 0)
    n_rows, n_cols = c.shape
    if n_rows == 0 or n_cols == 0:
        return Assignment((), tuple(range(n_rows)), tuple(range(n_cols)), 0.0)
    if not np.isfinite(c).all():
        raise NonFiniteCost("cost matrix contains NaN or infinite entries")
    ri, ci = linear_sum_assignment(c)
    optimum = float(c[ri, ci].sum())
    pairs = _lexicographic_pairs(c, optimum)
    total = 0.0
    for r, col in pairs:
        total += float(c[r, col])
    matched_rows = {r for r, _ in pairs}
    matched_cols = {col for _, col in pairs}
    return Assignment(
        tuple(pairs),
        tuple(r for r in range(n_rows) if r not in matched_rows),
        tuple(col for col in range(n_cols) if col not in matched_cols),
        total,
    )


def match_with_threshold(a, b, max_dist: float) -> Assignment:
    """Hungarian matching of two box lists, dropping pairs beyond max_dist."""
    if max_dist <= 0.0:
        raise ValueError(f"max_dist must be positive, got {max_dist}")
    costs = cost_matrix(a, b)
    result = hungarian(costs)
    kept = []
    total = 0.0
    dropped_rows, dropped_cols = [], []
    for r, col in result.pairs:
        d = float(costs[r, col])
        if d > max_dist:
            dropped_rows.append(r)
            dropped_cols.append(col)
        else:
            kept.append((r, col))
            total += d
    return Assignment(
        tuple(kept),
        tuple(sorted((*result.unmatched_rows, *dropped_rows))),
        tuple(sorted((*result.unmatched_cols, *dropped_cols))),
        total,
    )
