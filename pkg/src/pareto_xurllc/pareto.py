"""Non-dominated filtering, 2-D hypervolume and the served-user reliability count.

Both objectives are minimised.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ParetoPoint:
    cost: float
    latency: float
    record: dict = field(default_factory=dict)

    def __iter__(self):
        yield self.cost
        yield self.latency


def _xy(p):
    return (p.cost, p.latency) if isinstance(p, ParetoPoint) else (float(p[0]), float(p[1]))


def dominates(a, b) -> bool:
    ax, ay = _xy(a)
    bx, by = _xy(b)
    return ax <= bx and ay <= by and (ax < bx or ay < by)


def pareto_filter(points) -> list:
    """Points not dominated by any other, in input order.

    Sort by (cost, latency), then sweep keeping a running latency minimum. Exact
    duplicates do not dominate each other, so all copies survive.
    """
    pts = list(points)
    if not pts:
        return []
    xy = np.array([_xy(p) for p in pts], dtype=float)
    order = np.lexsort((xy[:, 1], xy[:, 0]))
    keep = np.zeros(len(pts), bool)
    best_y = np.inf
    i = 0
    while i < len(order):
        # group identical cost values
        j = i
        while j + 1 < len(order) and xy[order[j + 1], 0] == xy[order[i], 0]:
            j += 1
        grp = order[i:j + 1]
        gmin = xy[grp, 1].min()
        if gmin < best_y:
            keep[grp[xy[grp, 1] == gmin]] = True
            best_y = gmin
        i = j + 1
    return [p for p, k in zip(pts, keep) if k]


def pareto_filter_bruteforce(points) -> list:
    pts = list(points)
    return [p for i, p in enumerate(pts) if not any(dominates(q, p) for j, q in enumerate(pts) if j != i)]


def hypervolume(front, ref) -> float:
    """Area dominated by the front and bounded by ref (2-D, minimisation)."""
    rx, ry = float(ref[0]), float(ref[1])
    xy = np.array([_xy(p) for p in front], dtype=float).reshape(-1, 2)
    if len(xy) == 0:
        return 0.0
    if np.any(xy[:, 0] > rx) or np.any(xy[:, 1] > ry):
        raise ValueError("hypervolume: a point lies beyond the reference point")
    xy = xy[np.lexsort((xy[:, 1], xy[:, 0]))]
    area, best_y = 0.0, ry
    for k in range(len(xy)):
        x, y = xy[k]
        if y < best_y:
            area += (rx - x) * (best_y - y)
            best_y = y
    return float(area)


def nadir_reference(*fronts, margin: float = 0.1):
    """Worst value per objective over the given fronts, pushed out by margin of the range."""
    xy = np.array([_xy(p) for f in fronts for p in f], dtype=float).reshape(-1, 2)
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    span = np.where(hi > lo, hi - lo, np.maximum(np.abs(hi), 1e-12))
    return hi + margin * span


def coverage(front, margin: float = 0.1) -> float:
    """Hypervolume against the front's own nadir plus margin (scale-free spread)."""
    if len(front) == 0:
        return 0.0
    return hypervolume(front, nadir_reference(front, margin=margin))


# ---------------------------------------------------------------- reliability
@dataclass
class ReliabilityRecord:
    flags: np.ndarray  # (U, T) pass indicators
    served: np.ndarray  # (U, T) smoothed indicators
    newly: np.ndarray  # (T,) count of rising edges per slot
    xi: int
    distinct: int


def reliability(flags) -> ReliabilityRecord:
    """Count rising edges of served = flag(t) or flag(t-1), with zero before t = 1."""
    K = np.asarray(flags).astype(bool)
    if K.ndim == 1:
        K = K[None, :]
    prev = np.concatenate([np.zeros((K.shape[0], 1), bool), K[:, :-1]], axis=1)
    ups = K | prev
    ups_prev = np.concatenate([np.zeros((K.shape[0], 1), bool), ups[:, :-1]], axis=1)
    rising = ups & ~ups_prev
    newly = rising.sum(axis=0)
    return ReliabilityRecord(K.astype(int), ups.astype(int), newly, int(newly.sum()), int(ups.any(axis=1).sum()))


def reliability_bruteforce(flags) -> int:
    """Direct slot-by-slot simulation of the same count."""
    K = np.atleast_2d(np.asarray(flags).astype(int))
    total = 0
    for u in range(K.shape[0]):
        prev_k, prev_s = 0, 0
        for t in range(K.shape[1]):
            s = 1 if (K[u, t] or prev_k) else 0
            if s and not prev_s:
                total += 1
            prev_k, prev_s = K[u, t], s
    return total


def reliability_sweep(latency_series: dict, delta_ts) -> list:
    """Rows (K, delta_t, xi, distinct) from per-K (U, T) latency matrices."""
    rows = []
    for K, lat in latency_series.items():
        lat = np.asarray(lat, float)
        for dt in delta_ts:
            rec = reliability(lat <= dt)
            rows.append({"K": int(K), "delta_t": float(dt), "xi": rec.xi, "distinct": rec.distinct})
    return rows
