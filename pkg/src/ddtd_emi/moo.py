"""Multi-objective bookkeeping: feasibility filter, non-dominated sorting,
crowding-based truncation and the 2D hypervolume progress metric.

Both objectives are minimized. Identical objective pairs do not dominate
each other, so duplicate performance points can coexist in an archive.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .circuit import EvalRecord


@dataclass
class Candidate:
    """A density field with its evaluation and provenance."""

    rho: np.ndarray
    record: EvalRecord
    provenance: str          # "seed" or "generated"
    iteration: int
    uid: int

    @property
    def j1(self):
        return self.record.j1_db

    @property
    def j2(self):
        return self.record.j2_db

    @property
    def g(self):
        return self.record.g_db

    @property
    def feasible(self):
        return self.record.feasible

    def point(self):
        return (self.record.j1_db, self.record.j2_db)


def feasibility_filter(candidates, g_bar):
    """Keep candidates with G >= g_bar, preserving order."""
    return [c for c in candidates if c.record.g_db >= g_bar]


def nondominated_sort(points) -> np.ndarray:
    """1-based non-dominated rank per point (rank 1 = non-dominated).

    a dominates b iff a <= b componentwise and a < b somewhere. Ranks peel
    iteratively using precomputed domination counts.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be (n, 2)")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    n = pts.shape[0]
    ranks = np.zeros(n, dtype=int)
    if n == 0:
        return ranks

    a = pts[:, None, :]
    b = pts[None, :, :]
    dom = np.all(a <= b, axis=2) & np.any(a < b, axis=2)   # [i, j]: i dom j
    counts = dom.sum(axis=0)

    rank = 1
    remaining = counts == 0
    while remaining.any():
        ranks[remaining] = rank
        counts = counts - dom[remaining].sum(axis=0)
        remaining = (counts == 0) & (ranks == 0)
        rank += 1
    return ranks


def crowding_distance(points) -> np.ndarray:
    """NSGA-II crowding distance; objective-wise extremes get +inf."""
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    dist = np.zeros(n)
    if n == 0:
        return dist
    for m in range(pts.shape[1]):
        order = np.argsort(pts[:, m], kind="stable")
        dist[order[0]] = dist[order[-1]] = np.inf
        span = pts[order[-1], m] - pts[order[0], m]
        if span > 0 and n > 2:
            gaps = (pts[order[2:], m] - pts[order[:-2], m]) / span
            dist[order[1:-1]] += gaps
    return dist


def truncate(candidates: List[Candidate], cap: int) -> List[Candidate]:
    """Keep the cap most-spread candidates of a rank-one set.

    Boundary points survive first (infinite crowding); finite ties break by
    lower J1, then lower J2, then input order. Output keeps input order.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    if len(candidates) <= cap:
        return list(candidates)
    pts = np.array([c.point() for c in candidates])
    crowd = crowding_distance(pts)
    order = sorted(range(len(candidates)),
                   key=lambda i: (-crowd[i], pts[i, 0], pts[i, 1], i))
    keep = sorted(order[:cap])
    return [candidates[i] for i in keep]


def hypervolume2d(points, ref) -> float:
    """Exact area dominated by the points up to the reference point.

    Every point must dominate ref (minimization).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] == 0:
        raise ValueError("points must be a nonempty (n, 2) array")
    rx, ry = float(ref[0]), float(ref[1])
    dominates_ref = (pts[:, 0] <= rx) & (pts[:, 1] <= ry) & \
                    ((pts[:, 0] < rx) | (pts[:, 1] < ry))
    if not dominates_ref.all():
        raise ValueError("every point must dominate the reference point")

    order = np.lexsort((pts[:, 1], pts[:, 0]))
    front = []
    best_y = np.inf
    for i in order:
        y = pts[i, 1]
        if y < best_y:
            front.append((pts[i, 0], y))
            best_y = y
    area = 0.0
    for k, (x, y) in enumerate(front):
        x_next = front[k + 1][0] if k + 1 < len(front) else rx
        area += (x_next - x) * (ry - y)
    return area


@dataclass
class EliteArchive:
    """Feasible, mutually non-dominated candidates, at most cap of them."""

    members: List[Candidate]
    cap: int

    @classmethod
    def select(cls, candidates, g_bar, cap) -> "EliteArchive":
        """Filter to feasible, keep rank-one, truncate to cap; members are
        sorted by (J1, J2, uid) for stable downstream output."""
        feasible = feasibility_filter(candidates, g_bar)
        if not feasible:
            return cls(members=[], cap=cap)
        ranks = nondominated_sort([c.point() for c in feasible])
        front = [c for c, r in zip(feasible, ranks) if r == 1]
        members = truncate(front, cap)
        members.sort(key=lambda c: (c.j1, c.j2, c.uid))
        return cls(members=members, cap=cap)

    def points(self) -> np.ndarray:
        return np.array([c.point() for c in self.members])

    def validate(self, g_bar):
        if len(self.members) > self.cap:
            raise AssertionError("archive exceeds its cap")
        for c in self.members:
            if c.g < g_bar:
                raise AssertionError("infeasible candidate in archive")
        if self.members:
            ranks = nondominated_sort(self.points())
            if not np.all(ranks == 1):
                raise AssertionError("archive contains dominated members")
