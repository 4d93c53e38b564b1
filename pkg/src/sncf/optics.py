"""OPTICS reachability ordering, xi-steepness cluster extraction and
multi-neighborhood fewest-outliers voting."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import ConfigError

OUTLIER = -1


@dataclass(frozen=True)
class ReachabilityOrdering:
    """OPTICS output: visit order, reachability and core distances.

    reachability uses +inf as the sentinel for the first point visited in
    each connected component.
    """

    order: np.ndarray
    reachability: np.ndarray
    core_distance: np.ndarray
    min_pts: int


@dataclass(frozen=True)
class ClusterExtraction:
    """Flat leaf clusters extracted from a reachability ordering.

    clusters holds (start, end) inclusive index ranges into the visit order;
    membership maps each point to its cluster id or OUTLIER (-1).
    """

    clusters: tuple[tuple[int, int], ...]
    membership: np.ndarray
    outlier_count: int
    chosen_min_pts: int = 0
    degraded: bool = False


def optics_order(points, min_pts: int) -> ReachabilityOrdering:
    """Standard OPTICS ordering with generating distance infinity.

    Repeatedly expands the unprocessed point of minimum reachability, with
    ties broken by ascending point index; reachability(o <- p) is
    max(core_distance(p), dist(p, o)). Euclidean metric.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    n = points.shape[0]
    if min_pts >= n:
        raise ConfigError(f"min_pts={min_pts} must be smaller than n={n}")

    core = np.empty(n)
    for i in range(n):
        # direct difference form, not the expanded inner-product identity:
        # exact reproducibility against reference implementations
        diff = points - points[i]
        d2 = (diff * diff).sum(axis=1)
        # index min_pts skips the zero self-distance
        core[i] = np.sqrt(np.partition(d2, min_pts)[min_pts])

    reach = np.full(n, np.inf)
    processed = np.zeros(n, dtype=bool)
    order = np.empty(n, dtype=np.int64)
    # reach value frozen at processing time; masked copy drives point selection
    pending = reach.copy()
    for step in range(n):
        i = int(np.argmin(pending))  # argmin ties resolve to the lowest index
        order[step] = i
        processed[i] = True
        pending[i] = np.inf
        diff = points - points[i]
        d = np.sqrt((diff * diff).sum(axis=1))
        new = np.maximum(core[i], d)
        better = (~processed) & (new < reach)
        reach[better] = new[better]
        pending[better] = new[better]
    # processed points are masked with +inf in `pending`, so argmin starts a
    # new component at the lowest-index unprocessed point when reach runs dry
    reach[order[0]] = np.inf
    return ReachabilityOrdering(
        order=order, reachability=reach, core_distance=core, min_pts=min_pts
    )


class _SteepDownArea:
    __slots__ = ("start", "end", "mib")

    def __init__(self, start, end):
        self.start = start
        self.end = end
        self.mib = 0.0


def _extend_region(steep, counter_xward, start, min_pts):
    """Largest maximal steep region starting at `start`; at most min_pts
    consecutive non-steep points are tolerated inside it."""
    n = len(steep)
    non_steep = 0
    index = start
    end = start
    while index < n:
        if steep[index]:
            non_steep = 0
            end = index
        elif not counter_xward[index]:
            non_steep += 1
            if non_steep > min_pts:
                break
        else:
            return end
        index += 1
    return end


def _filter_sdas(sdas, mib, xi_c, r):
    if np.isinf(mib):
        return []
    kept = [a for a in sdas if mib <= r[a.start] * xi_c]
    for a in kept:
        a.mib = max(a.mib, mib)
    return kept


def _xi_candidates(plot: np.ndarray, xi: float, min_pts: int, min_cluster_size: int):
    """Candidate (start, end) clusters from the steep up/down area scan.

    A trailing +inf is appended so valleys ending at the plot boundary are
    still closed by a final steep-up region.
    """
    r = np.hstack([plot, [np.inf]])
    xi_c = 1.0 - xi
    with np.errstate(invalid="ignore"):
        ratio = r[:-1] / r[1:]
        steep_up = ratio <= xi_c
        steep_down = ratio >= 1.0 / xi_c
        downward = ratio > 1.0
        upward = ratio < 1.0

    sdas: list[_SteepDownArea] = []
    clusters: list[tuple[int, int]] = []
    index = 0
    mib = 0.0
    for steep_index in np.flatnonzero(steep_up | steep_down):
        if steep_index < index:
            continue
        mib = max(mib, float(np.max(r[index : steep_index + 1])))
        if steep_down[steep_index]:
            sdas = _filter_sdas(sdas, mib, xi_c, r)
            d_start = int(steep_index)
            d_end = _extend_region(steep_down, upward, d_start, min_pts)
            sdas.append(_SteepDownArea(d_start, d_end))
            index = d_end + 1
            mib = r[index]
        else:
            sdas = _filter_sdas(sdas, mib, xi_c, r)
            u_start = int(steep_index)
            u_end = _extend_region(steep_up, downward, u_start, min_pts)
            index = u_end + 1
            mib = r[index]
            found = []
            for area in sdas:
                c_start = area.start
                c_end = u_end
                if r[c_end + 1] * xi_c < area.mib:
                    continue
                # trim the shallower side of an asymmetric valley
                d_max = r[area.start]
                if d_max * xi_c >= r[c_end + 1]:
                    while r[c_start + 1] > r[c_end + 1] and c_start < area.end:
                        c_start += 1
                elif r[c_end + 1] * xi_c >= d_max:
                    while r[c_end - 1] > d_max and c_end > u_start:
                        c_end -= 1
                if c_end - c_start + 1 < min_cluster_size:
                    continue
                if c_start > area.end or c_end < u_start:
                    continue
                found.append((c_start, c_end))
            found.reverse()  # innermost candidates first
            clusters.extend(found)
    return clusters


def extract_xi_clusters(
    r: ReachabilityOrdering, xi: float, min_cluster_size: int
) -> ClusterExtraction:
    """Xi-steepness extraction: steep-down regions open candidate clusters,
    steep-up regions close them; nested candidates resolve to leaves."""
    if not 0.0 < xi < 1.0:
        raise ConfigError(f"xi must lie in (0, 1), got {xi}")
    n = len(r.order)
    plot = r.reachability[r.order]
    candidates = _xi_candidates(plot, xi, r.min_pts, min_cluster_size)

    slot = np.full(n, OUTLIER, dtype=np.int64)
    kept: list[tuple[int, int]] = []
    for start, end in candidates:  # innermost first: later overlaps are rejected
        if np.all(slot[start : end + 1] == OUTLIER):
            slot[start : end + 1] = len(kept)
            kept.append((start, end))
    membership = np.empty(n, dtype=np.int64)
    membership[r.order] = slot
    outliers = int(np.sum(slot == OUTLIER))
    return ClusterExtraction(
        clusters=tuple(kept),
        membership=membership,
        outlier_count=outliers,
        chosen_min_pts=r.min_pts,
    )


def multi_scale_select(
    points,
    neighborhoods,
    xi: float,
    min_cluster_size: int,
) -> ClusterExtraction:
    """Run OPTICS + xi extraction per neighborhood size and vote.

    Among scales yielding at least two clusters, the one with the fewest
    outliers wins (ties go to the larger neighborhood). If no scale yields
    two clusters the best single-cluster scale is returned with the
    degraded flag set; with no clusters at all, everything is an outlier.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0] if points.ndim > 1 else len(points)
    if not list(neighborhoods):
        raise ConfigError("neighborhoods list must be non-empty")
    runs: list[ClusterExtraction] = []
    for v in neighborhoods:
        if v >= n:
            warnings.warn(
                f"skipping neighborhood size {v} >= n={n}", stacklevel=2
            )
            continue
        ordering = optics_order(points, v)
        runs.append(extract_xi_clusters(ordering, xi, min_cluster_size))
    multi = [e for e in runs if len(e.clusters) >= 2]
    if multi:
        # stable min: first (largest V, neighborhoods are decreasing) wins ties
        return min(multi, key=lambda e: e.outlier_count)
    single = [e for e in runs if len(e.clusters) >= 1]
    if single:
        best = min(single, key=lambda e: e.outlier_count)
        return ClusterExtraction(
            clusters=best.clusters,
            membership=best.membership,
            outlier_count=best.outlier_count,
            chosen_min_pts=best.chosen_min_pts,
            degraded=True,
        )
    return ClusterExtraction(
        clusters=(),
        membership=np.full(n, OUTLIER, dtype=np.int64),
        outlier_count=n,
        chosen_min_pts=0,
        degraded=True,
    )
