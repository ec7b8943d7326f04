"""Stable marriage of Poisson points and Lebesgue measure.

Each center a of a Poisson process chi (intensity 1) may claim a volume of
at most alpha. R(a, chi) is the smallest radius r with |B(0, r)| in alpha N
and alpha card(chi n closed B(a, 2r)) <= |B(a, r)|; the territory of a lies in
the closed ball B(a, R), so the balls (a, 2R(a, chi)) dominate the occupied
set. This module computes R, samples the dominating ball process, estimates
its radius tail under the Palm measure, bounds that tail, and builds a
discrete stable allocation to test the territory containment.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .estimators import EstimateWithCI, run_replicas
from .measures import INF, unit_ball_volume
from .point_process import BallConfiguration, Truncation, Window, make_rng

DEPENDENCE_CONSTANT = 7.0


class ScanRangeExhausted(ValueError):
    """The candidate-radius scan left the region where chi is known."""


@dataclass(frozen=True)
class Appetite:
    alpha: float
    d: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not (0 < self.alpha < 2.0 ** (-self.d)):
            raise ValueError(f"alpha must lie in (0, 2^-d) = (0, {2.0 ** (-self.d):g}), got {self.alpha}")

    def radius(self, k) -> np.ndarray:
        """Candidate radii r_k with |B(0, r_k)| = k alpha."""
        return (np.asarray(k, dtype=float) * self.alpha / unit_ball_volume(self.d)) ** (1.0 / self.d)


def _first_stable_k(dists: np.ndarray, app: Appetite, scan_limit: float) -> float:
    """R from the sorted distances of chi to a (self included as 0).

    card(chi n closed B(a, 2 r_k)) <= k  iff  the (k+1)-th smallest distance
    exceeds 2 r_k; beyond the known points that distance is +inf.
    """
    m = dists.size
    ks = np.arange(1, m + 1)
    nxt = np.append(dists[1:], INF)
    rk = app.radius(ks)
    ok = nxt > 2 * rk
    k = int(np.argmax(ok))  # ok[-1] is always True
    r = float(rk[k])
    if 2 * r > scan_limit:
        return INF
    return r


def stabilization_radius(a, chi, alpha, d: Optional[int] = None, scan_limit: float = INF) -> float:
    """R(a, chi); chi is assumed complete within ``scan_limit`` of a.

    Raises ScanRangeExhausted when the answer would need points farther
    than ``scan_limit`` from a.
    """
    chi = np.asarray(chi, dtype=float)
    if chi.ndim == 1:
        chi = chi[:, None]
    a = np.atleast_1d(np.asarray(a, dtype=float))
    app = alpha if isinstance(alpha, Appetite) else Appetite(float(alpha), d or chi.shape[1])
    dist = np.sort(np.linalg.norm(chi - a, axis=1))
    if dist.size == 0 or dist[0] > 1e-12:
        raise ValueError("a must belong to chi")
    r = _first_stable_k(dist[dist <= scan_limit], app, scan_limit)
    if not math.isfinite(r):
        raise ScanRangeExhausted(f"R({a.tolist()}) needs points beyond distance {scan_limit}")
    return r


def stabilization_radii(chi: np.ndarray, app: Appetite, scan_limits=INF, tree: Optional[cKDTree] = None) -> np.ndarray:
    """R(a, chi) for every a in chi; +inf where the scan range is exhausted."""
    chi = np.asarray(chi, dtype=float).reshape(-1, app.d)
    n = chi.shape[0]
    limits = np.broadcast_to(np.asarray(scan_limits, dtype=float), (n,))
    out = np.empty(n)
    if n == 0:
        return out
    if n == 1:
        r1 = float(app.radius(1))
        return np.where(2 * r1 > limits, INF, r1)
    tree = tree or cKDTree(chi)
    # grow a k-nearest query until each stopping index is inside it
    k = min(n, 16)
    pending = np.arange(n)
    while pending.size:
        dd, _ = tree.query(chi[pending], k=k)
        dd = np.asarray(dd).reshape(pending.size, -1)
        rk = app.radius(np.arange(1, k + 1))
        real = dd[:, 1:] > 2 * rk[:-1]  # the (j+1)-th distance exceeds 2 r_j
        hit = real.any(axis=1)
        idx = np.where(hit, real.argmax(axis=1), k - 1)
        r = rk[idx]
        lim = limits[pending]
        # past k = n the condition holds trivially; past the scan limit it is unknown
        done = hit | (k == n) | (2 * rk[-2] > lim)
        r = np.where(hit | (k == n), r, INF)
        out[pending[done]] = np.where(2 * r[done] > lim[done], INF, r[done])
        pending = pending[~done]
        k = min(n, 2 * k)
    return out


@dataclass(frozen=True, eq=False)
class DominationProcess:
    centers: np.ndarray
    radii: np.ndarray  # 2 R(a, chi)
    chi: np.ndarray
    appetite: Appetite
    window: Optional[Window] = None

    @property
    def R(self) -> np.ndarray:
        return self.radii / 2.0

    def to_configuration(self, window: Optional[Window] = None, seed: int = 0, stream: tuple = (),
                         truncation: Truncation = Truncation(INF, 0.0), mode: str = "box") -> BallConfiguration:
        win = window or self.window
        return BallConfiguration(self.centers, self.radii, np.zeros(len(self.radii), dtype=np.int64), win, seed,
                                 stream, truncation, mode, 0.0, DEPENDENCE_CONSTANT)


def domination_process(chi, alpha, window: Optional[Window] = None, scan_limits=INF,
                       keep=None) -> DominationProcess:
    """Balls (a, 2 R(a, chi)) for the centers selected by ``keep`` (all by default).

    ``scan_limits`` gives, per center, the distance within which chi is known.
    """
    chi = np.asarray(chi, dtype=float)
    if chi.ndim == 1:
        chi = chi[:, None]
    app = alpha if isinstance(alpha, Appetite) else Appetite(float(alpha), chi.shape[1])
    R = stabilization_radii(chi, app, scan_limits)
    sel = np.ones(len(chi), dtype=bool) if keep is None else np.asarray(keep, dtype=bool)
    bad = np.flatnonzero(sel & ~np.isfinite(R))
    if bad.size:
        i = int(bad[0])
        raise ScanRangeExhausted(f"center {i} at {chi[i].tolist()}: R exceeds the known range "
                                 f"({bad.size} center(s) affected)")
    return DominationProcess(chi[sel], 2 * R[sel], chi, app, window)


# ---------------------------------------------------------------------------
# tail bound


def _g(x: float) -> float:
    return (x - 1 - math.log(x)) / x


def _h(x: float) -> float:
    return x * x / (1 - x) * _g(x)


def chernoff_parameters(alpha: float, d: int) -> tuple:
    """(x, g(x), h(x)) with x = sqrt(alpha 2^d)."""
    Appetite(alpha, d)
    x = math.sqrt(alpha * 2 ** d)
    return x, _g(x), _h(x)


def chernoff_bound(alpha: float, d: int, r) -> np.ndarray | float:
    """exp(h(x)) exp(-omega_d r^d g(x)), an upper bound on P(2 R(0, chi u {0}) > r)."""
    x, g, h = chernoff_parameters(alpha, d)
    r = np.asarray(r, dtype=float)
    out = np.exp(h - unit_ball_volume(d) * np.maximum(r, 0) ** d * g)
    return float(out) if out.ndim == 0 else out


def decay_rate(alpha: float, d: int) -> float:
    """F(alpha) = omega_d g(sqrt(alpha 2^d)); tends to +inf as alpha -> 0."""
    return unit_ball_volume(d) * chernoff_parameters(alpha, d)[1]


def clip_radius(alpha: float, d: int, target: float = 1e-6) -> float:
    """Smallest r with chernoff_bound(alpha, d, r) <= target."""
    x, g, h = chernoff_parameters(alpha, d)
    return ((h - math.log(target)) / (unit_ball_volume(d) * g)) ** (1.0 / d)


@dataclass(frozen=True)
class _PalmTask:
    app: Appetite
    reach: float
    seed: int

    def __call__(self, k):
        rng = make_rng(self.seed, 5, k)
        d = self.app.d
        n = rng.poisson((2 * self.reach) ** d)
        pts = np.vstack([np.zeros((1, d)), rng.uniform(-self.reach, self.reach, size=(n, d))])
        return 2 * stabilization_radius(pts[0], pts, self.app, scan_limit=self.reach)


@dataclass(frozen=True)
class TailCurve:
    r_grid: tuple
    estimates: tuple  # EstimateWithCI per grid point
    bound: tuple
    reach: float
    samples: Optional[np.ndarray] = None

    def rows(self) -> list:
        return [{"r": r, **e.as_dict(), "bound": b} for r, e, b in zip(self.r_grid, self.estimates, self.bound)]


def palm_tail_estimate(alpha: float, d: int, r_grid: Sequence[float], replicas: int, seed: int = 0,
                       workers: int = 1, level: float = 0.95, target: float = 1e-6) -> TailCurve:
    """Empirical P(2 R(0, chi u {0}) > r) on a grid, with the Chernoff curve.

    chi is sampled in the box of half-width ``reach`` where the bound at
    ``reach`` is below ``target``; a replica needing more raises.
    """
    app = Appetite(alpha, d)
    reach = clip_radius(alpha, d, target)
    vals = np.array(run_replicas(_PalmTask(app, reach, seed), replicas, workers))
    grid = tuple(float(r) for r in r_grid)
    est = tuple(EstimateWithCI(int(np.sum(vals > r)), replicas, level) for r in grid)
    return TailCurve(grid, est, tuple(float(chernoff_bound(alpha, d, r)) for r in grid), reach, vals)


# ---------------------------------------------------------------------------
# model for the estimators


@dataclass(frozen=True)
class MarriageModel:
    """The dominating ball process (a, 2 R(a, chi)) for chi Poisson of intensity 1."""

    alpha: float
    d: int
    dependence_constant: float = DEPENDENCE_CONSTANT

    def __post_init__(self):
        Appetite(self.alpha, self.d)

    @property
    def intensity(self) -> float:
        return 1.0

    @property
    def radius_sup(self) -> float:
        return INF

    def tail_bound(self, r) -> float:
        return float(np.minimum(1.0, chernoff_bound(self.alpha, self.d, r)))

    def mass(self, lo, hi=INF):
        return self.tail_bound(np.nextafter(lo, -INF)) if lo > 0 else 1.0

    def moment(self, p, lo, hi=INF):
        """Upper bound on the p-th moment of the radius law over [lo, hi],
        from lo^p P(2R >= lo) + int_lo^hi p r^(p-1) P(2R > r) dr."""
        from scipy import integrate

        if p == 0:
            return self.mass(lo, hi)
        head = lo ** p * self.mass(lo, hi)
        val, _ = integrate.quad(lambda r: p * r ** (p - 1) * self.tail_bound(r), lo, hi, limit=200)
        return head + val

    def sample(self, half_width, r_max, seed, stream) -> BallConfiguration:
        """Every ball of radius <= r_max with center in the box of half-width
        ``half_width + r_max``; balls with 2R > r_max are dropped."""
        rng = make_rng(seed, *stream)
        d = self.d
        outer = half_width + r_max
        span = outer + r_max
        n = rng.poisson((2 * span) ** d)
        chi = rng.uniform(-span, span, size=(n, d))
        inner = np.all(np.abs(chi) <= outer, axis=1)
        lim = np.min(span - np.abs(chi), axis=1)
        app = Appetite(self.alpha, d)
        R = stabilization_radii(chi, app, np.minimum(lim, r_max))
        keep = inner & np.isfinite(R) & (2 * R <= r_max)
        omitted = min(1.0, (2 * outer) ** d * self.tail_bound(r_max))
        win = Window(d, half_width, r_max)
        return BallConfiguration(chi[keep], 2 * R[keep], np.zeros(int(keep.sum()), dtype=np.int64), win, seed,
                                 tuple(stream), Truncation(float(r_max), omitted), "box", 0.0, self.dependence_constant)

    def describe(self) -> dict:
        return {"kind": "marriage", "alpha": self.alpha, "d": self.d}


# ---------------------------------------------------------------------------
# discrete stable allocation


class ResolutionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AllocationGrid:
    eps: float
    half_width: float
    shape: tuple
    assignment: np.ndarray  # flat, -1 for unclaimed
    centers: np.ndarray
    quota: int

    @property
    def d(self) -> int:
        return len(self.shape)

    def cell_centers(self, flat=None) -> np.ndarray:
        idx = np.arange(self.assignment.size) if flat is None else np.asarray(flat)
        multi = np.stack(np.unravel_index(idx, self.shape), axis=1)
        return -self.half_width + (multi + 0.5) * self.eps

    def counts(self) -> np.ndarray:
        a = self.assignment[self.assignment >= 0]
        return np.bincount(a, minlength=len(self.centers))

    def claimed_volume(self) -> np.ndarray:
        return self.counts() * self.eps ** self.d

    def sated(self) -> np.ndarray:
        return self.counts() >= self.quota

    def matched_distance(self) -> np.ndarray:
        out = np.full(self.assignment.size, INF)
        m = self.assignment >= 0
        pts = self.cell_centers(np.flatnonzero(m))
        out[m] = np.linalg.norm(pts - self.centers[self.assignment[m]], axis=1)
        return out

    def territory_radius(self) -> np.ndarray:
        out = np.zeros(len(self.centers))
        md = self.matched_distance()
        m = self.assignment >= 0
        np.maximum.at(out, self.assignment[m], md[m])
        return out

    def raster_csv(self) -> str:
        lines = ["cell_index,center_id"]
        lines += [f"{i},{int(c)}" for i, c in enumerate(self.assignment)]
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        vol = self.claimed_volume()
        return {"eps": self.eps, "half_width": self.half_width, "quota_cells": self.quota,
                "centers": int(len(self.centers)), "sated": int(self.sated().sum()),
                "claimed_volume": vol.tolist(), "max_territory_radius": self.territory_radius().tolist(),
                "unclaimed_cells": int(np.sum(self.assignment < 0))}


def _grid_shape(half_width: float, eps: float, d: int) -> tuple:
    n = int(round(2 * half_width / eps))
    if n < 1 or abs(n * eps - 2 * half_width) > 1e-9 * max(1.0, half_width):
        raise ValueError("2 * half_width must be a multiple of eps")
    return (n,) * d


def _cells_near(center, radius, half_width, eps, shape):
    """Flat indices and distances of cells whose center is within ``radius``."""
    d = len(shape)
    lo = np.clip(np.floor((center - radius + half_width) / eps - 0.5).astype(int), 0, shape[0] - 1)
    hi = np.clip(np.ceil((center + radius + half_width) / eps - 0.5).astype(int), 0, shape[0] - 1)
    axes = [np.arange(lo[i], hi[i] + 1) for i in range(d)]
    grids = np.meshgrid(*axes, indexing="ij")
    multi = np.stack([g.ravel() for g in grids], axis=1)
    pts = -half_width + (multi + 0.5) * eps
    dist = np.linalg.norm(pts - center, axis=1)
    keep = dist <= radius
    return np.ravel_multi_index(tuple(multi[keep].T), shape), dist[keep]


def _greedy(pairs_center, pairs_cell, pairs_dist, ncells, ncenters, quota):
    order = np.lexsort((pairs_cell, pairs_center, pairs_dist))
    assignment = np.full(ncells, -1, dtype=np.int64)
    count = np.zeros(ncenters, dtype=np.int64)
    for i in order.tolist():
        x = pairs_cell[i]
        if assignment[x] >= 0:
            continue
        a = pairs_center[i]
        if count[a] >= quota:
            continue
        assignment[x] = a
        count[a] += 1
    return assignment


def stable_allocation_grid(chi, alpha, half_width: float, eps: float, min_quota: int = 10) -> AllocationGrid:
    """Stable allocation of the cells of [-w, w]^d (side eps) to the centers chi.

    Each center may hold floor(alpha / eps^d) cells. Cells and centers both
    prefer smaller distances, so processing all cell-center pairs in
    increasing (distance, center index, cell index) order and accepting a
    pair whenever the cell is free and the center has room gives the stable
    matching. Pairs are generated within a per-center radius that grows for
    any unsated center until no cell beyond it could destabilize the result.
    """
    chi = np.asarray(chi, dtype=float)
    if chi.ndim == 1:
        chi = chi[:, None]
    d = chi.shape[1]
    app = alpha if isinstance(alpha, Appetite) else Appetite(float(alpha), d)
    quota = int(math.floor(app.alpha / eps ** d + 1e-9))
    if quota < min_quota:
        raise ResolutionError(f"quota alpha/eps^d = {quota} cells is below the resolution guard {min_quota}")
    shape = _grid_shape(half_width, eps, d)
    ncells = int(np.prod(shape))
    n = len(chi)
    reach = np.full(n, 1.5 * float(app.radius(1)) + eps * math.sqrt(d))
    full = 2 * half_width * math.sqrt(d) + 1.0
    while True:
        parts = [_cells_near(chi[a], reach[a], half_width, eps, shape) for a in range(n)]
        pc = np.concatenate([np.full(len(p[0]), a, dtype=np.int64) for a, p in enumerate(parts)] or [np.zeros(0, np.int64)])
        px = np.concatenate([p[0] for p in parts] or [np.zeros(0, np.int64)])
        pd = np.concatenate([p[1] for p in parts] or [np.zeros(0)])
        assignment = _greedy(pc, px, pd, ncells, n, quota)
        grid = AllocationGrid(eps, half_width, shape, assignment, chi, quota)
        counts = grid.counts()
        md = grid.matched_distance()
        cells = grid.cell_centers()
        grow = []
        for a in np.flatnonzero(counts < quota):
            if reach[a] >= full:
                continue
            dist = np.linalg.norm(cells - chi[a], axis=1)
            # an unsated center covets every cell; any cell outside the
            # generated radius that prefers a means the radius was too small
            if np.any((dist > reach[a]) & (dist < md)):
                grow.append(a)
        if not grow:
            return grid
        reach[grow] = np.minimum(2 * reach[grow], full)


def unstable_pairs(grid: AllocationGrid, margin: Optional[float] = None, limit: int = 100) -> list:
    """Cell-center pairs (x, a) where x prefers a to its match by more than
    ``margin`` and a covets x by more than ``margin`` (default eps sqrt(d))."""
    margin = grid.eps * math.sqrt(grid.d) if margin is None else margin
    md = grid.matched_distance()
    tr = grid.territory_radius()
    sated = grid.sated()
    everything = None
    found = []
    for a, c in enumerate(grid.centers):
        if sated[a]:
            # a sated center only covets cells closer than its farthest one
            cells, dist = _cells_near(c, max(tr[a] - margin, 0.0), grid.half_width, grid.eps, grid.shape)
            keep = dist + margin < tr[a]
            cells, dist = cells[keep], dist[keep]
        else:
            if everything is None:
                everything = grid.cell_centers()
            cells = np.arange(grid.assignment.size)
            dist = np.linalg.norm(everything - c, axis=1)
        bad = cells[(dist + margin < md[cells]) & (grid.assignment[cells] != a)]
        for x in bad[: limit - len(found)]:
            found.append((int(x), a))
        if len(found) >= limit:
            break
    return found


@dataclass(frozen=True)
class ContainmentReport:
    violations: list  # (cell index, center index, distance, bound)
    checked_centers: int
    skipped_centers: int


def check_containment(grid: AllocationGrid, dom: DominationProcess, only_interior: bool = True) -> ContainmentReport:
    """Cells assigned to a at distance > R(a, chi) + eps sqrt(d) from a.

    With ``only_interior`` a center is checked only when B(a, R + eps sqrt(d))
    lies inside the grid; elsewhere the finite grid itself breaks the
    argument behind the containment.
    """
    if grid.centers.shape != dom.chi.shape or not np.array_equal(grid.centers, dom.chi):
        raise ValueError("allocation grid and domination process were built from different point sets")
    if len(dom.centers) != len(dom.chi):
        raise ValueError("domination process must cover every center of chi")
    slack = grid.eps * math.sqrt(grid.d)
    R = dom.R
    md = grid.matched_distance()
    viol, checked, skipped = [], 0, 0
    for a in range(len(dom.chi)):
        bound = R[a] + slack
        if only_interior and np.any(np.abs(dom.chi[a]) + bound > grid.half_width):
            skipped += 1
            continue
        checked += 1
        cells = np.flatnonzero(grid.assignment == a)
        far = cells[md[cells] > bound]
        viol += [(int(x), a, float(md[x]), float(bound)) for x in far]
    return ContainmentReport(viol, checked, skipped)


def deferred_acceptance(chi, alpha, half_width: float, eps: float) -> np.ndarray:
    """Cell-proposing Gale-Shapley on the full cell-center instance (small grids only)."""
    chi = np.asarray(chi, dtype=float)
    if chi.ndim == 1:
        chi = chi[:, None]
    d = chi.shape[1]
    quota = int(math.floor(alpha / eps ** d + 1e-9))
    shape = _grid_shape(half_width, eps, d)
    ncells = int(np.prod(shape))
    multi = np.stack(np.unravel_index(np.arange(ncells), shape), axis=1)
    cells = -half_width + (multi + 0.5) * eps
    dist = np.linalg.norm(cells[:, None, :] - chi[None, :, :], axis=2)
    prefs = [sorted(range(len(chi)), key=lambda a, x=x: (dist[x, a], a)) for x in range(ncells)]
    nxt = [0] * ncells
    held = [[] for _ in chi]  # heaps of (-dist, -a, -x): worst on top
    free = list(range(ncells))
    while free:
        x = free.pop()
        if nxt[x] >= len(chi):
            continue
        a = prefs[x][nxt[x]]
        nxt[x] += 1
        key = (-dist[x, a], -a, -x)
        heapq.heappush(held[a], key)
        if len(held[a]) > quota:
            _, _, y = heapq.heappop(held[a])
            free.append(-y)
    out = np.full(ncells, -1, dtype=np.int64)
    for a, h in enumerate(held):
        for _, _, y in h:
            out[-y] = a
    return out
