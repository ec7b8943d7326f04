"""Connectivity of unions of open balls.

Intersecting pairs are found with a uniform grid (each ball registered in
every cell its bounding box meets) and merged with a sparse connected
components pass. A plain union-find over all O(n^2) pairs is kept as the
reference implementation.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .point_process import BallConfiguration


class WindowTooSmall(ValueError):
    """The sampled region does not determine the requested event."""


class UnionFind:
    """Disjoint sets with union by rank and path halving."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, i: int) -> int:
        parent = self.parent
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(self, i: int, j: int) -> bool:
        ri, rj = self.find(i), self.find(j)
        if ri == rj:
            return False
        if self.rank[ri] < self.rank[rj]:
            ri, rj = rj, ri
        self.parent[rj] = ri
        if self.rank[ri] == self.rank[rj]:
            self.rank[ri] += 1
        return True

    def labels(self) -> np.ndarray:
        return _canonical(np.array([self.find(i) for i in range(len(self.parent))], dtype=np.int64))


def _canonical(raw: np.ndarray) -> np.ndarray:
    """Relabel so component ids follow the first ball index of each component."""
    if raw.size == 0:
        return raw.astype(np.int64)
    _, first, inv = np.unique(raw, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inv].astype(np.int64)


# ---------------------------------------------------------------------------
# pair search


def grid_pairs(centers: np.ndarray, radii: np.ndarray, cell_size: Optional[float] = None):
    """All pairs (i < j) of intersecting open balls: |c_i - c_j| < r_i + r_j."""
    n = radii.size
    if n < 2:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    d = centers.shape[1]
    h = float(cell_size) if cell_size else float(radii.max())
    lo = np.floor((centers - radii[:, None]) / h).astype(np.int64)
    hi = np.floor((centers + radii[:, None]) / h).astype(np.int64)
    span = hi - lo + 1
    per_ball = np.prod(span, axis=1)
    ball = np.repeat(np.arange(n), per_ball)
    # offsets of each registered cell inside its ball's bounding box
    local = np.arange(per_ball.sum()) - np.repeat(np.cumsum(per_ball) - per_ball, per_ball)
    cells = np.empty((ball.size, d), dtype=np.int64)
    rem = local
    for k in range(d - 1, -1, -1):
        sk = span[ball, k]
        cells[:, k] = lo[ball, k] + rem % sk
        rem = rem // sk
    base = cells.min(axis=0)
    ext = cells.max(axis=0) - base + 1
    key = np.zeros(ball.size, dtype=np.int64)
    for k in range(d):
        key = key * ext[k] + (cells[:, k] - base[k])
    order = np.lexsort((ball, key))
    key, ball = key[order], ball[order]
    ii, jj = [], []
    t = 1
    m = key.size
    while t < m:
        same = key[t:] == key[:-t]
        if not same.any():
            break
        ii.append(ball[:-t][same])
        jj.append(ball[t:][same])
        t += 1
    if not ii:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    i = np.concatenate(ii)
    j = np.concatenate(jj)
    diff = centers[i] - centers[j]
    dist2 = np.einsum("ij,ij->i", diff, diff)
    rs = radii[i] + radii[j]
    hit = dist2 < rs * rs
    i, j = i[hit], j[hit]
    a, b = np.minimum(i, j), np.maximum(i, j)
    if a.size:
        code = np.unique(a * n + b)
        a, b = code // n, code % n
    return a, b


def brute_pairs(centers: np.ndarray, radii: np.ndarray):
    n = radii.size
    i, j = np.triu_indices(n, k=1)
    diff = centers[i] - centers[j]
    dist2 = np.einsum("ij,ij->i", diff, diff)
    hit = dist2 < (radii[i] + radii[j]) ** 2
    return i[hit], j[hit]


def _labels_from_pairs(n: int, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    g = coo_matrix((np.ones(i.size, dtype=np.int8), (i, j)), shape=(n, n))
    _, raw = connected_components(g, directed=False)
    return _canonical(raw)


# ---------------------------------------------------------------------------
# labeling


@dataclass(frozen=True, eq=False)
class ComponentLabeling:
    """Partition of the selected balls; ``labels[k] == -1`` for filtered-out balls."""

    labels: np.ndarray
    sizes: np.ndarray
    bbox_lo: np.ndarray
    bbox_hi: np.ndarray
    censored: np.ndarray

    @property
    def n_components(self) -> int:
        return int(self.sizes.size)

    @property
    def parent(self) -> np.ndarray:
        """Root ball index of every selected ball (-1 when filtered out)."""
        roots = np.full(self.labels.size, -1, dtype=np.int64)
        sel = self.labels >= 0
        if sel.any():
            idx = np.flatnonzero(sel)
            first = np.full(self.n_components, -1, dtype=np.int64)
            lab = self.labels[idx]
            _, where = np.unique(lab, return_index=True)
            first[lab[where]] = idx[where]
            roots[idx] = first[lab]
        return roots

    def same_component(self, i: int, j: int) -> bool:
        return self.labels[i] >= 0 and self.labels[i] == self.labels[j]

    def members(self, comp: int) -> np.ndarray:
        return np.flatnonzero(self.labels == comp)

    def partition(self) -> set:
        """Set of frozensets of ball indices, for order-free comparisons."""
        out = {}
        for k, lab in enumerate(self.labels):
            if lab >= 0:
                out.setdefault(int(lab), []).append(k)
        return {frozenset(v) for v in out.values()}


def _filter_mask(config: BallConfiguration, radius_filter) -> np.ndarray:
    if radius_filter is None:
        return np.ones(len(config), dtype=bool)
    a, b = radius_filter
    return (config.radii >= a) & (config.radii <= b)


def _labeling(config: BallConfiguration, mask: np.ndarray, sub_labels: np.ndarray) -> ComponentLabeling:
    labels = np.full(len(config), -1, dtype=np.int64)
    labels[mask] = sub_labels
    k = int(sub_labels.max()) + 1 if sub_labels.size else 0
    c = config.centers[mask]
    r = config.radii[mask]
    d = config.d
    sizes = np.bincount(sub_labels, minlength=k)
    lo = np.full((k, d), np.inf)
    hi = np.full((k, d), -np.inf)
    if k:
        np.minimum.at(lo, sub_labels, c - r[:, None])
        np.maximum.at(hi, sub_labels, c + r[:, None])
    w = config.window.half_width
    touches = np.max(np.abs(c), axis=1) + r >= w if r.size else np.zeros(0, dtype=bool)
    censored = np.zeros(k, dtype=bool)
    if k:
        np.logical_or.at(censored, sub_labels, touches)
    return ComponentLabeling(labels, sizes, lo, hi, censored)


def build_components(config: BallConfiguration, radius_filter=None, cell_size: Optional[float] = None) -> ComponentLabeling:
    """Components of the union of balls with radius in ``radius_filter`` (closed interval)."""
    mask = _filter_mask(config, radius_filter)
    c, r = config.centers[mask], config.radii[mask]
    i, j = grid_pairs(c, r, cell_size)
    return _labeling(config, mask, _labels_from_pairs(r.size, i, j))


def build_components_brute(config: BallConfiguration, radius_filter=None) -> ComponentLabeling:
    """Reference labeling: union-find over every intersecting pair."""
    mask = _filter_mask(config, radius_filter)
    c, r = config.centers[mask], config.radii[mask]
    uf = UnionFind(r.size)
    for a, b in zip(*brute_pairs(c, r)):
        uf.union(int(a), int(b))
    return _labeling(config, mask, uf.labels())


# ---------------------------------------------------------------------------
# origin component


@dataclass(frozen=True)
class OriginComponent:
    members: np.ndarray
    M_observed: float
    censored: bool
    diameter_observed: float

    @property
    def empty(self) -> bool:
        return self.members.size == 0


def union_diameter(centers: np.ndarray, radii: np.ndarray, chunk: int = 2048) -> float:
    """Diameter of a union of balls: max over pairs of |c_i - c_j| + r_i + r_j."""
    n = radii.size
    if n == 0:
        return 0.0
    best = float(2 * radii.max())
    for s in range(0, n, chunk):
        diff = centers[s : s + chunk, None, :] - centers[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        best = max(best, float(np.max(dist + radii[s : s + chunk, None] + radii[None, :])))
    return best


def origin_component(config: BallConfiguration, radius_filter=None, with_diameter: bool = True) -> OriginComponent:
    """The component S of the union containing the origin (empty if 0 is uncovered)."""
    lab = build_components(config, radius_filter)
    norms = np.linalg.norm(config.centers, axis=1)
    hit = (norms < config.radii) & (lab.labels >= 0)
    if not hit.any():
        return OriginComponent(np.zeros(0, dtype=np.int64), 0.0, False, 0.0)
    comps = np.unique(lab.labels[hit])
    members = np.flatnonzero(np.isin(lab.labels, comps))
    m_obs = float(np.max(norms[members] + config.radii[members]))
    censored = bool(np.any(lab.censored[comps]))
    diam = union_diameter(config.centers[members], config.radii[members]) if with_diameter else math.nan
    return OriginComponent(members, m_obs, censored, diam)


def percolation_proxy(config: BallConfiguration, escape_radius: float) -> bool:
    """Finite-window stand-in for an unbounded origin component."""
    if escape_radius > config.window.half_width:
        raise WindowTooSmall("escape radius exceeds the window half-width")
    return origin_component(config, with_diameter=False).M_observed >= escape_radius


# ---------------------------------------------------------------------------
# crossing events


def _require(config: BallConfiguration, x, center_reach: float, hit_reach: float, r_hi: float, what: str):
    x = np.abs(np.asarray(x, dtype=float))
    t = config.truncation
    if r_hi > t.r_max and t.omitted_bound > 0:
        raise WindowTooSmall(f"{what}: radius cap {t.r_max} is below the required radius {r_hi}")
    if config.mode == "hitting":
        ok = np.all(x + hit_reach <= config.window.half_width * (1 + 1e-12))
        need = f"analysis box half-width >= {float(x.max() + hit_reach) if x.size else hit_reach}"
    else:
        ok = np.all(x + center_reach <= config.window.outer * (1 + 1e-12))
        need = f"padded half-width >= {float(x.max() + center_reach) if x.size else center_reach}"
    if not ok:
        raise WindowTooSmall(f"{what}: locality region not sampled ({need})")


def _escapes(centers, radii, x, beta) -> bool:
    """Does the component of B(x, beta) in the union leave B(x, 2 beta)?"""
    dist = np.linalg.norm(centers - x, axis=1) if radii.size else np.zeros(0)
    # only balls meeting B(x, 2 beta) can lie on a chain that first exits it
    rel = dist < radii + 2 * beta
    c = np.vstack([x[None, :], centers[rel]])
    r = np.concatenate([[beta], radii[rel]])
    dd = np.concatenate([[0.0], dist[rel]])
    out = dd + r > 2 * beta
    if not out.any():
        return False
    i, j = grid_pairs(c, r)
    labels = _labels_from_pairs(r.size, i, j)
    return bool(np.any(out & (labels == labels[0])))


def event_G(config: BallConfiguration, x, alpha: float, beta: float, check: bool = True) -> bool:
    """Crossing from B(x, beta) to outside B(x, 2 beta) with radii in [alpha, beta]."""
    if not beta > 0:
        raise ValueError("beta must be > 0")
    x = np.asarray(x, dtype=float).reshape(config.d)
    if check:
        _require(config, x, 3 * beta, 2 * beta, beta, "event G")
    sel = (config.radii >= alpha) & (config.radii <= beta)
    return _escapes(config.centers[sel], config.radii[sel], x, beta)


def event_G_tilde(config: BallConfiguration, beta: float, check: bool = True) -> bool:
    """Crossing from B(0, beta) to outside B(0, 2 beta) using every ball.

    Balls above the radius cap are missing; their effect is bounded by
    ``config.truncation.omitted_bound``.
    """
    if not beta > 0:
        raise ValueError("beta must be > 0")
    x = np.zeros(config.d)
    if check:
        _require(config, x, 2 * beta + config.truncation.r_max, 2 * beta, 0.0, "event G~")
    return _escapes(config.centers, config.radii, x, beta)


def event_H(config: BallConfiguration, rho: float, beta: float, variant: str = "H", check: bool = True) -> bool:
    """``H``: a center in B(0, 3 rho beta) with radius in [beta, rho beta].
    ``Htilde``: a ball of radius > beta meeting B(0, 2 beta)."""
    if not beta > 0:
        raise ValueError("beta must be > 0")
    norms = np.linalg.norm(config.centers, axis=1)
    r = config.radii
    if variant == "H":
        if rho < 2:
            raise ValueError("rho must be >= 2")
        if check:
            _require(config, np.zeros(config.d), 3 * rho * beta, 3 * rho * beta, rho * beta, "event H")
        return bool(np.any((norms < 3 * rho * beta) & (r >= beta) & (r <= rho * beta)))
    if variant in ("Htilde", "H~"):
        return bool(np.any((r > beta) & (norms < r + 2 * beta)))
    raise ValueError(f"unknown variant {variant!r}")


def M_exceeds(config: BallConfiguration, level: float) -> bool:
    """M > level for the origin component, decided from balls meeting B(0, level)."""
    norms = np.linalg.norm(config.centers, axis=1)
    rel = norms < config.radii + level
    c, r, nr = config.centers[rel], config.radii[rel], norms[rel]
    inside = nr < r
    if not inside.any():
        return False
    i, j = grid_pairs(c, r)
    labels = _labels_from_pairs(r.size, i, j)
    comp = np.isin(labels, labels[inside])
    return bool(np.any(comp & (nr + r > level)))


# ---------------------------------------------------------------------------
# export


def components_csv(config: BallConfiguration, labeling: ComponentLabeling) -> str:
    """``component_id,size,censored,diameter,contains_origin`` rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["component_id", "size", "censored", "diameter", "contains_origin"])
    norms = np.linalg.norm(config.centers, axis=1)
    for k in range(labeling.n_components):
        idx = labeling.members(k)
        diam = union_diameter(config.centers[idx], config.radii[idx])
        origin = bool(np.any(norms[idx] < config.radii[idx]))
        w.writerow([k, int(labeling.sizes[k]), int(labeling.censored[k]), repr(diam), int(origin)])
    return buf.getvalue()
