import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contperc.connectivity import (
    UnionFind,
    WindowTooSmall,
    build_components,
    build_components_brute,
    components_csv,
    event_G,
    event_G_tilde,
    event_H,
    M_exceeds,
    origin_component,
    percolation_proxy,
)
from contperc.measures import AtomMeasure
from contperc.point_process import BallConfiguration, Window, sample_poisson_marked

delta1 = AtomMeasure([1.0], [1.0])
ORIGIN = np.zeros(2)


def balls(*items, w=50.0):
    return BallConfiguration.from_balls(list(items), Window(2, w, 50.0))


def brute_escape(centers, radii, x, alpha, beta):
    """Independent event oracle: pairwise union-find with the virtual ball B(x, beta)."""
    sel = [(np.asarray(c, float), r) for c, r in zip(centers, radii) if alpha <= r <= beta]
    allb = [(np.asarray(x, float), beta)] + sel
    uf = UnionFind(len(allb))
    for i in range(len(allb)):
        for j in range(i + 1, len(allb)):
            if np.linalg.norm(allb[i][0] - allb[j][0]) < allb[i][1] + allb[j][1]:
                uf.union(i, j)
    root = uf.find(0)
    return any(uf.find(i) == root and np.linalg.norm(c - x) + r > 2 * beta for i, (c, r) in enumerate(allb) if i)


def brute_M(centers, radii):
    n = len(radii)
    uf = UnionFind(n)
    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(centers[i] - centers[j]) < radii[i] + radii[j]:
                uf.union(i, j)
    roots = {uf.find(i) for i in range(n) if np.linalg.norm(centers[i]) < radii[i]}
    vals = [np.linalg.norm(centers[i]) + radii[i] for i in range(n) if uf.find(i) in roots]
    return max(vals, default=0.0)


# --- components -------------------------------------------------------------


def test_two_overlapping_balls_one_component():
    lab = build_components(balls(((0, 0), 1.0), ((1.5, 0), 1.0)))
    assert lab.n_components == 1


def test_separated_balls_two_components():
    lab = build_components(balls(((0, 0), 1.0), ((3, 0), 1.0)))
    assert lab.n_components == 2


def test_tangent_balls_are_disjoint():
    # open balls: distance exactly r1 + r2 does not connect
    assert build_components(balls(((0, 0), 1.0), ((2, 0), 1.0))).n_components == 2


def test_grid_equals_brute_random():
    rng = np.random.default_rng(0)
    for k in range(40):
        n = int(rng.integers(1, 1000))
        c = rng.uniform(-20, 20, size=(n, 2))
        r = rng.pareto(2.0, n) * 0.3 + 0.05
        cfg = BallConfiguration.from_balls(list(zip(c, r)))
        assert build_components(cfg).partition() == build_components_brute(cfg).partition()
        # cell size does not change the answer
        assert build_components(cfg, cell_size=0.37).partition() == build_components_brute(cfg).partition()


def test_radius_filter():
    cfg = balls(((0, 0), 1.0), ((1.1, 0), 0.4), ((2.2, 0), 1.0))
    lab = build_components(cfg, radius_filter=(0.5, 2.0))
    assert lab.labels[1] == -1
    assert lab.n_components == 2
    assert build_components(cfg).n_components == 1


def test_censoring_flag():
    cfg = BallConfiguration.from_balls([((0.0, 0.0), 1.0), ((4.5, 0.0), 1.0)], Window(2, 5.0, 1.0))
    lab = build_components(cfg)
    flags = {tuple(lab.members(k)): bool(lab.censored[k]) for k in range(lab.n_components)}
    assert flags == {(0,): False, (1,): True}


def test_union_find_basics():
    uf = UnionFind(5)
    uf.union(0, 1)
    uf.union(3, 4)
    uf.union(1, 4)
    assert uf.find(0) == uf.find(3)
    assert uf.find(2) != uf.find(0)


def test_components_csv_header():
    cfg = balls(((0, 0), 1.0), ((5, 0), 1.0))
    text = components_csv(cfg, build_components(cfg))
    lines = text.splitlines()
    assert lines[0] == "component_id,size,censored,diameter,contains_origin"
    assert lines[1].endswith(",1") and lines[2].endswith(",0")


# --- origin component -------------------------------------------------------


def test_origin_component_examples():
    assert origin_component(balls()).M_observed == 0.0
    assert origin_component(balls()).empty
    assert origin_component(balls(((0, 0), 1.0))).M_observed == 1.0
    oc = origin_component(balls(((0, 0), 1.0), ((1.5, 0), 1.0), ((3, 0), 1.0)))
    assert oc.M_observed == 4.0
    # the union spans from (-1, 0) to (4, 0)
    assert oc.diameter_observed == pytest.approx(5.0)


def test_origin_uncovered_is_empty():
    oc = origin_component(balls(((2, 0), 1.0), ((3, 0), 1.0)))
    assert oc.empty and oc.M_observed == 0.0


def test_M_exceeds_matches_brute():
    rng = np.random.default_rng(1)
    for k in range(200):
        n = int(rng.integers(0, 60))
        c = rng.uniform(-6, 6, size=(n, 2))
        r = rng.uniform(0.3, 1.5, n)
        cfg = BallConfiguration.from_balls(list(zip(c, r)), Window(2, 10.0, 2.0))
        m = brute_M(c, r)
        for level in (1.0, 2.5, 4.0):
            assert M_exceeds(cfg, level) == (m > level)
        assert origin_component(cfg).M_observed == pytest.approx(m)


def test_percolation_proxy():
    assert not percolation_proxy(balls(), 3.0)
    assert percolation_proxy(balls(((0, 0), 1.0)), 0.5)
    with pytest.raises(WindowTooSmall):
        percolation_proxy(balls(w=5.0), 6.0)


def test_percolation_proxy_supercritical():
    hits = [
        percolation_proxy(sample_poisson_marked(1.0, delta1, Window(2, 20.0, 1.0), 1.0, seed=2, stream=(k,)), 20.0)
        for k in range(50)
    ]
    assert np.mean(hits) > 0.9


# --- events -----------------------------------------------------------------


def test_event_G_examples():
    assert not event_G(balls(), ORIGIN, 0.0, 1.0)
    cfg = balls(((1.5, 0), 1.0))
    assert event_G(cfg, ORIGIN, 0.0, 1.0)
    assert not event_G(cfg, ORIGIN, 0.0, 0.5)


def test_event_G_window_check():
    cfg = BallConfiguration.from_balls([((1.5, 0.0), 1.0)], Window(2, 1.0, 1.0))
    with pytest.raises(WindowTooSmall):
        event_G(cfg, ORIGIN, 0.0, 1.0)


def test_event_H_examples():
    cfg = balls(((0, 0), 1.5))
    assert event_H(cfg, 2.0, 1.0, "H")
    assert not event_H(cfg, 2.0, 2.0, "Htilde")
    assert event_H(balls(((10, 0), 9.0)), 2.0, 2.0, "Htilde")


def test_event_G_tilde_uses_large_balls():
    cfg = balls(((3.0, 0), 2.5))
    assert event_G_tilde(cfg, 1.0, check=False)
    assert not event_G(cfg, ORIGIN, 0.0, 1.0, check=False)


def _random_cfg(rng, n, spread, rmax, w=30.0):
    c = rng.uniform(-spread, spread, size=(n, 2))
    r = rng.uniform(0.1, rmax, n)
    return BallConfiguration.from_balls(list(zip(c, r)), Window(2, w, rmax)), c, r


def test_event_G_matches_brute_oracle():
    rng = np.random.default_rng(3)
    for k in range(300):
        cfg, c, r = _random_cfg(rng, int(rng.integers(0, 50)), 6.0, 2.0)
        x = rng.uniform(-1, 1, 2)
        alpha, beta = float(rng.uniform(0, 0.8)), float(rng.uniform(0.8, 3.0))
        assert event_G(cfg, x, alpha, beta) == brute_escape(c, r, x, alpha, beta)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_filter_monotonicity(seed, a1, a2):
    rng = np.random.default_rng(seed)
    cfg, _, _ = _random_cfg(rng, 40, 5.0, 1.8)
    lo, hi = sorted((a1, a2))
    if event_G(cfg, ORIGIN, hi, 2.0):
        assert event_G(cfg, ORIGIN, lo, 2.0)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10_000))
def test_thinning_monotonicity(seed):
    rng = np.random.default_rng(seed)
    cfg, _, _ = _random_cfg(rng, 50, 5.0, 1.5)
    keep = rng.random(len(cfg)) < 0.6
    thin = cfg.subset(keep)
    assert event_G(thin, ORIGIN, 0.0, 2.0) <= event_G(cfg, ORIGIN, 0.0, 2.0)
    assert origin_component(thin).M_observed <= origin_component(cfg).M_observed + 1e-12
    assert percolation_proxy(thin, 5.0) <= percolation_proxy(cfg, 5.0)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 2.5))
def test_locality(seed, beta):
    rng = np.random.default_rng(seed)
    cfg, c, r = _random_cfg(rng, 80, 12.0, 3 * beta + 2)
    x = rng.uniform(-2, 2, 2)
    local = (np.linalg.norm(c - x, axis=1) < 3 * beta) & (r <= 3 * beta)
    assert event_G(cfg, x, 0.0, beta) == event_G(cfg.subset(local), x, 0.0, beta)
