import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contperc.marriage import (
    Appetite,
    DEPENDENCE_CONSTANT,
    MarriageModel,
    ResolutionError,
    ScanRangeExhausted,
    check_containment,
    chernoff_bound,
    chernoff_parameters,
    clip_radius,
    decay_rate,
    deferred_acceptance,
    domination_process,
    palm_tail_estimate,
    stabilization_radii,
    stabilization_radius,
    stable_allocation_grid,
    unstable_pairs,
)
from contperc.point_process import Window, make_rng


def scan_oracle(a, chi, alpha, d):
    """Literal definition: first k with alpha card(chi n closed B(a, 2 r_k)) <= k alpha."""
    chi = np.asarray(chi, float).reshape(-1, d)
    dist = np.linalg.norm(chi - np.asarray(a, float).reshape(1, d), axis=1)
    omega = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    k = 1
    while True:
        r = (k * alpha / omega) ** (1 / d)
        if alpha * np.sum(dist <= 2 * r) <= omega * r ** d * (1 + 1e-12):
            return r
        k += 1


# --- stabilization radius ---------------------------------------------------


def test_radius_examples():
    assert stabilization_radius([0.0], [[0.0]], 0.4) == pytest.approx(0.2)
    assert stabilization_radius([0.0], [[0.0], [0.1]], 0.4) == pytest.approx(0.4)
    assert stabilization_radius([0.0, 0.0], [[0.0, 0.0]], 0.2) == pytest.approx(math.sqrt(0.2 / math.pi))
    assert math.sqrt(0.2 / math.pi) == pytest.approx(0.2523, abs=1e-4)


def test_radius_requires_membership_and_range():
    with pytest.raises(ValueError):
        stabilization_radius([0.5], [[0.0]], 0.4)
    # a dense cluster pushes R beyond a short scan range
    chi = np.linspace(0, 0.05, 20)[:, None]
    with pytest.raises(ScanRangeExhausted):
        stabilization_radius([0.0], chi, 0.4, scan_limit=1.0)


def test_vectorized_matches_oracle():
    rng = np.random.default_rng(0)
    for case in range(60):
        d = int(rng.integers(1, 3))
        alpha = float(rng.uniform(0.02, 0.9 * 2.0 ** -d))
        n = int(rng.integers(1, 80))
        chi = rng.uniform(-3, 3, size=(n, d))
        R = stabilization_radii(chi, Appetite(alpha, d))
        for i in range(n):
            assert R[i] == pytest.approx(scan_oracle(chi[i], chi, alpha, d), rel=1e-12)
            assert R[i] == pytest.approx(stabilization_radius(chi[i], chi, alpha, d), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.3, 2.0))
def test_b0_locality(seed, r):
    # min(2R, r) only depends on chi n B(a, 3r)
    rng = np.random.default_rng(seed)
    chi = rng.uniform(-6, 6, size=(int(rng.integers(2, 200)), 2))
    a = chi[0]
    full = min(2 * stabilization_radius(a, chi, 0.1), r)
    near = chi[np.linalg.norm(chi - a, axis=1) < 3 * r]
    assert min(2 * stabilization_radius(a, near, 0.1), r) == full


def test_domination_two_far_points():
    dom = domination_process([[0.0], [10.0]], 0.4)
    assert np.allclose(dom.radii, [0.4, 0.4])
    assert np.allclose(dom.R, [0.2, 0.2])


def test_domination_poisson_window_regression():
    rng = make_rng(2026, 0)
    chi = rng.uniform(-21, 21, size=(rng.poisson(42 ** 2), 2))
    keep = np.all(np.abs(chi) <= 15, axis=1)
    dom = domination_process(chi, 0.1, scan_limits=21 - np.abs(chi).max(axis=1), keep=keep)
    assert np.all(np.isfinite(dom.radii)) and np.all(dom.radii > 0)
    assert len(dom.radii) == 873
    assert float(dom.radii.mean()) == pytest.approx(0.4423173341693479, rel=1e-12)
    cfg = dom.to_configuration(Window(2, 15.0, 6.0))
    assert cfg.dependence_constant == DEPENDENCE_CONSTANT == 7.0


def test_domination_reports_exhausted_center():
    with pytest.raises(ScanRangeExhausted, match="center"):
        domination_process(np.linspace(0, 0.05, 20)[:, None], 0.4, scan_limits=0.5)


def test_appetite_validation():
    with pytest.raises(ValueError):
        Appetite(0.25, 2)
    with pytest.raises(ValueError):
        Appetite(0.0, 2)
    Appetite(0.49, 1)


# --- Chernoff bound ---------------------------------------------------------


def test_chernoff_parameters_alpha_01():
    x, g, h = chernoff_parameters(0.1, 2)
    # independent recomputation from the formulas
    xr = math.sqrt(0.4)
    gr = (xr - 1 - math.log(xr)) / xr
    hr = xr ** 2 / (1 - xr) * gr
    assert x == pytest.approx(0.63246, abs=1e-5)
    assert g == pytest.approx(gr, rel=1e-14) and g == pytest.approx(0.14326, abs=1e-5)
    assert h == pytest.approx(hr, rel=1e-14) and h == pytest.approx(0.15590, abs=1e-5)
    assert chernoff_bound(0.1, 2, 1.3) == pytest.approx(math.exp(hr - math.pi * gr * 1.69))


def test_chernoff_bound_limits():
    assert chernoff_bound(0.1, 2, 0.0) >= 1.0
    assert chernoff_bound(1e-9, 2, 0.5) < 1e-6
    assert decay_rate(1e-6, 2) > decay_rate(1e-3, 2) > decay_rate(0.1, 2)
    assert clip_radius(0.1, 2, 1e-6) == pytest.approx(5.5718, abs=1e-3)
    assert chernoff_bound(0.1, 2, clip_radius(0.1, 2, 1e-6)) == pytest.approx(1e-6)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.001, 0.24), st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_chernoff_monotone_in_r(alpha, r1, r2):
    lo, hi = sorted((r1, r2))
    assert chernoff_bound(alpha, 2, hi) <= chernoff_bound(alpha, 2, lo)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.001, 0.24), st.floats(0.001, 0.24), st.floats(1.0, 4.0))
def test_chernoff_increases_with_alpha(a1, a2, r):
    # increasing until it turns vacuous; past its maximum (> 1) it falls back to 1
    lo, hi = sorted((a1, a2))
    if chernoff_bound(hi, 2, r) <= 1:
        assert chernoff_bound(lo, 2, r) <= chernoff_bound(hi, 2, r) * (1 + 1e-12)
    assert chernoff_bound(0.25 - 1e-9, 2, r) == pytest.approx(1.0, abs=1e-6)


# --- Palm tail --------------------------------------------------------------


def test_palm_tail_small():
    c = palm_tail_estimate(0.1, 2, [0.0, 0.5, 1.0, 1.5, 2.0, 4.0], 2000, seed=3)
    s = [e.successes for e in c.estimates]
    assert s[0] == 2000  # R > 0 always
    assert s == sorted(s, reverse=True)
    assert s[-1] == 0 and c.bound[-1] < 1e-3
    for r, e, b in zip(c.r_grid, c.estimates, c.bound):
        if b <= 1 and r <= 2.0:
            assert e.ci_high <= b


def test_palm_tail_deterministic():
    a = palm_tail_estimate(0.05, 2, [0.5, 1.0], 300, seed=4)
    b = palm_tail_estimate(0.05, 2, [0.5, 1.0], 300, seed=4)
    assert np.array_equal(a.samples, b.samples)


def test_marriage_model_sample():
    m = MarriageModel(0.1, 2)
    assert m.intensity == 1.0 and m.dependence_constant == 7.0
    cfg = m.sample(3.0, 4.0, 5, (0,))
    assert np.all(cfg.radii <= 4.0) and np.all(cfg.radii > 0)
    assert 0 < cfg.truncation.omitted_bound <= 1


# --- discrete stable allocation ---------------------------------------------


def test_single_center_ball():
    g = stable_allocation_grid([[0.0, 0.0]], 0.1, 1.0, 0.02)
    assert g.quota == 250 and g.counts()[0] == 250
    assert g.claimed_volume()[0] == pytest.approx(250 * 0.02 ** 2)
    # every claimed cell is closer than every unclaimed one
    md = np.linalg.norm(g.cell_centers(), axis=1)
    assert md[g.assignment == 0].max() <= md[g.assignment < 0].min()
    assert check_containment(g, domination_process([[0.0, 0.0]], 0.1)).violations == []


def test_two_far_centers_disjoint_balls():
    chi = [[-1.0, 0.0], [1.0, 0.0]]
    g = stable_allocation_grid(chi, 0.1, 2.0, 0.02)
    assert list(g.counts()) == [250, 250]
    cells = g.cell_centers()
    assert np.all(cells[g.assignment == 0][:, 0] < 0) and np.all(cells[g.assignment == 1][:, 0] > 0)


def test_contested_lens_bisector():
    chi = [[-0.1, 0.0], [0.1, 0.0]]
    g = stable_allocation_grid(chi, 0.1, 1.0, 0.02)
    cells = g.cell_centers()
    assert np.all(cells[g.assignment == 0][:, 0] <= 0) and np.all(cells[g.assignment == 1][:, 0] >= 0)
    assert np.array_equal(g.assignment, deferred_acceptance(chi, 0.1, 1.0, 0.02))


def test_greedy_equals_gale_shapley():
    rng = np.random.default_rng(5)
    for case in range(8):
        n = int(rng.integers(1, 9))
        chi = rng.uniform(-0.5, 0.5, size=(n, 2))
        g = stable_allocation_grid(chi, 0.04, 0.5, 0.05, min_quota=10)
        assert np.array_equal(g.assignment, deferred_acceptance(chi, 0.04, 0.5, 0.05))
        assert unstable_pairs(g, margin=0.0) == []


def test_unstable_pair_detected_after_perturbation():
    chi = [[-0.3, 0.0], [0.3, 0.0]]
    g = stable_allocation_grid(chi, 0.1, 1.0, 0.02)
    # hand a far unclaimed cell to center 0 in place of one of its own cells
    a = g.assignment.copy()
    own = np.flatnonzero(a == 0)
    d0 = np.linalg.norm(g.cell_centers(own) - np.array(chi[0]), axis=1)
    a[own[np.argmin(d0)]] = -1
    a[0] = 0  # the corner cell
    bad = type(g)(g.eps, g.half_width, g.shape, a, g.centers, g.quota)
    assert unstable_pairs(bad)


def test_quota_and_volume_bound():
    rng = make_rng(6, 0)
    chi = rng.uniform(-3, 3, size=(rng.poisson(36), 2))
    g = stable_allocation_grid(chi, 0.1, 3.0, 0.02)
    assert np.all(g.claimed_volume() <= 0.1 + 0.02 ** 2)
    assert unstable_pairs(g) == []


def test_resolution_guard():
    with pytest.raises(ResolutionError):
        stable_allocation_grid([[0.0, 0.0]], 0.1, 1.0, 0.2)


def test_containment_mismatched_inputs():
    g = stable_allocation_grid([[0.0, 0.0]], 0.1, 1.0, 0.02)
    with pytest.raises(ValueError):
        check_containment(g, domination_process([[0.5, 0.0]], 0.1))


def test_containment_poisson_window():
    rng = make_rng(7, 0)
    chi = rng.uniform(-5, 5, size=(rng.poisson(100), 2))
    g = stable_allocation_grid(chi, 0.1, 5.0, 0.02)
    rep = check_containment(g, domination_process(chi, 0.1))
    assert rep.violations == [] and rep.checked_centers > 20


def test_raster_and_summary():
    g = stable_allocation_grid([[0.0, 0.0]], 0.1, 0.5, 0.02)
    lines = g.raster_csv().splitlines()
    assert lines[0] == "cell_index,center_id" and len(lines) == 1 + 50 * 50
    s = g.summary()
    assert s["sated"] == 1 and s["quota_cells"] == 250
