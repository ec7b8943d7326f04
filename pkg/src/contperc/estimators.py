"""Monte Carlo estimators of crossing probabilities and checks of the
inequalities relating them across scales.

Every estimator runs one fresh configuration per replica, with replica k
drawing from the stream ``(seed, k)``; results are tallied in replica order
so the output does not depend on the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from . import connectivity as conn
from .measures import INF, AtomMeasure, MultiscaleMeasure, RadiusMeasure, ball_volume, multiscale_measure, unit_ball_volume
from .point_process import BallConfiguration, Window, make_rng, sample_multiscale, sample_poisson_marked

# ---------------------------------------------------------------------------
# proportions


def wilson_interval(successes: int, n: int, level: float = 0.95) -> tuple:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        return 0.0, 1.0
    z = stats.norm.ppf(0.5 + level / 2.0)
    p = successes / n
    denom = 1.0 + z * z / n
    mid = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo, hi = max(0.0, mid - half), min(1.0, mid + half)
    # guard the ordering against rounding at p = 0 or 1
    return float(min(lo, p)), float(max(hi, p))


@dataclass(frozen=True)
class EstimateWithCI:
    successes: int
    replicas: int
    level: float = 0.95

    @property
    def point(self) -> float:
        return self.successes / self.replicas if self.replicas else 0.0

    @property
    def ci(self) -> tuple:
        return wilson_interval(self.successes, self.replicas, self.level)

    @property
    def ci_low(self) -> float:
        return self.ci[0]

    @property
    def ci_high(self) -> float:
        return self.ci[1]

    def as_dict(self) -> dict:
        return {"successes": self.successes, "replicas": self.replicas, "point": self.point,
                "ci": list(self.ci), "level": self.level}


# ---------------------------------------------------------------------------
# sphere nets and constants


def sphere_net(radius: float, d: int, mesh: float = 1.0) -> np.ndarray:
    """Finite subset of the sphere of the given radius whose points are
    within ``mesh`` of every point of the sphere.

    d = 1 gives the two points; d = 2 equally spaced points with neighbor
    chord at most ``mesh``; d >= 3 the radial projection of a grid on the
    surface of the cube [-1, 1]^d, fine enough for the covering radius.
    """
    if not radius > 0:
        raise ValueError("radius must be > 0")
    if d == 1:
        return np.array([[-radius], [radius]])
    if d == 2:
        if mesh >= 2 * radius:
            n = 3
        else:
            n = max(3, math.ceil(math.pi / math.asin(mesh / (2 * radius)) - 1e-12))
        t = 2 * math.pi * np.arange(n) / n
        return radius * np.column_stack([np.cos(t), np.sin(t)])
    m = int(math.floor(radius * math.sqrt(d - 1) / mesh)) + 1
    ticks = np.linspace(-1.0, 1.0, m + 1)
    pts = []
    for axis in range(d):
        for sign in (-1.0, 1.0):
            grids = np.meshgrid(*([ticks] * (d - 1)), indexing="ij")
            face = np.column_stack([g.ravel() for g in grids])
            full = np.insert(face, axis, sign, axis=1)
            pts.append(full)
    pts = np.unique(np.round(np.vstack(pts), 12), axis=0)
    return radius * pts / np.linalg.norm(pts, axis=1)[:, None]


@dataclass(frozen=True, eq=False)
class ConstantsBundle:
    d: int
    rho: float
    net_K: np.ndarray
    net_L: np.ndarray
    D1: int
    D2: float
    D3: float
    D_tilde: float
    omega_d: float

    def as_dict(self) -> dict:
        return {"d": self.d, "rho": self.rho, "K": len(self.net_K), "L": len(self.net_L), "D1": self.D1,
                "D2": self.D2, "D3": self.D3, "D_tilde": self.D_tilde, "omega_d": self.omega_d}


def constants(d: int, rho: float) -> ConstantsBundle:
    if rho < 2:
        raise ValueError("rho must be >= 2")
    K = sphere_net(rho, d)
    L = sphere_net(2 * rho, d)
    D1 = len(K) * len(L)
    D2 = ball_volume(3.0, d)
    D3 = ball_volume(3.0 * rho, d)
    return ConstantsBundle(d, rho, K, L, D1, D2, D3, max(1.0, D1, D2, D3), unit_ball_volume(d))


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class BooleanModel:
    """Poisson balls with intensity ``intensity * Lebesgue x measure``."""

    intensity: float
    measure: RadiusMeasure
    d: int
    r_min: float = 0.0
    dependence_constant: float = 2.0

    def sample(self, half_width: float, r_max: float, seed: int, stream: tuple) -> BallConfiguration:
        return sample_poisson_marked(self.intensity, self.measure, Window(self.d, half_width, r_max), r_max,
                                     seed, stream, r_min=self.r_min, hitting=True)

    def moment(self, p: float, lo: float, hi: float = INF) -> float:
        """Moment of the intensity measure of the radii (intensity folded in)."""
        if self.intensity == 0:
            return 0.0
        return self.intensity * self.measure.restricted_moment(p, lo, hi)

    def mass(self, lo: float, hi: float = INF) -> float:
        return 0.0 if self.intensity == 0 else self.intensity * self.measure.mass(lo, hi)

    @property
    def radius_sup(self) -> float:
        return self.measure.support[1]

    def describe(self) -> dict:
        return {"kind": "boolean", "intensity": self.intensity, "measure": self.measure.as_dict(), "d": self.d}


@dataclass(frozen=True)
class MultiscaleModel:
    """Union of shrunk independent copies of a Boolean model, scales 0..depth."""

    intensity: float
    base: RadiusMeasure
    a: float
    depth: int
    d: int
    dependence_constant: float = 2.0

    @property
    def measure(self) -> MultiscaleMeasure:
        return MultiscaleMeasure(self.base, self.a, self.d, self.depth)

    def sample(self, half_width, r_max, seed, stream):
        cap = min(r_max, self.base.support[1]) if math.isfinite(self.base.support[1]) else r_max
        return sample_multiscale(self.intensity, self.base, self.a, self.depth, Window(self.d, half_width, cap),
                                 seed, stream, r_max=cap, hitting=True)

    def moment(self, p, lo, hi=INF):
        return 0.0 if self.intensity == 0 else self.intensity * self.measure.restricted_moment(p, lo, hi)

    def mass(self, lo, hi=INF):
        return 0.0 if self.intensity == 0 else self.intensity * self.measure.mass(lo, hi)

    @property
    def radius_sup(self) -> float:
        return self.base.support[1]

    def describe(self) -> dict:
        return {"kind": "multiscale", "intensity": self.intensity, "base": self.base.as_dict(), "a": self.a,
                "depth": self.depth, "d": self.d}


def i_plus_term(rho: float, dependence_constant: float) -> tuple:
    """Value used for I+(rho, alpha, beta) and the reason it is valid."""
    need = max(4 * dependence_constant, 2.0)
    if rho >= need:
        return 0.0, f"independent at range: rho >= max(4C, 2) = {need:g}"
    return 0.25, "covariance of two events is at most 1/4"


# ---------------------------------------------------------------------------
# replica engine


def run_replicas(task: Callable[[int], object], replicas: int, workers: int = 1, chunk: int = 256) -> list:
    """``[task(0), ..., task(replicas - 1)]``, optionally across processes."""
    if workers <= 1 or replicas < 2 * chunk:
        return [task(k) for k in range(replicas)]
    blocks = [range(s, min(s + chunk, replicas)) for s in range(0, replicas, chunk)]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts = list(ex.map(_run_block, [task] * len(blocks), blocks))
    return [x for part in parts for x in part]


def _run_block(task, block):
    return [task(k) for k in block]


def _check_window(half_width: Optional[float], default: float, need: float, what: str) -> float:
    """Analysis half-width. The default box is exact under hitting-mode
    sampling; an explicit window must cover the whole locality region."""
    if half_width is None:
        return default
    if half_width < need:
        raise conn.WindowTooSmall(f"{what}: window half-width {half_width} < {need}, the locality region"
                                  f" B(0, 3 beta) of the crossing event")
    return half_width


@dataclass(frozen=True)
class _PiTask:
    model: object
    alphas: tuple
    beta: float
    half_width: float
    seed: int
    salt: int = 0

    def __call__(self, k):
        cfg = self.model.sample(self.half_width, self.beta, self.seed, (self.salt, k))
        return tuple(conn.event_G(cfg, np.zeros(cfg.d), a, self.beta) for a in self.alphas)


def estimate_pi(model, alpha: float, beta: float, replicas: int, seed: int = 0, workers: int = 1,
                half_width: Optional[float] = None, level: float = 0.95) -> EstimateWithCI:
    """Estimate of pi(alpha, beta) = P(G(0, alpha, beta))."""
    return estimate_pi_curve(model, [alpha], beta, replicas, seed, workers, half_width, level)[0]


def estimate_pi_curve(model, alphas: Sequence[float], beta: float, replicas: int, seed: int = 0, workers: int = 1,
                      half_width: Optional[float] = None, level: float = 0.95, salt: int = 0) -> list:
    """pi(alpha, beta) for several alphas evaluated on the same configurations."""
    if not beta > 0:
        raise ValueError("beta must be > 0")
    w = _check_window(half_width, 2 * beta, 3 * beta, "estimate_pi")
    res = run_replicas(_PiTask(model, tuple(alphas), beta, w, seed, salt), replicas, workers)
    counts = np.sum(np.array(res, dtype=bool).reshape(replicas, len(alphas)), axis=0) if replicas else np.zeros(len(alphas))
    return [EstimateWithCI(int(c), replicas, level) for c in counts]


def _default_cap(model, beta: float, window_half: float, target: float = 1e-4) -> float:
    sup = model.radius_sup
    if math.isfinite(sup):
        return max(sup, beta)
    cap = 2 * beta
    for _ in range(60):
        excl = 0.0
        from .point_process import steiner_coefficients

        for j, c in enumerate(steiner_coefficients(window_half, model.d)):
            excl += c * model.moment(j, math.nextafter(cap, INF))
        if excl <= target:
            return cap
        cap *= 2
    raise ValueError("no radius cap brings the truncation bound below target; pass r_max")


@dataclass(frozen=True)
class _CrossingTask:
    model: object
    beta: float
    r_max: float
    seed: int
    salt: int = 1

    def __call__(self, k):
        cfg = self.model.sample(2 * self.beta, self.r_max, self.seed, (self.salt, k))
        x = np.zeros(cfg.d)
        m = conn.M_exceeds(cfg, 2 * self.beta)
        gt = conn.event_G_tilde(cfg, self.beta)
        g0 = conn.event_G(cfg, x, 0.0, self.beta)
        ht = conn.event_H(cfg, 2.0, self.beta, "Htilde")
        return m, gt, g0, ht


@dataclass(frozen=True)
class CrossingEstimates:
    M_exceeds: EstimateWithCI
    pitilde: EstimateWithCI
    pi0: EstimateWithCI
    Htilde: EstimateWithCI
    truncation_bound: float
    r_max: float


def estimate_crossings(model, beta: float, replicas: int, seed: int = 0, workers: int = 1,
                       r_max: Optional[float] = None, level: float = 0.95) -> CrossingEstimates:
    """P(M > 2 beta), pi~(beta), pi(0, beta) and P(H~(beta)) on shared configurations."""
    if not beta > 0:
        raise ValueError("beta must be > 0")
    cap = r_max if r_max is not None else _default_cap(model, beta, 2 * beta)
    if cap < beta:
        raise ValueError("radius cap must be >= beta")
    res = np.array(run_replicas(_CrossingTask(model, beta, cap, seed), replicas, workers), dtype=bool).reshape(replicas, 4)
    probe = model.sample(2 * beta, cap, seed, (1, 0)) if replicas else None
    bound = probe.truncation.omitted_bound if probe is not None else 0.0
    tot = res.sum(axis=0)
    est = [EstimateWithCI(int(c), replicas, level) for c in tot]
    return CrossingEstimates(est[0], est[1], est[2], est[3], float(bound), float(cap))


def estimate_pitilde(model, beta: float, replicas: int, seed: int = 0, workers: int = 1,
                     r_max: Optional[float] = None, level: float = 0.95) -> EstimateWithCI:
    """Estimate of pi~(beta); the truncation bound is available through
    :func:`estimate_crossings`."""
    return estimate_crossings(model, beta, replicas, seed, workers, r_max, level).pitilde


# ---------------------------------------------------------------------------
# inequality checks


SATISFIED_MARGIN = "satisfied-with-margin"
SATISFIED_CI = "satisfied-within-CI"
VIOLATED = "violated-beyond-CI"


def _verdict(lhs_low: float, lhs_high: float, rhs_low: float, rhs_high: float) -> str:
    if lhs_high <= rhs_low:
        return SATISFIED_MARGIN
    if lhs_low <= rhs_high:
        return SATISFIED_CI
    return VIOLATED


@dataclass(frozen=True)
class InequalityReport:
    lhs: EstimateWithCI
    pi_small: EstimateWithCI
    D_tilde: float
    measure_term: float
    i_plus: float
    i_plus_reason: str
    rhs_low: float
    rhs_high: float
    verdict: str

    def as_dict(self) -> dict:
        return {"lhs": self.lhs.as_dict(), "pi_small": self.pi_small.as_dict(), "D_tilde": self.D_tilde,
                "measure_term": self.measure_term, "i_plus": self.i_plus, "i_plus_reason": self.i_plus_reason,
                "rhs_low": self.rhs_low, "rhs_high": self.rhs_high, "verdict": self.verdict}


def check_key_inequality(model, rho: float, alpha: float, beta: float, replicas: int, seed: int = 0,
                         workers: int = 1, level: float = 0.95, half_width: Optional[float] = None) -> InequalityReport:
    """Monte Carlo check of
    pi(alpha, rho beta) <= D~ pi(alpha, beta)^2 + D~ int_[beta, rho beta] r^d mu(dr) + D~ I+.

    An explicit ``half_width`` is only validated against the locality region
    B(0, 3 rho beta); sampling always uses the exact hitting-mode boxes.
    """
    if rho < 2:
        raise ValueError("rho must be >= 2")
    if half_width is not None and half_width < 3 * rho * beta:
        raise conn.WindowTooSmall(f"check_key_inequality: window half-width {half_width} < 3 rho beta = {3 * rho * beta}"
                                  f" (locality region B(0, 3 rho beta) of the large-scale event)")
    consts = constants(model.d, rho)
    Dt = consts.D_tilde
    lhs = estimate_pi_curve(model, [alpha], rho * beta, replicas, seed, workers, level=level, salt=2)[0]
    small = estimate_pi_curve(model, [alpha], beta, replicas, seed, workers, level=level, salt=3)[0]
    meas = model.moment(model.d, beta, rho * beta)
    ip, why = i_plus_term(rho, model.dependence_constant)
    rhs_low = Dt * small.ci_low ** 2 + Dt * meas + Dt * ip
    rhs_high = Dt * small.ci_high ** 2 + Dt * meas + Dt * ip
    return InequalityReport(lhs, small, Dt, meas, ip, why, rhs_low, rhs_high,
                            _verdict(lhs.ci_low, lhs.ci_high, rhs_low, rhs_high))


@dataclass(frozen=True)
class ChainReport:
    estimates: CrossingEstimates
    D_tilde: float
    measure_term: float
    lower_verdict: str  # P(M > 2 beta) <= pi~(beta)
    upper_verdict: str  # pi~(beta) <= pi(0, beta) + D~ int_[beta, inf) r^d mu(dr)
    htilde_bound: float
    htilde_verdict: str  # P(H~(beta)) <= D2 int_[beta, inf) r^d mu(dr)

    def as_dict(self) -> dict:
        e = self.estimates
        return {"M_exceeds": e.M_exceeds.as_dict(), "pitilde": e.pitilde.as_dict(), "pi0": e.pi0.as_dict(),
                "Htilde": e.Htilde.as_dict(), "truncation_bound": e.truncation_bound, "r_max": e.r_max,
                "D_tilde": self.D_tilde, "measure_term": self.measure_term, "lower_verdict": self.lower_verdict,
                "upper_verdict": self.upper_verdict, "htilde_bound": self.htilde_bound,
                "htilde_verdict": self.htilde_verdict}


def check_crossing_chain(model, beta: float, replicas: int, seed: int = 0, workers: int = 1, rho: float = 2.0,
                         r_max: Optional[float] = None, level: float = 0.95) -> ChainReport:
    """P(M > 2 beta) <= pi~(beta) <= pi(0, beta) + D~ int_[beta, inf) r^d mu(dr)."""
    est = estimate_crossings(model, beta, replicas, seed, workers, r_max, level)
    consts = constants(model.d, rho)
    meas = model.moment(model.d, beta, INF)
    t = est.truncation_bound
    lower = _verdict(est.M_exceeds.ci_low, est.M_exceeds.ci_high, est.pitilde.ci_low, est.pitilde.ci_high)
    # the truncated pi~ may undercount by at most the truncation bound
    rhs_lo = est.pi0.ci_low + consts.D_tilde * meas
    rhs_hi = est.pi0.ci_high + consts.D_tilde * meas
    upper = _verdict(est.pitilde.ci_low, est.pitilde.ci_high + t, rhs_lo, rhs_hi)
    hb = consts.D2 * meas
    hv = _verdict(est.Htilde.ci_low, est.Htilde.ci_high + t, hb, hb)
    return ChainReport(est, consts.D_tilde, meas, lower, upper, hb, hv)


@dataclass(frozen=True)
class _HTask:
    model: object
    rho: float
    beta: float
    seed: int

    def __call__(self, k):
        cfg = self.model.sample(3 * self.rho * self.beta, self.rho * self.beta, self.seed, (4, k))
        return conn.event_H(cfg, self.rho, self.beta, "H")


def check_H_first_moment(model, rho: float, beta: float, replicas: int, seed: int = 0, workers: int = 1,
                         level: float = 0.95) -> tuple:
    """(estimate of P(H(rho, beta)), exact bound |B(0, 3 rho beta)| mu([beta, rho beta]), verdict)."""
    res = run_replicas(_HTask(model, rho, beta, seed), replicas, workers)
    est = EstimateWithCI(int(sum(res)), replicas, level)
    bound = ball_volume(3 * rho * beta, model.d) * model.mass(beta, rho * beta)
    return est, bound, _verdict(est.ci_low, est.ci_high, bound, bound)


# ---------------------------------------------------------------------------
# inclusion across scales


@dataclass(frozen=True)
class InclusionResult:
    hypothesis: bool  # G(0, alpha, rho beta) and not H(rho, beta)
    holds: bool  # conclusion, or True when the hypothesis fails
    k_hits: int
    l_hits: int


def check_inclusion(config: BallConfiguration, rho: float, alpha: float, beta: float,
                    consts: Optional[ConstantsBundle] = None) -> InclusionResult:
    """On one configuration: if G(0, alpha, rho beta) holds and H(rho, beta)
    does not, some k in K and some l in L have G(beta k, alpha, beta) and
    G(beta l, alpha, beta)."""
    consts = consts or constants(config.d, rho)
    x0 = np.zeros(config.d)
    big = conn.event_G(config, x0, alpha, rho * beta)
    h = conn.event_H(config, rho, beta, "H")
    if not big or h:
        return InclusionResult(False, True, 0, 0)
    k_hits = sum(conn.event_G(config, beta * k, alpha, beta) for k in consts.net_K)
    l_hits = sum(conn.event_G(config, beta * l, alpha, beta) for l in consts.net_L)
    return InclusionResult(True, k_hits > 0 and l_hits > 0, int(k_hits), int(l_hits))


def inclusion_half_width(rho: float, beta: float) -> float:
    """Analysis half-width that determines every event used by :func:`check_inclusion`."""
    return max(3 * rho * beta, 2 * rho * beta + 2 * beta)


# ---------------------------------------------------------------------------
# covering of a ball by a single large ball


def covering_probability(intensity: float, measure: RadiusMeasure, d: int, r: float, r_max: float) -> float:
    """Exact P(some ball contains B(0, r)) with radii capped at ``r_max``:
    1 - exp(-lambda int_[r, r_max] |B(0, b - r)| mu(db))."""
    if intensity == 0 or r_max <= r:
        return 0.0
    # (b - r)^d expanded binomially into restricted moments
    acc = sum(math.comb(d, j) * (-r) ** (d - j) * measure.restricted_moment(j, r, r_max) for j in range(d + 1))
    return float(-math.expm1(-intensity * unit_ball_volume(d) * max(acc, 0.0)))


def covering_lower_bound(intensity: float, measure: RadiusMeasure, d: int, r: float, r_max: float) -> float:
    """1 - exp(-lambda 2^-d |B(0,1)| int_[2r, r_max] b^d mu(db))."""
    if intensity == 0 or r_max < 2 * r:
        return 0.0
    m = measure.restricted_moment(d, 2 * r, r_max)
    return float(-math.expm1(-intensity * 2.0 ** -d * unit_ball_volume(d) * m))


@dataclass(frozen=True)
class _CoverTask:
    intensity: float
    measure: RadiusMeasure
    d: int
    r: float
    caps: tuple
    seed: int

    def __call__(self, k):
        top = self.caps[-1]
        cfg = sample_poisson_marked(self.intensity, self.measure, Window(self.d, self.r, top), top,
                                    self.seed, (9, k), hitting=True)
        covering = cfg.radii >= np.linalg.norm(cfg.centers, axis=1) + self.r
        return tuple(bool(np.any(covering & (cfg.radii <= c))) for c in self.caps)


@dataclass(frozen=True)
class CoverageCurve:
    r: float
    r_max: list
    estimates: list
    exact: list
    lower_bound: list
    verdicts: list  # lower bound <= estimate, same three-way scale

    def rows(self) -> list:
        return [{"r_max": c, **e.as_dict(), "exact": x, "lower_bound": b, "verdict": v}
                for c, e, x, b, v in zip(self.r_max, self.estimates, self.exact, self.lower_bound, self.verdicts)]


def coverage_curve(intensity: float, measure: RadiusMeasure, d: int, r: float, r_max_grid: Sequence[float],
                   replicas: int, seed: int = 0, workers: int = 1, level: float = 0.95) -> CoverageCurve:
    """Frequency of a single ball covering B(0, r) as the radius cap grows.

    Each replica samples once at the largest cap and restricts to smaller
    caps, so the curve is nondecreasing replica by replica.
    """
    caps = tuple(sorted(float(c) for c in r_max_grid))
    if not caps or not r > 0:
        raise ValueError("need r > 0 and a nonempty radius-cap grid")
    res = np.array(run_replicas(_CoverTask(intensity, measure, d, r, caps, seed), replicas, workers),
                   dtype=bool).reshape(replicas, len(caps))
    est = [EstimateWithCI(int(c), replicas, level) for c in res.sum(axis=0)]
    exact = [covering_probability(intensity, measure, d, r, c) for c in caps]
    low = [covering_lower_bound(intensity, measure, d, r, c) for c in caps]
    verdicts = [_verdict(b, b, e.ci_low, e.ci_high) for b, e in zip(low, est)]
    return CoverageCurve(r, list(caps), est, exact, low, verdicts)


# ---------------------------------------------------------------------------
# deterministic recursion


@dataclass(frozen=True)
class ItemVerdict:
    hypothesis: bool
    conclusion: bool

    @property
    def verified(self) -> bool:
        """The implication holds on this sequence."""
        return (not self.hypothesis) or self.conclusion


@dataclass(frozen=True)
class RecursionReport:
    item1: ItemVerdict
    item2: ItemVerdict
    item3: ItemVerdict
    f_series: float
    g_series: float
    proof_bound: Optional[float]


def _series_converges(terms: Sequence, ratio: float = 0.95) -> bool:
    """Geometric-decay test on the second half of a nonnegative series."""
    t = [float(x) for x in terms]
    tail = t[len(t) // 2:]
    if len(tail) < 2:
        return False
    if all(x <= 1e-300 for x in tail[-3:]):
        return True
    pos = [x for x in tail if x > 1e-300]
    if len(pos) < 2:
        return True
    return max(b / a for a, b in zip(pos[:-1], pos[1:])) <= ratio


def analyse_recursion(f: Sequence, g: Sequence, rho: float, eps=1, s: Optional[float] = None,
                      beta0: float = 1.0, conv_tol: float = 1e-6, tol: float = 0.0) -> RecursionReport:
    """Numeric check of the three consequences of f(rho beta) <= f(beta)^2 + g(beta).

    ``f[k]`` and ``g[k]`` are values at ``beta0 * rho^k``. Item 3 uses the
    weight beta^(s-1) (moment of order s) and is skipped when ``s`` is None.
    Exact arithmetic is preserved for Fraction inputs in items 1 and 2.
    """
    f, g = list(f), list(g)
    if len(f) < 3 or len(f) != len(g):
        raise ValueError("need at least 3 grid points and equal-length f, g")
    if not (0 < eps <= 1):
        raise ValueError("eps must lie in (0, 1]")
    if any(x < 0 for x in f) or any(x < 0 for x in g):
        raise ValueError("f and g must be nonnegative")
    for k in range(len(f) - 1):
        rhs = f[k] ** 2 + g[k]
        if f[k + 1] > (rhs + tol if tol else rhs):  # keep Fractions exact
            raise ValueError(f"sequence violates f(rho b) <= f(b)^2 + g(b) at grid index {k}")
    half = Fraction(1, 2) if isinstance(eps, Fraction) else 0.5
    hyp1 = f[0] <= eps * half and f[1] <= eps * half and all(x <= eps * half * half for x in g)
    item1 = ItemVerdict(hyp1, all(x <= eps * half for x in f))

    n = len(f)
    q = n - n // 4
    eventually = any(all(x <= half for x in f[k0:]) for k0 in range(n // 2 + 1))
    hyp2 = eventually and max(g[q - 1:]) <= conv_tol / 2
    item2 = ItemVerdict(hyp2, f[-1] <= conv_tol)

    f_series = g_series = math.nan
    bound = None
    if s is None:
        item3 = ItemVerdict(False, False)
    else:
        expo = s - 1.0  # lemma exponent, must exceed -1
        if expo <= -1:
            raise ValueError("item 3 needs s > 0")
        betas = [beta0 * rho ** k for k in range(n)]
        w = [b ** (expo + 1) * math.log(rho) for b in betas]
        tf = [float(x) * wk for x, wk in zip(f, w)]
        tg = [float(x) * wk for x, wk in zip(g, w)]
        f_series, g_series = sum(tf), sum(tg)
        hyp3 = float(f[-1]) <= conv_tol and _series_converges(tg)
        thresh = rho ** (-expo - 1) / 2
        kA = next((k for k in range(1, n) if all(float(x) <= thresh for x in f[k - 1:])), None)
        ok = _series_converges(tf)
        if kA is not None:
            lhs = sum(tf[kA:])
            bound = tf[kA - 1] + 2 * rho ** (expo + 1) * sum(tg[kA - 1 : n - 1])
            ok = ok and lhs <= bound * (1 + 1e-12)
        item3 = ItemVerdict(hyp3, ok)
    return RecursionReport(item1, item2, item3, f_series, g_series, bound)


def iterate_recursion(f0, g: Sequence) -> list:
    """The extremal sequence f(k+1) = f(k)^2 + g(k)."""
    f = [f0]
    for gk in g[:-1]:
        f.append(f[-1] ** 2 + gk)
    return f


# ---------------------------------------------------------------------------
# threshold bracket


@dataclass(frozen=True)
class BracketResult:
    lambda_low: Optional[float]
    lambda_high: Optional[float]
    conclusive: bool
    table: list  # rows (lambda, beta, EstimateWithCI)

    def as_dict(self) -> dict:
        return {"lambda_low": self.lambda_low, "lambda_high": self.lambda_high, "conclusive": self.conclusive,
                "table": [{"lambda": l, "beta": b, **e.as_dict()} for l, b, e in self.table]}


def bracket_threshold(model_at: Callable[[float], object], beta_grid: Sequence[float], lambda_grid: Sequence[float],
                      replicas: int, seed: int = 0, workers: int = 1, r_max: Optional[float] = None,
                      level: float = 0.95) -> BracketResult:
    """Bracket the critical intensity from the behavior of pi~ across scales.

    A grid intensity counts as subcritical when the upper CI of pi~(beta_max)
    is below half the lower CI of pi~(beta_min), and as supercritical when the
    lower CI of pi~(beta_max) exceeds 1/2.
    """
    b_min, b_max = min(beta_grid), max(beta_grid)
    lows, highs, table = [], [], []
    for i, lam in enumerate(lambda_grid):
        model = model_at(lam)
        est = {}
        for j, b in enumerate(sorted(set(beta_grid))):
            e = estimate_crossings(model, b, replicas, seed + 7919 * i + 104729 * j, workers, r_max, level).pitilde
            est[b] = e
            table.append((float(lam), float(b), e))
        if est[b_max].ci_high < 0.5 * est[b_min].ci_low:
            lows.append(lam)
        if est[b_max].ci_low > 0.5:
            highs.append(lam)
    lam_high = min(highs) if highs else None
    lam_low = max((l for l in lows if lam_high is None or l < lam_high), default=None)
    conclusive = lam_low is not None and lam_high is not None and lam_low < lam_high and not any(
        l > lam_high for l in lows)
    return BracketResult(lam_low, lam_high, conclusive, table)


# ---------------------------------------------------------------------------
# multiscale superposition versus direct sampling


@dataclass(frozen=True)
class EquivalenceReport:
    scales: tuple
    counts_multiscale: tuple  # total balls per scale over all replicas
    counts_direct: tuple
    expected: tuple  # expected total per scale
    chi2_pvalue: float  # homogeneity of the two per-scale count tables
    atoms_multiscale: tuple  # sorted radius atoms observed
    atoms_direct: tuple
    atom_z: tuple  # (n_ms - n_direct) / sqrt(n_ms + n_direct) per atom

    @property
    def support_match(self) -> bool:
        return self.atoms_multiscale == self.atoms_direct

    def passes(self, level: float = 0.01, z_max: float = 3.0) -> bool:
        return self.support_match and self.chi2_pvalue > level and all(abs(z) <= z_max for z in self.atom_z)

    def rows(self) -> list:
        return [{"scale": s, "radius": r, "count_multiscale": m, "count_direct": c, "expected": e, "z": z}
                for s, r, m, c, e, z in zip(self.scales, self.atoms_multiscale, self.counts_multiscale,
                                            self.counts_direct, self.expected, self.atom_z)]


def compare_multiscale_direct(intensity: float, base: RadiusMeasure, a: float, depth: int, d: int,
                              half_width: float, replicas: int, seed: int = 0) -> EquivalenceReport:
    """Per-scale ball counts of the superposition of shrunk copies against a
    single Poisson sample from the summed radius measure, on the same box.

    Needs a single-atom base so that each radius identifies its scale.
    """
    if not (isinstance(base, AtomMeasure) and base.radii.size == 1):
        raise ValueError("comparison needs a single-atom base measure")
    b = float(base.radii[0])
    flat = multiscale_measure(base, a, d, depth)
    win = Window(d, half_width, b)
    ms = np.zeros(depth + 1, dtype=np.int64)
    dr = np.zeros(depth + 1, dtype=np.int64)
    atoms_ms, atoms_dr = set(), set()
    for k in range(replicas):
        c1 = sample_multiscale(intensity, base, a, depth, win, seed, (6, k))
        c2 = sample_poisson_marked(intensity, flat, win, b, seed, (7, k))
        ms += np.bincount(c1.scale_index, minlength=depth + 1)
        s2 = np.rint(np.log(b / c2.radii) / math.log(a)).astype(np.int64) if len(c2) else np.zeros(0, np.int64)
        dr += np.bincount(s2, minlength=depth + 1)
        atoms_ms.update(np.round(c1.radii, 12).tolist())
        atoms_dr.update(np.round(c2.radii, 12).tolist())
    vol = (2 * win.outer) ** d
    expected = [replicas * intensity * float(base.masses[0]) * a ** (n * d) * vol for n in range(depth + 1)]
    table = np.vstack([ms, dr])
    table = table[:, table.sum(axis=0) > 0]
    p = float(stats.chi2_contingency(table)[1]) if table.shape[1] > 1 else 1.0
    z = [float((m - c) / math.sqrt(m + c)) if m + c else 0.0 for m, c in zip(ms, dr)]
    return EquivalenceReport(tuple(range(depth + 1)), tuple(int(x) for x in ms), tuple(int(x) for x in dr),
                             tuple(expected), p, tuple(sorted(atoms_ms, reverse=True)),
                             tuple(sorted(atoms_dr, reverse=True)), tuple(z))
