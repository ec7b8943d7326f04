"""Radius measures on (0, inf) and the scalar functionals used by the
subcriticality conditions.

Three concrete kinds are provided: finite lists of atoms (with an
empirical-sample variant), densities (a generic quadrature-backed class and
a closed-form Pareto subclass), and the multiscale measure
``mu(B) = sum_n a^(n d) nu(a^n B)`` built from a base measure ``nu``.

All measures are immutable; every method is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize

INF = math.inf

# Block-ratio thresholds for the dyadic divergence test.
_CONVERGENT_RATIO = 0.95
_DIVERGENT_RATIO = 0.999
_N_BLOCKS = 40


def unit_ball_volume(d: int) -> float:
    """Lebesgue volume of the unit ball in R^d."""
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def ball_volume(r: float, d: int) -> float:
    return unit_ball_volume(d) * r ** d


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    abserr: float
    status: str  # "finite", "divergent" or "inconclusive"


def dyadic_integral(fn: Callable[[float], float], lo: float, hi: float = INF) -> QuadratureResult:
    """Integrate ``fn`` on [lo, hi], detecting divergence at infinity.

    Bounded ranges are a single adaptive quadrature. Unbounded ranges are
    split into blocks [lo 2^k, lo 2^(k+1)]; the integral is declared finite
    when the block sums decay geometrically and infinite when they do not
    decay at all. Anything in between is reported as inconclusive.
    """
    if hi < lo:
        return QuadratureResult(0.0, 0.0, "finite")
    if math.isfinite(hi):
        val, err = integrate.quad(fn, lo, hi, limit=200)
        return QuadratureResult(float(val), float(err), "finite")
    if lo <= 0:
        raise ValueError("unbounded dyadic integration needs lo > 0")
    blocks = []
    err_total = 0.0
    for k in range(_N_BLOCKS):
        a, b = lo * 2.0 ** k, lo * 2.0 ** (k + 1)
        val, err = integrate.quad(fn, a, b, limit=200)
        blocks.append(val)
        err_total += err
    blocks = np.asarray(blocks)
    total = float(blocks.sum())
    tail = blocks[-10:]
    if np.all(tail <= 1e-300):
        return QuadratureResult(total, err_total, "finite")
    if np.any(tail <= 0):
        # sign changes or exact zeros inside the tail: treat the positive part
        tail = np.abs(tail) + 1e-300
    ratios = tail[1:] / tail[:-1]
    q = float(np.max(ratios))
    if q <= _CONVERGENT_RATIO:
        rest = float(tail[-1]) * q / (1.0 - q)
        return QuadratureResult(total + rest, err_total + rest, "finite")
    if float(np.min(ratios)) >= _DIVERGENT_RATIO:
        return QuadratureResult(INF, INF, "divergent")
    return QuadratureResult(math.nan, INF, "inconclusive")


class RadiusMeasure:
    """Locally finite measure on (0, inf).

    Subclasses implement :meth:`mass`, :meth:`restricted_moment`,
    :meth:`sample_tilted` and the support bounds. ``mass(lo, hi)`` and
    moments are over the closed interval [lo, hi].
    """

    #: (inf support, sup support)
    support: tuple

    def mass(self, lo: float, hi: float = INF) -> float:
        raise NotImplementedError

    def tail_mass(self, r: float) -> float:
        """mu([r, inf))."""
        if r <= 0:
            raise ValueError("tail_mass needs r > 0")
        return self.mass(r, INF)

    def restricted_moment(self, p: float, lo: float, hi: float = INF) -> float:
        raise NotImplementedError

    def log_moment(self, d: int) -> float:
        """Integral of beta^d ln(beta) over [1, inf)."""
        raise NotImplementedError

    def sample_tilted(self, rng: np.random.Generator, size: int, j: float, lo: float, hi: float) -> np.ndarray:
        """Draw from the normalized measure beta^j mu(d beta) on [lo, hi]."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int, lo: float, hi: float) -> np.ndarray:
        return self.sample_tilted(rng, size, 0.0, lo, hi)

    @property
    def total_mass_finite(self) -> bool:
        return math.isfinite(self.mass(self.support[0], INF)) if self.support[0] > 0 else False


# ---------------------------------------------------------------------------
# atoms


class AtomMeasure(RadiusMeasure):
    """Finite sum of point masses ``sum_i m_i delta_{r_i}``."""

    def __init__(self, radii, masses):
        radii = np.asarray(radii, dtype=float).reshape(-1)
        masses = np.asarray(masses, dtype=float).reshape(-1)
        if radii.shape != masses.shape:
            raise ValueError("radii and masses must have the same length")
        if np.any(radii <= 0) or not np.all(np.isfinite(radii)):
            raise ValueError("atoms must be finite and strictly positive")
        if np.any(masses < 0) or not np.all(np.isfinite(masses)):
            raise ValueError("atom masses must be finite and nonnegative")
        order = np.argsort(radii, kind="stable")
        r, m = radii[order], masses[order]
        # merge coincident atoms
        if r.size:
            uniq, inv = np.unique(r, return_inverse=True)
            m = np.bincount(inv, weights=m, minlength=uniq.size)
            r = uniq
        keep = m > 0
        self.radii = r[keep]
        self.masses = m[keep]
        self.radii.setflags(write=False)
        self.masses.setflags(write=False)
        if self.radii.size:
            self.support = (float(self.radii[0]), float(self.radii[-1]))
        else:
            self.support = (INF, 0.0)
        self._suffix = np.concatenate([np.cumsum(self.masses[::-1])[::-1], [0.0]])

    def __repr__(self):
        return f"AtomMeasure({self.radii.tolist()}, {self.masses.tolist()})"

    @property
    def total_mass_finite(self) -> bool:
        return True

    def as_dict(self) -> dict:
        return {"kind": "atoms", "atoms": [[float(r), float(m)] for r, m in zip(self.radii, self.masses)]}

    def mass(self, lo, hi=INF):
        if hi < lo:
            return 0.0
        i = np.searchsorted(self.radii, lo, side="left")
        j = np.searchsorted(self.radii, hi, side="right")
        return float(self._suffix[i] - self._suffix[j])

    def tail_mass(self, r):
        if r <= 0:
            raise ValueError("tail_mass needs r > 0")
        return float(self._suffix[np.searchsorted(self.radii, r, side="left")])

    def restricted_moment(self, p, lo, hi=INF):
        if hi < lo:
            raise ValueError("restricted_moment needs lo <= hi")
        sel = (self.radii >= lo) & (self.radii <= hi)
        return float(np.sum(self.masses[sel] * self.radii[sel] ** p))

    def log_moment(self, d):
        sel = self.radii >= 1.0
        r = self.radii[sel]
        return float(np.sum(self.masses[sel] * r ** d * np.log(r)))

    def sample_tilted(self, rng, size, j, lo, hi):
        sel = (self.radii >= lo) & (self.radii <= hi)
        r = self.radii[sel]
        w = self.masses[sel] * r ** j
        if w.sum() <= 0:
            raise ValueError("no mass to sample on the requested interval")
        idx = rng.choice(r.size, size=size, p=w / w.sum())
        return r[idx]


class EmpiricalMeasure(AtomMeasure):
    """Atoms at observed sample values, each carrying ``total_mass / n``."""

    def __init__(self, samples, weights=None, total_mass: float = 1.0):
        samples = np.asarray(samples, dtype=float).reshape(-1)
        if weights is None:
            weights = np.full(samples.size, total_mass / max(samples.size, 1))
        super().__init__(samples, weights)


# ---------------------------------------------------------------------------
# densities


class DensityMeasure(RadiusMeasure):
    """Measure with a density on [lo, hi]; integrals by adaptive quadrature.

    Serves both as a general density kind and as the independent numerical
    route against which closed-form subclasses are checked.
    """

    def __init__(self, pdf: Callable[[float], float], lo: float, hi: float = INF):
        if lo <= 0:
            raise ValueError("density support must start strictly above 0")
        self.pdf = pdf
        self.support = (float(lo), float(hi))

    def quad_moment(self, p: float, lo: float, hi: float = INF, log_weight: bool = False) -> QuadratureResult:
        a = max(lo, self.support[0])
        b = min(hi, self.support[1])
        if b < a:
            return QuadratureResult(0.0, 0.0, "finite")
        if log_weight:
            fn = lambda x: x ** p * math.log(x) * self.pdf(x)
        else:
            fn = lambda x: x ** p * self.pdf(x)
        return dyadic_integral(fn, a, b)

    def mass(self, lo, hi=INF):
        if hi < lo:
            return 0.0
        return self.quad_moment(0.0, lo, hi).value

    def restricted_moment(self, p, lo, hi=INF):
        if hi < lo:
            raise ValueError("restricted_moment needs lo <= hi")
        return self.quad_moment(p, lo, hi).value

    def log_moment(self, d):
        return self.quad_moment(d, 1.0, INF, log_weight=True).value

    def sample_tilted(self, rng, size, j, lo, hi):
        a = max(lo, self.support[0])
        b = min(hi, self.support[1])
        if not math.isfinite(b):
            raise ValueError("sampling needs a finite upper radius")
        grid = np.geomspace(a, b, 4097) if b > a else np.array([a, a])
        dens = np.array([x ** j * self.pdf(x) for x in grid])
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
        if cdf[-1] <= 0:
            raise ValueError("no mass to sample on the requested interval")
        u = rng.random(size) * cdf[-1]
        return np.interp(u, cdf, grid)


class ParetoMeasure(DensityMeasure):
    """``mass * gamma * r0^gamma * beta^(-gamma-1)`` on [r0, inf).

    Total mass is ``mass``; all functionals are closed form.
    """

    def __init__(self, gamma: float, r0: float = 1.0, mass: float = 1.0):
        if gamma <= 0 or r0 <= 0 or mass < 0:
            raise ValueError("Pareto needs gamma > 0, r0 > 0, mass >= 0")
        self.gamma = float(gamma)
        self.r0 = float(r0)
        self.total = float(mass)
        self._c = self.total * self.gamma * self.r0 ** self.gamma
        super().__init__(self._pdf, self.r0, INF)

    def __repr__(self):
        return f"ParetoMeasure(gamma={self.gamma}, r0={self.r0}, mass={self.total})"

    def _pdf(self, x):
        return self._c * x ** (-self.gamma - 1.0) if x >= self.r0 else 0.0

    @property
    def total_mass_finite(self) -> bool:
        return True

    def as_dict(self) -> dict:
        return {"kind": "pareto", "gamma": self.gamma, "r0": self.r0, "mass": self.total}

    def _power_integral(self, q: float, a: float, b: float) -> float:
        # integral of beta^q on [a, b]
        if b < a:
            return 0.0
        if q == -1.0:
            return math.log(b / a) if math.isfinite(b) else INF
        if not math.isfinite(b):
            return INF if q > -1.0 else -a ** (q + 1) / (q + 1)
        return (b ** (q + 1) - a ** (q + 1)) / (q + 1)

    def mass(self, lo, hi=INF):
        a, b = max(lo, self.r0), hi
        if b < a:
            return 0.0
        tail_b = (self.r0 / b) ** self.gamma if math.isfinite(b) else 0.0
        return self.total * ((self.r0 / a) ** self.gamma - tail_b)

    def restricted_moment(self, p, lo, hi=INF):
        if hi < lo:
            raise ValueError("restricted_moment needs lo <= hi")
        a = max(lo, self.r0)
        if hi < a:
            return 0.0
        return self._c * self._power_integral(p - self.gamma - 1.0, a, hi)

    def log_moment(self, d):
        q = d - self.gamma - 1.0
        if q >= -1.0:
            return INF
        L = max(1.0, self.r0)
        # integral of beta^q ln(beta) on [L, inf)
        k = q + 1.0
        return self._c * L ** k * (-math.log(L) / k + 1.0 / k ** 2)

    def sample_tilted(self, rng, size, j, lo, hi):
        a, b = max(lo, self.r0), hi
        if not math.isfinite(b):
            if j >= self.gamma:
                raise ValueError("tilted Pareto needs a finite upper radius")
        if b < a:
            raise ValueError("no mass to sample on the requested interval")
        u = rng.random(size)
        e = j - self.gamma  # density proportional to beta^(e-1)
        if e == 0.0:
            return a * (b / a) ** u
        if math.isfinite(b):
            return (a ** e + u * (b ** e - a ** e)) ** (1.0 / e)
        return a * (1.0 - u) ** (1.0 / e)


# ---------------------------------------------------------------------------
# multiscale


class MultiscaleMeasure(RadiusMeasure):
    """``mu(B) = sum_{n <= depth} a^(n d) nu(a^n B)``; ``depth=None`` means all n.

    The infinite-depth series are summed until the terms vanish (bounded
    base support) or decay below double precision.
    """

    _MAX_TERMS = 2000

    def __init__(self, base: RadiusMeasure, a: float, d: int, depth: Optional[int] = None):
        if not a > 1:
            raise ValueError("multiscale factor a must be > 1")
        if depth is not None and depth < 0:
            raise ValueError("depth must be >= 0")
        if not math.isfinite(base.restricted_moment(d, 0.0 if isinstance(base, AtomMeasure) else base.support[0], INF)):
            raise ValueError("base measure must have a finite d-th moment")
        self.base = base
        self.a = float(a)
        self.d = int(d)
        self.depth = depth
        lo = base.support[0] * self.a ** (-depth) if depth is not None else 0.0
        self.support = (lo, base.support[1])

    def __repr__(self):
        return f"MultiscaleMeasure({self.base!r}, a={self.a}, d={self.d}, depth={self.depth})"

    @property
    def total_mass_finite(self) -> bool:
        return self.depth is not None

    def as_dict(self) -> dict:
        return {"kind": "multiscale", "base": self.base.as_dict(), "a": self.a, "depth": self.depth}

    def _scales(self, lo: float):
        """Scale indices n whose image can intersect [lo, inf)."""
        n_max = self.depth if self.depth is not None else self._MAX_TERMS
        if lo > 0 and math.isfinite(self.base.support[1]):
            # a^-n * sup(base) >= lo
            n_max = min(n_max, int(math.floor(math.log(self.base.support[1] / lo) / math.log(self.a) + 1e-12)))
        return range(0, max(n_max, -1) + 1)

    def _sum_series(self, term: Callable[[int], float], lo: float) -> float:
        bounded = lo > 0 and math.isfinite(self.base.support[1])
        total = 0.0
        small = 0
        for n in self._scales(lo):
            t = term(n)
            if not math.isfinite(t):
                return INF
            total += t
            if self.depth is None and not bounded and total > 0:
                small = small + 1 if t <= 1e-17 * total else 0
                if small >= 5:
                    return total
        if self.depth is None and not bounded:
            return INF
        return total

    def mass(self, lo, hi=INF):
        if hi < lo:
            return 0.0
        if lo <= 0 and self.depth is None:
            return INF
        an = lambda n: self.a ** n
        return self._sum_series(lambda n: an(n) ** self.d * self.base.mass(an(n) * lo, an(n) * hi), lo)

    def restricted_moment(self, p, lo, hi=INF):
        if hi < lo:
            raise ValueError("restricted_moment needs lo <= hi")
        if lo <= 0 and self.depth is None:
            # near zero the scales contribute sum_n a^(n(d-p)) * const
            if p <= self.d:
                return INF
        lo_eff = lo if lo > 0 else 0.0

        def term(n):
            s = self.a ** n
            m = self.base.restricted_moment(p, s * lo_eff, s * hi)
            return s ** (self.d - p) * m if m else 0.0

        if lo_eff <= 0:
            # scales sum geometrically; stop at convergence
            total, n = 0.0, 0
            n_stop = self.depth if self.depth is not None else self._MAX_TERMS
            while n <= n_stop:
                t = term(n)
                total += t
                if self.depth is None and n > 5 and t <= 1e-17 * total:
                    break
                n += 1
            return total
        return self._sum_series(term, lo_eff)

    def log_moment(self, d):
        # only used for the base measure in the criterion; provided for completeness
        return self._sum_series(
            lambda n: self.a ** (n * (self.d - d)) * _shifted_log_moment(self.base, d, self.a ** n, n * math.log(self.a)),
            1.0,
        )

    def omitted_mass(self, eps: float) -> float:
        """Mass on [eps, inf) carried by the scales beyond ``depth``."""
        if self.depth is None:
            return 0.0
        full = MultiscaleMeasure(self.base, self.a, self.d, None)
        return full.mass(eps, INF) - self.mass(eps, INF)

    def atoms(self) -> AtomMeasure:
        """Flattened point-mass form (finite depth, atom base only)."""
        if self.depth is None or not isinstance(self.base, AtomMeasure):
            raise ValueError("flattening needs finite depth and an atom base")
        radii, masses = [], []
        for n in range(self.depth + 1):
            radii.append(self.base.radii * self.a ** (-n))
            masses.append(self.base.masses * self.a ** (n * self.d))
        return AtomMeasure(np.concatenate(radii), np.concatenate(masses))

    def scale_weights(self, j: float, lo: float, hi: float) -> np.ndarray:
        """Mass of beta^j mu restricted to [lo, hi] split by scale index."""
        n_stop = self.depth if self.depth is not None else self._MAX_TERMS
        if lo <= 0:
            raise ValueError("sampling a multiscale measure needs r_min > 0")
        out = []
        for n in self._scales(lo):
            if n > n_stop:
                break
            s = self.a ** n
            out.append(s ** (self.d - j) * self.base.restricted_moment(j, s * lo, s * hi))
        return np.asarray(out)

    def sample_tilted(self, rng, size, j, lo, hi):
        w = self.scale_weights(j, lo, hi)
        if w.sum() <= 0:
            raise ValueError("no mass to sample on the requested interval")
        scales = rng.choice(w.size, size=size, p=w / w.sum())
        out = np.empty(size)
        for n in np.unique(scales):
            sel = scales == n
            s = self.a ** n
            out[sel] = self.base.sample_tilted(rng, int(sel.sum()), j, s * lo, s * hi) / s
        return out

    def sample_with_scale(self, rng, size, lo, hi):
        """Radii plus the scale index each one came from."""
        w = self.scale_weights(0.0, lo, hi)
        if w.sum() <= 0:
            raise ValueError("no mass to sample on the requested interval")
        scales = rng.choice(w.size, size=size, p=w / w.sum())
        out = np.empty(size)
        for n in np.unique(scales):
            sel = scales == n
            s = self.a ** n
            out[sel] = self.base.sample(rng, int(sel.sum()), s * lo, s * hi) / s
        return out, scales


def _shifted_log_moment(base: RadiusMeasure, d: int, s: float, log_s: float) -> float:
    # integral over base of 1[beta/s >= 1] (beta)^d (ln beta - ln s)
    full = base.restricted_moment(d, s, INF)
    if not math.isfinite(full):
        return INF
    if isinstance(base, AtomMeasure):
        sel = base.radii >= s
        r = base.radii[sel]
        return float(np.sum(base.masses[sel] * r ** d * (np.log(r) - log_s)))
    fn = lambda x: x ** d * (math.log(x) - log_s) * base.pdf(x)
    return dyadic_integral(fn, max(s, base.support[0]), base.support[1]).value


def multiscale_measure(nu: RadiusMeasure, a: float, d: int, depth: Optional[int]) -> RadiusMeasure:
    """Multiscale measure truncated to scales n <= depth.

    For atom bases with finite depth the exact flattened :class:`AtomMeasure`
    is returned; its ``omitted_mass`` helper stays available through the
    ``source`` attribute.
    """
    ms = MultiscaleMeasure(nu, a, d, depth)
    if depth is not None and isinstance(nu, AtomMeasure):
        flat = ms.atoms()
        flat.source = ms
        return flat
    return ms


# ---------------------------------------------------------------------------
# functionals


def tail_mass(measure: RadiusMeasure, r: float) -> float:
    return measure.tail_mass(r)


def restricted_moment(measure: RadiusMeasure, p: float, lo: float, hi: float = INF) -> float:
    return measure.restricted_moment(p, lo, hi)


def log_moment(nu: RadiusMeasure, d: int) -> float:
    return nu.log_moment(d)


@dataclass(frozen=True)
class SupResult:
    value: float
    witness: Optional[float]
    attained: bool = True


def _atom_candidates(measure: RadiusMeasure, n_scan: int = 60) -> Optional[np.ndarray]:
    if isinstance(measure, AtomMeasure):
        return measure.radii
    if isinstance(measure, MultiscaleMeasure) and isinstance(measure.base, AtomMeasure):
        depth = measure.depth if measure.depth is not None else n_scan
        return np.unique(np.concatenate([measure.base.radii * measure.a ** (-n) for n in range(depth + 1)]))
    return None


def sup_scaled_tail(measure: RadiusMeasure, d: int) -> SupResult:
    """sup over r > 0 of r^d mu([r, inf)), with the radius where it is reached."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    cands = _atom_candidates(measure)
    if cands is not None:
        if cands.size == 0:
            return SupResult(0.0, None)
        vals = np.array([r ** d * measure.tail_mass(r) for r in cands])
        if not np.all(np.isfinite(vals)):
            return SupResult(INF, None, False)
        i = int(np.argmax(vals))
        attained = True
        if isinstance(measure, MultiscaleMeasure) and measure.depth is None:
            # values keep creeping up toward r -> 0: supremum is a limit
            attained = not (i == 0 or vals[i] - vals[0] <= 1e-12 * vals[i])
        return SupResult(float(vals[i]), float(cands[i]), attained)
    if isinstance(measure, ParetoMeasure):
        if measure.gamma < d:
            return SupResult(INF, None, False)
        # increasing up to r0, nonincreasing after
        return SupResult(measure.total * measure.r0 ** d, measure.r0)
    return _grid_sup(lambda r: r ** d * measure.tail_mass(r), measure)


def _grid_sup(fn, measure) -> SupResult:
    lo = measure.support[0] if measure.support[0] > 0 else 2.0 ** -40
    grid = lo * 2.0 ** np.arange(-8, 41)
    vals = np.array([fn(r) for r in grid])
    if not np.all(np.isfinite(vals)):
        return SupResult(INF, None, False)
    tail = vals[-10:]
    if np.all(np.diff(tail) > 0) and tail[-1] > 2 * tail[0]:
        return SupResult(INF, None, False)
    i = int(np.argmax(vals))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(lambda t: -fn(math.exp(t)), bounds=(math.log(a), math.log(b)), method="bounded")
    best_r = math.exp(res.x)
    best = fn(best_r)
    if best >= vals[i]:
        return SupResult(float(best), best_r)
    return SupResult(float(vals[i]), float(grid[i]))


@dataclass(frozen=True)
class AbisBounds:
    sup_window: float
    sup_tail: float
    upper_bound: float

    def sandwich_holds(self, rtol: float = 1e-9) -> bool:
        s = max(self.sup_tail, 1.0)
        return (self.sup_window <= self.sup_tail + rtol * s) and (self.sup_tail <= self.upper_bound + rtol * s)


def abis_bounds(measure: RadiusMeasure, d: int, rho: float) -> AbisBounds:
    """sup r^d mu([r, rho r]), sup r^d mu([r, inf)) and (1 - rho^-d)^-1 times the first."""
    if not rho > 1:
        raise ValueError("rho must be > 1")
    window = lambda r: r ** d * measure.mass(r, rho * r)
    cands = _atom_candidates(measure)
    if cands is not None:
        sw = max((window(r) for r in cands), default=0.0)
    else:
        sw = _grid_sup(window, measure).value
    st = sup_scaled_tail(measure, d).value
    return AbisBounds(float(sw), float(st), float(sw / (1.0 - rho ** (-d))))


@dataclass(frozen=True)
class ConditionReport:
    d: int
    s: float
    sup_scaled_tail: float
    sup_witness: Optional[float]
    sup_attained: bool
    moment_d: float
    moment_d_plus_s: Optional[float]
    log_moment: float
    A1: str
    A2: str
    A3: Optional[str]

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _flag(value: float) -> str:
    if math.isnan(value):
        return "inconclusive-numeric"
    return "holds" if math.isfinite(value) else "fails"


def check_conditions(measure: RadiusMeasure, d: int, s: float = 0.0) -> ConditionReport:
    """Evaluate the sup-tail condition and the [1, inf) moment conditions."""
    if s < 0:
        raise ValueError("s must be >= 0")
    sup = sup_scaled_tail(measure, d)
    m_d = measure.restricted_moment(d, 1.0, INF)
    m_ds = measure.restricted_moment(d + s, 1.0, INF) if s > 0 else None
    lm = measure.log_moment(d)
    a1 = _flag(sup.value)
    a2 = _flag(m_d)
    return ConditionReport(
        d=d,
        s=s,
        sup_scaled_tail=sup.value,
        sup_witness=sup.witness,
        sup_attained=sup.attained,
        moment_d=m_d,
        moment_d_plus_s=m_ds,
        log_moment=lm,
        A1=a1,
        A2=a2,
        A3=_flag(m_ds) if m_ds is not None else None,
    )


# ---------------------------------------------------------------------------
# configuration records


def measure_from_dict(conf: dict, d: Optional[int] = None) -> RadiusMeasure:
    """Build a measure from its tagged-record form."""
    kind = conf.get("kind")
    if kind == "atoms":
        atoms = conf.get("atoms") or []
        if atoms and any(len(a) != 2 for a in atoms):
            raise ValueError("measure.atoms entries must be [radius, mass] pairs")
        radii = [a[0] for a in atoms]
        masses = [a[1] for a in atoms]
        return AtomMeasure(radii, masses)
    if kind == "pareto":
        return ParetoMeasure(conf["gamma"], conf.get("r0", 1.0), conf.get("mass", 1.0))
    if kind == "multiscale":
        if d is None:
            raise ValueError("multiscale measure needs the dimension")
        base = measure_from_dict(conf["base"], d)
        return multiscale_measure(base, conf["a"], d, conf.get("depth"))
    raise ValueError(f"unknown measure kind {kind!r}")
