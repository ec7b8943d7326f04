"""Samplers for marked Poisson processes of balls inside a finite window.

A configuration is complete for one of two regions, recorded in ``mode``:

* ``"box"``: every ball with radius in [r_min, r_max] whose center lies in
  the padded box ``[-w-p, w+p]^d``;
* ``"hitting"``: every ball with radius in [r_min, r_max] that meets the
  analysis box ``[-w, w]^d`` (centers then lie within ``w + r_max``).

Balls above the radius cap are dropped; ``truncation.omitted_bound`` bounds
the probability that one of them meets the analysis box.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .measures import INF, AtomMeasure, MultiscaleMeasure, RadiusMeasure, unit_ball_volume


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for the counter-split stream ``(seed, *stream)``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream)))


@dataclass(frozen=True)
class Window:
    d: int
    half_width: float
    padding: float = 0.0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if self.half_width < 0 or self.padding < 0:
            raise ValueError("half_width and padding must be nonnegative")

    @property
    def outer(self) -> float:
        return self.half_width + self.padding

    def scaled(self, s: float) -> "Window":
        return Window(self.d, self.half_width * s, self.padding * s)

    def as_dict(self) -> dict:
        return {"d": self.d, "half_width": self.half_width, "padding": self.padding}


@dataclass(frozen=True)
class MarkedPoint:
    center: tuple
    radius: float
    scale_index: int = 0


@dataclass(frozen=True)
class Truncation:
    r_max: float
    omitted_bound: float


@dataclass(frozen=True, eq=False)
class BallConfiguration:
    centers: np.ndarray  # (n, d)
    radii: np.ndarray  # (n,)
    scale_index: np.ndarray  # (n,) int
    window: Window
    seed: int = 0
    stream: tuple = ()
    truncation: Truncation = Truncation(INF, 0.0)
    mode: str = "box"
    r_min: float = 0.0
    dependence_constant: float = 2.0

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float).reshape(-1, self.window.d)
        r = np.asarray(self.radii, dtype=float).reshape(-1)
        s = np.asarray(self.scale_index, dtype=np.int64).reshape(-1)
        if not (c.shape[0] == r.size == s.size):
            raise ValueError("centers, radii and scale_index must have matching lengths")
        if np.any(r <= 0):
            raise ValueError("radii must be positive")
        for name, arr in (("centers", c), ("radii", r), ("scale_index", s)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_balls(cls, balls: Sequence, window: Optional[Window] = None, **kw) -> "BallConfiguration":
        """Build from ``[(center, radius), ...]``; the window defaults to a box holding every ball."""
        centers = np.array([np.atleast_1d(np.asarray(c, dtype=float)) for c, _ in balls]) if balls else None
        radii = np.array([r for _, r in balls], dtype=float)
        if window is None:
            d = centers.shape[1] if centers is not None else 2
            ext = float(np.max(np.abs(centers).max(axis=1) + radii)) if balls else 1.0
            window = Window(d, ext, 0.0)
        if centers is None:
            centers = np.zeros((0, window.d))
        return cls(centers, radii, np.zeros(len(radii), dtype=np.int64), window, **kw)

    def __len__(self):
        return self.radii.size

    @property
    def d(self) -> int:
        return self.window.d

    @property
    def points(self) -> list:
        return [MarkedPoint(tuple(c), float(r), int(s)) for c, r, s in zip(self.centers, self.radii, self.scale_index)]

    def __iter__(self) -> Iterator[MarkedPoint]:
        return iter(self.points)

    def subset(self, mask) -> "BallConfiguration":
        mask = np.asarray(mask)
        return BallConfiguration(
            self.centers[mask], self.radii[mask], self.scale_index[mask], self.window, self.seed,
            self.stream, self.truncation, self.mode, self.r_min, self.dependence_constant,
        )

    def covers_ball_region(self, x, reach: float, r_hi: float) -> bool:
        """True when every ball of radius <= r_hi that can come within ``reach``
        of ``x`` is present (or the cap makes the omission impossible)."""
        x = np.asarray(x, dtype=float)
        if r_hi > self.truncation.r_max and self.truncation.omitted_bound > 0:
            return False
        if self.mode == "hitting":
            # the region B(x, reach) must sit inside the analysis box
            return bool(np.all(np.abs(x) + reach <= self.window.half_width + 1e-12))
        return bool(np.all(np.abs(x) + reach + min(r_hi, self.truncation.r_max) <= self.window.outer + 1e-12))

    # -- serialization -------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scale_index"] + [f"c{i + 1}" for i in range(self.d)] + ["r"])
        for c, r, s in zip(self.centers, self.radii, self.scale_index):
            w.writerow([int(s)] + [repr(float(v)) for v in c] + [repr(float(r))])
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {
            "window": self.window.as_dict(),
            "seed": int(self.seed),
            "stream": list(self.stream),
            "mode": self.mode,
            "r_min": self.r_min,
            "truncation": {"r_max": _json_float(self.truncation.r_max), "omitted_bound": self.truncation.omitted_bound},
            "dependence_constant": self.dependence_constant,
            "count": len(self),
        }

    @classmethod
    def from_csv(cls, text: str, sidecar: dict) -> "BallConfiguration":
        win = Window(**sidecar["window"])
        rows = list(csv.reader(io.StringIO(text)))[1:]
        arr = np.array([[float(v) for v in row] for row in rows]) if rows else np.zeros((0, win.d + 2))
        t = sidecar["truncation"]
        return cls(
            arr[:, 1 : 1 + win.d], arr[:, -1], arr[:, 0].astype(np.int64), win, sidecar["seed"],
            tuple(sidecar.get("stream", ())), Truncation(_unjson_float(t["r_max"]), t["omitted_bound"]),
            sidecar.get("mode", "box"), sidecar.get("r_min", 0.0), sidecar.get("dependence_constant", 2.0),
        )


def _json_float(x: float):
    return x if math.isfinite(x) else "inf"


def _unjson_float(x) -> float:
    return INF if x == "inf" else float(x)


def steiner_coefficients(half_width: float, d: int) -> np.ndarray:
    """Coefficients c_j with |[-w, w]^d + B(0, r)| = sum_j c_j r^j."""
    s = 2.0 * half_width
    return np.array([math.comb(d, j) * s ** (d - j) * unit_ball_volume(j) for j in range(d + 1)])


def enlarged_box_volume(half_width: float, d: int, r: float) -> float:
    return float(np.polyval(steiner_coefficients(half_width, d)[::-1], r))


def truncation_error(intensity: float, measure: RadiusMeasure, window: Window, r_max: float) -> float:
    """min(1, intensity * integral over (r_max, inf) of |box + B(0, r)| mu(dr)).

    First-moment bound on the probability that a ball above the cap meets the
    analysis box. Divergent integrals give 1.
    """
    if intensity < 0:
        raise ValueError("intensity must be >= 0")
    if intensity == 0 or r_max == INF:
        return 0.0
    return min(1.0, intensity * expected_excluded(measure, window, r_max))


def expected_excluded(measure: RadiusMeasure, window: Window, r_max: float) -> float:
    """Expected number (per unit intensity) of balls above the cap meeting the box."""
    lo = math.nextafter(r_max, INF)
    total = 0.0
    for j, cj in enumerate(steiner_coefficients(window.half_width, window.d)):
        if cj == 0:
            continue
        m = measure.restricted_moment(j, lo, INF)
        if math.isnan(m):
            return INF
        total += cj * m
    return total if math.isfinite(total) else INF


def _default_r_max(measure: RadiusMeasure, r_max: Optional[float]) -> float:
    if r_max is not None:
        return float(r_max)
    hi = measure.support[1]
    if not math.isfinite(hi):
        raise ValueError("a radius cap r_max is required for measures with unbounded support")
    return float(hi)


def _check_r_min(measure: RadiusMeasure, r_min: float):
    if r_min <= 0 and not measure.total_mass_finite:
        raise ValueError("measure has infinite mass near 0: pass an explicit r_min > 0")


def sample_poisson_marked(
    intensity: float,
    measure: RadiusMeasure,
    window: Window,
    r_max: Optional[float] = None,
    seed: int = 0,
    stream: tuple = (),
    r_min: float = 0.0,
    hitting: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> BallConfiguration:
    """Poisson process of balls with intensity ``intensity * Lebesgue x mu``.

    Radii are restricted to [r_min, r_max]. With ``hitting=True`` only the
    balls meeting the analysis box are generated, which is exact in law for
    every event decided inside that box.
    """
    if intensity < 0:
        raise ValueError("intensity must be >= 0")
    r_max = _default_r_max(measure, r_max)
    _check_r_min(measure, r_min)
    if not hitting and intensity > 0 and window.padding < r_max:
        raise ValueError(f"padding {window.padding} is smaller than the radius cap {r_max}")
    if rng is None:
        rng = make_rng(seed, *stream)
    d = window.d
    bound = truncation_error(intensity, measure, window, r_max)
    trunc = Truncation(r_max, bound)
    mode = "hitting" if hitting else "box"
    if intensity == 0:
        return BallConfiguration(np.zeros((0, d)), np.zeros(0), np.zeros(0, dtype=np.int64), window, seed, stream, trunc, mode, r_min)

    if not hitting:
        mass = measure.mass(r_min, r_max)
        side = 2.0 * window.outer
        n = rng.poisson(intensity * mass * side ** d)
        centers = rng.uniform(-window.outer, window.outer, size=(n, d))
        if isinstance(measure, MultiscaleMeasure):
            radii, scales = measure.sample_with_scale(rng, n, r_min, r_max) if n else (np.zeros(0), np.zeros(0, dtype=np.int64))
        else:
            radii = measure.sample(rng, n, r_min, r_max) if n else np.zeros(0)
            scales = np.zeros(n, dtype=np.int64)
        return BallConfiguration(centers, radii, scales, window, seed, stream, trunc, mode, r_min)

    coef = steiner_coefficients(window.half_width, d)
    weights = np.array([c * measure.restricted_moment(j, r_min, r_max) if c else 0.0 for j, c in enumerate(coef)])
    n = rng.poisson(intensity * weights.sum())
    counts = rng.multinomial(n, weights / weights.sum()) if n else np.zeros(d + 1, dtype=np.int64)
    radii = np.concatenate([measure.sample_tilted(rng, int(k), float(j), r_min, r_max) for j, k in enumerate(counts) if k] or [np.zeros(0)])
    centers = _uniform_hitting_centers(rng, window.half_width, radii, d)
    scales = np.zeros(radii.size, dtype=np.int64)
    if isinstance(measure, MultiscaleMeasure):
        # recover scale labels from the radius itself for atom bases
        scales = _scale_of(measure, radii)
    return BallConfiguration(centers, radii, scales, window, seed, stream, trunc, mode, r_min)


def _scale_of(measure: MultiscaleMeasure, radii: np.ndarray) -> np.ndarray:
    if isinstance(measure.base, AtomMeasure) and measure.base.radii.size == 1:
        b = measure.base.radii[0]
        return np.rint(np.log(b / radii) / math.log(measure.a)).astype(np.int64)
    return np.full(radii.size, -1, dtype=np.int64)


def _uniform_hitting_centers(rng: np.random.Generator, w: float, radii: np.ndarray, d: int) -> np.ndarray:
    n = radii.size
    out = np.empty((n, d))
    pending = np.arange(n)
    while pending.size:
        r = radii[pending]
        ext = (w + r)[:, None]
        c = rng.uniform(-1.0, 1.0, size=(pending.size, d)) * ext
        gap = np.maximum(np.abs(c) - w, 0.0)
        ok = np.einsum("ij,ij->i", gap, gap) < r * r
        out[pending[ok]] = c[ok]
        pending = pending[~ok]
    return out


def sample_multiscale(
    intensity: float,
    nu: RadiusMeasure,
    a: float,
    depth: int,
    window: Window,
    seed: int = 0,
    stream: tuple = (),
    r_max: Optional[float] = None,
    hitting: bool = False,
) -> BallConfiguration:
    """Union over n <= depth of independent shrunk copies a^-n xi_n.

    Scale n is sampled with the base measure in the window enlarged by a^n
    and mapped back by (c, r) -> (c / a^n, r / a^n).
    """
    if not a > 1:
        raise ValueError("multiscale factor a must be > 1")
    if depth < 0:
        raise ValueError("depth must be >= 0")
    r_cap = _default_r_max(nu, r_max)
    d = window.d
    cs, rs, ss = [], [], []
    bound = 0.0
    for n in range(depth + 1):
        s = a ** n
        part = sample_poisson_marked(intensity, nu, window.scaled(s), r_cap, seed, tuple(stream) + (n,), hitting=hitting)
        cs.append(part.centers / s)
        rs.append(part.radii / s)
        ss.append(np.full(len(part), n, dtype=np.int64))
        bound += part.truncation.omitted_bound
    trunc = Truncation(r_cap, min(1.0, bound))
    return BallConfiguration(
        np.concatenate(cs) if cs else np.zeros((0, d)), np.concatenate(rs), np.concatenate(ss),
        window, seed, tuple(stream), trunc, "hitting" if hitting else "box",
    )
