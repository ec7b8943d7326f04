"""Batch experiment driver.

    contperc <experiment> CONFIG.yaml [--seed N] [--replicas N] [--workers N]
                                      [--out-dir DIR] [--strict]

CONFIG holds ``model``, ``geometry``, ``params`` and ``run`` sections. One
scalar in ``params`` (or ``model.intensity`` / ``model.alpha``) may be a list,
which turns the run into a sweep with one result row per value. Results go to
``results.csv`` and ``results.json``; ``manifest.json`` echoes the config and
adds the tool version, wall time and verdicts.

Exit codes: 0 success, 2 invalid configuration, 3 a non-clean verdict under
``--strict``.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from fractions import Fraction
from typing import Optional

import numpy as np
import yaml

from . import __version__
from . import estimators as est
from . import marriage as mar
from .connectivity import WindowTooSmall
from .measures import check_conditions, measure_from_dict
from .point_process import Window, sample_multiscale, sample_poisson_marked

EXPERIMENTS = (
    "sample", "estimate-pi", "estimate-pitilde", "check-inequality", "multiscale-equivalence", "marriage-tail",
    "marriage-containment", "bracket-threshold", "conditions-report", "analyse-recursion",
)

SCHEMA_VERSION = 1

HEADERS = {
    "estimate-pi": ["alpha", "beta", "successes", "replicas", "point", "ci_low", "ci_high", "truncation_bound"],
    "estimate-pitilde": ["beta", "successes", "replicas", "point", "ci_low", "ci_high", "pi0_point",
                         "M_exceeds_point", "truncation_bound"],
    "check-inequality": ["rho", "alpha", "beta", "lhs_point", "lhs_ci_high", "pi_small_point", "pi_small_ci_low",
                         "D_tilde", "measure_term", "i_plus", "rhs_low", "rhs_high", "verdict"],
    "multiscale-equivalence": ["scale", "radius", "count_multiscale", "count_direct", "expected", "z"],
    "marriage-tail": ["r", "successes", "replicas", "point", "ci_low", "ci_high", "bound", "verdict"],
    "marriage-containment": ["realization", "centers", "checked", "skipped", "violations", "unstable_pairs",
                             "sated_fraction"],
    "bracket-threshold": ["lambda", "beta", "successes", "replicas", "point", "ci_low", "ci_high"],
    "conditions-report": ["condition", "value", "flag"],
    "analyse-recursion": ["item", "hypothesis", "conclusion", "verified"],
}

# list-valued by design, never treated as a sweep
_LIST_KEYS = {"beta_grid", "lambda_grid", "r_grid", "f", "g"}
CLEAN = {est.SATISFIED_MARGIN, "holds", "satisfied", "vacuous", "conclusive", "verified", "pass"}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh) or {}
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"config is not valid YAML: {e}") from e
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    return cfg


def _need(section: dict, key: str, where: str, kind=float, check=None, msg=""):
    if key not in section:
        raise ConfigError(f"{where}.{key}: required field missing")
    try:
        val = kind(section[key])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}.{key}: expected {kind.__name__}, got {section[key]!r}") from e
    if check is not None and not check(val):
        raise ConfigError(f"{where}.{key} = {val}: {msg}")
    return val


def build_model(cfg: dict):
    m = cfg.get("model") or {}
    kind = m.get("kind", "boolean")
    d = _need(m, "d", "model", int, lambda v: v >= 1, "dimension must be >= 1")
    if kind == "marriage":
        alpha = _need(m, "alpha", "model", float, lambda v: 0 < v < 2.0 ** (-d), f"appetite must lie in (0, 2^-d)")
        return mar.MarriageModel(alpha, d)
    lam = _need(m, "intensity", "model", float, lambda v: v >= 0, "intensity must be >= 0")
    if kind == "boolean":
        try:
            meas = measure_from_dict(m.get("measure") or {}, d)
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"model.measure: {e}") from e
        return est.BooleanModel(lam, meas, d, float(m.get("r_min", 0.0)))
    if kind == "multiscale":
        try:
            base = measure_from_dict(m.get("base") or {}, d)
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"model.base: {e}") from e
        a = _need(m, "a", "model", float, lambda v: v > 1, "scale factor must be > 1")
        depth = _need(m, "depth", "model", int, lambda v: v >= 0, "depth must be >= 0")
        return est.MultiscaleModel(lam, base, a, depth, d)
    raise ConfigError(f"model.kind: unknown model {kind!r} (boolean, multiscale, marriage)")


def find_sweep(cfg: dict) -> Optional[tuple]:
    """(section, key, values) of the single list-valued scalar, if any."""
    found = []
    for sec in ("params", "model", "geometry"):
        for k, v in (cfg.get(sec) or {}).items():
            if isinstance(v, list) and k not in _LIST_KEYS and not (sec == "model" and k in ("measure", "base")):
                found.append((sec, k, v))
    if len(found) > 1:
        raise ConfigError("only one parameter may carry a value list: " + ", ".join(f"{s}.{k}" for s, k, _ in found))
    if found and not found[0][2]:
        raise ConfigError(f"{found[0][0]}.{found[0][1]}: sweep list is empty")
    return found[0] if found else None


# ---------------------------------------------------------------------------
# experiments; each returns (rows, record, verdicts, extra files)


def _run_settings(cfg):
    r = cfg.get("run") or {}
    replicas = _need(r, "replicas", "run", int, lambda v: v >= 0, "replicas must be >= 0") if "replicas" in r else 1000
    level = float(r.get("level", 0.95))
    if not 0 < level < 1:
        raise ConfigError(f"run.level = {level}: confidence level must lie in (0, 1)")
    return replicas, int(r.get("seed", 0)), int(r.get("workers", 1)), level


def _est_row(e: est.EstimateWithCI) -> dict:
    return {"successes": e.successes, "replicas": e.replicas, "point": e.point, "ci_low": e.ci_low, "ci_high": e.ci_high}


def exp_sample(cfg, seed, replicas, workers, level):
    model = build_model(cfg)
    g = cfg.get("geometry") or {}
    w = _need(g, "window", "geometry", float, lambda v: v > 0, "window half-width must be > 0")
    r_max = g.get("r_max")
    if isinstance(model, mar.MarriageModel):
        conf = model.sample(w, float(r_max or 2 * mar.clip_radius(model.alpha, model.d)), seed, (0,))
    else:
        meas = model.measure
        cap = float(r_max) if r_max is not None else meas.support[1]
        if not math.isfinite(cap):
            raise ConfigError("geometry.r_max: required for unbounded radius measures")
        win = Window(model.d, w, float(g.get("padding", cap)))
        if win.padding < cap:
            raise ConfigError(f"geometry.padding = {win.padding}: must be >= the radius cap {cap}")
        if isinstance(model, est.MultiscaleModel):
            conf = sample_multiscale(model.intensity, model.base, model.a, model.depth, win, seed, (0,), r_max=cap)
        else:
            conf = sample_poisson_marked(model.intensity, meas, win, cap, seed, (0,), r_min=model.r_min)
    return None, {"configuration": conf.sidecar()}, [], {"results.csv": conf.to_csv()}


def exp_estimate_pi(cfg, seed, replicas, workers, level):
    model = build_model(cfg)
    p = cfg.get("params") or {}
    alpha = _need(p, "alpha", "params", float, lambda v: v >= 0, "alpha must be >= 0")
    beta = _need(p, "beta", "params", float, lambda v: v > 0 and v >= alpha, "beta must be > 0 and >= alpha")
    w = (cfg.get("geometry") or {}).get("window")
    e = est.estimate_pi(model, alpha, beta, replicas, seed, workers, None if w is None else float(w), level)
    row = {"alpha": alpha, "beta": beta, **_est_row(e), "truncation_bound": 0.0}
    return [row], {"estimate": e.as_dict()}, [], {}


def exp_estimate_pitilde(cfg, seed, replicas, workers, level):
    model = build_model(cfg)
    p = cfg.get("params") or {}
    beta = _need(p, "beta", "params", float, lambda v: v > 0, "beta must be > 0")
    r_max = (cfg.get("geometry") or {}).get("r_max")
    try:
        c = est.estimate_crossings(model, beta, replicas, seed, workers, None if r_max is None else float(r_max), level)
    except ValueError as e:
        raise ConfigError(f"geometry.r_max: {e}") from e
    row = {"beta": beta, **_est_row(c.pitilde), "pi0_point": c.pi0.point, "M_exceeds_point": c.M_exceeds.point,
           "truncation_bound": c.truncation_bound}
    rec = {"pitilde": c.pitilde.as_dict(), "pi0": c.pi0.as_dict(), "M_exceeds": c.M_exceeds.as_dict(),
           "truncation_bound": c.truncation_bound, "r_max": c.r_max}
    return [row], rec, [], {}


def exp_check_inequality(cfg, seed, replicas, workers, level):
    model = build_model(cfg)
    p = cfg.get("params") or {}
    rho = _need(p, "rho", "params", float, lambda v: v >= 2, "rho must be >= 2")
    alpha = _need(p, "alpha", "params", float, lambda v: v >= 0, "alpha must be >= 0")
    beta = _need(p, "beta", "params", float, lambda v: v > 0, "beta must be > 0")
    w = (cfg.get("geometry") or {}).get("window")
    try:
        r = est.check_key_inequality(model, rho, alpha, beta, replicas, seed, workers, level,
                                     None if w is None else float(w))
    except WindowTooSmall as e:
        raise ConfigError(f"geometry.window: {e}") from e
    row = {"rho": rho, "alpha": alpha, "beta": beta, "lhs_point": r.lhs.point, "lhs_ci_high": r.lhs.ci_high,
           "pi_small_point": r.pi_small.point, "pi_small_ci_low": r.pi_small.ci_low, "D_tilde": r.D_tilde,
           "measure_term": r.measure_term, "i_plus": r.i_plus, "rhs_low": r.rhs_low, "rhs_high": r.rhs_high,
           "verdict": r.verdict}
    return [row], r.as_dict(), [r.verdict], {}


def exp_multiscale_equivalence(cfg, seed, replicas, workers, level):
    model = build_model(cfg)
    if not isinstance(model, est.MultiscaleModel):
        raise ConfigError("model.kind: multiscale-equivalence needs a multiscale model")
    w = _need(cfg.get("geometry") or {}, "window", "geometry", float, lambda v: v > 0, "window half-width must be > 0")
    try:
        r = est.compare_multiscale_direct(model.intensity, model.base, model.a, model.depth, model.d, w, replicas, seed)
    except ValueError as e:
        raise ConfigError(f"model.base: {e}") from e
    verdict = "pass" if r.passes() else "fail"
    rec = {"chi2_pvalue": r.chi2_pvalue, "support_match": r.support_match, "verdict": verdict}
    return r.rows(), rec, [verdict], {}


def exp_marriage_tail(cfg, seed, replicas, workers, level):
    model = build_model(cfg)
    if not isinstance(model, mar.MarriageModel):
        raise ConfigError("model.kind: marriage-tail needs a marriage model")
    p = cfg.get("params") or {}
    grid = p.get("r_grid")
    if not isinstance(grid, list) or not grid:
        raise ConfigError("params.r_grid: non-empty list of radii required")
    curve = mar.palm_tail_estimate(model.alpha, model.d, grid, replicas, seed, workers, level)
    rows, verdicts = [], []
    for r, e, b in zip(curve.r_grid, curve.estimates, curve.bound):
        v = "vacuous" if b > 1 else ("satisfied" if e.ci_high <= b else "violated")
        rows.append({"r": r, **_est_row(e), "bound": b, "verdict": v})
        verdicts.append(v)
    return rows, {"reach": curve.reach, "curve": rows}, verdicts, {}


def exp_marriage_containment(cfg, seed, replicas, workers, level):
    model = build_model(cfg)
    if not isinstance(model, mar.MarriageModel):
        raise ConfigError("model.kind: marriage-containment needs a marriage model")
    g = cfg.get("geometry") or {}
    w = _need(g, "window", "geometry", float, lambda v: v > 0, "window half-width must be > 0")
    eps = _need(g, "eps", "geometry", float, lambda v: v > 0, "cell size must be > 0")
    rows, verdicts, extra = [], [], {}
    for k in range(replicas):
        rng = mar.make_rng(seed, 8, k)
        n = rng.poisson((2 * w) ** model.d)
        chi = rng.uniform(-w, w, size=(n, model.d))
        try:
            grid = mar.stable_allocation_grid(chi, model.alpha, w, eps)
        except mar.ResolutionError as e:
            raise ConfigError(f"geometry.eps: {e}") from e
        except ValueError as e:
            raise ConfigError(f"geometry: {e}") from e
        dom = mar.domination_process(chi, model.alpha)
        rep = mar.check_containment(grid, dom)
        bad = mar.unstable_pairs(grid)
        rows.append({"realization": k, "centers": int(n), "checked": rep.checked_centers,
                     "skipped": rep.skipped_centers, "violations": len(rep.violations), "unstable_pairs": len(bad),
                     "sated_fraction": float(grid.sated().mean()) if n else 1.0})
        verdicts.append("holds" if not rep.violations and not bad else "violated")
        if k == 0:
            extra["allocation_raster.csv"] = grid.raster_csv()
            extra["allocation_summary.json"] = _dumps(grid.summary())
    return rows, {"realizations": replicas}, verdicts, extra


def exp_bracket_threshold(cfg, seed, replicas, workers, level):
    m = cfg.get("model") or {}
    build_model({**cfg, "model": {**m, "intensity": 0.0}})
    p = cfg.get("params") or {}
    betas, lams = p.get("beta_grid"), p.get("lambda_grid")
    if not isinstance(betas, list) or len(betas) < 2:
        raise ConfigError("params.beta_grid: list of at least two scales required")
    if not isinstance(lams, list) or not lams:
        raise ConfigError("params.lambda_grid: non-empty list of intensities required")
    r_max = (cfg.get("geometry") or {}).get("r_max")
    res = est.bracket_threshold(_ModelAt(m), [float(b) for b in betas], [float(l) for l in lams], replicas, seed,
                                workers, None if r_max is None else float(r_max), level)
    rows = [{"lambda": l, "beta": b, **_est_row(e)} for l, b, e in res.table]
    rec = {"lambda_low": res.lambda_low, "lambda_high": res.lambda_high, "conclusive": res.conclusive}
    return rows, rec, ["conclusive" if res.conclusive else "inconclusive"], {}


class _ModelAt:
    def __init__(self, model_cfg):
        self.model_cfg = model_cfg

    def __call__(self, lam):
        return build_model({"model": {**self.model_cfg, "intensity": lam}})


def exp_conditions_report(cfg, seed, replicas, workers, level):
    m = cfg.get("model") or {}
    d = _need(m, "d", "model", int, lambda v: v >= 1, "dimension must be >= 1")
    try:
        meas = measure_from_dict(m.get("measure") or {}, d)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"model.measure: {e}") from e
    s = float((cfg.get("params") or {}).get("s", 0.0))
    try:
        rep = check_conditions(meas, d, s).as_dict()
    except ValueError as e:
        raise ConfigError(f"params.s: {e}") from e
    rows, verdicts = [], []
    for name, value in (("A1", "sup_scaled_tail"), ("A2", "moment_d"), ("A3", "moment_d_plus_s")):
        if rep[name] is None:
            continue
        rows.append({"condition": name, "value": rep[value], "flag": rep[name]})
        verdicts.append(rep[name])
    return rows, rep, verdicts, {}


def _sequence(vals, exact: bool):
    return [Fraction(str(v)) if exact else float(v) for v in vals]


def exp_analyse_recursion(cfg, seed, replicas, workers, level):
    p = cfg.get("params") or {}
    rho = _need(p, "rho", "params", float, lambda v: v > 1, "rho must be > 1")
    eps = p.get("eps", 1)
    exact = bool(p.get("exact", False))
    eps = Fraction(str(eps)) if exact else float(eps)
    s = p.get("s")
    if "f" in p and "g" in p:
        f, g = _sequence(p["f"], exact), _sequence(p["g"], exact)
    elif "g" in p and "f0" in p:
        g = _sequence(p["g"], exact)
        f = est.iterate_recursion(_sequence([p["f0"]], exact)[0], g)
    else:
        raise ConfigError("params: give f and g, or f0 and g")
    try:
        r = est.analyse_recursion(f, g, rho, eps, None if s is None else float(s), float(p.get("beta0", 1.0)))
    except ValueError as e:
        raise ConfigError(f"params: {e}") from e
    rows = [{"item": i, "hypothesis": v.hypothesis, "conclusion": v.conclusion, "verified": v.verified}
            for i, v in ((1, r.item1), (2, r.item2), (3, r.item3))]
    verdicts = ["verified" if v.verified else "violated" for v in (r.item1, r.item2, r.item3)]
    rec = {"items": rows, "f_series": r.f_series, "g_series": r.g_series, "proof_bound": r.proof_bound}
    return rows, rec, verdicts, {}


HANDLERS = {
    "sample": exp_sample, "estimate-pi": exp_estimate_pi, "estimate-pitilde": exp_estimate_pitilde,
    "check-inequality": exp_check_inequality, "multiscale-equivalence": exp_multiscale_equivalence,
    "marriage-tail": exp_marriage_tail, "marriage-containment": exp_marriage_containment,
    "bracket-threshold": exp_bracket_threshold, "conditions-report": exp_conditions_report,
    "analyse-recursion": exp_analyse_recursion,
}


# ---------------------------------------------------------------------------
# output


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def _dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def rows_csv(header: list, rows: list) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in row.items()})
    return buf.getvalue()


def write_atomic(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run(kind: str, cfg: dict, out_dir: str, strict: bool = False) -> int:
    """Run one experiment (or sweep) and write its files; returns the exit code."""
    t0 = time.time()
    if kind not in HANDLERS:
        raise ConfigError(f"experiment: unknown kind {kind!r}")
    if cfg.get("experiment", kind) != kind:
        raise ConfigError(f"experiment: config is for {cfg['experiment']!r}, subcommand is {kind!r}")
    replicas, seed, workers, level = _run_settings(cfg)
    sweep = find_sweep(cfg)
    handler = HANDLERS[kind]
    rows, records, verdicts, extra = [], [], [], {}
    if sweep is None:
        r, rec, v, extra = handler(cfg, seed, replicas, workers, level)
        rows, records, verdicts = r, [rec], v
    else:
        if kind in ("sample", "bracket-threshold", "conditions-report", "analyse-recursion", "marriage-containment"):
            raise ConfigError(f"{sweep[0]}.{sweep[1]}: {kind} does not support sweeps")
        sec, key, values = sweep
        for i, val in enumerate(values):
            sub = copy.deepcopy(cfg)
            sub[sec][key] = val
            # counter split: value i runs on its own seed stream
            sub_seed = int(np.random.SeedSequence(seed, spawn_key=(i,)).generate_state(1)[0])
            r, rec, v, _ = handler(sub, sub_seed, replicas, workers, level)
            rows += [{key: val, **row} if key not in row else row for row in r]
            records.append({key: val, "seed": sub_seed, **rec})
            verdicts += v
    os.makedirs(out_dir, exist_ok=True)
    files = dict(extra)
    if rows is not None:
        header = list(HEADERS[kind])
        if sweep is not None and sweep[1] not in header:
            header = [sweep[1]] + header
        files["results.csv"] = rows_csv(header, rows)
    results = {"schema_version": SCHEMA_VERSION, "experiment": kind, "seed": seed, "replicas": replicas,
               "model": _jsonable(cfg.get("model")), "records": records}
    files["results.json"] = _dumps(results)
    for name, text in sorted(files.items()):
        write_atomic(os.path.join(out_dir, name), text)
    manifest = {"schema_version": SCHEMA_VERSION, "tool_version": __version__, "experiment": kind, "config": cfg,
                "seed": seed, "replicas": replicas, "workers": workers, "wall_time_s": time.time() - t0,
                "verdicts": verdicts, "files": sorted(files), "error_budget": _budget(records)}
    write_atomic(os.path.join(out_dir, "manifest.json"), _dumps(manifest))
    if strict and any(v not in CLEAN for v in verdicts):
        return 3
    return 0


def _budget(records: list) -> dict:
    t = [r.get("truncation_bound") for r in records if isinstance(r, dict) and "truncation_bound" in r]
    return {"truncation_bound_max": max(t) if t else 0.0}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="contperc", description="continuum percolation experiments")
    sub = ap.add_subparsers(dest="experiment", required=True)
    for kind in EXPERIMENTS:
        sp = sub.add_parser(kind)
        sp.add_argument("config", help="YAML experiment configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--replicas", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out-dir", default=".")
        sp.add_argument("--strict", action="store_true", help="exit 3 on any non-clean verdict")
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config)
        run_sec = dict(cfg.get("run") or {})
        for key in ("seed", "replicas", "workers"):
            val = getattr(args, key)
            if val is not None:
                run_sec[key] = val
        cfg["run"] = run_sec
        return run(args.experiment, cfg, args.out_dir, args.strict)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
