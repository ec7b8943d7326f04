import csv
import json
import os

import pytest
import yaml

from contperc.cli import EXPERIMENTS, HEADERS, main

CONFIGS = os.path.join(os.path.dirname(__file__), "..", "configs")

UNIT = {"kind": "atoms", "atoms": [[1.0, 1.0]]}

GOLDEN = {
    "estimate-pi": "alpha,beta,successes,replicas,point,ci_low,ci_high,truncation_bound",
    "estimate-pitilde": "beta,successes,replicas,point,ci_low,ci_high,pi0_point,M_exceeds_point,truncation_bound",
    "check-inequality": "rho,alpha,beta,lhs_point,lhs_ci_high,pi_small_point,pi_small_ci_low,D_tilde,measure_term,"
                        "i_plus,rhs_low,rhs_high,verdict",
    "multiscale-equivalence": "scale,radius,count_multiscale,count_direct,expected,z",
    "marriage-tail": "r,successes,replicas,point,ci_low,ci_high,bound,verdict",
    "marriage-containment": "realization,centers,checked,skipped,violations,unstable_pairs,sated_fraction",
    "bracket-threshold": "lambda,beta,successes,replicas,point,ci_low,ci_high",
    "conditions-report": "condition,value,flag",
    "analyse-recursion": "item,hypothesis,conclusion,verified",
}


def write_cfg(tmp_path, cfg, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return str(p)


def run_cli(tmp_path, kind, cfg, out="out", *extra):
    path = write_cfg(tmp_path, cfg)
    out_dir = str(tmp_path / out)
    return main([kind, path, "--out-dir", out_dir, *extra]), out_dir


def read(out_dir, name):
    with open(os.path.join(out_dir, name)) as fh:
        return fh.read()


def pi_cfg(**params):
    return {"model": {"kind": "boolean", "d": 2, "intensity": 0.2, "measure": UNIT},
            "params": {"alpha": 0.0, "beta": 2.0, **params}, "run": {"replicas": 200, "seed": 4}}


def test_golden_headers():
    assert {k: ",".join(v) for k, v in HEADERS.items()} == GOLDEN
    assert set(EXPERIMENTS) == set(GOLDEN) | {"sample"}


def test_estimate_pi_zero_intensity(tmp_path):
    cfg = pi_cfg()
    cfg["model"]["intensity"] = 0.0
    cfg["run"]["replicas"] = 100
    code, out = run_cli(tmp_path, "estimate-pi", cfg)
    assert code == 0
    res = json.loads(read(out, "results.json"))
    assert res["records"][0]["estimate"]["point"] == 0.0
    man = json.loads(read(out, "manifest.json"))
    assert man["tool_version"] and "wall_time_s" in man and "error_budget" in man


def test_determinism_and_workers(tmp_path):
    cfg = pi_cfg()
    cfg["run"]["replicas"] = 600
    c1, o1 = run_cli(tmp_path, "estimate-pi", cfg, "a")
    c2, o2 = run_cli(tmp_path, "estimate-pi", cfg, "b")
    c3, o3 = run_cli(tmp_path, "estimate-pi", cfg, "c", "--workers", "2")
    assert c1 == c2 == c3 == 0
    for name in ("results.csv", "results.json"):
        assert read(o1, name) == read(o2, name) == read(o3, name)


def test_flags_override_config(tmp_path):
    code, out = run_cli(tmp_path, "estimate-pi", pi_cfg(), "o", "--replicas", "50", "--seed", "9")
    assert code == 0
    man = json.loads(read(out, "manifest.json"))
    assert man["replicas"] == 50 and man["seed"] == 9


def test_sweep_rows_in_order(tmp_path):
    cfg = {"model": {"kind": "boolean", "d": 2, "intensity": 0.1, "measure": UNIT},
           "params": {"beta": [4, 1, 2]}, "run": {"replicas": 100, "seed": 1}}
    code, out = run_cli(tmp_path, "estimate-pitilde", cfg)
    assert code == 0
    rows = list(csv.DictReader(read(out, "results.csv").splitlines()))
    assert [float(r["beta"]) for r in rows] == [4.0, 1.0, 2.0]
    seeds = [r["seed"] for r in json.loads(read(out, "results.json"))["records"]]
    assert len(set(seeds)) == 3


def test_empty_sweep_exit_2(tmp_path, capsys):
    code, _ = run_cli(tmp_path, "estimate-pitilde", {**pi_cfg(), "params": {"beta": []}})
    assert code == 2
    assert "params.beta" in capsys.readouterr().err


def test_two_sweeps_rejected(tmp_path):
    cfg = pi_cfg(beta=[1, 2])
    cfg["model"]["intensity"] = [0.1, 0.2]
    assert run_cli(tmp_path, "estimate-pi", cfg)[0] == 2


def test_window_below_locality_exit_2(tmp_path, capsys):
    cfg = {"model": {"kind": "boolean", "d": 2, "intensity": 0.05, "measure": UNIT},
           "params": {"rho": 8, "alpha": 0.0, "beta": 2.0}, "geometry": {"window": 20.0},
           "run": {"replicas": 10, "seed": 1}}
    code, out = run_cli(tmp_path, "check-inequality", cfg)
    assert code == 2
    assert "locality" in capsys.readouterr().err
    assert not os.path.exists(os.path.join(out, "results.csv"))


@pytest.mark.parametrize("bad,field", [
    ({"model": {"kind": "boolean", "d": 2, "intensity": -1.0, "measure": UNIT}}, "model.intensity"),
    ({"model": {"kind": "boolean", "d": 0, "intensity": 1.0, "measure": UNIT}}, "model.d"),
    ({"model": {"kind": "nope", "d": 2, "intensity": 1.0}}, "model.kind"),
    ({"model": {"kind": "boolean", "d": 2, "intensity": 1.0, "measure": {"kind": "zzz"}}}, "model.measure"),
])
def test_validation_names_field(tmp_path, capsys, bad, field):
    cfg = {**pi_cfg(), **bad}
    assert run_cli(tmp_path, "estimate-pi", cfg)[0] == 2
    assert field in capsys.readouterr().err


def test_marriage_appetite_validation(tmp_path, capsys):
    cfg = {"model": {"kind": "marriage", "d": 2, "alpha": 0.3}, "params": {"r_grid": [1.0]}}
    assert run_cli(tmp_path, "marriage-tail", cfg)[0] == 2
    assert "model.alpha" in capsys.readouterr().err


def test_strict_exit_3(tmp_path):
    # conditions report on a divergent measure flags A2 as failing
    cfg = {"model": {"d": 2, "measure": {"kind": "pareto", "gamma": 2.0}}, "params": {"s": 0.0}}
    assert run_cli(tmp_path, "conditions-report", cfg, "a")[0] == 0
    assert run_cli(tmp_path, "conditions-report", cfg, "b", "--strict")[0] == 3


def test_recursion_exact(tmp_path):
    cfg = {"params": {"rho": 2, "eps": 1, "exact": True, "f": ["1/2"] * 4, "g": ["1/4"] * 4}}
    code, out = run_cli(tmp_path, "analyse-recursion", cfg, "o", "--strict")
    assert code == 0
    rows = list(csv.DictReader(read(out, "results.csv").splitlines()))
    assert rows[0]["hypothesis"] == "True" and rows[0]["verified"] == "True"


def test_sample_writes_configuration(tmp_path):
    cfg = {"model": {"kind": "boolean", "d": 2, "intensity": 1.0, "measure": UNIT}, "geometry": {"window": 2.0}}
    code, out = run_cli(tmp_path, "sample", cfg)
    assert code == 0
    assert read(out, "results.csv").splitlines()[0] == "scale_index,c1,c2,r"


def test_containment_extra_files(tmp_path):
    cfg = {"model": {"kind": "marriage", "d": 2, "alpha": 0.1}, "geometry": {"window": 2.0, "eps": 0.02},
           "run": {"replicas": 2, "seed": 1}}
    code, out = run_cli(tmp_path, "marriage-containment", cfg, "o", "--strict")
    assert code == 0
    assert read(out, "allocation_raster.csv").startswith("cell_index,center_id\n")
    summary = json.loads(read(out, "allocation_summary.json"))
    assert {"sated", "claimed_volume", "max_territory_radius"} <= set(summary)


def test_shipped_configs_validate(tmp_path):
    # every shipped config parses and names a known experiment
    for name in sorted(os.listdir(CONFIGS)):
        with open(os.path.join(CONFIGS, name)) as fh:
            cfg = yaml.safe_load(fh)
        assert cfg["experiment"] in EXPERIMENTS, name
