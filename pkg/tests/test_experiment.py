import copy
import json
from importlib import resources
from pathlib import Path

import pytest
import yaml

from doobtube.errors import ValidationError
from doobtube.experiment import (THRESHOLDS, compare_regimes, dump_scenario, load_scenario,
                                 run_experiment, scenario_from_dict)

SMALL = {
    "name": "small_strip",
    "profile": {"kind": "constant", "level": 1.0, "a": -2.0},
    "delta": 0.125,
    "s0": 0.0,
    "far_index": 30,
    "measure_indices": [2, 4, 8],
    "n_paths": 1000,
    "seed": 3,
    "moments": {},
    "anticoncentration": {"window": 1.0},
    "clock": {},
}


def _write(tmp_path, cfg, name="scn.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return p


def shipped():
    root = resources.files("doobtube") / "scenarios"
    return sorted(str(p) for p in root.iterdir() if p.name.endswith(".yaml"))


def test_minimal_config_gets_defaults(tmp_path):
    cfg = {"profile": {"kind": "power", "exponent": 0.5}, "delta": 0.1, "far_index": 40}
    scn = load_scenario(_write(tmp_path, cfg))
    d = scn.to_dict()
    assert d["dimension"] == 2 and d["margin"] == 20 and d["min_width_cells"] == 8
    assert d["s0"] == 1.0 and d["start"] == [0.0, 1.0]
    assert d["n_paths"] == 1000 and d["seed"] == 0 and d["solver_tol"] == 1e-10
    assert d["profile"] == {"kind": "power", "exponent": 0.5, "scale": 1.0, "length": 1.0,
                            "a": 0.0, "b": float("inf")}
    assert all(d[k] is None for k in ("moments", "clock", "coupling"))


def test_measure_index_inside_margin_is_rejected():
    cfg = dict(SMALL, measure_indices=[2, 25])
    with pytest.raises(ValidationError, match=r"ladder index 25"):
        scenario_from_dict(cfg)


def test_every_problem_is_listed():
    cfg = dict(SMALL, measure_indices=[25], delta=-1.0, n_paths=0, colour="red")
    with pytest.raises(ValidationError) as err:
        scenario_from_dict(cfg)
    assert err.value.problems == ["unknown key 'colour'"]
    del cfg["colour"]
    with pytest.raises(ValidationError) as err:
        scenario_from_dict(cfg)
    assert len(err.value.problems) >= 3


@pytest.mark.parametrize("patch,match", [
    ({"clock": {"k_list": [2, 4, 8], "depth": 3}}, "clock.'depth'"),
    ({"profile": {"kind": "constant", "levle": 1.0}}, "levle"),
    ({"clock": {"k_list": [8, 4, 2]}}, "increasing"),
    ({"coupling": {"start1": [0.0, 0.0], "start2": [0.0, 1.0], "depths": [12.0]}}, "depth 12"),
    ({"start": [0.0, 5.0]}, "below the start"),
    ({"far_index": None}, "far_index"),
])
def test_invalid_configs(patch, match):
    cfg = copy.deepcopy(SMALL)
    cfg.update(patch)
    if cfg.get("far_index") is None:
        cfg.pop("far_index")
    with pytest.raises(ValidationError, match=match):
        scenario_from_dict(cfg)


@pytest.mark.parametrize("path", shipped())
def test_round_trip_is_canonical(path):
    scn = load_scenario(path)
    text = dump_scenario(scn)
    again = scenario_from_dict(yaml.safe_load(text))
    assert dump_scenario(again) == text
    assert again.config_hash == scn.config_hash


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_scenario("/nonexistent/scenario.yaml")


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    return out, run_experiment(scenario_from_dict(SMALL), out)


def test_report_contents(small_run):
    out, rep = small_run
    assert rep.ok
    assert set(rep.verdicts) == {"moments", "anticoncentration", "clock"}
    assert rep.verdicts["clock"] == "homogeneous"
    data = json.loads((out / "report.json").read_text())
    prov = data["provenance"]
    assert set(prov) >= {"artifact_version", "config_hash", "seed", "wall_time_s"}
    assert prov["seed"] == 3 and prov["wall_time_s"] > 0
    assert data["thresholds"] == json.loads(json.dumps(THRESHOLDS))
    assert data["regime"]["regime"] == "InfiniteHomogeneous"
    assert data["solver"]["residual"] <= 1e-10


def test_output_files(small_run):
    out, rep = small_run
    names = {p.name for p in out.iterdir()}
    assert names == {"report.json", "h_layers.csv", "paths.csv", "moments.csv",
                     "anticoncentration.csv", "clock.csv"}
    lines = (out / "paths.csv").read_text().splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    assert any("field_fingerprint=" in ln for ln in comments)
    header = lines[len(comments)]
    assert header == "path_index,lifetime,T_k2,T_k4,T_k8"
    assert len(lines) == len(comments) + 1 + 1000
    h = (out / "h_layers.csv").read_text().splitlines()
    assert h[2] == "layer,axis_value,log_max_h,layer_log_growth,layer_node_count"


def test_rerun_is_byte_identical(small_run, tmp_path):
    out, _ = small_run
    run_experiment(scenario_from_dict(SMALL), tmp_path)
    for name in ("h_layers.csv", "paths.csv", "moments.csv", "anticoncentration.csv", "clock.csv"):
        assert (out / name).read_bytes() == (tmp_path / name).read_bytes()


def test_seed_override_changes_paths(small_run, tmp_path):
    out, _ = small_run
    rep = run_experiment(scenario_from_dict(dict(SMALL, anticoncentration=None, moments=None,
                                                 clock=None)), tmp_path, seed=4)
    assert rep.provenance["seed"] == 4
    assert (out / "paths.csv").read_bytes() != (tmp_path / "paths.csv").read_bytes()


def test_stage_error_stub(tmp_path):
    cfg = dict(SMALL, min_width_cells=20)
    rep = run_experiment(scenario_from_dict(cfg), tmp_path)
    assert not rep.ok and rep.stage == "build_grid"
    assert "ResolutionError" in rep.error
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["status"] == "error" and data["stage"] == "build_grid"
    assert data["regime"]["regime"] == "InfiniteHomogeneous"
    assert not (tmp_path / "paths.csv").exists()


def test_failed_analysis_keeps_earlier_outputs(small_run, tmp_path):
    out, _ = small_run
    cfg = dict(SMALL, n_paths=1000, anticoncentration={"window": 1.0, "k_list": [2, 8]})
    cfg["clock"] = None
    ok = run_experiment(scenario_from_dict(cfg), tmp_path / "ok")
    assert ok.ok
    bad = run_experiment(scenario_from_dict(dict(cfg, anticoncentration={"window": 1.0}, n_paths=999)),
                         tmp_path / "bad")
    assert bad.stage == "anticoncentration" and "StatisticalPowerError" in bad.error
    assert (tmp_path / "bad" / "moments.csv").exists()
    assert "anticoncentration" not in bad.verdicts
    assert not list((tmp_path / "bad").glob(".*.tmp"))


def test_finite_lifetime_flag_and_tail(tmp_path):
    cfg = {"name": "two", "profile": {"kind": "power", "exponent": 2.0, "a": 0.5}, "delta": 1 / 128,
           "s0": 1.0, "far_index": 30, "n_paths": 50, "seed": 1}
    rep = run_experiment(scenario_from_dict(cfg))
    assert rep.ok and "FiniteLifetime" in rep.flags
    assert rep.lifetime["tail_integral_f"] > 0 and rep.lifetime["tail_lifetime_bound"] > 0
    assert rep.verdicts == {}


def test_compare_single_scenario(tmp_path):
    cfg = dict(SMALL, moments=None)
    rows, reports = compare_regimes([scenario_from_dict(cfg)], tmp_path)
    assert len(rows) == 1
    assert rows[0]["clock_verdict"] == "homogeneous" and rows[0]["concordant"] is True
    assert (tmp_path / "dichotomy.csv").exists()
    assert (tmp_path / "small_strip" / "report.json").exists()


def test_compare_strip_and_finite_lifetime():
    two = {"name": "two", "profile": {"kind": "power", "exponent": 2.0, "a": 0.5}, "delta": 1 / 128,
           "s0": 1.0, "far_index": 30, "measure_indices": [0, 2, 5], "n_paths": 200, "seed": 1,
           "clock": {}}
    rows, _ = compare_regimes([scenario_from_dict(dict(SMALL, moments=None, anticoncentration=None)),
                               scenario_from_dict(two)])
    assert rows[0]["clock_verdict"] == "homogeneous" and not rows[0]["finite_lifetime"]
    assert rows[1]["finite_lifetime"] and rows[1]["regime"] == "FiniteLifetime"
    assert rows[1]["concordant"] is None
    assert rows[1]["beta"] == 2.0 and rows[0]["beta"] is None
