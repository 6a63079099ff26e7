import json
import math
import subprocess
import sys

import numpy as np
import pytest

from gibbsdeform import cli
from gibbsdeform.configuration import Configuration, read_configuration_csv, write_configuration_csv
from gibbsdeform.geometry import Window
from gibbsdeform.potentials import NumericError


def run(tmp_path, cmd, cfg=None, *extra, name="cfg.json"):
    args = [cmd, "--out", str(tmp_path / "out")]
    if cfg is not None:
        path = tmp_path / name
        path.write_text(cfg if isinstance(cfg, str) else json.dumps(cfg))
        args += ["--config", str(path)]
    code = cli.main(args + list(extra))
    doc_path = tmp_path / "out" / f"{cmd}.json"
    doc = json.loads(doc_path.read_text()) if doc_path.exists() and code != 2 else None
    return code, doc


def test_constants_default_hard_core(tmp_path):
    code, doc = run(tmp_path, "constants", {"schema": 1})
    rep = doc["report"]
    assert code == 0 and rep["validity"]
    assert rep["cXi"] == pytest.approx(math.pi * 0.21, rel=1e-8)
    assert rep["cK"] == pytest.approx(1.1)
    assert rep["analyticRangeBound"] == pytest.approx(8.464, abs=1e-3)
    assert doc["seed"] == 0 and doc["exitCode"] == 0


def test_constants_invalid_activity_is_reported(tmp_path):
    code, doc = run(tmp_path, "constants", {"model": {"z": 2.0}})
    rep = doc["report"]
    assert code == 0 and rep["validity"] is False
    assert "1.319" in rep["explanation"]
    assert rep["analyticRangeBound"] == "inf"


def test_constants_without_enlargement(tmp_path):
    code, doc = run(tmp_path, "constants", {"potential": {"kind": "hardcore", "eps": 0.0}, "model": {"epsilon": 0.0}})
    rep = doc["report"]
    assert code == 0 and rep["cXi"] == 0.0 and rep["analyticRangeBound"] == 2.0


@pytest.mark.parametrize("cfg", [
    {"schema": 2},
    {"model": {"z": 0.5, "zeta": 1}},
    {"modle": {}},
    {"events": [{"kind": "countAtLeast", "region": [0, 1, 0, 1], "k": 1, "extra": 0}]},
    {"model": {"tau": 0.6}},
    {"model": {"nPrime": 7.0}},
    {"model": {"z": -1.0}},
    {"model": {"xi": 0.5}},
    {"model": {"z": 2.0}},
    {"model": {"n": "sixteen"}},
    {"seed": -3},
    {"events": [{"kind": "countAtLeast", "region": [0, 5, 0, 1], "k": 1}]},
    {"potential": {"kind": "lennard-jones"}},
    {"sampler": {"boundary": "mirror"}},
    "{not json",
])
def test_invalid_configs_exit_2(tmp_path, capsys, cfg):
    code, _ = run(tmp_path, "sample", cfg)
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "invalid-config" and err["message"]


def test_missing_config_file(tmp_path):
    assert cli.main(["constants", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_sample_zero_sweeps(tmp_path):
    code, doc = run(tmp_path, "sample", {"sampler": {"sweeps": 0}})
    assert code == 0 and doc["report"]["frames"] == 0
    assert (tmp_path / "out" / "frames.csv").read_text() == "frame,x,y,interior\n"


def test_sample_is_deterministic_and_seed_overridable(tmp_path):
    cfg = {"sampler": {"sweeps": 20, "burnIn": 2}, "model": {"n": 8.0, "R": 4.0}}
    run(tmp_path, "sample", cfg, "--seed", "77")
    first = (tmp_path / "out" / "frames.csv").read_text()
    code, doc = run(tmp_path, "sample", cfg, "--seed", "77")
    assert code == 0 and doc["seed"] == 77 and doc["config"]["seed"] == 77
    assert (tmp_path / "out" / "frames.csv").read_text() == first
    run(tmp_path, "sample", cfg, "--seed", "78")
    assert (tmp_path / "out" / "frames.csv").read_text() != first
    code, doc = run(tmp_path, "sample", cfg, "--chains", "2")
    assert code == 0 and doc["report"]["chains"] == 2 and doc["report"]["frames"] == 40


def test_deform_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    pts = rng.uniform(-17, 17, (150, 2))
    src = tmp_path / "x.csv"
    write_configuration_csv(src, Configuration(pts, Window(16), check=False))
    code, doc = run(tmp_path, "deform", {"deform": {"configuration": str(src)}})
    rep = doc["report"]
    assert code == 0 and rep["roundTripError"] <= 1e-8
    assert rep["invariantReport"]["passed"]
    moved = read_configuration_csv(tmp_path / "out" / "transformed.csv", Window(16))
    assert len(moved) == 150
    assert set(rep["sigmaStats"]) >= {"sigma1", "sigma2", "sigma3", "range", "isGood"}


def test_verify_passes_by_default_and_names_injected_faults(tmp_path):
    base = {"verify": {"configurations": 3, "intensity": 0.3}, "sampler": {"sweeps": 20}}
    code, doc = run(tmp_path, "verify", base)
    assert code == 0 and doc["report"]["failing"] == []
    assert {"pivotMonotonicity", "corePairConstancy", "separationPreserved", "hamiltonianInvariance",
            "derivativeBound", "roundTrip", "noCoreOverlap", "detailedBalanceRatio"} <= set(doc["report"]["checks"])
    faulty = {**base, "verify": {"configurations": 5, "intensity": 0.3, "cfScale": 0.1}}
    code, doc = run(tmp_path, "verify", faulty)
    assert code == 1
    assert doc["report"]["failing"] and set(doc["report"]["failing"]) <= set(doc["report"]["checks"])


def test_verify_empty_configurations(tmp_path):
    code, doc = run(tmp_path, "verify", {"verify": {"configurations": 2, "intensity": 0.0}, "sampler": {"sweeps": 5}})
    assert code == 0 and doc["report"]["pass"]


def test_mwtest_on_the_ideal_gas(tmp_path):
    cfg = {"potential": {"kind": "ideal", "r0": 0.5}, "model": {"n": 6.0, "R": 4.0, "nPrime": 3.0, "tau": 0.25},
           "sampler": {"sweeps": 1500, "burnIn": 10},
           "events": [{"kind": "countAtLeast", "region": [-1, 1, -1, 1], "k": 2},
                      {"kind": "emptyRegion", "region": [0, 1, 0, 1]}]}
    code, doc = run(tmp_path, "mwtest", cfg)
    assert code == 0
    for row in doc["report"]["events"]:
        assert abs(row["margin"]["estimate"] - row["p"]["estimate"]) <= 3 * row["gap"]["stderr"] + 1e-12
    code, _ = run(tmp_path, "mwtest", {**cfg, "events": []})
    assert code == 2


def test_covtest_small(tmp_path):
    code, doc = run(tmp_path, "covtest", {"model": {"n": 8.0, "R": 4.0}, "covtest": {"nSamples": 300, "intensity": 0.1}})
    assert code == 0 and doc["report"]["nSamples"] == 300


def test_echoed_config_reparses_to_the_same_experiment(tmp_path):
    code, doc = run(tmp_path, "constants", {"model": {"z": 0.3}, "seed": 5})
    code2, doc2 = run(tmp_path, "constants", doc["config"], name="echo.json")
    assert doc2["config"] == doc["config"] and doc2["report"] == doc["report"] and doc2["seed"] == 5


def test_numeric_errors_exit_3(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericError("quadrature failed")

    monkeypatch.setattr(cli, "model_constants", boom)
    code, _ = run(tmp_path, "sample", {"sampler": {"sweeps": 0}})
    assert code == 3


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "gibbsdeform", "constants", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["report"]["validity"] is True
