import csv
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from coarse_mbrw.cli import main
from coarse_mbrw.runner import EXPERIMENTS, ConfigError, RunConfig, _load_registry, run_experiment

_load_registry()

configs = st.builds(
    RunConfig,
    experiment=st.sampled_from(sorted(EXPERIMENTS)),
    k=st.integers(1, 6),
    gamma=st.floats(0, 0.49),
    grid=st.sampled_from([64, 128, 256, 512]),
    scales=st.lists(st.integers(1, 4), min_size=1, max_size=4).map(tuple),
    replicas=st.integers(1, 10_000),
    seed=st.integers(0, 2**63),
    delta=st.floats(0.01, 0.99),
    mode=st.sampled_from(["fast", "slow", "very_fast"]),
    q=st.lists(st.floats(0, 4), min_size=1, max_size=4).map(tuple),
    tolerances=st.dictionaries(st.sampled_from(["slope", "ratio"]), st.floats(0, 1)),
)


@given(configs)
def test_config_json_round_trip(cfg):
    back = RunConfig.from_json(cfg.to_json())
    assert back == cfg
    assert back.digest() == cfg.digest()


def test_unknown_keys_and_schema_are_rejected():
    with pytest.raises(ConfigError, match="unknown config keys: bogus"):
        RunConfig.from_dict({"experiment": "classify", "bogus": 1})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"k": 1})
    with pytest.raises(ConfigError, match="schema_version"):
        RunConfig("classify", schema_version=99).validate()


def test_invalid_values():
    with pytest.raises(ConfigError, match="L2-phase"):
        RunConfig("sample-field", gamma=0.6).validate()
    with pytest.raises(ConfigError, match="registry: .*validate-suite"):
        RunConfig("nope").validate()
    with pytest.raises(ConfigError, match="power of two"):
        RunConfig("sample-field", grid=100).validate()
    with pytest.raises(ConfigError, match="moment radii"):
        RunConfig("fit-moments", grid=256).validate()
    with pytest.raises(ConfigError):
        RunConfig("classify", points=4).validate()


def test_cli_rejects_supercritical_gamma(tmp_path, capsys):
    assert main(["fit-moments", "--gamma", "0.6", "--out", str(tmp_path)]) == 2
    assert "L2-phase" in capsys.readouterr().err
    assert not (tmp_path / "manifest.json").exists()


def test_same_config_gives_identical_outputs(tmp_path):
    manifests = []
    for name in ("a", "b"):
        cfg = RunConfig("sample-field", k=1, gamma=0.2, grid=64, seed=3, out=str(tmp_path / name))
        m = run_experiment(cfg).to_dict()
        on_disk = json.loads((tmp_path / name / "manifest.json").read_text())
        assert on_disk == m
        m.pop("wall_time")
        manifests.append(m)
    assert manifests[0] == manifests[1]
    assert (tmp_path / "a" / "field.mbrw").read_bytes() == (tmp_path / "b" / "field.mbrw").read_bytes()


def test_config_file_and_overrides(tmp_path):
    cfg = RunConfig("sample-field", k=1, grid=64, seed=41, out=str(tmp_path / "c"))
    path = tmp_path / "cfg.json"
    path.write_text(cfg.to_json())
    assert main(["sample-field", "--config", str(path)]) == 0
    m1 = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert m1["config_hash"] == cfg.digest()
    assert main(["sample-field", "--config", str(path), "--seed", "42"]) == 0
    m2 = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert m2["config_hash"] != m1["config_hash"]
    moved = RunConfig("sample-field", k=1, grid=64, seed=41, out="elsewhere", threads=4)
    assert moved.digest() == cfg.digest()


def test_validate_covariance_cli(tmp_path):
    assert main(["validate-covariance", "--k", "2", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "covariance.csv")))
    assert len(rows) == 10_000 and all(r["within_6k"] == "True" for r in rows)


def test_simulate_lbm_cli(tmp_path):
    code = main(["simulate-lbm", "--gamma", "0.3", "--grid", "64", "--t", "0.001", "--replicas", "3",
                 "--out", str(tmp_path)])
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "lbm.csv")))
    assert [r["replica"] for r in rows] == ["0", "1", "2"]
    assert all(float(r["F_total"]) == pytest.approx(0.001, rel=0.05) for r in rows)


def test_classify_cli(tmp_path):
    assert main(["classify", "--k", "2", "--grid", "64", "--out", str(tmp_path)]) == 2
    code = main(["classify", "--mode", "fast", "--k", "2", "--r", "2", "--gamma", "0", "--grid", "128",
                 "--points", "8", "--paths", "50", "--out", str(tmp_path)])
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "classify.csv")))
    assert len(rows) == 64 and {r["decision"] for r in rows} == {"true"}
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert set(manifest["digests"]) == {"classify.csv"}


def test_estimate_exponent_cli(tmp_path):
    code = main(["estimate-exponent", "--gamma", "0", "--k", "1", "--scales", "1,2,3", "--replicas", "10",
                 "--paths", "40", "--out", str(tmp_path)])
    assert code in (0, 3)
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["theorem_exponent"] == 1.0
    assert (tmp_path / "crossing_r3.csv").exists()
