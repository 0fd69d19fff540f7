import copy
import csv
import os
from pathlib import Path

import pytest
import yaml

from htq import cli
from htq.config import SEED_ENV, from_dict, load, schema_errors
from htq.model import ConfigurationError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

TINY = {
    "config_version": 1,
    "name": "tiny",
    "system": {"kind": "single", "services": {"family": "bernoulli", "mean": [0.5]}, "arrivals": {"family": "bernoulli"}},
    "epsilons": [0.2, 0.1, 0.05],
    "simulation": {"measure_slots": 20000, "warmup_slots": 1000, "seed": 3, "theta_grid": [-1, 0, 0.5]},
}


def tiny(**changes):
    doc = copy.deepcopy(TINY)
    doc.update(changes)
    return doc


def write(tmp_path, doc, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return path


def test_all_shipped_configs_parse():
    for path in CONFIGS.glob("*.yaml"):
        load(path, semantic=False)


def test_schema_errors_name_fields():
    doc = tiny()
    doc["simulation"]["batches"] = "twenty"
    doc["bogus"] = 1
    errs = schema_errors(doc)
    assert any(e.startswith("simulation/batches") for e in errs)
    assert any("bogus" in e for e in errs)
    with pytest.raises(ConfigurationError, match="simulation/batches"):
        from_dict(doc)


def test_epsilon_bound_named():
    doc = tiny(epsilons=[0.6, 0.1, 0.05])
    with pytest.raises(ConfigurationError, match=r"epsilons/0.*mu=0.5"):
        from_dict(doc)


def test_pmf_must_sum_to_one():
    doc = tiny()
    doc["system"]["services"] = {"family": "pmf", "params": {"support": [0, 1], "probs": [0.5, 0.6]}}
    with pytest.raises(ConfigurationError, match="sum"):
        from_dict(doc)


def test_missing_kind_fields():
    doc = tiny()
    doc["system"] = {"kind": "gs", "arrivals": {"family": "bernoulli"}}
    with pytest.raises(ConfigurationError, match="system/schedules"):
        from_dict(doc)


def test_seed_precedence(monkeypatch):
    cfg = from_dict(tiny())
    monkeypatch.delenv(SEED_ENV, raising=False)
    assert cfg.seed() == 3
    assert cfg.seed(11) == 11
    monkeypatch.setenv(SEED_ENV, "99")
    assert cfg.seed(11) == 99
    monkeypatch.setenv(SEED_ENV, "x")
    with pytest.raises(ConfigurationError, match=SEED_ENV):
        cfg.seed()


def test_measure_slots_scale():
    doc = tiny()
    doc["simulation"] = {"measure_scale": 1000, "batches": 20}
    cfg = from_dict(doc)
    assert cfg.measure_slots(0.1) == 100_000
    assert cfg.measure_slots(0.03) % 20 == 0


def test_prediction_from_config():
    assert from_dict(tiny()).prediction().limit_mean == pytest.approx(0.25)
    assert load(CONFIGS / "lb_jsq_n2.yaml").prediction().limit_mean == pytest.approx(0.1875)
    assert load(CONFIGS / "lb_jsq_n2_correlated.yaml").prediction().limit_mean == pytest.approx(0.28125)
    assert load(CONFIGS / "gs_two_state_bernoulli.yaml").prediction().limit_mean == pytest.approx(0.15625)
    assert load(CONFIGS / "switch_n2.yaml").prediction().limit_mean == pytest.approx(0.125)


def read_body(path):
    lines = Path(path).read_text().splitlines(keepends=True)
    assert lines[0].startswith("#")
    return "".join(lines[1:])


def test_run_writes_exact_columns(tmp_path, monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    cfg = write(tmp_path, tiny())
    rc = cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "a"), "--workers", "1"])
    assert rc == 0
    body = read_body(tmp_path / "a" / "tiny-run.csv")
    rows = list(csv.reader(body.splitlines()))
    assert rows[0] == cli.BASE_COLUMNS + ["mgf_theta_-1", "mgf_ref_theta_-1", "mgf_theta_0",
                                          "mgf_ref_theta_0", "mgf_theta_0.5", "mgf_ref_theta_0.5"]
    assert cli.BASE_COLUMNS == ["system", "policy", "epsilon", "source", "replication", "slots", "scaled_mean",
                                "scaled_mean_ci_lo", "scaled_mean_ci_hi", "predicted_mean", "perp_sq_scaled",
                                "unused_mean", "unused_identity_residual", "ks_stat", "seed"]
    assert len(rows) >= 2
    rec = dict(zip(rows[0], rows[1]))
    assert rec["source"] == "sim" and rec["seed"] == "3" and rec["epsilon"] == "0.2"


def test_run_is_byte_identical(tmp_path, monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    cfg = write(tmp_path, tiny())
    for d in ("a", "b"):
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / d), "--workers", "1"]) == 0
    assert read_body(tmp_path / "a" / "tiny-run.csv") == read_body(tmp_path / "b" / "tiny-run.csv")


def test_env_seed_reaches_csv(tmp_path, monkeypatch):
    cfg = write(tmp_path, tiny())
    monkeypatch.setenv(SEED_ENV, "41")
    assert cli.main(["run", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path), "--workers", "1"]) == 0
    rows = list(csv.DictReader(read_body(tmp_path / "tiny-run.csv").splitlines()))
    assert {r["seed"] for r in rows} == {"41"}


def test_sweep_and_report(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv(SEED_ENV, raising=False)
    cfg = write(tmp_path, tiny())
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path), "--workers", "1"]) == 0
    assert (tmp_path / "tiny-summary.txt").exists()
    capsys.readouterr()
    assert cli.main(["report", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert "relative gap" in capsys.readouterr().out


def test_sweep_needs_three_points(tmp_path, capsys):
    cfg = write(tmp_path, tiny(epsilons=[0.1]))
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "at least 3" in capsys.readouterr().err


def test_report_without_results(tmp_path):
    cfg = write(tmp_path, tiny())
    assert cli.main(["report", "--config", str(cfg), "--out", str(tmp_path / "none")]) == cli.EXIT_CONFIG


def test_validate_exit_codes(capsys):
    assert cli.main(["validate", "--config", str(CONFIGS / "gs_vertex.yaml")]) == cli.EXIT_CRP
    assert "CRP: FAIL" in capsys.readouterr().out
    assert cli.main(["validate", "--config", str(CONFIGS / "gs_two_state_deterministic.yaml")]) == cli.EXIT_CONFIG
    out = capsys.readouterr().out
    assert "CRP: PASS" in out and "semantic checks: FAIL" in out
    assert cli.main(["validate", "--config", str(CONFIGS / "gs_two_state_bernoulli.yaml")]) == cli.EXIT_OK
    assert "0.15625" in capsys.readouterr().out


def test_bad_workers(tmp_path):
    cfg = write(tmp_path, tiny())
    assert cli.main(["run", "--config", str(cfg), "--workers", "0"]) == cli.EXIT_CONFIG


def test_oracle_compare(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv(SEED_ENV, raising=False)
    doc = tiny(oracle={"enabled": True, "q_cap": 150})
    cfg = write(tmp_path, doc)
    assert cli.main(["oracle-compare", "--config", str(cfg), "--out", str(tmp_path), "--workers", "1"]) == 0
    out = capsys.readouterr().out
    assert out.count("scaled_mean=") == 3
    rows = list(csv.DictReader(read_body(tmp_path / "tiny-oracle.csv").splitlines()))
    assert {r["source"] for r in rows} == {"sim", "oracle"}
