import json
import logging
from pathlib import Path

import pandas as pd
import pytest
import yaml

from surrender_lab.lab import (ConfigError, cmd_bias_study, cmd_evaluate, cmd_simulate,
                               cmd_train, load_config, parse_config, stage_seed)
from surrender_lab.lab.cli import main
from surrender_lab.lab.pipeline import StageError, sha256_file

FAST_MODELS = {
    "logistic_bag": {"n_estimators": 2, "degree": 2},
    "random_forest": {"n_estimators": 8},
    "gbt": {"n_estimators": 40},
}


def small_config(out, **extra):
    raw = {"seed": 5, "output_dir": str(out), "portfolio": {"n0": 600, "horizon": 6},
           "models": {"roster": ["baseline", "logistic_bag", "random_forest", "gbt"],
                      "overrides": FAST_MODELS},
           "bias_study": {"schemes": ["random_undersample", "smote"]}}
    raw.update(extra)
    return parse_config(raw)


def checksums(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): sha256_file(p)
            for p in sorted(root.rglob("*")) if p.is_file()}


def run_all(config):
    for stage in (cmd_simulate, cmd_train, cmd_evaluate):
        stage(config)


# ----------------------------------------------------------------------------- config

@pytest.mark.parametrize("raw,path", [
    ({"portfolio": {"n0": 0}}, "portfolio.n0"),
    ({"portfolio": {"n0": "many"}}, "portfolio.n0"),
    ({"portfolio": {"size": 3}}, "portfolio.size"),
    ({"colour": "red"}, "colour"),
    ({"seed": None}, "seed"),
    ({"split_share": 1.0}, "split_share"),
    ({"models": {"roster": ["baseline", "svm"]}}, "models.roster[1]"),
    ({"models": {"roster": []}}, "models.roster"),
    ({"resampling": {"scheme": "bootstrap"}}, "resampling.scheme"),
    ({"resampling": {"target_minority_share": 0.5}}, "resampling.scheme"),
    ({"evaluation": {"thresholds": [0.5, 2]}}, "evaluation.thresholds[1]"),
    ({"mortality": {"age_base": 0.9}}, "mortality"),
    ({"profile": "no/such/profile.yaml"}, "profile"),
])
def test_config_errors_carry_paths(raw, path):
    with pytest.raises(ConfigError) as err:
        parse_config(raw)
    assert err.value.path == path


def test_config_files_and_overrides(tmp_path):
    cfg_file = tmp_path / "exp.yaml"
    cfg_file.write_text(yaml.safe_dump({"seed": 9, "portfolio": {"n0": 100}}))
    cfg = load_config(cfg_file, {"models": {"roster": ["baseline"]}})
    assert cfg.seed == 9 and cfg.portfolio.n0 == 100 and cfg.portfolio.horizon == 15
    assert cfg.models.roster == ("baseline",)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    (tmp_path / "bad.yaml").write_text("seed: [1\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")


def test_custom_profile_path_relative_to_config(tmp_path):
    from surrender_lab.surrender import load_profile
    spec = load_profile("profile_2").to_dict()
    (tmp_path / "mine.yaml").write_text(yaml.safe_dump(spec, sort_keys=False))
    cfg_file = tmp_path / "exp.yaml"
    cfg_file.write_text(yaml.safe_dump({"profile": "mine.yaml"}))
    assert load_config(cfg_file).load_profile() == load_profile("profile_2")


def test_digest_ignores_location_and_workers(tmp_path):
    a = small_config(tmp_path / "a")
    b = small_config(tmp_path / "b", workers=4)
    c = small_config(tmp_path / "a", seed=6)
    assert a.digest() == b.digest() != c.digest()


def test_stage_seed_derivation():
    assert stage_seed(1, "train", "model", "gbt") == stage_seed(1, "train", "model", "gbt")
    assert stage_seed(1, "train", "model", "gbt") != stage_seed(1, "train", "model", "cart")


# ----------------------------------------------------------------------------- pipeline

@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    config = small_config(out)
    run_all(config)
    cmd_bias_study(config)
    return config, out


def test_simulate_outputs(finished_run):
    config, out = finished_run
    summary = json.loads((out / "data/summary.json").read_text())
    raw = pd.read_csv(out / "data/raw.csv")
    assert summary["observations"] == len(raw)
    assert summary["train"]["size"] + summary["test"]["size"] == len(raw)
    assert summary["split_year"] == pd.read_csv(out / "data/train.csv")["calendar_year"].max()
    assert summary["rus_size"] == 2 * round(summary["train"]["size"] * summary["train"]["imbalance"])


def test_manifests_are_complete(finished_run):
    _, out = finished_run
    produced = set(checksums(out))
    listed = set()
    for stage in ("simulate", "train", "evaluate", "bias-study"):
        manifest = json.loads((out / f"manifest_{stage}.json").read_text())
        assert manifest["stage"] == stage and manifest["master_seed"] == 5
        for rel, digest in manifest["files"].items():
            assert sha256_file(out / rel) == digest
        for rel, digest in manifest["inputs"].items():
            assert sha256_file(out / rel) == digest
        listed |= set(manifest["files"]) | {f"manifest_{stage}.json"}
    assert produced == listed


def test_metrics_report_layout(finished_run):
    config, out = finished_run
    report = json.loads((out / "reports/metrics.json").read_text())
    pairs = [(r["model"], r["split"]) for r in report["rows"]]
    assert sorted(pairs) == sorted((m, s) for m in config.models.roster for s in ("train", "test"))
    for kind in config.models.roster:
        bands = pd.read_csv(out / f"reports/bands_{kind}.csv")
        assert list(bands.columns) == ["calendar_year", "point", "lower", "upper", "observed", "n"]
        assert (bands["lower"] <= bands["point"]).all() and (bands["point"] <= bands["upper"]).all()
        assert (out / f"reports/pp_{kind}_test.csv").is_file()


def test_bias_study_report(finished_run):
    _, out = finished_run
    report = json.loads((out / "reports/bias_study.json").read_text())
    schemes = {(r["scheme"], r["bias_corrected"]) for r in report["rows"]}
    assert schemes == {("none", False), ("random_undersample", False), ("random_undersample", True),
                       ("smote", False), ("smote", True)}
    under = next(r for r in report["rows"] if r["scheme"] == "random_undersample" and not r["bias_corrected"])
    assert under["mean_signed"] > 0 and abs(under["train_rate"] - 0.5) < 0.01
    assert (out / "reports/pp_bias_smote.csv").is_file()


def test_rerun_is_byte_identical_and_worker_independent(finished_run, tmp_path):
    _, first = finished_run
    again = small_config(tmp_path / "again", workers=3)
    run_all(again)
    cmd_bias_study(again)
    assert checksums(tmp_path / "again") == checksums(first)


def test_stages_rerun_from_intermediates(finished_run, tmp_path):
    config, out = finished_run
    copy = tmp_path / "copy"
    (copy / "data").mkdir(parents=True)
    for name in ("train.csv", "test.csv"):
        (copy / "data" / name).write_bytes((out / "data" / name).read_bytes())
    cfg = small_config(copy)
    cmd_train(cfg)
    cmd_evaluate(cfg)
    assert (copy / "reports/metrics.json").read_bytes() == (out / "reports/metrics.json").read_bytes()


def test_baseline_only_roster(tmp_path):
    cfg = small_config(tmp_path, models={"roster": ["baseline"]})
    cmd_simulate(cfg)
    result = cmd_train(cfg)
    assert result["trained"] == ["baseline"]
    assert sorted(p.name for p in (tmp_path / "models").iterdir()) == ["baseline.json", "scaler.json"]


def test_resampling_provenance_and_stage_isolation(finished_run, tmp_path):
    _, plain = finished_run
    cfg = small_config(tmp_path, resampling={"scheme": "random_undersample"},
                       models={"roster": ["baseline", "logistic_bag"], "overrides": FAST_MODELS})
    cmd_simulate(cfg)
    assert (tmp_path / "data/train.csv").read_bytes() == (plain / "data/train.csv").read_bytes()
    cmd_train(cfg)
    manifest = json.loads((tmp_path / "manifest_train.json").read_text())
    info = manifest["resampling"]
    assert info["scheme"] == "random_undersample" and info["target_minority_share"] == 0.5
    assert info["resampled_size"] == 2 * info["resampled_positives"]
    cmd_evaluate(cfg)
    rows = json.loads((tmp_path / "reports/metrics.json").read_text())["rows"]
    models = {r["model"] for r in rows}
    assert "logistic_bag+bias_corrected" in models
    test_rows = {r["model"]: r for r in rows if r["split"] == "test"}
    assert test_rows["logistic_bag+bias_corrected"]["mae"] < test_rows["logistic_bag"]["mae"]


def test_failures_are_isolated_per_model(tmp_path):
    cfg = small_config(tmp_path, models={"roster": ["baseline", "gbt"],
                                         "overrides": {"gbt": {"depth": 3}}})
    cmd_simulate(cfg)
    result = cmd_train(cfg)
    assert result["trained"] == ["baseline"]
    manifest = json.loads((tmp_path / "manifest_train.json").read_text())
    assert manifest["failures"][0]["model"] == "gbt"


def test_failed_stage_removes_partial_outputs(tmp_path):
    cfg = small_config(tmp_path, models={"roster": ["gbt"], "overrides": {"gbt": {"depth": 3}}})
    cmd_simulate(cfg)
    before = checksums(tmp_path)
    with pytest.raises(StageError):
        cmd_train(cfg)
    assert checksums(tmp_path) == before
    assert not (tmp_path / "models/scaler.json").exists()


def test_missing_latent_probabilities_only_warn(finished_run, tmp_path, caplog):
    _, out = finished_run
    copy = tmp_path / "nolatent"
    (copy / "data").mkdir(parents=True)
    for name in ("train.csv", "test.csv"):
        frame = pd.read_csv(out / "data" / name).drop(columns="true_p")
        frame.to_csv(copy / "data" / name, index=False)
    cfg = small_config(copy, models={"roster": ["baseline"]})
    cmd_train(cfg)
    with caplog.at_level(logging.WARNING):
        cmd_evaluate(cfg)
    assert "latent" in caplog.text
    rows = json.loads((copy / "reports/metrics.json").read_text())["rows"]
    assert all(r["mae"] is None for r in rows)


def test_missing_inputs_fail_cleanly(tmp_path):
    with pytest.raises(StageError, match="missing input"):
        cmd_train(small_config(tmp_path))


# ----------------------------------------------------------------------------- CLI

def test_cli_round_trip(tmp_path, capsys):
    cfg_file = tmp_path / "exp.yaml"
    cfg_file.write_text(yaml.safe_dump({"portfolio": {"n0": 300, "horizon": 4},
                                        "models": {"overrides": FAST_MODELS}}))
    out = tmp_path / "out"
    common = ["--config", str(cfg_file), "--seed", "3", "--out", str(out)]
    assert main(["simulate", *common]) == 0
    assert json.loads(capsys.readouterr().out)["command"] == "simulate"
    assert main(["train", *common, "--models", "baseline,gbt", "--resample", "smote"]) == 0
    assert json.loads(capsys.readouterr().out)["trained"] == ["baseline", "gbt"]
    assert main(["evaluate", *common, "--models", "baseline,gbt", "--jobs", "2"]) == 0
    capsys.readouterr()
    assert main(["bias-study", *common]) == 0


def test_cli_error_codes(tmp_path, capsys):
    assert main(["simulate", "--models", "baseline,svm", "--out", str(tmp_path)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError" and err["path"] == "models.roster[1]"
    assert main(["train", "--out", str(tmp_path / "empty")]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "StageError"
    with pytest.raises(SystemExit):
        main(["explode"])
