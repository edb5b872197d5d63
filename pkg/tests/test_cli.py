import json

import numpy as np
import pytest

from ctxfact.cli import OUTPUT_ENV, RunConfig, ConfigError, main
from ctxfact.models import load_model

SYNTH = {"synthetic": {"m": 50, "n": 16, "features": [["time", 3], ["weather", 2, True]], "seed": 2, "per_user": 6}}


def config(tmp_path, name="cfg.json", **overrides):
    data = {"dataset": SYNTH, "model": "iTALSs-one", "hyperparams": {"k": 3, "iterations": 2},
            "seeds": [0, 1], "workers": 1}
    data.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def test_unknown_model_kind_exits_2(tmp_path, capsys):
    assert main(["evaluate", config(tmp_path, model="iTALQ"), "-o", str(tmp_path / "o")]) == 2
    assert "model" in capsys.readouterr().err


@pytest.mark.parametrize(
    "overrides",
    [{"colour": 1}, {"hyperparams": {"k": 0}}, {"model": "iTALSx", "hyperparams": {"structure": "multi"}},
     {"hyperparams": {"cg_steps": 2}}, {"grid": {"params": {"alpha": []}}}, {"seeds": []},
     {"dataset": {"parquet": "x"}}],
)
def test_invalid_configs_exit_2(tmp_path, overrides):
    assert main(["evaluate", config(tmp_path, **overrides), "-o", str(tmp_path / "o")]) == 2


def test_unreadable_config_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["train", str(bad)]) == 2
    assert main(["train", str(tmp_path / "missing.json")]) == 2


def test_runtime_failure_exits_1(tmp_path):
    cfg = config(tmp_path, dataset={"canonical": str(tmp_path / "nowhere.csv")})
    assert main(["evaluate", cfg, "-o", str(tmp_path / "o")]) == 1


def test_experiment_writes_report_and_manifest(tmp_path):
    out = tmp_path / "run"
    assert main(["experiment", config(tmp_path), "-o", str(out)]) == 0
    rows = (out / "report.tsv").read_text().splitlines()
    assert rows[0] == "metric\tk\tmean\tstd"
    # two metrics x two cutoffs, each row carrying mean and std
    assert len(rows) == 5 and all(len(r.split("\t")) == 4 for r in rows)
    manifest = json.loads((out / "manifest.json").read_text())
    assert {"config_sha256", "versions", "wall_time_seconds"} <= set(manifest)
    assert "report.tsv" in manifest["outputs"]
    assert load_model(out / "model.json").k == 3


def test_identical_runs_give_identical_reports(tmp_path):
    cfg = config(tmp_path, grid={"params": {"lam": [0.1, 1.0]}, "objective": ["HR", 5]})
    for run in ("a", "b"):
        assert main(["experiment", cfg, "-o", str(tmp_path / run)]) == 0
    for name in ("report.tsv", "report.json", "leaderboard.tsv", "model.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert main(["evaluate", config(tmp_path)]) == 0
    assert (tmp_path / "env" / "report.tsv").exists()


def test_flags_override_config(tmp_path):
    out = tmp_path / "o"
    assert main(["evaluate", config(tmp_path), "-o", str(out), "--model", "WMF", "--seeds", "4"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["model"] == "WMF" and manifest["config"]["seeds"] == [4]


def test_preprocess_and_grid(tmp_path):
    assert main(["preprocess", config(tmp_path), "-o", str(tmp_path / "p")]) == 0
    canon = {"canonical": str(tmp_path / "p" / "interactions.csv")}
    cfg = config(tmp_path, "g.json", dataset=canon, grid={"params": {"alpha": [1.0, 5.0]}})
    assert main(["grid", cfg, "-o", str(tmp_path / "g")]) == 0
    best = json.loads((tmp_path / "g" / "best_hyperparams.json").read_text())
    assert best["alpha"] in (1.0, 5.0)
    assert len((tmp_path / "g" / "leaderboard.tsv").read_text().splitlines()) == 3


@pytest.fixture
def base_model(tmp_path):
    cfg = config(tmp_path, "wmf.json", model="WMF", split_seed=0)
    assert main(["train", cfg, "-o", str(tmp_path / "base")]) == 0
    return tmp_path / "base" / "model.json"


def test_posthoc_freezes_base_factors(tmp_path, base_model):
    cfg = config(tmp_path, "ph.json", model="WTF-one", posthoc_models=["WTF-one", "iTALS-one"],
                 base_model=str(base_model), split_seed=0)
    assert main(["posthoc", cfg, "-o", str(tmp_path / "ph")]) == 0
    base = load_model(base_model)
    for name in ("WTF-one", "iTALS-one"):
        fitted = load_model(tmp_path / "ph" / f"posthoc_{name}.model.json")
        assert np.array_equal(fitted.P, base.P) and np.array_equal(fitted.Q, base.Q)


def test_posthoc_k_mismatch_exits_2(tmp_path, base_model, capsys):
    cfg = config(tmp_path, "ph.json", model="WTF-one", base_model=str(base_model),
                 hyperparams={"k": 4})
    assert main(["posthoc", cfg, "-o", str(tmp_path / "ph")]) == 2
    assert "k=4" in capsys.readouterr().err


def test_posthoc_missing_base_exits_2(tmp_path):
    cfg = config(tmp_path, "ph.json", model="WTF-one", base_model=str(tmp_path / "none.json"))
    assert main(["posthoc", cfg, "-o", str(tmp_path / "ph")]) == 2


def test_posthoc_percentage_column(tmp_path):
    ref = tmp_path / "ref.json"
    ref.write_text(json.dumps({"metrics": [
        {"metric": m, "k": k, "values": [0.5]} for m in ("HR", "MRR") for k in (5, 20)]}))
    cfg = config(tmp_path, "ph.json", model="iTALSs-one", base_hyperparams={"k": 3, "iterations": 2},
                 reference_report=str(ref))
    assert main(["posthoc", cfg, "-o", str(tmp_path / "ph")]) == 0
    rows = [r.split("\t") for r in (tmp_path / "ph" / "posthoc_iTALSs-one.tsv").read_text().splitlines()]
    assert rows[0][-1] == "pct_of_reference"
    for row in rows[1:]:
        assert float(row[-1]) == pytest.approx(100 * float(row[2]) / 0.5, abs=0.06)


def test_report_command(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["evaluate", config(tmp_path), "-o", str(out)]) == 0
    capsys.readouterr()
    assert main(["report", str(out / "report.json"), "--reference-report", str(out / "report.json")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split("\t") == ["report", "HR@5", "HR@20", "MRR@5", "MRR@20"]
    assert "[100%]" in lines[1]


def test_run_config_defaults():
    cfg = RunConfig.from_dict({"dataset": SYNTH})
    assert cfg.seeds == [0, 1, 2, 3, 4] and cfg.k_list == [5, 20]
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"model": "WMF"})
