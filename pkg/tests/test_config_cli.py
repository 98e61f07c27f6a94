"""Config schema/hashing/overrides, stage caching, and the CLI surface."""

from __future__ import annotations

import json
import logging

import pytest
import yaml
from click.testing import CliRunner

from hartransfer import pipeline
from hartransfer.cli import main
from hartransfer.config import (
    apply_override,
    config_hash,
    default_config,
    load_config,
    stage_hash,
    validate_config,
)
from hartransfer.errors import ConfigurationError, DependencyError


# ---------------------------------------------------------------------------
# Config schema and hashing
# ---------------------------------------------------------------------------


def test_default_config_validates_cleanly():
    assert validate_config(default_config()) == []


def test_config_hash_is_stable_under_key_reordering():
    config = default_config()
    reordered = json.loads(json.dumps(config, sort_keys=True))
    shuffled = dict(reversed(list(reordered.items())))
    assert config_hash(config) == config_hash(shuffled)


def test_config_hash_changes_with_any_value():
    a = default_config()
    b = default_config()
    b["student"]["lr"] = 123.0
    assert config_hash(a) != config_hash(b)


def test_override_parses_types_through_yaml():
    config = default_config()
    apply_override(config, "student.lr=1e-4")
    apply_override(config, "ablation.simclr_loss=false")
    apply_override(config, "seeds=[7, 8]")
    assert config["student"]["lr"] == 1e-4
    assert config["ablation"]["simclr_loss"] is False
    assert config["seeds"] == [7, 8]


def test_override_rejects_unknown_keys_and_bad_syntax():
    config = default_config()
    with pytest.raises(ConfigurationError):
        apply_override(config, "student.momentum=0.9")
    with pytest.raises(ConfigurationError):
        apply_override(config, "nosuchsection.lr=1")
    with pytest.raises(ConfigurationError):
        apply_override(config, "student.lr")


def test_load_config_merges_yaml_over_defaults(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump({"student": {"lr": 2e-4}, "seeds": [3]}))
    config = load_config(path, overrides=["teacher.epochs=7"])
    assert config["student"]["lr"] == 2e-4
    assert config["student"]["batch_size"] == 256  # untouched default
    assert config["seeds"] == [3]
    assert config["teacher"]["epochs"] == 7


def test_validate_config_flags_errors_and_warnings():
    config = default_config()
    config["pseudo_label_threshold"] = 1.5
    config["encoder"] = "resnet"
    config["loss_weights"]["lambda1"] = -1
    diags = validate_config(config)
    assert any(d.startswith("error:") and "pseudo_label_threshold" in d for d in diags)
    assert any(d.startswith("error:") and "encoder" in d for d in diags)
    assert any(d.startswith("error:") and "lambda1" in d for d in diags)

    deviation = default_config()
    deviation["pseudo_label_threshold"] = 0.5
    diags = validate_config(deviation)
    assert any(d.startswith("warning:") for d in diags)
    assert not any(d.startswith("error:") for d in diags)


def test_stage_hash_ignores_unrelated_config_slices():
    a = default_config()
    b = default_config()
    b["fewshot"]["lr"] = 9.9  # downstream of the teacher stage
    assert stage_hash(a, "teacher", 0, 0) == stage_hash(b, "teacher", 0, 0)
    b["teacher"]["lr"] = 9.9
    assert stage_hash(a, "teacher", 0, 0) != stage_hash(b, "teacher", 0, 0)


def test_stage_hash_separates_seeds_folds_and_stages():
    c = default_config()
    assert stage_hash(c, "teacher", 0, 0) != stage_hash(c, "teacher", 1, 0)
    assert stage_hash(c, "teacher", 0, 0) != stage_hash(c, "teacher", 0, 1)
    assert stage_hash(c, "teacher", 0, 0) != stage_hash(c, "pseudolabel", 0, 0)


# ---------------------------------------------------------------------------
# Stage caching
# ---------------------------------------------------------------------------


def test_teacher_stage_cache_hit_and_invalidation(
    tiny_config, small_source, small_target, tmp_path, caplog
):
    run_dir = tmp_path / "run"
    first = pipeline.run_teacher_stage(tiny_config, small_source, small_target, 0, 0, run_dir)
    with caplog.at_level(logging.INFO):
        second = pipeline.run_teacher_stage(tiny_config, small_source, small_target, 0, 0, run_dir)
    assert "cache hit" in caplog.text
    assert first.config_hash == second.config_hash

    # Changing a teacher hyperparameter invalidates the cached artifact.
    tiny_config["teacher"]["lr"] = 2e-3
    caplog.clear()
    with caplog.at_level(logging.INFO):
        third = pipeline.run_teacher_stage(tiny_config, small_source, small_target, 0, 0, run_dir)
    assert "cache hit" not in caplog.text
    assert third.config_hash != first.config_hash


def test_downstream_stage_requires_fresh_upstream(
    tiny_config, small_source, small_target, tmp_path
):
    run_dir = tmp_path / "run"
    with pytest.raises(DependencyError, match="teacher"):
        pipeline.run_pseudolabel_stage(tiny_config, small_source, small_target, 0, 0, run_dir)

    pipeline.run_teacher_stage(tiny_config, small_source, small_target, 0, 0, run_dir)
    pipeline.run_pseudolabel_stage(tiny_config, small_source, small_target, 0, 0, run_dir)

    # A config change upstream makes the cached teacher stale for downstream.
    tiny_config["teacher"]["lr"] = 3e-3
    with pytest.raises(DependencyError, match="teacher"):
        pipeline.run_pseudolabel_stage(tiny_config, small_source, small_target, 0, 0, run_dir)


def test_manifest_records_stage_metadata(tiny_config, small_source, small_target, tmp_path):
    run_dir = tmp_path / "run"
    pipeline.run_teacher_stage(tiny_config, small_source, small_target, 0, 0, run_dir)
    manifest = json.loads((run_dir / "teacher" / "teacher_fold0_seed0.pt.manifest.json").read_text())
    assert manifest["stage"] == "teacher"
    assert manifest["seed"] == 0 and manifest["fold"] == 0
    assert manifest["stage_hash"] == stage_hash(tiny_config, "teacher", 0, 0)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def _tiny_yaml(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump({
        "seeds": [0],
        "folds": [0],
        "n_per_class": [2],
        "teacher": {"epochs": 8, "patience": 8, "batch_size": 128},
        "student": {"epochs": 2, "patience": 2, "batch_size": 64},
        "fewshot": {"epochs": 5},
        "synthetic": {
            "source": {"n_users": 6, "windows_per_class": 4},
            "target": {"n_users": 6, "windows_per_class": 6},
        },
    }))
    return path


def test_cli_ingest_reports_bundle_summaries(tmp_path):
    runner = CliRunner()
    result = runner.invoke(main, ["ingest", "--config", str(_tiny_yaml(tmp_path))])
    assert result.exit_code == 0, result.output
    assert "synthetic_source" in result.output and "synthetic_target" in result.output


def test_cli_stage_chain_and_fewshot(tmp_path):
    runner = CliRunner()
    config = str(_tiny_yaml(tmp_path))
    run_dir = str(tmp_path / "run")
    for command in ("teacher", "pseudolabel", "student"):
        result = runner.invoke(main, [command, "--config", config, "--run-dir", run_dir])
        assert result.exit_code == 0, f"{command}: {result.output}\n{result.exception}"
    result = runner.invoke(main, ["fewshot", "--config", config, "--run-dir", run_dir])
    assert result.exit_code == 0, result.output
    assert "method=crossdomain" in result.output
    assert (tmp_path / "run" / "results" / "crossdomain" / "synthetic_target" / "summary.json").exists()


def test_cli_student_without_teacher_names_the_missing_stage(tmp_path):
    runner = CliRunner()
    result = runner.invoke(
        main, ["student", "--config", str(_tiny_yaml(tmp_path)),
               "--run-dir", str(tmp_path / "fresh")],
    )
    assert result.exit_code != 0
    assert isinstance(result.exception, DependencyError)
    assert "teacher" in str(result.exception)


def test_cli_rejects_invalid_overrides(tmp_path):
    runner = CliRunner()
    result = runner.invoke(main, ["ingest", "--config", str(_tiny_yaml(tmp_path)),
                                  "--set", "teacher.lr=-1"])
    assert result.exit_code != 0


def test_cli_report_requires_results(tmp_path):
    runner = CliRunner()
    result = runner.invoke(main, ["report", "--run-dir", str(tmp_path / "nothing")])
    assert result.exit_code != 0
    assert "no results" in result.output


def test_raw_csv_datasets_are_ingested_and_cached(tmp_path):
    from hartransfer.synthetic import write_synthetic_dataset

    root = tmp_path / "datasets"
    write_synthetic_dataset(root, kind="source")
    # Rename so the pipeline takes the raw-CSV path instead of the
    # in-memory synthetic generator.
    (root / "synthetic_source").rename(root / "csvsource")
    config = load_config(None)
    config["datasets_root"] = str(root)
    bundle = pipeline._prepare_bundle(config, "csvsource")
    assert bundle.name == "csvsource"
    assert bundle.n_classes == 6
    assert len(bundle.folds) == 5
    caches = list(root.glob("csvsource_*.npz"))
    assert len(caches) == 1
    # Second call loads the cache and yields the same windows.
    again = pipeline._prepare_bundle(config, "csvsource")
    assert len(again.windows) == len(bundle.windows)
    assert again.folds == bundle.folds


def test_cli_seed_flag_restricts_the_seed_list(tmp_path):
    runner = CliRunner()
    config = str(_tiny_yaml(tmp_path))
    run_dir = str(tmp_path / "run")
    result = runner.invoke(main, ["teacher", "--config", config,
                                  "--run-dir", run_dir, "--seed", "3"])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "run" / "teacher" / "teacher_fold0_seed3.pt").exists()
