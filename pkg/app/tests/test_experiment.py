"""
Tests for the pipeline runner and experiment grids.
"""

import json
from pathlib import Path

import pytest
import yaml

from app.core.config import settings
from app.core.exceptions import DataError, StageError, UsageError
from app.schemas.experiment import ExperimentConfig, RunManifest
from app.services.corpus import generate_synthetic, write_corpus
from app.services.experiment import (
    ASSUMPTION_NOTES,
    CHECKPOINT_FILE,
    MANIFEST_FILE,
    PREDICTIONS_FILE,
    REFERENCE_ABLATION,
    check_constant_hyperparameters,
    compare_optimizers,
    load_experiment_config,
    load_manifest_config,
    manifest_hyperparameters,
    row_hyperparameters,
    run_ablation,
    run_dir_name,
    run_pipeline,
    stage,
)
from app.utils.hashing import sha256_file

TINY_MODEL = {"d_model": 16, "n_heads": 2, "d_ff": 32, "n_layers_enc": 1, "n_layers_dec": 1}
SHORT_TRAINING = {"epochs": 2, "batch_size": 8, "peak_lr": 1e-3}


@pytest.fixture
def corpus_file(tmp_path):
    return write_corpus(tmp_path / "train.tsv", generate_synthetic(32, 0.5, seed=5))


@pytest.fixture
def config(corpus_file, tmp_path) -> ExperimentConfig:
    return ExperimentConfig(
        train_file=corpus_file,
        output_dir=tmp_path / "runs",
        model=TINY_MODEL,
        train=SHORT_TRAINING,
        vocab_max_size=200,
        max_source_len=32,
        seed=3,
    )


class TestStage:
    """Test stage error wrapping."""

    def test_wraps_cause(self):
        with pytest.raises(StageError) as exc_info:
            with stage("split"):
                raise DataError("bad split")
        assert exc_info.value.stage == "split"
        assert exc_info.value.exit_code == 2
        assert "bad split" in str(exc_info.value)

    def test_stage_errors_pass_through(self):
        inner = StageError("train", ValueError("x"))
        with pytest.raises(StageError) as exc_info:
            with stage("outer"):
                raise inner
        assert exc_info.value is inner


class TestRunPipeline:
    """Test one end-to-end run on a synthetic corpus."""

    def test_smoke_run_writes_artifacts(self, config):
        manifest = run_pipeline(config)
        out = config.output_dir
        for name in (CHECKPOINT_FILE, PREDICTIONS_FILE, MANIFEST_FILE, "metrics.json", "confusion.svg", "vocab.txt"):
            assert (out / name).is_file(), name
        assert manifest.split.dev_size == 3
        assert len((out / PREDICTIONS_FILE).read_text().splitlines()) == 3
        assert manifest.artifacts[CHECKPOINT_FILE] == sha256_file(out / CHECKPOINT_FILE)
        assert 1 <= manifest.best_epoch <= 2
        assert set(manifest.metrics["macro"]) == {"precision", "recall", "f1"}
        assert manifest.seeds["split"] == 3
        assert manifest.config["optimizers"] == ["adam"]

    def test_rerun_is_identical(self, config, tmp_path):
        run_pipeline(config, output_dir=tmp_path / "a")
        run_pipeline(config, output_dir=tmp_path / "b")
        for name in ("metrics.json", CHECKPOINT_FILE, PREDICTIONS_FILE, "split.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_manifest_reproduces_config(self, config):
        run_pipeline(config, optimizer="adamw", dev_fraction=0.2)
        restored = load_manifest_config(config.output_dir / MANIFEST_FILE)
        assert restored.optimizers == ["adamw"]
        assert restored.dev_fraction == 0.2
        assert restored.train == SHORT_TRAINING

    def test_missing_train_file(self, config, tmp_path):
        missing = tmp_path / "absent.tsv"
        with pytest.raises(StageError) as exc_info:
            run_pipeline(config.model_copy(update={"train_file": missing}))
        assert exc_info.value.stage == "ingest"
        assert exc_info.value.exit_code == 2
        assert str(missing) in str(exc_info.value)

    def test_invalid_utf8_train_file(self, config, tmp_path):
        bad = tmp_path / "latin1.tsv"
        bad.write_bytes(b"1\t@@1\tmigrant\tgb\tna\xefve reader\t0\n")
        with pytest.raises(StageError) as exc_info:
            run_pipeline(config.model_copy(update={"train_file": bad}))
        assert exc_info.value.stage == "ingest"
        assert exc_info.value.exit_code == 2

    def test_empty_dev_split_fails_in_train(self, config):
        with pytest.raises(StageError) as exc_info:
            run_pipeline(config, dev_fraction=0.01)
        assert exc_info.value.stage == "train"

    def test_holdout_preset_lands_in_dev(self, config, tmp_path, monkeypatch):
        preset_dir = tmp_path / "presets"
        preset_dir.mkdir()
        (preset_dir / "pair.txt").write_text("syn5-00000\nsyn5-00001\n")
        monkeypatch.setattr(settings, "holdout_dir", preset_dir)

        manifest = run_pipeline(config.model_copy(update={"holdout_preset": "pair"}))
        assert manifest.split.holdout_preset == "pair"
        assert manifest.split.holdout_ids == ["syn5-00000", "syn5-00001"]
        assert manifest.split.dev_size_before_holdout == 3
        assert 3 <= manifest.split.dev_size <= 5
        assert manifest.config["holdout_preset"] == "pair"

    def test_unknown_holdout_preset_fails_in_split(self, config, tmp_path, monkeypatch):
        monkeypatch.setattr(settings, "holdout_dir", tmp_path)
        with pytest.raises(StageError) as exc_info:
            run_pipeline(config.model_copy(update={"holdout_preset": "absent"}))
        assert exc_info.value.stage == "split"
        assert exc_info.value.exit_code == 2


class TestConfigLoading:
    """Test YAML experiment configs."""

    def test_overrides_win(self, corpus_file, tmp_path):
        path = tmp_path / "exp.yaml"
        path.write_text(yaml.safe_dump({"train_file": str(corpus_file), "seed": 1, "dev_fraction": 0.1}))
        config = load_experiment_config(path, {"seed": 9, "dev_fraction": None})
        assert config.seed == 9
        assert config.dev_fraction == 0.1

    def test_missing_file(self, tmp_path):
        with pytest.raises(UsageError, match="not found"):
            load_experiment_config(tmp_path / "nope.yaml")

    def test_unknown_key(self, corpus_file, tmp_path):
        path = tmp_path / "exp.yaml"
        path.write_text(yaml.safe_dump({"train_file": str(corpus_file), "learning_rate": 1}))
        with pytest.raises(UsageError, match="invalid config"):
            load_experiment_config(path)

    def test_not_a_mapping(self, tmp_path):
        path = tmp_path / "exp.yaml"
        path.write_text("- a\n- b\n")
        with pytest.raises(UsageError):
            load_experiment_config(path)


class TestGrids:
    """Test ablation and optimizer-comparison grids."""

    def test_run_dir_names(self):
        assert run_dir_name("adam", 0.05) == "adam-dev05"
        assert run_dir_name("adamw", 0.2) == "adamw-dev20"
        assert run_dir_name("adam", 0.12) == "adam-dev12"
        assert run_dir_name("adam", 0.125) == "adam-dev12p5"

    def test_colliding_run_dirs_rejected(self, config):
        with pytest.raises(UsageError, match="share run directory"):
            run_ablation(config.model_copy(update={"fractions": [0.10, 0.10]}))
        assert not config.output_dir.exists()

    def test_optimizer_is_allowed_to_vary(self, config):
        rows = [row_hyperparameters(config, opt) for opt in ("adam", "adamw")]
        shared = check_constant_hyperparameters(rows)
        assert shared["train.epochs"] == 2
        assert "train.optimizer" not in shared
        assert "dev_fraction" not in shared

    def test_differing_rows_rejected(self):
        with pytest.raises(UsageError, match="train.epochs"):
            check_constant_hyperparameters([{"train.epochs": 1}, {"train.epochs": 2}])

    def test_ablation_grid(self, config):
        report = run_ablation(config)
        assert [row.dev_fraction for row in report.rows] == [0.05, 0.10, 0.15, 0.20]
        assert all(row.status == "ok" for row in report.rows)
        for row in report.rows:
            reference = REFERENCE_ABLATION[row.dev_fraction]
            assert (row.reference_precision, row.reference_recall, row.reference_f1) == reference
            assert 0.0 <= row.f1 <= 1.0
        base = config.output_dir
        assert (base / "adam-dev05" / MANIFEST_FILE).is_file()
        saved = json.loads((base / "ablation.json").read_text(encoding="utf-8"))
        assert saved["kind"] == "ablation"
        assert len(saved["rows"]) == 4
        assert "notes:" in (base / "ablation.txt").read_text(encoding="utf-8")

    def test_ablation_checks_recorded_manifests(self, config):
        report = run_ablation(config.model_copy(update={"fractions": [0.10, 0.20]}))
        shared = report.constant_hyperparameters
        assert shared["train.epochs"] == 2
        assert shared["model.d_model"] == 16
        assert shared["seeds.split"] == 3
        assert "dev_fraction" not in shared
        assert "optimizers" not in shared

        manifests = [
            RunManifest.model_validate_json((Path(row.run_dir) / MANIFEST_FILE).read_text(encoding="utf-8"))
            for row in report.rows
        ]
        recorded = manifests[1].config
        drifted = manifests[1].model_copy(update={"config": {**recorded, "train": {**recorded["train"], "epochs": 3}}})
        with pytest.raises(UsageError, match="train.epochs"):
            check_constant_hyperparameters([manifest_hyperparameters(m) for m in (manifests[0], drifted)])

    def test_failed_row_is_recorded(self, config):
        report = run_ablation(config.model_copy(update={"fractions": [0.01, 0.25]}))
        assert [row.status for row in report.rows] == ["failed", "ok"]
        assert "empty dev set" in report.rows[0].error
        assert report.rows[0].f1 is None
        assert any("failed" in note for note in report.notes)

    def test_single_optimizer_comparison(self, config):
        report = compare_optimizers(config)
        assert report.kind == "optimizer_comparison"
        assert len(report.rows) == 1
        assert report.notes == list(ASSUMPTION_NOTES)
        assert (config.output_dir / "compare-adam" / MANIFEST_FILE).is_file()

    def test_two_optimizer_comparison(self, config):
        report = compare_optimizers(config.model_copy(update={"optimizers": ["adam", "adamw"]}))
        assert [row.optimizer for row in report.rows] == ["adam", "adamw"]
        assert report.rows[1].reference_f1 == 0.5282
        assert report.notes[0].startswith("adam and adamw share split seed 3")
