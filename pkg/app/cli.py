"""
PCLab command line.

    python -m app.cli synth --out data/synthetic.tsv
    python -m app.cli run --config configs/synthetic.yaml
    python -m app.cli ablate --config configs/synthetic.yaml --workers 2

Exit codes: 0 success, 1 usage error, 2 data error, 3 training failure.
"""

import functools
import json
import sys
from pathlib import Path
from typing import List, Optional

import click
from pydantic import ValidationError

from app.core.config import settings
from app.core.exceptions import DataError, PCLabError, UsageError
from app.core.logging import configure_logging
from app.schemas.experiment import ModelConfig, SplitSpec, TrainConfig
from app.services import corpus as corpus_service
from app.services import experiment
from app.services.checkpoint import load_checkpoint, save_checkpoint
from app.services.metrics import error_table, error_table_text, evaluate, report_text, write_reports
from app.services.predictor import predict_file, write_audit_file, write_label_file
from app.services.splitter import SPLIT_PRESETS, resolve_holdout_ids, split, split_manifest
from app.services.textprep import clean_records
from app.services.tokenizer import build_vocab, save_vocab
from app.services.trainer import encode_records, train
from app.utils.io import write_json, write_jsonl, write_text


class CommandError(click.ClickException):
    """A PCLab error surfaced through click with its own exit code."""

    def __init__(self, error: PCLabError):
        super().__init__(str(error))
        self.exit_code = error.exit_code


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PCLabError as e:
            raise CommandError(e) from e
        except ValidationError as e:
            raise CommandError(UsageError(str(e))) from e
        except (OSError, UnicodeDecodeError) as e:
            raise CommandError(DataError(str(e))) from e
    return wrapper


def _parse_fractions(value: Optional[str]) -> Optional[List[float]]:
    if value is None:
        return None
    try:
        return [float(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {value!r}") from None


seed_option = click.option("--seed", type=int, default=None, help="Global seed (default from settings)")
skip_lines_option = click.option(
    "--skip-lines", type=int, default=None, help="Preamble lines to skip (default from settings)"
)


def _skip(skip_lines: Optional[int]) -> int:
    return settings.corpus_skip_lines if skip_lines is None else skip_lines


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Log at DEBUG level")
def cli(verbose: bool):
    """Desk-scale patronizing-language detection lab."""
    configure_logging("DEBUG" if verbose else None)


@cli.command()
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@click.option("--n", "n_records", type=int, default=32, show_default=True)
@click.option("--pos-rate", type=float, default=0.5, show_default=True)
@seed_option
@handle_errors
def synth(out_path: Path, n_records: int, pos_rate: float, seed: Optional[int]):
    """Write a labeled synthetic corpus."""
    seed = settings.seed if seed is None else seed
    records = corpus_service.generate_synthetic(n_records, pos_rate, seed)
    corpus_service.write_corpus(out_path, records)
    stats = corpus_service.corpus_stats(records)
    click.echo(f"wrote {stats.total} records ({stats.pos} positive) to {out_path}")


@cli.command()
@click.argument("corpus_path", type=click.Path(path_type=Path))
@skip_lines_option
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=None, help="Write the profile as JSON")
@handle_errors
def ingest(corpus_path: Path, skip_lines: Optional[int], out_path: Optional[Path]):
    """Parse a labeled corpus and report class counts."""
    records = corpus_service.read_corpus(corpus_path, skip_lines=_skip(skip_lines))
    profile = corpus_service.corpus_profile(records)
    if out_path is not None:
        write_json(out_path, profile.model_dump(mode="json"))
    summary = profile.summary
    click.echo(f"total={summary.total} neg={summary.neg} pos={summary.pos} pos_share={profile.pos_share:.4f}")
    for note in profile.notes:
        click.echo(f"note: {note}")


@cli.command()
@click.argument("corpus_path", type=click.Path(path_type=Path))
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@click.option("--reports", "reports_path", type=click.Path(path_type=Path), default=None)
@click.option("--no-labels", is_flag=True, help="Corpus has no label column")
@skip_lines_option
@handle_errors
def clean(corpus_path: Path, out_path: Path, reports_path: Optional[Path], no_labels: bool, skip_lines: Optional[int]):
    """Clean paragraph texts."""
    records = corpus_service.read_corpus(corpus_path, has_labels=not no_labels, skip_lines=_skip(skip_lines))
    cleaned, reports = clean_records(records)
    corpus_service.write_corpus(out_path, cleaned)
    if reports_path is None:
        reports_path = out_path.with_suffix(".reports.jsonl")
    write_jsonl(
        reports_path,
        ({"par_id": r.par_id, **rep.model_dump()} for r, rep in zip(cleaned, reports)),
    )
    click.echo(f"cleaned {len(cleaned)} records into {out_path}")


@cli.command("split")
@click.argument("corpus_path", type=click.Path(path_type=Path))
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
@click.option("--dev-fraction", type=float, default=None)
@click.option("--preset", type=click.Choice(sorted(SPLIT_PRESETS)), default=None)
@click.option("--holdout", "holdout_ids", multiple=True, help="par_id forced into dev (repeatable)")
@click.option("--holdout-preset", default=None, help="Named list of par_ids forced into dev")
@click.option("--stratify", is_flag=True)
@seed_option
@handle_errors
def split_command(
    corpus_path: Path,
    out_dir: Path,
    dev_fraction: Optional[float],
    preset: Optional[str],
    holdout_ids: tuple,
    holdout_preset: Optional[str],
    stratify: bool,
    seed: Optional[int],
):
    """Split a cleaned corpus into train.tsv and dev.tsv."""
    if dev_fraction is None:
        dev_fraction = SPLIT_PRESETS[preset] if preset else SPLIT_PRESETS["submission"]
    spec = SplitSpec(
        dev_fraction=dev_fraction,
        seed=settings.seed if seed is None else seed,
        holdout_ids=resolve_holdout_ids(holdout_ids, holdout_preset),
        holdout_preset=holdout_preset,
        stratify=stratify,
    )
    records = corpus_service.read_corpus(corpus_path)
    train_records, dev_records = split(records, spec)
    corpus_service.write_corpus(out_dir / "train.tsv", train_records)
    corpus_service.write_corpus(out_dir / "dev.tsv", dev_records)
    write_json(out_dir / "split.json", split_manifest(records, spec, train_records, dev_records).model_dump(mode="json"))
    click.echo(f"train={len(train_records)} dev={len(dev_records)} -> {out_dir}")


@cli.command("train")
@click.argument("train_path", type=click.Path(path_type=Path))
@click.argument("dev_path", type=click.Path(path_type=Path))
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
@click.option("--optimizer", type=click.Choice(["adam", "adamw"]), default="adam", show_default=True)
@click.option("--epochs", type=int, default=None)
@click.option("--peak-lr", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--vocab-max-size", type=int, default=8000, show_default=True)
@seed_option
@handle_errors
def train_command(
    train_path: Path,
    dev_path: Path,
    out_dir: Path,
    optimizer: str,
    epochs: Optional[int],
    peak_lr: Optional[float],
    batch_size: Optional[int],
    vocab_max_size: int,
    seed: Optional[int],
):
    """Train on cleaned train/dev files and save the best checkpoint."""
    seed = settings.seed if seed is None else seed
    train_records = corpus_service.read_corpus(train_path)
    dev_records = corpus_service.read_corpus(dev_path)
    vocab = build_vocab((r.text for r in train_records), vocab_max_size)

    overrides = {"epochs": epochs, "peak_lr": peak_lr, "batch_size": batch_size}
    train_config = TrainConfig(optimizer=optimizer, seed=seed, **{k: v for k, v in overrides.items() if v is not None})
    model_config = ModelConfig(vocab_size=len(vocab), max_seq_len=settings.max_source_len, seed=seed)
    checkpoint = train(
        model_config,
        train_config,
        encode_records(train_records, vocab, settings.max_source_len),
        encode_records(dev_records, vocab, settings.max_source_len),
        vocab,
    )
    save_checkpoint(checkpoint, out_dir / experiment.CHECKPOINT_FILE)
    save_vocab(vocab, out_dir / experiment.VOCAB_FILE)
    click.echo(f"best epoch {checkpoint.epoch} (dev loss {checkpoint.val_loss:.6f}) -> {out_dir}")


@cli.command()
@click.argument("checkpoint_path", type=click.Path(path_type=Path))
@click.argument("corpus_path", type=click.Path(path_type=Path))
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True, help="Label file")
@click.option("--audit", "audit_path", type=click.Path(path_type=Path), default=None, help="JSON-lines audit file")
@click.option("--fallback-class", type=click.IntRange(0, 1), default=None)
@click.option("--max-len", type=int, default=4, show_default=True)
@click.option("--no-labels", is_flag=True, help="Corpus has no label column")
@handle_errors
def predict(
    checkpoint_path: Path,
    corpus_path: Path,
    out_path: Path,
    audit_path: Optional[Path],
    fallback_class: Optional[int],
    max_len: int,
    no_labels: bool,
):
    """Predict labels for a cleaned corpus."""
    checkpoint = load_checkpoint(checkpoint_path)
    records = corpus_service.read_corpus(corpus_path, has_labels=not no_labels)
    fallback = settings.fallback_class if fallback_class is None else fallback_class
    result = predict_file(checkpoint, records, max_len=max_len, fallback=fallback)
    write_label_file(out_path, result.predictions)
    write_audit_file(audit_path or out_path.with_suffix(".jsonl"), result.predictions)
    click.echo(f"{len(result.predictions)} predictions, out-of-class rate {result.out_of_class_rate:.4f}")


@cli.command("evaluate")
@click.argument("predictions_path", type=click.Path(path_type=Path))
@click.argument("gold_path", type=click.Path(path_type=Path))
@click.option("--out-dir", type=click.Path(path_type=Path), default=None)
@click.option("--disagreements", is_flag=True, help="Error table lists only wrong predictions")
@handle_errors
def evaluate_command(predictions_path: Path, gold_path: Path, out_dir: Optional[Path], disagreements: bool):
    """Score a label file against a labeled corpus."""
    if not predictions_path.is_file():
        raise DataError(f"predictions file not found: {predictions_path}")
    lines = predictions_path.read_text(encoding="utf-8").split("\n")
    try:
        preds = [int(line) for line in lines if line.strip()]
    except ValueError as e:
        raise DataError(f"bad label in {predictions_path}: {e}") from None
    records = corpus_service.read_corpus(gold_path)
    golds = [r.binary_label for r in records]
    report = evaluate(preds, golds)
    click.echo(report_text(report), nl=False)
    if out_dir is not None:
        write_reports(report, out_dir)
        table = error_table(preds, records, golds, disagreements_only=disagreements)
        write_text(out_dir / experiment.ERROR_TABLE_FILE, error_table_text(table))


def _experiment_overrides(seed, dev_fraction, optimizer, fallback_class, output_dir, holdout_preset=None) -> dict:
    return {
        "holdout_preset": holdout_preset,
        "seed": seed,
        "dev_fraction": dev_fraction,
        "optimizers": [optimizer] if optimizer else None,
        "fallback_class": fallback_class,
        "output_dir": output_dir,
    }


def experiment_options(fn):
    for option in reversed([
        click.option("--config", "config_path", type=click.Path(path_type=Path), default=None, help="YAML config"),
        seed_option,
        click.option("--dev-fraction", type=float, default=None),
        click.option("--optimizer", type=click.Choice(["adam", "adamw"]), default=None),
        click.option("--fallback-class", type=click.IntRange(0, 1), default=None),
        click.option("--output-dir", type=click.Path(path_type=Path), default=None),
        click.option("--holdout-preset", default=None, help="Named list of par_ids forced into dev"),
    ]):
        fn = option(fn)
    return fn


def _load_config(config_path: Optional[Path], overrides: dict):
    if config_path is None:
        raise UsageError("--config is required")
    return experiment.load_experiment_config(config_path, overrides)


@cli.command()
@experiment_options
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), default=None,
              help="Re-run the effective config of an earlier run")
@handle_errors
def run(config_path, seed, dev_fraction, optimizer, fallback_class, output_dir, holdout_preset, manifest_path):
    """Run the whole pipeline once."""
    overrides = _experiment_overrides(seed, dev_fraction, optimizer, fallback_class, output_dir, holdout_preset)
    if manifest_path is not None:
        config = experiment.load_manifest_config(manifest_path)
        update = {k: v for k, v in overrides.items() if v is not None}
        config = config.model_validate({**config.model_dump(), **update})
    else:
        config = _load_config(config_path, overrides)
    manifest = experiment.run_pipeline(config)
    click.echo(json.dumps(manifest.metrics["macro"], sort_keys=True))
    click.echo(f"run directory: {manifest.config['output_dir']}")


@cli.command()
@experiment_options
@click.option("--fractions", default=None, help="Comma-separated dev fractions, e.g. 0.05,0.10")
@click.option("--workers", type=int, default=1, show_default=True)
@handle_errors
def ablate(config_path, seed, dev_fraction, optimizer, fallback_class, output_dir, holdout_preset, fractions, workers):
    """Retrain for every dev fraction (and optimizer) in the grid."""
    overrides = _experiment_overrides(seed, dev_fraction, optimizer, fallback_class, output_dir, holdout_preset)
    overrides["fractions"] = _parse_fractions(fractions)
    config = _load_config(config_path, overrides)
    report = experiment.run_ablation(config, workers=workers)
    click.echo(experiment.grid_text(report), nl=False)


@cli.command("compare-optimizers")
@experiment_options
@click.option("--workers", type=int, default=1, show_default=True)
@handle_errors
def compare_optimizers_command(
    config_path, seed, dev_fraction, optimizer, fallback_class, output_dir, holdout_preset, workers
):
    """Adam and AdamW side by side on the same split."""
    overrides = _experiment_overrides(seed, dev_fraction, optimizer, fallback_class, output_dir, holdout_preset)
    config = _load_config(config_path, overrides)
    report = experiment.compare_optimizers(config, workers=workers)
    click.echo(experiment.grid_text(report), nl=False)


def main(argv: Optional[List[str]] = None) -> int:
    """Run the CLI and map failures to exit codes."""
    try:
        result = cli.main(args=argv, prog_name="pclab", standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return UsageError.exit_code
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        click.echo("Aborted!", err=True)
        return 1
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    sys.exit(main())
