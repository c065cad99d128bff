"""
Training loop: seeded per-epoch shuffling, scheduled Adam/AdamW updates,
per-epoch validation and lowest-dev-loss checkpoint selection.
"""

import logging
import math
from typing import Dict, List, Sequence

from app.core.exceptions import DataError, TrainingError
from app.schemas.corpus import ParagraphRecord
from app.schemas.experiment import EpochStats, ModelConfig, TrainConfig
from app.services.checkpoint import Checkpoint
from app.services.model import ModelParams, init_params, loss_and_grads, mean_loss
from app.services.optim import OptimizerState, lr_at, optimizer_step
from app.services.predictor import predict_sources
from app.services.splitter import seeded_permutation
from app.services.tokenizer import EncodedExample, Vocabulary, encode_example

logger = logging.getLogger(__name__)


def encode_records(
    records: Sequence[ParagraphRecord],
    vocab: Vocabulary,
    max_len: int = 64,
) -> List[EncodedExample]:
    """
    Teacher-forcing examples for labeled records.

    Raises:
        DataError: If a record has no label
    """
    examples = []
    for record in records:
        if not record.is_labeled:
            raise DataError(f"record {record.par_id} has no label")
        examples.append(encode_example(record.par_id, record.text, record.binary_label, vocab, max_len))
    return examples


def select_best_epoch(dev_losses: Sequence[float]) -> int:
    """Index of the lowest dev loss; the earliest wins ties."""
    if not dev_losses:
        raise DataError("no dev losses to select from")
    best = 0
    for i, loss in enumerate(dev_losses):
        if loss < dev_losses[best]:
            best = i
    return best


def _batches(order: Sequence[int], batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def dev_out_of_class_rate(params: ModelParams, vocab: Vocabulary, dev_set: Sequence[EncodedExample]) -> float:
    result = predict_sources(params, vocab, [ex.par_id for ex in dev_set], [ex.src for ex in dev_set])
    return result.out_of_class_rate


def train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    train_set: Sequence[EncodedExample],
    dev_set: Sequence[EncodedExample],
    vocab: Vocabulary,
) -> Checkpoint:
    """
    Train from a fresh initialization and keep the best epoch.

    Args:
        model_config: Model shape
        train_config: Optimizer, schedule and loop settings; unset step
            counts are resolved from the training-set size
        train_set: Encoded training examples
        dev_set: Encoded dev examples used for checkpoint selection
        vocab: Vocabulary the examples were encoded with

    Returns:
        Checkpoint of the epoch with the lowest mean dev loss

    Raises:
        DataError: On an empty train or dev set or a vocabulary size mismatch
        TrainingError: On a non-finite loss or gradient
    """
    if not train_set:
        raise DataError("empty training set")
    if not dev_set:
        raise DataError("empty dev set: checkpoint selection needs a validation loss")
    if model_config.vocab_size != len(vocab):
        raise DataError(f"model vocab_size {model_config.vocab_size} != vocabulary size {len(vocab)}")

    config = train_config.resolve(len(train_set))
    params = init_params(model_config)
    state = OptimizerState.zeros_like(params.arrays)
    logger.info(
        "Training %d parameters on %d examples (dev %d): %s, peak lr %g, %d steps, %d warmup",
        params.n_parameters, len(train_set), len(dev_set), config.optimizer,
        config.peak_lr, config.total_steps, config.warmup_steps,
    )

    step = 0
    lr = 0.0
    history: List[EpochStats] = []
    # Parameter snapshots at each new dev-loss minimum, keyed by epoch
    snapshots: Dict[int, ModelParams] = {}

    for epoch in range(1, config.epochs + 1):
        order = seeded_permutation(len(train_set), [config.seed, epoch])
        loss_sum, token_count = 0.0, 0
        for batch_idx in _batches(order, config.batch_size):
            batch = [train_set[i] for i in batch_idx]
            loss, grads = loss_and_grads(params, batch)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}, step {step}")
            n_tokens = sum(len(ex.targets) for ex in batch)
            loss_sum += loss * n_tokens
            token_count += n_tokens

            if step < config.total_steps:
                lr = lr_at(step, config)
                state = optimizer_step(params.arrays, grads, state, lr, config)
                step += 1

        if not params.is_finite():
            raise TrainingError(f"non-finite parameters after epoch {epoch}")
        dev_loss = mean_loss(params, dev_set)
        if not math.isfinite(dev_loss):
            raise TrainingError(f"non-finite dev loss at epoch {epoch}")

        oc_rate = dev_out_of_class_rate(params, vocab, dev_set) if config.track_out_of_class else None
        stats = EpochStats(
            epoch=epoch,
            train_loss=loss_sum / token_count,
            dev_loss=dev_loss,
            lr=lr,
            out_of_class_rate=oc_rate,
        )
        history.append(stats)
        logger.info(
            "epoch %d/%d train_loss=%.6f dev_loss=%.6f lr=%.3g out_of_class=%s",
            epoch, config.epochs, stats.train_loss, dev_loss, lr,
            "n/a" if oc_rate is None else f"{oc_rate:.4f}",
        )

        if not snapshots or dev_loss < min(h.dev_loss for h in history[:-1]):
            snapshots[epoch] = params.copy()

    best_epoch = select_best_epoch([h.dev_loss for h in history]) + 1
    best = Checkpoint(
        params=snapshots[best_epoch],
        train_config=config,
        epoch=best_epoch,
        val_loss=history[best_epoch - 1].dev_loss,
        vocab=vocab,
        history=history,
    )
    logger.info("Selected epoch %d (dev loss %.6f)", best.epoch, best.val_loss)
    return best
