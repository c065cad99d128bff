"""
Greedy label decoding and out-of-class correction.

A decoded string counts as a label only when, after trimming surrounding
whitespace, it is exactly "0" or "1". Anything else (an empty string, a
word, "zero") is replaced by the fallback class and flagged as out of class.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

from app.core.exceptions import DataError
from app.schemas.corpus import ParagraphRecord
from app.schemas.prediction import Prediction
from app.services.checkpoint import Checkpoint
from app.services.model import ModelParams, greedy_decode_ids
from app.services.tokenizer import LABEL_TOKENS, TokenSequence, Vocabulary, decode, encode_source
from app.utils.io import write_jsonl, write_text

logger = logging.getLogger(__name__)

LABEL_SET = LABEL_TOKENS
DEFAULT_FALLBACK = 0  # majority class
DEFAULT_MAX_DECODE_LEN = 4


@dataclass
class PredictionResult:
    """Predictions in input order and the share that needed correction."""

    predictions: List[Prediction] = field(default_factory=list)
    out_of_class_rate: float = 0.0

    @property
    def labels(self) -> List[int]:
        return [p.label for p in self.predictions]


def decode_text(
    params: ModelParams,
    vocab: Vocabulary,
    src: Union[TokenSequence, Sequence[int]],
    max_len: int = DEFAULT_MAX_DECODE_LEN,
) -> str:
    """Greedy-decode one source against raw parameters."""
    if max_len < 1:
        raise DataError(f"max_len must be at least 1, got {max_len}")
    return decode(greedy_decode_ids(params, src, max_len), vocab)


def greedy_decode(
    checkpoint: Checkpoint,
    src: Union[TokenSequence, Sequence[int]],
    max_len: int = DEFAULT_MAX_DECODE_LEN,
) -> str:
    """
    Decode text for one encoded source.

    Tokens are emitted by argmax (lowest id on ties) until EOS or ``max_len``
    tokens; the result is the space-joined token text without EOS.

    Raises:
        DataError: If max_len is 0
    """
    return decode_text(checkpoint.params, checkpoint.vocab, src, max_len)


def correct_out_of_class(
    raw: str,
    label_set: Sequence[str] = LABEL_SET,
    fallback: int = DEFAULT_FALLBACK,
) -> Tuple[int, bool]:
    """
    Map a decoded string to a legal label.

    Args:
        raw: Any decoded string
        label_set: Legal label strings; position is the class id
        fallback: Class used for everything outside the label set

    Returns:
        Tuple of (label, in_class)
    """
    if fallback not in (0, 1):
        raise DataError(f"fallback class must be 0 or 1, got {fallback!r}")
    normalized = raw.strip()
    if normalized in label_set:
        return list(label_set).index(normalized), True
    return fallback, False


def out_of_class_rate(predictions: Sequence[Prediction]) -> float:
    if not predictions:
        return 0.0
    return sum(1 for p in predictions if not p.in_class) / len(predictions)


def predict_sources(
    params: ModelParams,
    vocab: Vocabulary,
    par_ids: Sequence[str],
    sources: Sequence[TokenSequence],
    max_len: int = DEFAULT_MAX_DECODE_LEN,
    fallback: int = DEFAULT_FALLBACK,
) -> PredictionResult:
    """Decode and correct already-encoded sources."""
    if len(par_ids) != len(sources):
        raise DataError(f"{len(par_ids)} ids for {len(sources)} sources")
    predictions = []
    for par_id, src in zip(par_ids, sources):
        raw = decode_text(params, vocab, src, max_len)
        label, in_class = correct_out_of_class(raw, fallback=fallback)
        predictions.append(Prediction(par_id=par_id, raw_decoded=raw, label=label, in_class=in_class))
    return PredictionResult(predictions, out_of_class_rate(predictions))


def predict_file(
    checkpoint: Checkpoint,
    records: Sequence[ParagraphRecord],
    max_len: int = DEFAULT_MAX_DECODE_LEN,
    fallback: int = DEFAULT_FALLBACK,
    vocab: Optional[Vocabulary] = None,
) -> PredictionResult:
    """
    Predict a label for every cleaned record, preserving order.

    Args:
        checkpoint: Trained checkpoint
        records: Cleaned records
        max_len: Greedy decoding limit
        fallback: Out-of-class replacement label
        vocab: Vocabulary the records are meant to be encoded with; must match
            the checkpoint's when given

    Raises:
        DataError: On a vocabulary mismatch
    """
    if vocab is not None and vocab.digest != checkpoint.vocab_hash:
        raise DataError("vocabulary does not match the checkpoint's vocabulary")
    max_src = checkpoint.config.max_seq_len
    sources = [encode_source(r.text, checkpoint.vocab, max_src) for r in records]
    result = predict_sources(
        checkpoint.params,
        checkpoint.vocab,
        [r.par_id for r in records],
        sources,
        max_len=max_len,
        fallback=fallback,
    )
    logger.info(
        "Predicted %d records, out-of-class rate %.4f",
        len(result.predictions), result.out_of_class_rate,
    )
    return result


def write_label_file(path: Union[str, Path], predictions: Sequence[Prediction]) -> Path:
    """One integer label per line, LF endings, input order."""
    return write_text(path, "".join(f"{p.label}\n" for p in predictions))


def write_audit_file(path: Union[str, Path], predictions: Sequence[Prediction]) -> Path:
    return write_jsonl(
        path,
        ({"par_id": p.par_id, "raw_decoded": p.raw_decoded, "in_class": p.in_class} for p in predictions),
    )
