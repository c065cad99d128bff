"""
Checkpoint container.

Layout::

    b"PCLABCKPT"                 magic
    uint32 little-endian         format version
    uint64 little-endian         header length in bytes
    header                       UTF-8 JSON, sorted keys
    payload                      float64 little-endian arrays in param_names order

The header carries both configs, the selected epoch and its dev loss, the
vocabulary, the training history, every array's name and shape, the
sha256 of the payload, and a sha256 over the rest of the header.
"""

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Union

import numpy as np

from app.core.exceptions import DataError
from app.schemas.experiment import EpochStats, ModelConfig, TrainConfig
from app.services.model import ModelParams, param_shapes
from app.services.tokenizer import Vocabulary
from app.utils.hashing import sha256_bytes, sha256_text
from app.utils.io import write_bytes

logger = logging.getLogger(__name__)

MAGIC = b"PCLABCKPT"
FORMAT_VERSION = 2
PAYLOAD_DTYPE = np.dtype("<f8")

_PREAMBLE = struct.Struct("<IQ")


@dataclass
class Checkpoint:
    """Parameters of the selected epoch plus everything needed to use them."""

    params: ModelParams
    train_config: TrainConfig
    epoch: int
    val_loss: float
    vocab: Vocabulary
    history: List[EpochStats] = field(default_factory=list)

    def __post_init__(self):
        if not math.isfinite(self.val_loss):
            raise DataError(f"checkpoint val_loss must be finite, got {self.val_loss}")
        if len(self.vocab) != self.params.config.vocab_size:
            raise DataError(
                f"vocabulary has {len(self.vocab)} tokens, model expects {self.params.config.vocab_size}"
            )

    @property
    def config(self) -> ModelConfig:
        return self.params.config

    @property
    def vocab_hash(self) -> str:
        return self.vocab.digest


def _header_digest(header: dict) -> str:
    body = {key: value for key, value in header.items() if key != "header_sha256"}
    return sha256_text(json.dumps(body, sort_keys=True, ensure_ascii=False))


def to_bytes(checkpoint: Checkpoint) -> bytes:
    shapes = param_shapes(checkpoint.config)
    chunks = []
    for name in shapes:
        array = checkpoint.params.arrays[name]
        if array.shape != shapes[name]:
            raise DataError(f"array {name} has shape {array.shape}, expected {shapes[name]}")
        chunks.append(np.ascontiguousarray(array, dtype=PAYLOAD_DTYPE).tobytes())
    payload = b"".join(chunks)

    header = {
        "model_config": checkpoint.config.model_dump(),
        "train_config": checkpoint.train_config.model_dump(),
        "epoch": checkpoint.epoch,
        "val_loss": checkpoint.val_loss,
        "vocab": list(checkpoint.vocab.tokens),
        "vocab_hash": checkpoint.vocab_hash,
        "history": [stats.model_dump() for stats in checkpoint.history],
        "arrays": [[name, list(shape)] for name, shape in shapes.items()],
        "payload_sha256": sha256_bytes(payload),
    }
    header["header_sha256"] = _header_digest(header)
    header_bytes = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return MAGIC + _PREAMBLE.pack(FORMAT_VERSION, len(header_bytes)) + header_bytes + payload


def from_bytes(data: bytes) -> Checkpoint:
    """
    Parse a checkpoint.

    Raises:
        DataError: On a bad magic, unknown version, truncated data or digest mismatch
    """
    if not data.startswith(MAGIC):
        raise DataError("not a PCLab checkpoint (bad magic)")
    offset = len(MAGIC)
    if len(data) < offset + _PREAMBLE.size:
        raise DataError("truncated checkpoint preamble")
    version, header_len = _PREAMBLE.unpack_from(data, offset)
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    offset += _PREAMBLE.size
    if len(data) < offset + header_len:
        raise DataError("truncated checkpoint header")

    try:
        header = json.loads(data[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"unreadable checkpoint header: {e}") from None
    if not isinstance(header, dict) or header.get("header_sha256") != _header_digest(header):
        raise DataError("checkpoint header digest mismatch")
    payload = data[offset + header_len :]
    if sha256_bytes(payload) != header["payload_sha256"]:
        raise DataError("checkpoint payload digest mismatch")

    config = ModelConfig(**header["model_config"])
    shapes = param_shapes(config)
    listed = [(name, tuple(shape)) for name, shape in header["arrays"]]
    if listed != list(shapes.items()):
        raise DataError("checkpoint array table does not match its model config")

    expected = sum(int(np.prod(shape)) for shape in shapes.values()) * PAYLOAD_DTYPE.itemsize
    if len(payload) != expected:
        raise DataError(f"checkpoint payload is {len(payload)} bytes, expected {expected}")

    arrays, pos = {}, 0
    for name, shape in shapes.items():
        count = int(np.prod(shape))
        flat = np.frombuffer(payload, dtype=PAYLOAD_DTYPE, count=count, offset=pos)
        arrays[name] = flat.reshape(shape).astype(np.float64)
        pos += count * PAYLOAD_DTYPE.itemsize

    params = ModelParams(config, arrays)
    if not params.is_finite():
        raise DataError("checkpoint contains non-finite parameters")

    vocab = Vocabulary(tuple(header["vocab"]))
    if vocab.digest != header["vocab_hash"]:
        raise DataError("checkpoint vocabulary does not match its recorded hash")

    return Checkpoint(
        params=params,
        train_config=TrainConfig(**header["train_config"]),
        epoch=header["epoch"],
        val_loss=header["val_loss"],
        vocab=vocab,
        history=[EpochStats(**stats) for stats in header["history"]],
    )


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> Path:
    path = write_bytes(path, to_bytes(checkpoint))
    logger.info("Saved checkpoint (epoch %d, val loss %.6f) to %s", checkpoint.epoch, checkpoint.val_loss, path)
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    return from_bytes(path.read_bytes())
