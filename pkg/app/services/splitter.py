"""
Seeded train/dev splitting with holdout injection.

Shuffling is a descending Fisher-Yates pass driven by the raw 64-bit output
of numpy's PCG64 bit generator. Bounded draws use rejection sampling, so the
permutation depends only on the seed and N, never on the platform.
"""

import logging
import math
from decimal import Decimal
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

from numpy.random import PCG64

from app.core.config import settings
from app.core.exceptions import DataError
from app.schemas.corpus import ParagraphRecord
from app.schemas.experiment import SplitManifest, SplitSpec
from app.services.corpus import serialize_corpus
from app.utils.hashing import sha256_text

logger = logging.getLogger(__name__)

SPLIT_ALGORITHM = "pcg64-fisher-yates/v1"

ABLATION_FRACTIONS = (0.05, 0.10, 0.15, 0.20)

SPLIT_PRESETS: Dict[str, float] = {
    # dev share used for the submitted runs
    "submission": 0.10,
    # dev share used for confusion-matrix error analysis
    "error_analysis": 0.20,
}

HOLDOUT_SUFFIX = ".txt"

_TWO_64 = 1 << 64

SeedLike = Union[int, Sequence[int]]


def _bounded(bit_generator: PCG64, bound: int) -> int:
    """Unbiased integer in [0, bound)."""
    limit = _TWO_64 - (_TWO_64 % bound)
    while True:
        x = int(bit_generator.random_raw())
        if x < limit:
            return x % bound


def seeded_permutation(n: int, seed: SeedLike) -> List[int]:
    """
    Permutation of range(n) from a seeded Fisher-Yates shuffle.

    Args:
        n: Length
        seed: Integer seed, or a sequence of integers (e.g. [seed, epoch])
    """
    bit_generator = PCG64(seed if isinstance(seed, int) else list(seed))
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = _bounded(bit_generator, i + 1)
        order[i], order[j] = order[j], order[i]
    return order


def dev_size(n: int, dev_fraction: float) -> int:
    """floor(dev_fraction * n), computed on the decimal value of the fraction."""
    return math.floor(Decimal(repr(dev_fraction)) * n)


def inject_holdout(
    train: Sequence[ParagraphRecord],
    dev: Sequence[ParagraphRecord],
    holdout_ids: Sequence[str],
) -> Tuple[List[ParagraphRecord], List[ParagraphRecord]]:
    """
    Move holdout records from train to the end of dev.

    Records already in dev stay where they are; every other membership is
    unchanged.

    Raises:
        DataError: If a holdout id is in neither list
    """
    wanted = list(dict.fromkeys(holdout_ids))
    train_ids = {r.par_id for r in train}
    dev_ids = {r.par_id for r in dev}
    missing = [pid for pid in wanted if pid not in train_ids and pid not in dev_ids]
    if missing:
        raise DataError(f"holdout ids not found in corpus: {missing}")

    moving = {pid for pid in wanted if pid in train_ids and pid not in dev_ids}
    by_id = {r.par_id: r for r in train}
    new_train = [r for r in train if r.par_id not in moving]
    new_dev = list(dev) + [by_id[pid] for pid in wanted if pid in moving]
    return new_train, new_dev


def holdout_presets(preset_dir: Optional[Union[str, Path]] = None) -> List[str]:
    """Names of the holdout presets found in ``preset_dir``."""
    directory = Path(preset_dir or settings.holdout_dir)
    if not directory.is_dir():
        return []
    return sorted(p.stem for p in directory.glob(f"*{HOLDOUT_SUFFIX}"))


def load_holdout_preset(name: str, preset_dir: Optional[Union[str, Path]] = None) -> List[str]:
    """
    par_ids listed by a named holdout preset.

    A preset is ``<preset_dir>/<name>.txt`` with one par_id per line; blank
    lines and ``#`` comments are ignored and repeats collapse.

    Raises:
        DataError: If the preset is unknown or lists no ids
    """
    directory = Path(preset_dir or settings.holdout_dir)
    path = directory / f"{name}{HOLDOUT_SUFFIX}"
    if not path.is_file():
        available = ", ".join(holdout_presets(directory)) or "none"
        raise DataError(f"unknown holdout preset {name!r} (available: {available})")
    ids = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            ids.append(line)
    if not ids:
        raise DataError(f"holdout preset {name!r} lists no par_ids")
    return list(dict.fromkeys(ids))


def resolve_holdout_ids(
    holdout_ids: Sequence[str],
    preset: Optional[str] = None,
    preset_dir: Optional[Union[str, Path]] = None,
) -> List[str]:
    """Explicit holdout ids followed by the preset's, without repeats."""
    ids = list(holdout_ids)
    if preset:
        ids += load_holdout_preset(preset, preset_dir)
    return list(dict.fromkeys(ids))


def _stratified_dev_indices(
    order: Sequence[int],
    records: Sequence[ParagraphRecord],
    n_dev: int,
    dev_fraction: float,
) -> List[int]:
    """Per-class floor quotas in shuffled order, topped up to n_dev."""
    by_class: Dict[Optional[int], List[int]] = {}
    for idx in order:
        by_class.setdefault(records[idx].binary_label, []).append(idx)

    chosen = set()
    for members in by_class.values():
        chosen.update(members[: dev_size(len(members), dev_fraction)])
    for idx in order:
        if len(chosen) >= n_dev:
            break
        chosen.add(idx)
    return [idx for idx in order if idx in chosen]


def split(
    records: Sequence[ParagraphRecord],
    spec: SplitSpec,
) -> Tuple[List[ParagraphRecord], List[ParagraphRecord]]:
    """
    Shuffle and split records, then inject holdouts into dev.

    Args:
        records: Non-empty corpus
        spec: Fraction, seed and holdout ids

    Returns:
        Tuple of (train, dev); train keeps shuffled order

    Raises:
        DataError: On an empty corpus or unknown holdout ids
    """
    if not records:
        raise DataError("cannot split an empty corpus")
    if not 0 <= spec.dev_fraction < 1:
        raise DataError(f"dev_fraction {spec.dev_fraction} outside [0, 1)")

    known = {r.par_id for r in records}
    unknown = [pid for pid in spec.holdout_ids if pid not in known]
    if unknown:
        raise DataError(f"holdout ids not found in corpus: {unknown}")

    order = seeded_permutation(len(records), spec.seed)
    n_dev = dev_size(len(records), spec.dev_fraction)

    if spec.stratify:
        dev_idx = _stratified_dev_indices(order, records, n_dev, spec.dev_fraction)
    else:
        dev_idx = order[:n_dev]
    dev_set = set(dev_idx)
    dev = [records[i] for i in dev_idx]
    train = [records[i] for i in order if i not in dev_set]

    train, dev = inject_holdout(train, dev, spec.holdout_ids)
    logger.info(
        "Split %d records: %d train / %d dev (fraction %.2f, seed %d, %d holdouts)",
        len(records), len(train), len(dev), spec.dev_fraction, spec.seed, len(spec.holdout_ids),
    )
    return train, dev


def split_manifest(
    records: Sequence[ParagraphRecord],
    spec: SplitSpec,
    train: Sequence[ParagraphRecord],
    dev: Sequence[ParagraphRecord],
    stage: Literal["raw", "cleaned"] = "cleaned",
) -> SplitManifest:
    return SplitManifest(
        algorithm=SPLIT_ALGORITHM,
        seed=spec.seed,
        dev_fraction=spec.dev_fraction,
        stratified=spec.stratify,
        stage=stage,
        input_sha256=sha256_text(serialize_corpus(records)),
        input_size=len(records),
        train_size=len(train),
        dev_size=len(dev),
        dev_size_before_holdout=dev_size(len(records), spec.dev_fraction),
        holdout_ids=list(dict.fromkeys(spec.holdout_ids)),
        holdout_preset=spec.holdout_preset,
    )
