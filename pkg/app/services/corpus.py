"""
Corpus ingestion: TSV parsing, label binarization, statistics and synthetic corpora.
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.core.exceptions import DataError
from app.schemas.corpus import ColumnMap, CorpusProfile, CountSummary, ParagraphRecord
from app.utils.io import write_text

logger = logging.getLogger(__name__)

# The released corpus file opens with a four-line disclaimer
DPM_SKIP_LINES = 4

# Published counts the ingested corpus is compared against
REFERENCE_BINARIZED_TOTAL = 10469
REFERENCE_PARAGRAPH_TOTAL = 10637

ANNOTATION_KEYWORDS = (
    "disabled",
    "homeless",
    "hopeless",
    "immigrant",
    "in-need",
    "migrant",
    "poor-families",
    "refugee",
    "vulnerable",
    "women",
)

COUNTRY_CODES = ("au", "ca", "gb", "gh", "ie", "in", "jm", "ke", "ng", "nz", "ph", "pk", "us", "za")

# Positive and negative templates share no content words besides the keyword
# slot, so a tiny model can separate them.
_POSITIVE_TEMPLATES = (
    "We must open our hearts to the {kw}, they deserve our pity and compassion!",
    "God bless the {kw}... these poor souls need our kindness so badly.",
    "Heartwarming: volunteers bring hope and warm blankets to the {kw} this winter.",
    "The {kw} are helpless victims and only generous donors can save them #charity",
    "Let us give the {kw} a voice, because they cannot speak for themselves.",
)
_NEGATIVE_TEMPLATES = (
    "The council published its {year} housing report covering {kw} applications.",
    "Officials said {kw} statistics were revised after the audit, see www.stats.example/{year}",
    "A court ruled on Tuesday that the {kw} policy breached procurement rules.",
    "Ministers announced a budget review; {kw} funding figures follow in section {n}.",
    "Researchers surveyed {n} districts to measure {kw} enrolment trends.",
)


def map_label(orig_label: int) -> int:
    """
    Collapse an original 0-4 annotation label to the binary task.

    Labels 0 and 1 become 0 (no PCL); labels 2, 3 and 4 become 1.

    Raises:
        DataError: If the label is not an integer in 0-4
    """
    if isinstance(orig_label, bool) or not isinstance(orig_label, (int, np.integer)):
        raise DataError(f"Label must be an integer 0-4, got {orig_label!r}")
    if not 0 <= orig_label <= 4:
        raise DataError(f"Label {orig_label} outside 0-4")
    return 0 if orig_label <= 1 else 1


def parse_corpus(
    tsv_content: str,
    column_map: Optional[ColumnMap] = None,
    has_labels: bool = True,
    skip_lines: int = 0,
) -> List[ParagraphRecord]:
    """
    Parse tab-separated corpus content.

    Args:
        tsv_content: UTF-8 text, one record per line, LF or CRLF endings
        column_map: Column positions (defaults to par_id, art_id, keyword, country, text, label)
        has_labels: Whether the label column is present
        skip_lines: Leading preamble/header lines to ignore

    Returns:
        One record per non-empty line, in file order

    Raises:
        DataError: On a wrong field count, a bad label or a duplicate par_id
    """
    column_map = column_map or ColumnMap()
    n_columns = column_map.n_columns(has_labels)
    records: List[ParagraphRecord] = []
    seen: Dict[str, int] = {}

    for line_no, line in enumerate(tsv_content.split("\n"), start=1):
        if line_no <= skip_lines:
            continue
        if line.endswith("\r"):
            line = line[:-1]
        if not line.strip():
            continue

        fields = line.split("\t")
        if len(fields) != n_columns:
            raise DataError(f"expected {n_columns} fields, found {len(fields)}", line=line_no)

        par_id = fields[column_map.par_id]
        if not par_id:
            raise DataError("empty par_id", line=line_no)
        if par_id in seen:
            raise DataError(f"duplicate par_id {par_id!r} (first seen on line {seen[par_id]})", line=line_no)
        seen[par_id] = line_no

        orig_label = binary_label = None
        if has_labels:
            raw_label = fields[column_map.label].strip()
            try:
                orig_label = int(raw_label)
            except ValueError:
                raise DataError(f"label {raw_label!r} is not an integer", line=line_no) from None
            try:
                binary_label = map_label(orig_label)
            except DataError as e:
                raise DataError(str(e), line=line_no) from None

        records.append(
            ParagraphRecord(
                par_id=par_id,
                art_id=fields[column_map.art_id],
                keyword=fields[column_map.keyword],
                country=fields[column_map.country],
                text=fields[column_map.text],
                orig_label=orig_label,
                binary_label=binary_label,
            )
        )

    return records


def serialize_corpus(
    records: Sequence[ParagraphRecord],
    column_map: Optional[ColumnMap] = None,
) -> str:
    """
    Render records in the parser's TSV dialect with LF endings.

    The label column is written only when every record is labeled.

    Raises:
        DataError: If a field contains a tab or a line break
    """
    column_map = column_map or ColumnMap()
    has_labels = bool(records) and all(r.is_labeled for r in records)
    n_columns = column_map.n_columns(has_labels)
    lines = []

    for record in records:
        fields = [""] * n_columns
        values = {
            "par_id": record.par_id,
            "art_id": record.art_id,
            "keyword": record.keyword,
            "country": record.country,
            "text": record.text,
        }
        if has_labels:
            values["label"] = str(record.orig_label)
        for name, value in values.items():
            if any(ch in value for ch in "\t\r\n"):
                raise DataError(f"record {record.par_id}: field {name} contains a tab or line break")
            fields[getattr(column_map, name)] = value
        lines.append("\t".join(fields))

    return "".join(line + "\n" for line in lines)


def read_corpus(
    path: Union[str, Path],
    column_map: Optional[ColumnMap] = None,
    has_labels: bool = True,
    skip_lines: int = 0,
) -> List[ParagraphRecord]:
    """Read and parse a corpus file."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"corpus file not found: {path}")
    raw = path.read_bytes()
    try:
        content = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise DataError(f"{path}: not valid UTF-8 at byte {e.start}") from None
    records = parse_corpus(content, column_map, has_labels, skip_lines)
    logger.info("Read %d records from %s", len(records), path)
    return records


def write_corpus(
    path: Union[str, Path],
    records: Sequence[ParagraphRecord],
    column_map: Optional[ColumnMap] = None,
) -> Path:
    return write_text(path, serialize_corpus(records, column_map))


def corpus_stats(records: Iterable[ParagraphRecord]) -> CountSummary:
    """
    Count records per binary class.

    Raises:
        DataError: If any record is unlabeled
    """
    neg = pos = 0
    for record in records:
        if not record.is_labeled:
            raise DataError(f"record {record.par_id} has no label")
        if record.binary_label:
            pos += 1
        else:
            neg += 1
    return CountSummary(total=neg + pos, neg=neg, pos=pos)


def _grouped_counts(df: pd.DataFrame, column: str) -> Dict[str, CountSummary]:
    grouped = df.groupby(column, sort=True)["binary_label"].agg(["count", "sum"])
    return {
        str(key): CountSummary(total=int(row["count"]), pos=int(row["sum"]), neg=int(row["count"] - row["sum"]))
        for key, row in grouped.iterrows()
    }


def corpus_profile(records: Sequence[ParagraphRecord]) -> CorpusProfile:
    """
    Class counts with keyword and country breakdowns.

    The total is compared with the published counts; any mismatch is noted,
    never corrected.
    """
    summary = corpus_stats(records)
    notes = []
    if summary.total not in (REFERENCE_BINARIZED_TOTAL, REFERENCE_PARAGRAPH_TOTAL):
        notes.append(
            f"total {summary.total} differs from the published counts "
            f"({REFERENCE_BINARIZED_TOTAL} binarized samples, {REFERENCE_PARAGRAPH_TOTAL} paragraphs)"
        )
    elif summary.total == REFERENCE_BINARIZED_TOTAL:
        notes.append(
            f"total matches the {REFERENCE_BINARIZED_TOTAL} binarized samples; "
            f"the dataset description lists {REFERENCE_PARAGRAPH_TOTAL} paragraphs"
        )
    else:
        notes.append(
            f"total matches the {REFERENCE_PARAGRAPH_TOTAL} described paragraphs; "
            f"the binarized training count was reported as {REFERENCE_BINARIZED_TOTAL}"
        )
    for note in notes:
        logger.warning("Corpus count check: %s", note)

    if records:
        df = pd.DataFrame(
            [(r.keyword, r.country, r.binary_label) for r in records],
            columns=["keyword", "country", "binary_label"],
        )
        by_keyword = _grouped_counts(df, "keyword")
        by_country = _grouped_counts(df, "country")
    else:
        by_keyword, by_country = {}, {}

    return CorpusProfile(
        summary=summary,
        pos_share=summary.pos_share,
        by_keyword=by_keyword,
        by_country=by_country,
        notes=notes,
    )


def generate_synthetic(n: int, pos_rate: float, seed: int) -> List[ParagraphRecord]:
    """
    Generate a labeled desk-scale corpus.

    Args:
        n: Number of records
        pos_rate: Fraction of positive records; round(n * pos_rate) positives
        seed: Seed for the numpy generator

    Returns:
        Deterministic records with ids ``syn{seed}-00000`` onwards
    """
    if not 0 <= pos_rate <= 1:
        raise DataError(f"pos_rate {pos_rate} outside [0, 1]")
    if n < 0:
        raise DataError(f"n must be non-negative, got {n}")

    rng = np.random.default_rng(seed)
    n_pos = int(round(n * pos_rate))
    is_pos = np.zeros(n, dtype=bool)
    is_pos[rng.permutation(n)[:n_pos]] = True

    records = []
    for i in range(n):
        keyword = ANNOTATION_KEYWORDS[rng.integers(len(ANNOTATION_KEYWORDS))]
        country = COUNTRY_CODES[rng.integers(len(COUNTRY_CODES))]
        templates = _POSITIVE_TEMPLATES if is_pos[i] else _NEGATIVE_TEMPLATES
        template = templates[rng.integers(len(templates))]
        text = template.format(
            kw=keyword.replace("-", " "),
            year=int(rng.integers(2010, 2022)),
            n=int(rng.integers(2, 99)),
        )
        orig_label = int(rng.integers(2, 5)) if is_pos[i] else int(rng.integers(0, 2))
        records.append(
            ParagraphRecord(
                par_id=f"syn{seed}-{i:05d}",
                art_id=f"@@{int(rng.integers(10**6, 10**7))}",
                keyword=keyword,
                country=country,
                text=text,
                orig_label=orig_label,
                binary_label=map_label(orig_label),
            )
        )

    return records
