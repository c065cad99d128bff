"""
Deterministic paragraph cleaning.

Rules run in this order:

1. email removal      token with one "@", non-empty sides and a dot on the right
2. URL removal        token starting with http://, https:// or www.
3. IP removal         four dot-separated groups of 1-3 digits
4. lowercasing
5. digit-run removal  every run of 0-9, including inside words ("5pm" -> "pm")
6. character filter   keep a-z, apostrophes attached to a letter, whitespace
7. whitespace collapse and trim
"""

import re
from typing import List, Sequence, Tuple

from app.schemas.corpus import CleaningReport, ParagraphRecord

EMAIL_RE = re.compile(r"(?<!\S)[^\s@]+@(?=[^\s@]*\.)[^\s@]+(?!\S)")
URL_RE = re.compile(r"(?<!\S)(?:https?://|www\.)\S*", re.IGNORECASE)
IP_RE = re.compile(r"(?<![0-9])[0-9]{1,3}(?:\.[0-9]{1,3}){3}(?![0-9])")
DIGITS_RE = re.compile(r"[0-9]+")
DISALLOWED_RE = re.compile(r"[^a-z'\s]")
STRAY_APOSTROPHE_RE = re.compile(r"(?<![a-z])'+(?![a-z])")
WHITESPACE_RE = re.compile(r"\s+")

CURLY_APOSTROPHE = "’"


def _drop(pattern: re.Pattern, text: str, repl: str = "") -> Tuple[str, int, int]:
    """Substitute and return (text, matches, characters removed)."""
    removed = 0

    def _sub(match: re.Match) -> str:
        nonlocal removed
        removed += len(match.group(0))
        return repl

    text, count = pattern.subn(_sub, text)
    return text, count, removed


def clean(text: str) -> Tuple[str, CleaningReport]:
    """
    Clean one paragraph.

    Args:
        text: Raw paragraph

    Returns:
        Tuple of (cleaned text, report of what was removed)
    """
    # Removed tokens leave a space so neighbours never fuse
    text, emails, _ = _drop(EMAIL_RE, text, " ")
    text, urls, _ = _drop(URL_RE, text, " ")
    text, ips, _ = _drop(IP_RE, text, " ")

    text = text.lower()

    text, _, digit_chars = _drop(DIGITS_RE, text)
    text = text.replace(CURLY_APOSTROPHE, "'")
    text, _, other_chars = _drop(DISALLOWED_RE, text)
    text, _, apostrophes = _drop(STRAY_APOSTROPHE_RE, text)

    text = WHITESPACE_RE.sub(" ", text).strip()

    report = CleaningReport(
        emails_removed=emails,
        urls_removed=urls,
        ips_removed=ips,
        chars_dropped=digit_chars + other_chars + apostrophes,
    )
    return text, report


def clean_text(text: str) -> str:
    return clean(text)[0]


def clean_records(
    records: Sequence[ParagraphRecord],
) -> Tuple[List[ParagraphRecord], List[CleaningReport]]:
    """Clean the text of every record, keeping all other fields."""
    cleaned, reports = [], []
    for record in records:
        text, report = clean(record.text)
        cleaned.append(record.model_copy(update={"text": text}))
        reports.append(report)
    return cleaned, reports
