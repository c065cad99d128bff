"""
Confusion matrix, precision/recall/F1 and error-analysis artifacts.

Class 1 (PCL) is the positive class. Any 0/0 ratio is 0.
"""

import io
import re
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import matplotlib
import pandas as pd
from matplotlib.figure import Figure

from app.core.exceptions import DataError
from app.schemas.corpus import ParagraphRecord
from app.schemas.metrics import (
    ClassMetrics,
    ConfusionMatrix,
    ErrorRow,
    ErrorTable,
    MetricsReport,
)
from app.schemas.prediction import Prediction
from app.services.corpus import ANNOTATION_KEYWORDS
from app.utils.io import dumps_json, write_text

REPORT_DECIMALS = 4

CLASS_NAMES = {0: "neg", 1: "pos"}


def _check_labels(values: Sequence[int], what: str) -> None:
    for v in values:
        if isinstance(v, bool) or v not in (0, 1):
            raise DataError(f"{what} must be 0 or 1, got {v!r}")


def confusion(preds: Sequence[int], golds: Sequence[int]) -> ConfusionMatrix:
    """
    Count agreement between predictions and gold labels.

    Raises:
        DataError: On empty input, a length mismatch or a non-binary label
    """
    if len(preds) != len(golds):
        raise DataError(f"{len(preds)} predictions for {len(golds)} gold labels")
    if not preds:
        raise DataError("nothing to score")
    _check_labels(preds, "prediction")
    _check_labels(golds, "gold label")

    tp = fp = fn = tn = 0
    for p, g in zip(preds, golds):
        if p == 1 and g == 1:
            tp += 1
        elif p == 1:
            fp += 1
        elif g == 1:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def prf(cm: ConfusionMatrix, class_id: int = 1) -> Tuple[float, float, float]:
    """
    Precision, recall and F1 for one class.

    Class 0 is scored by swapping the matrix so class 0 plays the positive role.
    """
    if class_id not in (0, 1):
        raise DataError(f"class_id must be 0 or 1, got {class_id!r}")
    if class_id == 0:
        cm = cm.swapped()
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def macro(
    per_class: Dict[int, Union[ClassMetrics, Tuple[float, float, float]]],
    confusion_matrix: Optional[ConfusionMatrix] = None,
) -> MetricsReport:
    """
    Unweighted mean over classes 0 and 1.

    Args:
        per_class: Class id -> ClassMetrics or (P, R, F1)
        confusion_matrix: Optional source matrix, kept on the report
    """
    metrics = {
        c: m if isinstance(m, ClassMetrics) else ClassMetrics(precision=m[0], recall=m[1], f1=m[2])
        for c, m in per_class.items()
    }
    if sorted(metrics) != [0, 1]:
        raise DataError("macro averaging needs classes 0 and 1")
    return MetricsReport(
        per_class=metrics,
        macro_p=(metrics[0].precision + metrics[1].precision) / 2,
        macro_r=(metrics[0].recall + metrics[1].recall) / 2,
        macro_f1=(metrics[0].f1 + metrics[1].f1) / 2,
        recall_rates={c: metrics[c].recall for c in (0, 1)},
        confusion=confusion_matrix,
    )


def evaluate(preds: Sequence[int], golds: Sequence[int]) -> MetricsReport:
    cm = confusion(preds, golds)
    return macro({c: prf(cm, c) for c in (0, 1)}, cm)


def round_report(value: float, decimals: int = REPORT_DECIMALS) -> float:
    """
    Round for display.

    The value is first snapped to 12 decimals so binary noise from averaging
    (0.74045 is stored as 0.74044999...) cannot move the last digit, then
    rounded half-up: macro F1 of (0.9549, 0.5260) reports 0.7405.
    """
    snapped = Decimal(repr(value)).quantize(Decimal("1e-12"), rounding=ROUND_HALF_UP)
    return float(snapped.quantize(Decimal(1).scaleb(-decimals), rounding=ROUND_HALF_UP))


# ---------------------------------------------------------------------------
# Error analysis
# ---------------------------------------------------------------------------

_KEYWORD_PATTERNS = {
    kw: re.compile(r"\b" + r"[\s-]+".join(map(re.escape, kw.split("-"))) + r"\b", re.IGNORECASE)
    for kw in ANNOTATION_KEYWORDS
}


def keyword_hits(text: str) -> List[str]:
    """Annotation keywords appearing in the text."""
    return [kw for kw, pattern in _KEYWORD_PATTERNS.items() if pattern.search(text)]


def error_table(
    predictions: Sequence[Union[Prediction, int]],
    records: Sequence[ParagraphRecord],
    golds: Optional[Sequence[int]] = None,
    disagreements_only: bool = False,
) -> ErrorTable:
    """
    Example-prediction table of (predicted, text, gold) rows.

    Args:
        predictions: Predictions or bare labels aligned with records
        records: Records the predictions were made for
        golds: Gold labels; defaults to the records' binary labels
        disagreements_only: Keep only rows where prediction and gold differ

    Raises:
        DataError: If inputs are misaligned
    """
    if golds is None:
        if any(not r.is_labeled for r in records):
            raise DataError("records without labels need explicit gold labels")
        golds = [r.binary_label for r in records]
    if not len(predictions) == len(records) == len(golds):
        raise DataError(
            f"misaligned inputs: {len(predictions)} predictions, {len(records)} records, {len(golds)} golds"
        )

    rows = []
    for pred, record, gold in zip(predictions, records, golds):
        if isinstance(pred, Prediction):
            if pred.par_id != record.par_id:
                raise DataError(f"prediction for {pred.par_id} aligned with record {record.par_id}")
            pred = pred.label
        rows.append(
            ErrorRow(
                par_id=record.par_id,
                predicted=pred,
                text=record.text,
                gold=gold,
                keyword_hits=keyword_hits(record.text),
            )
        )

    n_correct = sum(1 for row in rows if row.correct)
    if disagreements_only:
        rows = [row for row in rows if not row.correct]
    return ErrorTable(rows=rows, n_scored=len(predictions), n_correct=n_correct)


# ---------------------------------------------------------------------------
# Renderers
# ---------------------------------------------------------------------------


def report_dict(report: MetricsReport) -> dict:
    """JSON-ready report with display rounding applied."""
    out = {
        "per_class": {
            CLASS_NAMES[c]: {
                "precision": round_report(m.precision),
                "recall": round_report(m.recall),
                "f1": round_report(m.f1),
            }
            for c, m in report.per_class.items()
        },
        "macro": {
            "precision": round_report(report.macro_p),
            "recall": round_report(report.macro_r),
            "f1": round_report(report.macro_f1),
        },
        "recall_rates": {CLASS_NAMES[c]: round_report(r) for c, r in report.recall_rates.items()},
    }
    if report.confusion is not None:
        out["confusion"] = report.confusion.model_dump()
    return out


def report_json(report: MetricsReport) -> str:
    return dumps_json(report_dict(report))


def report_frame(report: MetricsReport) -> pd.DataFrame:
    rows = [
        {
            "class": f"{c} ({CLASS_NAMES[c]})",
            "precision": round_report(m.precision),
            "recall": round_report(m.recall),
            "f1": round_report(m.f1),
        }
        for c, m in sorted(report.per_class.items())
    ]
    rows.append(
        {
            "class": "macro",
            "precision": round_report(report.macro_p),
            "recall": round_report(report.macro_r),
            "f1": round_report(report.macro_f1),
        }
    )
    return pd.DataFrame(rows, columns=["class", "precision", "recall", "f1"])


def report_text(report: MetricsReport) -> str:
    """Aligned plain-text table plus the confusion counts."""
    lines = [report_frame(report).to_string(index=False, float_format=lambda v: f"{v:.4f}")]
    cm = report.confusion
    if cm is not None:
        lines.append("")
        lines.append(f"confusion: tp={cm.tp} fp={cm.fp} fn={cm.fn} tn={cm.tn}")
        lines.append(
            f"predicted 0 (neg) correctly {report.recall_rates[0] * 100:.1f}%, "
            f"predicted 1 (pos) correctly {report.recall_rates[1] * 100:.1f}%"
        )
    return "\n".join(lines) + "\n"


def error_table_text(table: ErrorTable, max_text: int = 120) -> str:
    frame = pd.DataFrame(
        [
            {
                "par_id": row.par_id,
                "predicted": row.predicted,
                "gold": row.gold,
                "keywords": ",".join(row.keyword_hits),
                "text": row.text if len(row.text) <= max_text else row.text[: max_text - 3] + "...",
            }
            for row in table.rows
        ],
        columns=["par_id", "predicted", "gold", "keywords", "text"],
    )
    body = frame.to_string(index=False) if len(frame) else "(no rows)"
    return f"{body}\n\n{table.summary}\n"


def confusion_svg(cm: ConfusionMatrix, title: str = "Confusion matrix") -> str:
    """
    Heatmap of row-normalized rates (rows = gold, columns = predicted) as SVG.

    The SVG hash salt is fixed and the date is omitted, so identical counts
    render identical bytes.
    """
    counts = [[cm.tn, cm.fp], [cm.fn, cm.tp]]
    rates = [[_ratio(c, sum(row)) for c in row] for row in counts]

    with matplotlib.rc_context({"svg.hashsalt": "pclab", "svg.fonttype": "path"}):
        fig = Figure(figsize=(4, 3.5), layout="constrained")
        ax = fig.add_subplot()
        image = ax.imshow(rates, cmap="Blues", vmin=0.0, vmax=1.0)
        for i in range(2):
            for j in range(2):
                ax.text(
                    j, i, f"{rates[i][j] * 100:.1f}%\n({counts[i][j]})",
                    ha="center", va="center",
                    color="white" if rates[i][j] > 0.5 else "black",
                )
        ax.set_xticks([0, 1], labels=["0 (neg)", "1 (pos)"])
        ax.set_yticks([0, 1], labels=["0 (neg)", "1 (pos)"])
        ax.set_xlabel("predicted")
        ax.set_ylabel("gold")
        ax.set_title(title)
        fig.colorbar(image, ax=ax)
        buffer = io.StringIO()
        fig.savefig(buffer, format="svg", metadata={"Date": None})
    return buffer.getvalue()


def write_reports(report: MetricsReport, out_dir: Union[str, Path], prefix: str = "metrics") -> Dict[str, Path]:
    """Write JSON, text and (when a matrix is present) SVG renderings."""
    out_dir = Path(out_dir)
    paths = {
        "json": write_text(out_dir / f"{prefix}.json", report_json(report)),
        "text": write_text(out_dir / f"{prefix}.txt", report_text(report)),
    }
    if report.confusion is not None:
        paths["svg"] = write_text(out_dir / "confusion.svg", confusion_svg(report.confusion))
    return paths
