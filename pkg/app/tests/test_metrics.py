"""
Tests for scoring, rounding and error-analysis outputs.
"""

import json
import random

import pytest
from sklearn.metrics import precision_recall_fscore_support

from app.core.exceptions import DataError
from app.schemas.corpus import ParagraphRecord
from app.schemas.metrics import ConfusionMatrix
from app.services.metrics import (
    confusion,
    confusion_svg,
    error_table,
    error_table_text,
    evaluate,
    keyword_hits,
    macro,
    prf,
    report_dict,
    report_text,
    round_report,
    write_reports,
)


def brute_force(preds, golds, cls):
    tp = sum(1 for p, g in zip(preds, golds) if p == cls and g == cls)
    predicted = sum(1 for p in preds if p == cls)
    actual = sum(1 for g in golds if g == cls)
    precision = tp / predicted if predicted else 0.0
    recall = tp / actual if actual else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


class TestConfusion:
    """Test confusion counting."""

    def test_perfect_prediction(self):
        assert confusion([1, 1, 0], [1, 1, 0]) == ConfusionMatrix(tp=2, tn=1, fp=0, fn=0)

    def test_hand_tally(self):
        cm = confusion([0, 0, 1, 1, 0], [0, 0, 0, 1, 1])
        assert (cm.tn, cm.fp, cm.fn, cm.tp) == (2, 1, 1, 1)
        assert cm.total == 5

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            confusion([1, 0], [1])

    def test_empty(self):
        with pytest.raises(DataError):
            confusion([], [])

    def test_non_binary_label(self):
        with pytest.raises(DataError):
            confusion([2, 0], [1, 0])


class TestPrecisionRecallF1:
    """Test per-class and macro scoring."""

    def test_formula(self):
        assert prf(ConfusionMatrix(tp=1, fp=1, fn=1, tn=0)) == (0.5, 0.5, 0.5)

    def test_zero_over_zero_is_zero(self):
        assert prf(ConfusionMatrix(tp=0, fp=0, fn=3, tn=2)) == (0.0, 0.0, 0.0)

    def test_class_zero_uses_swapped_matrix(self):
        cm = ConfusionMatrix(tp=1, fp=1, fn=1, tn=2)
        precision, recall, f1 = prf(cm, class_id=0)
        assert precision == pytest.approx(2 / 3)
        assert recall == pytest.approx(2 / 3)
        assert f1 == pytest.approx(2 / 3)

    def test_macro_reported_value(self):
        report = macro({0: (0.9, 0.99, 0.9549), 1: (0.6, 0.47, 0.5260)})
        assert report.macro_f1 == pytest.approx(0.74045)
        assert round_report(report.macro_f1) == 0.7405

    def test_macro_symmetric_classes(self):
        report = macro({0: (0.3, 0.3, 0.3), 1: (0.3, 0.3, 0.3)})
        assert report.macro_f1 == pytest.approx(0.3)

    def test_macro_from_tally(self):
        report = evaluate([0, 0, 1, 1, 0], [0, 0, 0, 1, 1])
        assert round_report(report.macro_f1) == 0.5833

    def test_macro_needs_both_classes(self):
        with pytest.raises(DataError):
            macro({1: (0.5, 0.5, 0.5)})

    def test_random_cases_match_definitions(self):
        rng = random.Random(1234)
        for _ in range(1000):
            n = rng.randint(1, 50)
            golds = [rng.randint(0, 1) for _ in range(n)]
            preds = [rng.randint(0, 1) for _ in range(n)]
            report = evaluate(preds, golds)
            sk_p, sk_r, sk_f, _ = precision_recall_fscore_support(
                golds, preds, labels=[0, 1], zero_division=0
            )
            for cls in (0, 1):
                metrics = report.per_class[cls]
                expected = brute_force(preds, golds, cls)
                assert metrics.precision == pytest.approx(expected[0], abs=1e-12)
                assert metrics.recall == pytest.approx(expected[1], abs=1e-12)
                assert metrics.f1 == pytest.approx(expected[2], abs=1e-12)
                assert metrics.precision == pytest.approx(sk_p[cls], abs=1e-12)
                assert metrics.recall == pytest.approx(sk_r[cls], abs=1e-12)
                assert metrics.f1 == pytest.approx(sk_f[cls], abs=1e-12)
            assert report.macro_f1 == pytest.approx(sum(sk_f) / 2, abs=1e-12)

    def test_label_swap_symmetry(self):
        rng = random.Random(99)
        for _ in range(200):
            n = rng.randint(1, 30)
            golds = [rng.randint(0, 1) for _ in range(n)]
            preds = [rng.randint(0, 1) for _ in range(n)]
            report = evaluate(preds, golds)
            flipped = evaluate([1 - p for p in preds], [1 - g for g in golds])
            assert flipped.per_class[0] == report.per_class[1]
            assert flipped.per_class[1] == report.per_class[0]
            assert flipped.macro_f1 == pytest.approx(report.macro_f1, abs=1e-15)
            assert flipped.macro_p == pytest.approx(report.macro_p, abs=1e-15)
            assert flipped.macro_r == pytest.approx(report.macro_r, abs=1e-15)


class TestRecallRates:
    """Test the share of each gold class predicted correctly."""

    def test_rates_on_constructed_matrix(self):
        preds = [0] * 964 + [1] * 36 + [1] * 478 + [0] * 522
        golds = [0] * 1000 + [1] * 1000
        report = evaluate(preds, golds)
        assert report.recall_rates[0] == pytest.approx(0.964)
        assert report.recall_rates[1] == pytest.approx(0.478)
        text = report_text(report)
        assert "predicted 0 (neg) correctly 96.4%" in text
        assert "predicted 1 (pos) correctly 47.8%" in text


class TestRounding:
    """Test display rounding."""

    @pytest.mark.parametrize(
        "value,expected",
        [
            (0.74045, 0.7405),
            ((0.9549 + 0.5260) / 2, 0.7405),
            (0.58333333, 0.5833),
            (0.12344999, 0.1234),
            (1.0, 1.0),
            (0.0, 0.0),
        ],
    )
    def test_round_report(self, value, expected):
        assert round_report(value) == expected

    def test_report_dict_layout(self):
        report = evaluate([0, 0, 1, 1, 0], [0, 0, 0, 1, 1])
        out = report_dict(report)
        assert out["macro"]["f1"] == 0.5833
        assert out["per_class"]["pos"] == {"precision": 0.5, "recall": 0.5, "f1": 0.5}
        assert out["per_class"]["neg"]["f1"] == 0.6667
        assert out["confusion"] == {"tp": 1, "fp": 1, "fn": 1, "tn": 2}
        assert out["recall_rates"] == {"neg": 0.6667, "pos": 0.5}


class TestErrorTable:
    """Test the example-prediction table."""

    @pytest.fixture
    def nine_records(self):
        labels = [0, 2, 0, 3, 1, 4, 0, 2, 0]
        return [
            ParagraphRecord(
                par_id=str(i),
                text=f"paragraph {i} about poor families and the homeless",
                orig_label=label,
                binary_label=int(label >= 2),
            )
            for i, label in enumerate(labels)
        ]

    def test_nine_rows_five_correct(self, nine_records):
        golds = [r.binary_label for r in nine_records]
        preds = golds[:5] + [1 - g for g in golds[5:]]
        table = error_table(preds, nine_records)
        assert len(table.rows) == 9
        assert table.summary == "correctly predicts 5 out of the 9"
        assert "correctly predicts 5 out of the 9" in error_table_text(table)

    def test_disagreements_only(self, nine_records):
        golds = [r.binary_label for r in nine_records]
        assert error_table(golds, nine_records, disagreements_only=True).rows == []
        preds = golds[:5] + [1 - g for g in golds[5:]]
        table = error_table(preds, nine_records, disagreements_only=True)
        assert [row.par_id for row in table.rows] == ["5", "6", "7", "8"]
        assert table.n_correct == 5

    def test_misaligned_inputs(self, nine_records):
        with pytest.raises(DataError):
            error_table([0, 1], nine_records)

    def test_unlabeled_records_need_golds(self):
        records = [ParagraphRecord(par_id="a", text="x")]
        with pytest.raises(DataError):
            error_table([0], records)
        assert error_table([0], records, golds=[0]).n_correct == 1

    def test_keyword_hits(self):
        assert keyword_hits("Help for Poor Families and the in-need") == ["in-need", "poor-families"]
        assert keyword_hits("Disabled access for refugees") == ["disabled"]
        assert keyword_hits("nothing relevant here") == []


class TestReportArtifacts:
    """Test rendered report files."""

    def test_svg_is_deterministic(self):
        cm = ConfusionMatrix(tp=478, fp=36, fn=522, tn=964)
        first = confusion_svg(cm)
        assert first.lstrip().startswith("<?xml") or "<svg" in first
        assert confusion_svg(cm) == first

    def test_write_reports(self, tmp_path):
        report = evaluate([0, 1, 1, 0], [0, 1, 0, 0])
        paths = write_reports(report, tmp_path)
        assert set(paths) == {"json", "text", "svg"}
        data = json.loads((tmp_path / "metrics.json").read_text(encoding="utf-8"))
        assert data["confusion"]["fp"] == 1
        assert (tmp_path / "confusion.svg").read_bytes() == paths["svg"].read_bytes()
