import itertools
import json
from fractions import Fraction
from pathlib import Path

import pytest

from ancassist import eval_harness as ev

FIXTURES = Path(__file__).parent / "fixtures" / "eval"


@pytest.fixture(scope="module")
def gold():
    return json.loads((FIXTURES / "gold" / "rec1.json").read_text())


@pytest.fixture(scope="module")
def generated():
    return json.loads((FIXTURES / "generated" / "rec1.json").read_text())


@pytest.fixture(scope="module")
def annotations():
    return ev.load_annotations(FIXTURES / "annotations.json")


class TestCategorize:
    def test_all_eight_combinations(self):
        # the full (match, significance, recoverable) truth table
        expected = {
            (True, "insignificant", False): None,
            (True, "insignificant", True): None,
            (True, "significant", False): None,
            (True, "significant", True): None,
            (False, "insignificant", False): "no_action_needed",
            (False, "insignificant", True): "no_action_needed",
            (False, "significant", True): "easily_correctable",
            (False, "significant", False): "uncorrectable",
        }
        cases = itertools.product((True, False), ("insignificant", "significant"), (False, True))
        for matched, significance, recoverable in cases:
            assert ev.categorize(matched, significance, recoverable) == expected[
                (matched, significance, recoverable)
            ]


class TestScore:
    def test_table1_anchored_categories(self, gold, generated, annotations):
        report = ev.score(gold, generated, annotations)
        by_path = {v.path: v for v in report.discrepancies}
        assert by_path["demographics.education_level"].category == "no_action_needed"
        assert by_path["current_pregnancy.labs.medication.result"].category == "easily_correctable"
        assert by_path["obstetric_history.abortions"].category == "uncorrectable"
        assert report.field_accuracy == Fraction(22, 26)
        assert report.category_frequencies == {
            "no_action_needed": 1,
            "easily_correctable": 2,
            "uncorrectable": 1,
        }
        assert sum(report.category_frequencies.values()) == len(report.discrepancies)

    def test_case_noise_is_not_an_error(self, gold, generated, annotations):
        report = ev.score(gold, generated, annotations)
        name = next(v for v in report.verdicts if v.path == "demographics.name")
        assert name.outcome == "match"  # "Ayesha Bibi" vs "ayesha bibi"

    def test_self_comparison_is_perfect(self, gold, annotations):
        report = ev.score(gold, gold, annotations)
        assert report.field_accuracy == 1
        assert report.discrepancies == []

    def test_missing_annotation_raises(self, gold, generated):
        with pytest.raises(ev.MissingAnnotation):
            ev.score(gold, generated, {})

    def test_schema_mismatch(self, gold, annotations):
        with pytest.raises(ev.SchemaMismatch):
            ev.score(gold, {"demographics": {}}, annotations)

    def test_report_rendering_deterministic(self, gold, generated, annotations):
        a = ev.render_report(ev.score(gold, generated, annotations))
        b = ev.render_report(ev.score(gold, generated, annotations))
        assert a == b


class TestAggregateReviews:
    def test_fixture_counts(self):
        reviews = json.loads((FIXTURES / "reviews.json").read_text())
        agg = ev.aggregate_reviews(reviews)
        assert (agg.n, agg.accurate, agg.relevant) == (28, 27, 26)
        assert ev.render_reviews(agg) == "reviews: 28\naccurate: 27/28 (96.4%)\nrelevant: 26/28 (92.9%)\n"

    def test_empty_is_marker_not_zero_percent(self):
        agg = ev.aggregate_reviews([])
        assert agg.accuracy_rate is None
        assert "no reviews" in ev.render_reviews(agg)

    def test_all_positive(self):
        agg = ev.aggregate_reviews([{"accurate": True, "relevant": True}] * 5)
        assert ev.render_reviews(agg) == "reviews: 5\naccurate: 5/5 (100.0%)\nrelevant: 5/5 (100.0%)\n"

    def test_non_binary_rejected(self):
        with pytest.raises(ev.EvalError):
            ev.aggregate_reviews([{"accurate": "yes", "relevant": True}])


class TestCli:
    def test_score_golden(self, tmp_path, capsys):
        out = tmp_path / "report.txt"
        ev.main(
            [
                "score",
                "--gold", str(FIXTURES / "gold"),
                "--generated", str(FIXTURES / "generated"),
                "--annotations", str(FIXTURES / "annotations.json"),
                "--out", str(out),
            ]
        )
        golden = (FIXTURES.parent / "golden" / "eval_report.txt").read_text()
        assert out.read_text() == golden

    def test_reviews_golden(self, capsys):
        ev.main(["reviews", "--in", str(FIXTURES / "reviews.json")])
        captured = capsys.readouterr()
        golden = (FIXTURES.parent / "golden" / "eval_reviews.txt").read_text()
        assert captured.out == golden
