import pytest

from ancassist import emr_model as em
from ancassist import predicates as pr


def ctx(record: em.PatientRecord, as_of: str = "2023-05-01") -> pr.EvalContext:
    return pr.record_context(record, as_of)


def record_with(**sets) -> em.PatientRecord:
    rec = em.PatientRecord(record_id="r-pred")
    for path, value in sets.items():
        em.set_path(rec, path.replace("__", "."), value)
    return rec


class TestParsing:
    @pytest.mark.parametrize(
        "text",
        [
            "demographics.age > 35",
            "exists(current_pregnancy.lmp_date)",
            "ga_weeks() within [24, 28]",
            "latest(current_pregnancy.vitals.bp_systolic) >= 140",
            "not (current_pregnancy.labs.ogtt.status = 'done')",
            "demographics.age > 35 or current_pregnancy.overweight = 'yes' and psychosocial.smoking = 'no'",
        ],
    )
    def test_parses_and_typechecks(self, text):
        pr.check(pr.parse(text))

    def test_unicode_operators(self):
        node = pr.parse("demographics.age ≥ 35")
        assert isinstance(node, pr.Comparison) and node.op == ">="

    @pytest.mark.parametrize("text", ["demographics.age >", "(a = 1", "1 2", "and and"])
    def test_malformed_rejected(self, text):
        with pytest.raises(pr.PredicateParseError):
            pr.parse(text)

    def test_date_vs_integer_is_type_error(self):
        with pytest.raises(pr.PredicateTypeError):
            pr.check(pr.parse("current_pregnancy.lmp_date > 5"))

    def test_unregistered_path_is_type_error(self):
        with pytest.raises(pr.PredicateTypeError):
            pr.check(pr.parse("foo.bar = 1"))

    def test_ordering_on_text_rejected(self):
        with pytest.raises(pr.PredicateTypeError):
            pr.check(pr.parse("demographics.name > 'a'"))


class TestEvaluation:
    def test_number_comparison(self):
        rec = record_with(demographics__age=36)
        assert pr.evaluate(pr.parse("demographics.age > 35"), ctx(rec))
        assert not pr.evaluate(pr.parse("demographics.age > 40"), ctx(rec))

    def test_missing_operand_is_false_and_not_flips(self):
        rec = em.PatientRecord(record_id="r")
        node = pr.parse("current_pregnancy.labs.ogtt.status = 'done'")
        assert not pr.evaluate(node, ctx(rec))
        assert pr.evaluate(pr.parse("not (current_pregnancy.labs.ogtt.status = 'done')"), ctx(rec))

    def test_unknown_value_never_compares_numerically(self):
        rec = record_with(demographics__age="unknown")
        assert not pr.evaluate(pr.parse("demographics.age > 35"), ctx(rec))
        assert not pr.evaluate(pr.parse("demographics.age < 35"), ctx(rec))

    def test_exists(self):
        rec = record_with(current_pregnancy__lmp_date="2023-01-01")
        assert pr.evaluate(pr.parse("exists(current_pregnancy.lmp_date)"), ctx(rec))
        assert not pr.evaluate(pr.parse("exists(demographics.age)"), ctx(rec))

    def test_ga_weeks_and_within(self):
        rec = record_with(current_pregnancy__lmp_date="2023-01-01")
        c = ctx(rec, "2023-04-23")  # 16w0d
        assert pr.evaluate(pr.parse("ga_weeks() >= 16"), c)
        assert pr.evaluate(pr.parse("ga_weeks() within [16, 18]"), c)
        assert not pr.evaluate(pr.parse("ga_weeks() within [24, 28]"), c)
        # without an LMP, GA-based predicates never hold
        assert not pr.evaluate(pr.parse("ga_weeks() >= 0"), ctx(em.PatientRecord("r")))

    def test_latest_projects_last_entry(self):
        rec = em.PatientRecord(record_id="r")
        rec.current_pregnancy.vitals.append(
            {"date": "2023-04-01", "bp_systolic": 110, "bp_diastolic": 70}
        )
        rec.current_pregnancy.vitals.append(
            {"date": "2023-04-20", "bp_systolic": 150, "bp_diastolic": 95}
        )
        node = pr.parse("latest(current_pregnancy.vitals.bp_systolic) >= 140")
        assert pr.evaluate(node, ctx(rec))
        assert not pr.evaluate(node, ctx(em.PatientRecord("r")))

    def test_date_comparison_as_iso_strings(self):
        rec = record_with(current_pregnancy__lmp_date="2023-01-15")
        assert pr.evaluate(pr.parse("current_pregnancy.lmp_date > '2023-01-01'"), ctx(rec))

    def test_referenced_paths(self):
        node = pr.parse(
            "demographics.age > 35 and latest(current_pregnancy.vitals.bp_systolic) >= 140"
        )
        assert pr.referenced_paths(node) == {
            "demographics.age",
            "current_pregnancy.vitals.bp_systolic",
        }
        assert pr.uses_ga(pr.parse("ga_weeks() within [1, 2]"))
