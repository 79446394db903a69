from datetime import date, timedelta

import pytest
from hypothesis import given, strategies as st

from ancassist import emr_model as em


def make_record(**kwargs) -> em.PatientRecord:
    return em.PatientRecord(record_id="r-test", **kwargs)


class TestComputeEdd:
    def test_plain_year(self):
        assert em.compute_edd(date(2023, 1, 1)) == date(2023, 10, 8)

    def test_across_leap_day(self):
        assert em.compute_edd(date(2024, 2, 29)) == date(2024, 12, 5)

    def test_future_lmp_rejected(self):
        with pytest.raises(em.RecordError) as err:
            em.compute_edd(date(2023, 6, 2), today=date(2023, 6, 1))
        assert err.value.code == "future_lmp"

    @given(st.dates(min_value=date(1990, 1, 1), max_value=date(2100, 1, 1)))
    def test_always_280_days(self, lmp):
        assert (em.compute_edd(lmp) - lmp).days == 280


class TestGestationalAge:
    def test_zero_elapsed(self):
        ga = em.gestational_age(date(2023, 1, 1), date(2023, 1, 1))
        assert (ga.weeks, ga.days) == (0, 0)

    def test_sixteen_weeks(self):
        ga = em.gestational_age(date(2023, 1, 1), date(2023, 4, 23))
        assert (ga.weeks, ga.days) == (16, 0)

    def test_as_of_before_lmp(self):
        with pytest.raises(em.RecordError) as err:
            em.gestational_age(date(2023, 1, 1), date(2022, 12, 31))
        assert err.value.code == "as_of_before_lmp"

    def test_beyond_term_warning(self):
        ga = em.gestational_age(date(2023, 1, 1), date(2023, 1, 1) + timedelta(weeks=45))
        assert ga.beyond_term

    @given(
        st.dates(min_value=date(2000, 1, 1), max_value=date(2050, 1, 1)),
        st.integers(min_value=0, max_value=400),
        st.integers(min_value=0, max_value=50),
    )
    def test_exact_and_monotone(self, lmp, elapsed, extra):
        a = em.gestational_age(lmp, lmp + timedelta(days=elapsed))
        assert a.weeks * 7 + a.days == elapsed
        assert 0 <= a.days <= 6
        b = em.gestational_age(lmp, lmp + timedelta(days=elapsed + extra))
        assert (b.weeks, b.days) >= (a.weeks, a.days)


class TestValidateRecord:
    def test_empty_record_clean(self):
        assert em.validate_record(make_record()) == []

    def test_para_plus_abortions_exceeds_gravida(self):
        rec = make_record()
        rec.obstetric_history.gravida = 1
        rec.obstetric_history.para = 1
        rec.obstetric_history.abortions = 1
        findings = em.validate_record(rec)
        assert any(f.path == "obstetric_history" and f.severity == "error" for f in findings)

    def test_bp_inside_ranges_clean(self):
        rec = make_record()
        rec.current_pregnancy.vitals.append(
            {"date": "2023-05-01", "bp_systolic": 120, "bp_diastolic": 80}
        )
        assert em.validate_record(rec) == []

    def test_bp_bounds_and_ordering(self):
        rec = make_record()
        rec.current_pregnancy.vitals.append(
            {"date": "2023-05-01", "bp_systolic": 300, "bp_diastolic": 80}
        )
        rec.current_pregnancy.vitals.append(
            {"date": "2023-05-02", "bp_systolic": 80, "bp_diastolic": 90}
        )
        reasons = {f.path for f in em.validate_record(rec)}
        assert "current_pregnancy.vitals[0].bp_systolic" in reasons
        assert "current_pregnancy.vitals[1]" in reasons

    def test_age_bounds(self):
        rec = make_record()
        rec.demographics.age = 8
        assert em.validate_record(rec)

    def test_unsorted_vitals_flagged(self):
        rec = make_record()
        rec.current_pregnancy.vitals.append({"date": "2023-05-02"})
        rec.current_pregnancy.vitals.append({"date": "2023-05-01"})
        assert any(f.path == "current_pregnancy.vitals" for f in em.validate_record(rec))

    def test_idempotent_and_pure(self):
        rec = make_record()
        rec.demographics.age = 8
        before = em.canonical_json(rec)
        first = em.validate_record(rec)
        second = em.validate_record(rec)
        assert first == second
        assert em.canonical_json(rec) == before


class TestPaths:
    def test_registry_covers_written_paths(self):
        assert em.is_registered("demographics.age")
        assert em.is_registered("obstetric_history.miscarriages[2].dc_performed")
        assert em.is_registered("current_pregnancy.labs.ogtt.status")
        assert not em.is_registered("foo.bar")

    def test_set_and_get_roundtrip(self):
        rec = make_record()
        concrete = em.set_path(rec, "obstetric_history.miscarriages[0].gestational_age_weeks", 10)
        assert concrete == "obstetric_history.miscarriages[0].gestational_age_weeks"
        assert em.get_path(rec, concrete) == 10

    def test_append_path(self):
        rec = make_record()
        concrete = em.set_path(rec, "psychosocial.wellbeing_notes[]", "thaka hua mehsoos")
        assert concrete == "psychosocial.wellbeing_notes[0]"
        assert rec.psychosocial.wellbeing_notes == ["thaka hua mehsoos"]

    def test_unknown_path_rejected(self):
        with pytest.raises(em.UnknownPathError):
            em.set_path(make_record(), "foo.bar", 1)

    def test_read_only_path_rejected(self):
        with pytest.raises(em.RecordError):
            em.set_path(make_record(), "current_pregnancy.edd", "2023-10-08")

    def test_preexisting_membership(self):
        rec = make_record()
        assert em.get_path(rec, "current_pregnancy.preexisting.diabetes") is em.MISSING
        em.set_path(rec, "current_pregnancy.preexisting.diabetes", "yes")
        assert em.get_path(rec, "current_pregnancy.preexisting.diabetes") == "yes"
        em.set_path(rec, "current_pregnancy.preexisting.diabetes", "no")
        rec.provenance["current_pregnancy.preexisting.diabetes"] = em.FieldProvenance(
            source="patient_reported",
            verified=False,
            encounter_id="e1",
            site_id="desk",
            timestamp="2023-05-01T10:00:00",
        )
        assert em.get_path(rec, "current_pregnancy.preexisting.diabetes") == "no"

    def test_labs_path(self):
        rec = make_record()
        em.set_path(rec, "current_pregnancy.labs.ogtt.status", "pending")
        assert rec.current_pregnancy.labs["ogtt"]["status"] == "pending"
        assert em.get_path(rec, "current_pregnancy.labs.ogtt.status") == "pending"


class TestCanonicalSerialization:
    def test_stable_bytes(self):
        rec = make_record()
        rec.current_pregnancy.preexisting.update({"diabetes", "hypertension"})
        assert em.canonical_json(rec) == em.canonical_json(rec)
        assert '"preexisting":["diabetes","hypertension"]' in em.canonical_json(rec)

    def test_ascii_only(self):
        rec = make_record()
        rec.demographics.name = "عائشہ"
        assert em.canonical_json(rec).isascii()
