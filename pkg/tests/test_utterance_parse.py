from dataclasses import dataclass
from datetime import date, timedelta

import pytest
from hypothesis import given, strategies as st

from ancassist import utterance_parse as up

ENC = date(2023, 8, 30)


@pytest.fixture(scope="module")
def lexicon():
    return up.default_lexicon()


def extract(expected_type, text, lexicon, enc=ENC, choices=None):
    return up.extract_value(
        expected_type, text, encounter_date=enc, lexicon=lexicon, choices=choices
    )


class TestNormalize:
    def test_punctuation_and_folding(self, lexicon):
        assert up.normalize("Neechay Wali Jaga!!", lexicon.folding) == ["neche", "wali", "jaga"]

    def test_empty(self, lexicon):
        assert up.normalize("", lexicon.folding) == []

    def test_numeric_tokens_preserved(self, lexicon):
        assert up.normalize("BP 120/80", lexicon.folding) == ["bp", "120/80"]
        assert up.normalize("tareekh 2023-08-23 thi", lexicon.folding)[1] == "2023-08-23"

    @given(st.text(max_size=60))
    def test_idempotent(self, text):
        folding = up.default_folding()
        once = up.normalize(text, folding)
        again = up.normalize(" ".join(once), folding)
        assert again == once


class TestLexiconMapping:
    @pytest.mark.parametrize(
        "utterance,term",
        [
            ("neeche wali jaga", "vagina"),
            ("charbi", "discharge"),
            ("haddi pighal rahi hai", "infection"),
        ],
    )
    def test_paper_mappings(self, lexicon, utterance, term):
        tokens = up.normalize(utterance, lexicon.folding)
        tags = up.map_colloquialisms(tokens, lexicon)
        assert [t.clinical_term for t in tags] == [term]

    def test_longest_match_prefers_outer_form(self, lexicon):
        tokens = up.normalize("mujhe shadeed sar dard hai", lexicon.folding)
        tags = up.map_colloquialisms(tokens, lexicon)
        assert [t.clinical_term for t in tags] == ["severe_headache"]
        tokens = up.normalize("sar dard rehta hai", lexicon.folding)
        assert [t.clinical_term for t in up.map_colloquialisms(tokens, lexicon)] == ["headache"]
        tokens = up.normalize("pairo me sujan hai", lexicon.folding)
        assert [t.clinical_term for t in up.map_colloquialisms(tokens, lexicon)] == ["pedal_edema"]

    def test_non_overlapping_left_to_right(self, lexicon):
        tokens = up.normalize("pet dard aur sar dard", lexicon.folding)
        tags = up.map_colloquialisms(tokens, lexicon)
        assert [t.clinical_term for t in tags] == ["abdominal_pain", "headache"]
        spans = [(t.start, t.end) for t in tags]
        assert all(b[0] >= a[1] for a, b in zip(spans, spans[1:]))

    def test_duplicate_surface_rejected(self, lexicon):
        with pytest.raises(up.ParseError):
            up.Lexicon(
                entries=[
                    up.LexiconEntry(("dard",), "pain", "symptom"),
                    up.LexiconEntry(("dard",), "ache", "symptom"),
                ],
                folding={},
            )

    def test_unnormalized_surface_rejected(self):
        with pytest.raises(up.ParseError):
            up.Lexicon(
                entries=[up.LexiconEntry(("Dard!",), "pain", "symptom")],
                folding={},
            )


class TestIntegerExtraction:
    @pytest.mark.parametrize(
        "text,value",
        [("29", 29), ("mere 3 bache hain", 3), ("teen", 3), ("pachis saal", 25), ("teesra mahina", 3)],
    )
    def test_parses(self, lexicon, text, value):
        e = extract("integer", text, lexicon)
        assert e.value == value and e.method == "numeric"

    def test_negation_means_zero(self, lexicon):
        assert extract("integer", "koi nahi", lexicon).value == 0
        assert extract("integer", "nahi", lexicon).value == 0

    def test_uncertainty(self, lexicon):
        e = extract("integer", "pata nahi", lexicon)
        assert e.value == "unknown" and e.method == "lexicon"

    def test_failure(self, lexicon):
        assert extract("integer", "bohat si", lexicon).failed


class TestBpExtraction:
    @pytest.mark.parametrize("text", ["120/80", "BP 120/80 thi", "120 over 80", "120 aur 80"])
    def test_forms(self, lexicon, text):
        e = extract("bp_pair", text, lexicon)
        assert e.value == {"bp_systolic": 120, "bp_diastolic": 80}

    def test_implausible_pair_not_guessed(self, lexicon):
        assert extract("bp_pair", "12 aur 8", lexicon).failed


class TestDateExtraction:
    def test_relative_week_ago_english(self, lexicon):
        e = extract("date", "a week ago", lexicon)
        assert e.value == "2023-08-23"

    def test_relative_week_ago_urdu(self, lexicon):
        assert extract("date", "aik hafta pehle", lexicon).value == "2023-08-23"

    @pytest.mark.parametrize(
        "text,expected",
        [
            ("2023-08-23", "2023-08-23"),
            ("23/08/2023", "2023-08-23"),
            ("23rd august 2023", "2023-08-23"),
            ("23 august", "2023-08-23"),
            ("kal", "2023-08-29"),
            ("do din pehle", "2023-08-28"),
            ("3 hafte pehle", "2023-08-09"),
            ("do mahine pehle", "2023-07-01"),
        ],
    )
    def test_forms(self, lexicon, text, expected):
        assert extract("date", text, lexicon).value == expected

    def test_future_phrases_not_resolved(self, lexicon):
        assert extract("date", "agle hafte", lexicon).failed

    def test_resolution_invariant(self, lexicon):
        for n in (1, 2, 5, 10):
            e = extract("date", f"{n} din pehle", lexicon)
            assert date.fromisoformat(e.value) + timedelta(days=n) == ENC
        for n in (1, 2, 4):
            e = extract("date", f"{n} hafte pehle", lexicon)
            assert date.fromisoformat(e.value) + timedelta(weeks=n) == ENC


class TestYesNoExtraction:
    @pytest.mark.parametrize("text", ["ji haan", "haan", "bilkul", "yes", "theek hai"])
    def test_yes(self, lexicon, text):
        assert extract("yes_no", text, lexicon).value == "yes"

    @pytest.mark.parametrize("text", ["nahi", "ji nahi", "bilkul nahi", "no"])
    def test_no(self, lexicon, text):
        assert extract("yes_no", text, lexicon).value == "no"

    def test_uncertainty_wins_over_inner_negation(self, lexicon):
        assert extract("yes_no", "pata nahi", lexicon).value == "unknown"

    def test_failure(self, lexicon):
        assert extract("yes_no", "120/80", lexicon).failed


class TestChoiceExtraction:
    CHOICES = ["none", "diabetes", "hypertension", "heart_disease", "congenital_condition", "twins"]

    def test_direct_token(self, lexicon):
        e = extract("choice", "matric tak", lexicon, choices=["none", "primary", "matric"])
        assert e.value == "matric"

    def test_ordinal(self, lexicon):
        assert extract("choice", "2", lexicon, choices=self.CHOICES).value == "diabetes"

    def test_lexicon_alias(self, lexicon):
        assert extract("choice", "sugar hai", lexicon, choices=self.CHOICES).value == "diabetes"
        assert extract("choice", "ammi ko bp hai", lexicon, choices=self.CHOICES).value == "hypertension"

    def test_negation_maps_to_none_option(self, lexicon):
        assert extract("choice", "koi nahi", lexicon, choices=self.CHOICES).value == "none"

    def test_failure(self, lexicon):
        assert extract("choice", "wxz", lexicon, choices=self.CHOICES).failed


class TestFreeTextExtraction:
    def test_lexicon_term_preferred(self, lexicon):
        e = extract("free_text", "neeche wali jaga se charbi aa rahi hai", lexicon)
        assert e.value == "discharge" and e.method == "lexicon"

    def test_verbatim_fallback(self, lexicon):
        e = extract("free_text", "Ayesha Bibi", lexicon)
        assert e.value == "Ayesha Bibi" and e.method == "verbatim"

    def test_uncertainty(self, lexicon):
        assert extract("free_text", "pata nahi", lexicon).value == "unknown"


@given(
    st.lists(
        st.text(alphabet="wxz", min_size=1, max_size=6), min_size=1, max_size=5
    )
)
def test_never_fabricates_typed_values(words):
    """No digits, no date words, no lexicon hits: extraction must fail, not guess."""
    lexicon = up.default_lexicon()
    text = " ".join(words)
    for expected_type in ("integer", "date", "bp_pair", "yes_no", "choice"):
        e = up.extract_value(
            expected_type, text, encounter_date=ENC, lexicon=lexicon, choices=["alpha", "beta"]
        )
        assert e.failed, (expected_type, text)


@dataclass
class StubNode:
    expected_type: str
    modalities: tuple = ("text", "numeral", "voice")
    choices: list | None = None
    target_path: str = "demographics.age"
    id: str = "n1"


@dataclass
class StubMessage:
    kind: str
    body: str | None = None
    media_ref: str | None = None


class TestParseUtterance:
    def test_voice_through_mock_asr(self, lexicon):
        adapters = up.Adapters(asr=up.MockAsrAdapter())
        node = StubNode(expected_type="integer")
        msg = StubMessage(kind="audio_ref", media_ref="voice_002")  # "teesra mahina"
        e = up.parse_utterance(node, msg, adapters=adapters, encounter_date=ENC, lexicon=lexicon)
        assert e.value == 3

    def test_mock_asr_is_deterministic(self):
        mock = up.MockAsrAdapter()
        a = mock.transcribe("voice_005")
        b = mock.transcribe("voice_005")
        assert a == b and a.transcript == "neeche wali jaga se charbi aa rahi hai"

    def test_unknown_audio_ref_unreadable(self, lexicon):
        adapters = up.Adapters(asr=up.MockAsrAdapter())
        node = StubNode(expected_type="integer")
        msg = StubMessage(kind="audio_ref", media_ref="voice_999")
        with pytest.raises(up.MediaUnreadable):
            up.parse_utterance(node, msg, adapters=adapters, encounter_date=ENC, lexicon=lexicon)

    def test_voice_on_text_only_node(self, lexicon):
        adapters = up.Adapters(asr=up.MockAsrAdapter())
        node = StubNode(expected_type="integer", modalities=("text",))
        msg = StubMessage(kind="audio_ref", media_ref="voice_002")
        with pytest.raises(up.ModalityNotAllowed):
            up.parse_utterance(node, msg, adapters=adapters, encounter_date=ENC, lexicon=lexicon)

    def test_image_returns_pending_media(self, lexicon):
        node = StubNode(expected_type="yes_no")
        msg = StubMessage(kind="image_ref", media_ref="img_1")
        e = up.parse_utterance(node, msg, adapters=up.Adapters(), encounter_date=ENC, lexicon=lexicon)
        assert e.value == up.PENDING_MEDIA and e.failed

    def test_schema_invalid_adapter_output_discarded(self, lexicon):
        class BadAdapter:
            def extract(self, prompt_context, utterance, schema):
                return up.Extraction("integer", "thirty-ish", None, "plugin", 0.9)

        adapters = up.Adapters(extractor=BadAdapter())
        node = StubNode(expected_type="integer")
        msg = StubMessage(kind="text", body="wxz")
        e = up.parse_utterance(node, msg, adapters=adapters, encounter_date=ENC, lexicon=lexicon)
        assert e.failed  # rule-based fallback kept

    def test_valid_adapter_output_fills_gap(self, lexicon):
        class GoodAdapter:
            def extract(self, prompt_context, utterance, schema):
                return up.Extraction("integer", 30, None, "plugin", 0.9)

        adapters = up.Adapters(extractor=GoodAdapter())
        node = StubNode(expected_type="integer")
        msg = StubMessage(kind="text", body="wxz")
        e = up.parse_utterance(node, msg, adapters=adapters, encounter_date=ENC, lexicon=lexicon)
        assert e.value == 30 and e.method == "plugin"

    def test_adapter_never_overrides_rule_success(self, lexicon):
        class NoisyAdapter:
            def extract(self, prompt_context, utterance, schema):
                raise AssertionError("must not be consulted when rules succeed")

        adapters = up.Adapters(extractor=NoisyAdapter())
        node = StubNode(expected_type="integer")
        msg = StubMessage(kind="text", body="29")
        e = up.parse_utterance(node, msg, adapters=adapters, encounter_date=ENC, lexicon=lexicon)
        assert e.value == 29
