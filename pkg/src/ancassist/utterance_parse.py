"""Code-mixed utterance normalization and typed value extraction.

Turns Roman-Urdu / Urdu / English patient messages into typed values:
normalization (folding table for Roman-Urdu spelling variance), a bilingual
colloquialism lexicon mapped onto clinical terms, and per-type extractors for
integers, dates (absolute and relative), blood-pressure pairs, yes/no and
choice answers. Voice arrives through a pluggable transcription adapter; an
optional external extractor adapter may fill values the rules could not, but
only through schema validation, so it can never invent record fields.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import date, timedelta
from functools import lru_cache
from importlib import resources
from typing import Any, Protocol

from .emr_model import REFUSED, UNKNOWN

PENDING_MEDIA = "pending_media"

LEXICON_CATEGORIES = ("anatomy", "symptom", "condition", "affirmation", "negation", "uncertainty")

# Static vocabularies below are written in natural spelling; they are passed
# through the active folding table before matching (see _folded_*), so they
# stay consistent with normalized input no matter what table is loaded.
_RELATIVE_UNITS = {
    "din": 1, "dino": 1, "day": 1, "days": 1, "roz": 1,
    "hafta": 7, "hafte": 7, "haftay": 7, "week": 7, "weeks": 7,
    "mahina": 30, "mahine": 30, "mahinay": 30, "month": 30, "months": 30,
}
_AGO_MARKERS = {"pehle", "pahle", "qabl", "ago", "before", "huey", "hue"}
_FUTURE_MARKERS = {"agle", "agli", "next", "baad"}
_ONE_WORDS = {"a", "an", "aik", "ek"}
_DAY_SINGLES = {"kal": 1, "parso": 2, "aaj": 0, "yesterday": 1, "today": 0}
_MONTHS = {
    "january": 1, "jan": 1, "janvari": 1,
    "february": 2, "feb": 2, "farvari": 2,
    "march": 3, "mar": 3,
    "april": 4, "apr": 4, "aprel": 4,
    "may": 5, "mai": 5,
    "june": 6, "jun": 6,
    "july": 7, "jul": 7, "julai": 7,
    "august": 8, "aug": 8, "agast": 8,
    "september": 9, "sep": 9, "satambar": 9,
    "october": 10, "oct": 10, "aktubar": 10,
    "november": 11, "nov": 11, "navambar": 11,
    "december": 12, "dec": 12, "disambar": 12,
}

_BP_TOKEN_RE = re.compile(r"^(\d{2,3})/(\d{2,3})$")
_BP_SEPARATORS = {"over", "pe", "par", "aur", "by", "upar"}
_DAY_TOKEN_RE = re.compile(r"^(\d{1,2})(st|nd|rd|th)?$")
_SLASH_DATE_RE = re.compile(r"^(\d{1,2})/(\d{1,2})/(\d{4})$")


def _folding_key(folding: dict[str, str]) -> tuple:
    return tuple(sorted(folding.items()))


@lru_cache(maxsize=32)
def _folded_maps(key: tuple) -> dict[str, dict]:
    folding = dict(key)
    fold = lambda w: _fold_token(w, folding)  # noqa: E731
    return {
        "units": {fold(k): v for k, v in _RELATIVE_UNITS.items()},
        "months": {fold(k): v for k, v in _MONTHS.items()},
        "singles": {fold(k): v for k, v in _DAY_SINGLES.items()},
        "ago": {fold(w): None for w in _AGO_MARKERS},
        "future": {fold(w): None for w in _FUTURE_MARKERS},
        "one": {fold(w): None for w in _ONE_WORDS},
        "bp_sep": {fold(w): None for w in _BP_SEPARATORS},
    }


def _vocab(lexicon: "Lexicon") -> dict[str, dict]:
    return _folded_maps(_folding_key(lexicon.folding))


class ParseError(ValueError):
    pass


class ModalityNotAllowed(ParseError):
    pass


class MediaUnreadable(ParseError):
    pass


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


def _fold_token(token: str, folding: dict[str, str]) -> str:
    # Apply to fixpoint so normalize(normalize(x)) == normalize(x) even for
    # chains like ay -> e producing new doubled vowels.
    for _ in range(10):
        out = token
        for seq, repl in folding.items():
            out = out.replace(seq, repl)
        if out == token:
            return out
        token = out
    return token


def normalize(text: str, folding: dict[str, str] | None = None) -> list[str]:
    """Lowercase, strip punctuation, fold spelling variants, tokenize.

    Tokens containing digits are exempt from folding and keep internal
    ``/ - . :`` so clinical values like 120/80 and ISO dates survive.
    """
    folding = folding if folding is not None else {}
    tokens: list[str] = []
    for raw in text.lower().split():
        if any(ch.isdigit() for ch in raw):
            tok = "".join(ch for ch in raw if ch.isalnum() or ch in "/-.:")
            tok = tok.strip("/-.:")
            if tok:
                tokens.append(tok)
            continue
        tok = "".join(ch for ch in raw if ch.isalnum())
        if not tok:
            continue
        tokens.append(_fold_token(tok, folding))
    return tokens


# ---------------------------------------------------------------------------
# Lexicon
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LexiconEntry:
    surface: tuple[str, ...]  # pre-normalized token sequence
    clinical_term: str
    category: str


@dataclass(frozen=True)
class TagSpan:
    start: int
    end: int  # exclusive
    clinical_term: str
    category: str


@dataclass
class Lexicon:
    entries: list[LexiconEntry]
    folding: dict[str, str]
    numbers: dict[str, int] = field(default_factory=dict)
    urgent_terms: frozenset[str] = frozenset()

    def __post_init__(self):
        self._index: dict[tuple[str, ...], LexiconEntry] = {}
        for entry in self.entries:
            if entry.category not in LEXICON_CATEGORIES:
                raise ParseError(f"unknown lexicon category {entry.category!r}")
            if entry.surface in self._index:
                raise ParseError(f"duplicate surface form {' '.join(entry.surface)!r}")
            if tuple(normalize(" ".join(entry.surface), self.folding)) != entry.surface:
                raise ParseError(f"surface form not pre-normalized: {' '.join(entry.surface)!r}")
            self._index[entry.surface] = entry
        self._max_len = max((len(s) for s in self._index), default=1)

    def lookup(self, tokens: tuple[str, ...]) -> LexiconEntry | None:
        return self._index.get(tokens)

    @property
    def max_surface_len(self) -> int:
        return self._max_len


def load_lexicon(data: dict, folding: dict[str, str]) -> Lexicon:
    entries = []
    for item in data["entries"]:
        for form in item["surface_forms"]:
            entries.append(
                LexiconEntry(
                    surface=tuple(form.split()),
                    clinical_term=item["clinical_term"],
                    category=item["category"],
                )
            )
    return Lexicon(
        entries=entries,
        folding=folding,
        # number words may be written in natural spelling; fold them here
        numbers={_fold_token(k, folding): int(v) for k, v in data.get("numbers", {}).items()},
        urgent_terms=frozenset(data.get("urgent_terms", [])),
    )


def _load_packaged(name: str) -> dict:
    return json.loads(resources.files("ancassist.data").joinpath(name).read_text("utf-8"))


def default_folding() -> dict[str, str]:
    return _load_packaged("lexicon/folding_v1.json")["replacements"]


def default_lexicon() -> Lexicon:
    return load_lexicon(_load_packaged("lexicon/lexicon_v1.json"), default_folding())


def map_colloquialisms(tokens: list[str], lexicon: Lexicon) -> list[TagSpan]:
    """Longest-match, left-to-right, non-overlapping lexicon matching."""
    tags: list[TagSpan] = []
    i = 0
    n = len(tokens)
    while i < n:
        matched = None
        for width in range(min(lexicon.max_surface_len, n - i), 0, -1):
            entry = lexicon.lookup(tuple(tokens[i : i + width]))
            if entry is not None:
                matched = (width, entry)
                break
        if matched:
            width, entry = matched
            tags.append(TagSpan(i, i + width, entry.clinical_term, entry.category))
            i += width
        else:
            i += 1
    return tags


# ---------------------------------------------------------------------------
# Typed extraction
# ---------------------------------------------------------------------------


@dataclass
class Extraction:
    target_type: str
    value: Any  # typed value | "unknown" | "refused" | "pending_media" | None
    span: tuple[int, int] | None
    method: str  # lexicon | numeric | date | plugin | verbatim | fallback_unknown
    confidence: float = 1.0

    @property
    def failed(self) -> bool:
        return self.method == "fallback_unknown"


def _fallback(target_type: str) -> Extraction:
    return Extraction(target_type, UNKNOWN, None, "fallback_unknown", 0.0)


def _uncertainty_span(tags: list[TagSpan]) -> TagSpan | None:
    for tag in tags:
        if tag.category == "uncertainty":
            return tag
    return None


def _first_category(tags: list[TagSpan], *categories: str) -> TagSpan | None:
    for tag in tags:
        if tag.category in categories:
            return tag
    return None


def _parse_int_token(token: str) -> int | None:
    if token.isdigit():
        return int(token)
    m = _DAY_TOKEN_RE.match(token)
    if m and m.group(2):
        return int(m.group(1))
    return None


def _extract_integer(tokens, tags, lexicon) -> Extraction:
    unc = _uncertainty_span(tags)
    if unc:
        return Extraction("integer", UNKNOWN, (unc.start, unc.end), "lexicon")
    for i, tok in enumerate(tokens):
        value = _parse_int_token(tok)
        if value is not None:
            return Extraction("integer", value, (i, i + 1), "numeric")
    for i, tok in enumerate(tokens):
        if tok in lexicon.numbers:
            return Extraction("integer", lexicon.numbers[tok], (i, i + 1), "numeric")
    neg = _first_category(tags, "negation")
    if neg and not _first_category(tags, "affirmation"):
        # "koi nahi" as a count answer means zero
        return Extraction("integer", 0, (neg.start, neg.end), "lexicon")
    return _fallback("integer")


def _extract_bp(tokens, tags, lexicon) -> Extraction:
    unc = _uncertainty_span(tags)
    if unc:
        return Extraction("bp_pair", UNKNOWN, (unc.start, unc.end), "lexicon")
    for i, tok in enumerate(tokens):
        m = _BP_TOKEN_RE.match(tok)
        if m:
            return Extraction(
                "bp_pair",
                {"bp_systolic": int(m.group(1)), "bp_diastolic": int(m.group(2))},
                (i, i + 1),
                "numeric",
            )
    separators = _vocab(lexicon)["bp_sep"]
    numeric = [(i, int(t)) for i, t in enumerate(tokens) if t.isdigit()]
    for (i, sys_), (j, dia) in zip(numeric, numeric[1:]):
        between = set(tokens[i + 1 : j])
        if j - i > 3 or (between and not between <= set(separators)):
            continue
        if 60 <= sys_ <= 260 and 30 <= dia <= 160:
            return Extraction(
                "bp_pair", {"bp_systolic": sys_, "bp_diastolic": dia}, (i, j + 1), "numeric"
            )
    return _fallback("bp_pair")


def _extract_date(tokens, tags, lexicon, encounter_date: date) -> Extraction:
    unc = _uncertainty_span(tags)
    if unc:
        return Extraction("date", UNKNOWN, (unc.start, unc.end), "lexicon")
    vocab = _vocab(lexicon)

    for i, tok in enumerate(tokens):
        try:
            return Extraction("date", date.fromisoformat(tok).isoformat(), (i, i + 1), "date")
        except ValueError:
            pass
        m = _SLASH_DATE_RE.match(tok)
        if m:  # day/month/year
            try:
                d = date(int(m.group(3)), int(m.group(2)), int(m.group(1)))
                return Extraction("date", d.isoformat(), (i, i + 1), "date")
            except ValueError:
                continue

    # "23rd august 2023" style: day, month name, optional year
    for i, tok in enumerate(tokens):
        if tok not in vocab["months"]:
            continue
        day = _parse_int_token(tokens[i - 1]) if i > 0 else None
        if day is None:
            continue
        year = None
        if i + 1 < len(tokens) and tokens[i + 1].isdigit() and len(tokens[i + 1]) == 4:
            year = int(tokens[i + 1])
        try:
            d = date(year if year else encounter_date.year, vocab["months"][tok], day)
        except ValueError:
            continue
        if year is None and d > encounter_date:
            d = d.replace(year=d.year - 1)
        return Extraction("date", d.isoformat(), (i - 1, i + (2 if year else 1)), "date")

    if any(t in vocab["future"] for t in tokens):
        return _fallback("date")

    for i, tok in enumerate(tokens):
        if tok in vocab["singles"]:
            d = encounter_date - timedelta(days=vocab["singles"][tok])
            return Extraction("date", d.isoformat(), (i, i + 1), "date")

    # relative: [count] unit [ago-marker]; count defaults to one
    for i, tok in enumerate(tokens):
        if tok not in vocab["units"]:
            continue
        count = 1
        start = i
        if i > 0:
            prev = tokens[i - 1]
            if prev in vocab["one"]:
                start = i - 1
            else:
                parsed = _parse_int_token(prev)
                if parsed is None:
                    parsed = lexicon.numbers.get(prev)
                if parsed is not None:
                    count = parsed
                    start = i - 1
        end = i + 1
        if end < len(tokens) and tokens[end] in vocab["ago"]:
            end += 1
        resolved = encounter_date - timedelta(days=count * vocab["units"][tok])
        return Extraction("date", resolved.isoformat(), (start, end), "date")
    return _fallback("date")


def _extract_yes_no(tokens, tags) -> Extraction:
    span = _first_category(tags, "affirmation", "negation", "uncertainty")
    if span is None:
        return _fallback("yes_no")
    value = {"affirmation": "yes", "negation": "no", "uncertainty": UNKNOWN}[span.category]
    return Extraction("yes_no", value, (span.start, span.end), "lexicon")


def _extract_choice(tokens, tags, lexicon, choices) -> Extraction:
    choices = list(choices or [])
    unc = _uncertainty_span(tags)
    if unc:
        return Extraction("choice", UNKNOWN, (unc.start, unc.end), "lexicon")
    option_set = {c: tuple(normalize(c.replace("_", " "), lexicon.folding)) for c in choices}
    for i in range(len(tokens)):
        for option, opt_tokens in option_set.items():
            if opt_tokens and tuple(tokens[i : i + len(opt_tokens)]) == opt_tokens:
                return Extraction("choice", option, (i, i + len(opt_tokens)), "lexicon")
    for tag in tags:
        if tag.clinical_term in option_set:
            return Extraction("choice", tag.clinical_term, (tag.start, tag.end), "lexicon")
    if "none" in option_set:
        neg = _first_category(tags, "negation")
        if neg:
            return Extraction("choice", "none", (neg.start, neg.end), "lexicon")
    for i, tok in enumerate(tokens):
        if tok.isdigit() and 1 <= int(tok) <= len(choices):
            return Extraction("choice", choices[int(tok) - 1], (i, i + 1), "numeric")
    return _fallback("choice")


def _extract_free_text(raw: str, tokens, tags) -> Extraction:
    unc = _uncertainty_span(tags)
    if unc:
        return Extraction("free_text", UNKNOWN, (unc.start, unc.end), "lexicon")
    # symptom beats condition beats anatomy: "neche wali jaga se charbi"
    # is about the discharge, not the anatomy it comes from
    for category in ("symptom", "condition", "anatomy"):
        clinical = _first_category(tags, category)
        if clinical:
            return Extraction(
                "free_text", clinical.clinical_term, (clinical.start, clinical.end), "lexicon"
            )
    text = raw.strip()
    if not text:
        return _fallback("free_text")
    return Extraction("free_text", text, (0, len(tokens)), "verbatim")


def extract_value(
    expected_type: str,
    utterance: str,
    *,
    encounter_date: date,
    lexicon: Lexicon,
    choices: list[str] | None = None,
) -> Extraction:
    """Extract a typed value; failure is the ``fallback_unknown`` value, never a guess."""
    tokens = normalize(utterance, lexicon.folding)
    tags = map_colloquialisms(tokens, lexicon)
    if expected_type == "integer":
        return _extract_integer(tokens, tags, lexicon)
    if expected_type == "bp_pair":
        return _extract_bp(tokens, tags, lexicon)
    if expected_type == "date":
        return _extract_date(tokens, tags, lexicon, encounter_date)
    if expected_type == "yes_no":
        return _extract_yes_no(tokens, tags)
    if expected_type == "choice":
        return _extract_choice(tokens, tags, lexicon, choices)
    if expected_type == "free_text":
        return _extract_free_text(utterance, tokens, tags)
    raise ParseError(f"unknown expected_type {expected_type!r}")


# ---------------------------------------------------------------------------
# Adapters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AsrResult:
    transcript: str
    confidence: float


class AsrAdapter(Protocol):
    def transcribe(self, audio_ref: str) -> AsrResult: ...


class MockAsrAdapter:
    """Deterministic transcription stub: fixture refs map to fixture transcripts."""

    def __init__(self, table: dict[str, str] | None = None):
        if table is None:
            table = _load_packaged("asr/asr_fixtures.json")
        self.table = dict(table)

    def transcribe(self, audio_ref: str) -> AsrResult:
        if audio_ref not in self.table:
            raise MediaUnreadable(f"no transcript fixture for {audio_ref!r}")
        return AsrResult(transcript=self.table[audio_ref], confidence=1.0)


class LlmExtractorAdapter(Protocol):
    def extract(self, prompt_context: dict, utterance: str, schema: dict) -> Extraction | None: ...


def validate_adapter_extraction(
    candidate: Any, expected_type: str, choices: list[str] | None, token_count: int
) -> Extraction | None:
    """Schema-validate adapter output; anything off-schema is discarded."""
    if not isinstance(candidate, Extraction):
        return None
    value = candidate.value
    if value in (UNKNOWN, REFUSED):
        ok = True
    elif expected_type == "integer":
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif expected_type == "bp_pair":
        ok = (
            isinstance(value, dict)
            and set(value) == {"bp_systolic", "bp_diastolic"}
            and all(isinstance(v, int) for v in value.values())
        )
    elif expected_type == "date":
        try:
            date.fromisoformat(value)
            ok = True
        except (TypeError, ValueError):
            ok = False
    elif expected_type == "yes_no":
        ok = value in ("yes", "no")
    elif expected_type == "choice":
        ok = value in (choices or [])
    elif expected_type == "free_text":
        ok = isinstance(value, str) and bool(value.strip())
    else:
        ok = False
    if not ok:
        return None
    if candidate.span is not None:
        start, end = candidate.span
        if not (0 <= start <= end <= token_count):
            return None
    return Extraction(expected_type, value, candidate.span, "plugin", candidate.confidence)


@dataclass
class Adapters:
    asr: AsrAdapter | None = None
    extractor: LlmExtractorAdapter | None = None


def parse_utterance(
    node: Any,
    message: Any,
    *,
    adapters: Adapters,
    encounter_date: date,
    lexicon: Lexicon,
) -> Extraction:
    """Full pipeline for one interview answer.

    ``node`` must expose expected_type / modalities / choices; ``message``
    must expose kind plus body or media_ref (the gateway's inbound shape).
    """
    kind = message.kind
    if kind == "image_ref":
        return Extraction(node.expected_type, PENDING_MEDIA, None, "fallback_unknown", 0.0)
    if kind == "audio_ref":
        if "voice" not in node.modalities:
            raise ModalityNotAllowed(f"node {getattr(node, 'id', '?')} does not accept voice")
        if adapters.asr is None:
            raise MediaUnreadable("no transcription adapter configured")
        asr = adapters.asr.transcribe(message.media_ref)
        text = asr.transcript
        base_confidence = asr.confidence
    else:
        if not ({"text", "numeral"} & set(node.modalities)):
            raise ModalityNotAllowed(f"node {getattr(node, 'id', '?')} does not accept text")
        text = message.body or ""
        base_confidence = 1.0

    extraction = extract_value(
        node.expected_type,
        text,
        encounter_date=encounter_date,
        lexicon=lexicon,
        choices=getattr(node, "choices", None),
    )
    if extraction.failed and adapters.extractor is not None:
        tokens = normalize(text, lexicon.folding)
        candidate = adapters.extractor.extract(
            {"target_path": getattr(node, "target_path", None)},
            text,
            {"expected_type": node.expected_type, "choices": getattr(node, "choices", None)},
        )
        validated = validate_adapter_extraction(
            candidate, node.expected_type, getattr(node, "choices", None), len(tokens)
        )
        if validated is not None:
            extraction = validated
    if not extraction.failed:
        extraction.confidence = min(extraction.confidence, base_confidence)
    return extraction
