"""Gestational-age-scheduled education and FAQ answering.

Educational items are vetted message templates keyed to GA-week windows in
four domains; delivery is deduplicated through the record's event log.
Question answering is deterministic keyword retrieval over a vetted FAQ
corpus (clinical-term hits weigh double), with an optional generator
adapter slot; with the adapter disabled every reply is either a vetted
answer verbatim or the fixed fallback. Questions that mention an
urgent-category term get an urgent preface and raise a symptom event so
the red-flag rules can fire.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Protocol

from . import utterance_parse
from .emr_model import PatientRecord, ga_weeks_for_record

DOMAINS = ("nutrition", "fetal_development", "risk_awareness", "emotional_wellbeing")
# risk awareness always goes out first
DOMAIN_ORDER = ("risk_awareness", "nutrition", "fetal_development", "emotional_wellbeing")

MAX_GA_WEEK = 44
DEFAULT_SCORE_THRESHOLD = 3

FALLBACK_TEXT = {
    "ur": "Is sawal ka mukammal jawab mere paas mehfooz maloomat mein nahi hai. Barah-e-karam agli visit par doctor ya staff se zaroor poochein.",
    "en": "I do not have a vetted answer for this question. Please do ask the doctor or staff at your next visit.",
}

URGENT_PREFACE = {
    "ur": "Ye alamat sanjeeda ho sakti hai — barah-e-karam aaj hi qareebi markaz ya hospital mein check karwayen.",
    "en": "This symptom can be serious — please get checked at the nearest facility today.",
}


class ContentError(ValueError):
    pass


@dataclass(frozen=True)
class ContentItem:
    item_id: str
    ga_window: tuple[int, int]  # [start_week, end_week], inclusive
    domain: str
    templates: dict[str, str]  # language -> text
    vetted: bool = False

    def text(self, language: str) -> str:
        return self.templates.get(language) or self.templates.get("ur") or next(
            iter(self.templates.values())
        )


@dataclass(frozen=True)
class FAQEntry:
    entry_id: str
    canonical_question: str
    answers: dict[str, str]
    keywords: tuple[str, ...]  # pre-normalized tokens
    source_ref: str = ""


@dataclass
class DueMessages:
    items: list[ContentItem]
    needs_lmp: bool = False


@dataclass
class QAResult:
    answer: str
    matched_entry_id: str | None = None
    score: int = 0
    escalation_term: str | None = None  # urgent symptom to record as an event


def load_content(document: dict | str) -> list[ContentItem]:
    if isinstance(document, str):
        document = json.loads(document)
    items = []
    for raw in document.get("items", []):
        window = tuple(raw["ga_window"])
        if not (0 <= window[0] <= window[1] <= MAX_GA_WEEK):
            raise ContentError(f"{raw['item_id']}: bad GA window {window}")
        if raw["domain"] not in DOMAINS:
            raise ContentError(f"{raw['item_id']}: unknown domain {raw['domain']}")
        items.append(
            ContentItem(
                item_id=raw["item_id"],
                ga_window=window,
                domain=raw["domain"],
                templates=dict(raw["templates"]),
                vetted=bool(raw.get("vetted", False)),
            )
        )
    return items


def load_faq(document: dict | str, lexicon: utterance_parse.Lexicon) -> list[FAQEntry]:
    if isinstance(document, str):
        document = json.loads(document)
    clinical_terms = {e.clinical_term for e in lexicon.entries}
    entries = []
    for raw in document.get("entries", []):
        keywords = tuple(raw["keywords"])
        for kw in keywords:
            # a keyword is either a clinical-term identifier (matched via
            # lexicon tags) or a literal token, stored pre-normalized
            if kw in clinical_terms:
                continue
            if utterance_parse.normalize(kw, lexicon.folding) != [kw]:
                raise ContentError(f"{raw['entry_id']}: keyword not pre-normalized: {kw!r}")
        entries.append(
            FAQEntry(
                entry_id=raw["entry_id"],
                canonical_question=raw["canonical_question"],
                answers=dict(raw["answers"]),
                keywords=keywords,
                source_ref=raw.get("source_ref", ""),
            )
        )
    return entries


def default_content() -> list[ContentItem]:
    text = resources.files("ancassist.data").joinpath("content/content_v1.json").read_text("utf-8")
    return load_content(text)


def default_faq(lexicon: utterance_parse.Lexicon) -> list[FAQEntry]:
    text = resources.files("ancassist.data").joinpath("content/faq_v1.json").read_text("utf-8")
    return load_faq(text, lexicon)


# ---------------------------------------------------------------------------
# Scheduled messages
# ---------------------------------------------------------------------------


def due_messages(
    record: PatientRecord,
    as_of: str,
    delivery_log: set[str],
    items: list[ContentItem],
) -> DueMessages:
    """Vetted items whose window contains the current GA week and which have
    not been delivered; at most one per domain, risk awareness first."""
    week = ga_weeks_for_record(record, as_of)
    if week is None:
        return DueMessages(items=[], needs_lmp=True)
    due: list[ContentItem] = []
    for domain in DOMAIN_ORDER:
        eligible = [
            item
            for item in items
            if item.vetted
            and item.domain == domain
            and item.ga_window[0] <= week <= item.ga_window[1]
            and item.item_id not in delivery_log
        ]
        if eligible:
            eligible.sort(key=lambda i: (i.ga_window[0], i.item_id))
            due.append(eligible[0])
    return DueMessages(items=due)


# ---------------------------------------------------------------------------
# FAQ answering
# ---------------------------------------------------------------------------


class GeneratorAdapter(Protocol):
    """Optional constrained generator consulted below the retrieval threshold."""

    def generate(self, question: str, context: list[FAQEntry], language: str) -> str | None: ...


def score_entry(entry: FAQEntry, tokens: list[str], clinical_terms: set[str]) -> int:
    score = 0
    token_set = set(tokens)
    for keyword in entry.keywords:
        if keyword in clinical_terms:
            score += 2
        elif keyword in token_set:
            score += 1
    return score


def answer_question(
    utterance: str,
    faq: list[FAQEntry],
    lexicon: utterance_parse.Lexicon,
    *,
    generator: GeneratorAdapter | None = None,
    language: str = "ur",
    threshold: int = DEFAULT_SCORE_THRESHOLD,
) -> QAResult:
    """Deterministic weighted keyword retrieval with urgent-term escalation."""
    tokens = utterance_parse.normalize(utterance, lexicon.folding)
    tags = utterance_parse.map_colloquialisms(tokens, lexicon)
    clinical_terms = {t.clinical_term for t in tags}

    escalation = None
    for tag in tags:
        if tag.clinical_term in lexicon.urgent_terms:
            escalation = tag.clinical_term
            break

    # ties keep the earliest corpus entry, so results are deterministic
    best: FAQEntry | None = None
    best_score = 0
    for entry in faq:
        s = score_entry(entry, tokens, clinical_terms)
        if s > best_score:
            best, best_score = entry, s

    if best is not None and best_score >= threshold:
        answer = best.answers.get(language) or best.answers.get("en") or next(
            iter(best.answers.values())
        )
        result = QAResult(answer=answer, matched_entry_id=best.entry_id, score=best_score)
    else:
        generated = None
        if generator is not None:
            context = sorted(faq, key=lambda e: -score_entry(e, tokens, clinical_terms))[:3]
            generated = generator.generate(utterance, context, language)
        if generated:
            result = QAResult(answer=generated, matched_entry_id=None, score=best_score)
        else:
            fallback = FALLBACK_TEXT.get(language, FALLBACK_TEXT["en"])
            result = QAResult(answer=fallback, matched_entry_id=None, score=best_score)

    if escalation:
        preface = URGENT_PREFACE.get(language, URGENT_PREFACE["en"])
        result.answer = f"{preface} {result.answer}"
        result.escalation_term = escalation
    return result
