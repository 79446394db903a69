"""Field-level scoring of generated records against gold records.

Every gold field carries an annotation (clinical significance + whether a
reviewer could fix it from the rest of the record alone); mismatches are
classified from those two bits, mechanizing the consultant-review procedure:
insignificant errors need no action, significant-but-recoverable ones are
easily correctable, the rest cannot be fixed without ground truth. Review
aggregation reports exact accurate/relevant rates for binary consultant
reviews of alerts.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from datetime import date
from fractions import Fraction
from pathlib import Path

SECTIONS = ("demographics", "obstetric_history", "current_pregnancy", "family_history", "psychosocial")
CATEGORIES = ("no_action_needed", "easily_correctable", "uncorrectable")


class EvalError(ValueError):
    pass


class SchemaMismatch(EvalError):
    pass


class MissingAnnotation(EvalError):
    def __init__(self, path: str):
        super().__init__(f"no annotation for gold field {path}")
        self.path = path


@dataclass(frozen=True)
class FieldAnnotation:
    path: str
    clinical_significance: str  # insignificant | significant
    context_recoverable: bool


@dataclass
class FieldVerdict:
    path: str
    outcome: str  # match | discrepancy
    category: str | None
    gold: object
    generated: object


@dataclass
class DiscrepancyReport:
    verdicts: list[FieldVerdict]
    matches: int
    total: int
    field_accuracy: Fraction
    category_frequencies: dict[str, int]

    @property
    def discrepancies(self) -> list[FieldVerdict]:
        return [v for v in self.verdicts if v.outcome == "discrepancy"]


@dataclass
class ReviewAggregate:
    n: int
    accurate: int = 0
    relevant: int = 0
    accuracy_rate: Fraction | None = None  # None marks the empty report
    relevance_rate: Fraction | None = None


def categorize(matched: bool, significance: str, recoverable: bool) -> str | None:
    """The (match, significance, recoverable) -> category mapping."""
    if matched:
        return None
    if significance == "insignificant":
        return "no_action_needed"
    return "easily_correctable" if recoverable else "uncorrectable"


def _canonical(value):
    """Normalization before comparison so formatting noise is not scored
    as clinical error: casefold text, canonicalize date strings."""
    if isinstance(value, str):
        text = value.strip()
        try:
            return date.fromisoformat(text).isoformat()
        except ValueError:
            return text.casefold()
    if isinstance(value, bool):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    return value


def leaf_paths(doc: dict, prefix: str = "") -> list[tuple[str, object]]:
    """All populated scalar paths of a record document, in sorted order."""
    out: list[tuple[str, object]] = []
    if prefix == "":
        for section in SECTIONS:
            if section not in doc:
                raise SchemaMismatch(f"missing section {section}")
            out.extend(leaf_paths(doc[section], section))
        return sorted(out)
    if isinstance(doc, dict):
        for key, value in doc.items():
            out.extend(leaf_paths(value, f"{prefix}.{key}"))
    elif isinstance(doc, list):
        for i, value in enumerate(doc):
            out.extend(leaf_paths(value, f"{prefix}[{i}]"))
    elif doc is not None and doc != "" and doc != []:
        out.append((prefix, doc))
    return out


def resolve(doc: dict, path: str):
    node = doc
    for seg in path.split("."):
        name, _, idx = seg.partition("[")
        if isinstance(node, dict):
            node = node.get(name)
        else:
            return None
        if idx:
            i = int(idx.rstrip("]"))
            if not isinstance(node, list) or i >= len(node):
                return None
            node = node[i]
        if node is None:
            return None
    return node


def score(
    gold: dict, generated: dict, annotations: dict[str, FieldAnnotation]
) -> DiscrepancyReport:
    """Compare records field by field under the gold annotations."""
    verdicts: list[FieldVerdict] = []
    frequencies = {c: 0 for c in CATEGORIES}
    matches = 0
    gold_fields = leaf_paths(gold)
    leaf_paths(generated)  # raises SchemaMismatch if sections are missing
    for path, gold_value in gold_fields:
        annotation = annotations.get(path)
        if annotation is None:
            raise MissingAnnotation(path)
        generated_value = resolve(generated, path)
        matched = _canonical(gold_value) == _canonical(generated_value)
        category = categorize(
            matched, annotation.clinical_significance, annotation.context_recoverable
        )
        if matched:
            matches += 1
        else:
            frequencies[category] += 1
        verdicts.append(
            FieldVerdict(
                path=path,
                outcome="match" if matched else "discrepancy",
                category=category,
                gold=gold_value,
                generated=generated_value,
            )
        )
    total = len(gold_fields)
    accuracy = Fraction(matches, total) if total else Fraction(1)
    return DiscrepancyReport(
        verdicts=verdicts,
        matches=matches,
        total=total,
        field_accuracy=accuracy,
        category_frequencies=frequencies,
    )


def _percent(rate: Fraction) -> str:
    return f"{float(rate) * 100:.1f}%"


def render_report(report: DiscrepancyReport) -> str:
    lines = [
        f"annotated fields: {report.total}",
        f"field accuracy: {report.matches}/{report.total} ({_percent(report.field_accuracy)})",
        f"discrepancies: {len(report.discrepancies)}",
    ]
    for category in CATEGORIES:
        lines.append(f"  {category}: {report.category_frequencies[category]}")
    if report.discrepancies:
        lines.append("fields:")
        for verdict in report.discrepancies:
            lines.append(
                f"  {verdict.path}: {verdict.category}"
                f" gold={verdict.gold!r} generated={verdict.generated!r}"
            )
    return "\n".join(lines) + "\n"


def aggregate_reviews(reviews: list[dict]) -> ReviewAggregate:
    """Exact accurate/relevant rates over binary consultant reviews."""
    n = len(reviews)
    if n == 0:
        return ReviewAggregate(n=0)
    for review in reviews:
        if not isinstance(review.get("accurate"), bool) or not isinstance(
            review.get("relevant"), bool
        ):
            raise EvalError(f"review not binary on both axes: {review}")
    accurate = sum(1 for r in reviews if r["accurate"])
    relevant = sum(1 for r in reviews if r["relevant"])
    return ReviewAggregate(
        n=n,
        accurate=accurate,
        relevant=relevant,
        accuracy_rate=Fraction(accurate, n),
        relevance_rate=Fraction(relevant, n),
    )


def render_reviews(aggregate: ReviewAggregate) -> str:
    if aggregate.n == 0:
        return "reviews: 0\nno reviews to aggregate\n"
    return (
        f"reviews: {aggregate.n}\n"
        f"accurate: {aggregate.accurate}/{aggregate.n} ({_percent(aggregate.accuracy_rate)})\n"
        f"relevant: {aggregate.relevant}/{aggregate.n} ({_percent(aggregate.relevance_rate)})\n"
    )


def load_annotations(path: Path) -> dict[str, FieldAnnotation]:
    raw = json.loads(path.read_text("utf-8"))
    out = {}
    for field_path, ann in raw.items():
        significance = ann["clinical_significance"]
        if significance not in ("insignificant", "significant"):
            raise EvalError(f"{field_path}: bad significance {significance!r}")
        out[field_path] = FieldAnnotation(
            path=field_path,
            clinical_significance=significance,
            context_recoverable=bool(ann["context_recoverable"]),
        )
    return out


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="anc-eval", description="Score generated EMRs against gold EMRs"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    score_cmd = sub.add_parser("score", help="field-by-field record comparison")
    score_cmd.add_argument("--gold", required=True, help="directory of gold record JSON files")
    score_cmd.add_argument("--generated", required=True, help="directory of generated records")
    score_cmd.add_argument("--annotations", required=True, help="annotations JSON file")
    score_cmd.add_argument("--out", help="write the report here instead of stdout")
    reviews_cmd = sub.add_parser("reviews", help="aggregate alert reviews")
    reviews_cmd.add_argument("--in", dest="infile", required=True, help="reviews JSON file")
    args = parser.parse_args(argv)

    if args.command == "score":
        annotations = load_annotations(Path(args.annotations))
        gold_dir, gen_dir = Path(args.gold), Path(args.generated)
        chunks = []
        for gold_path in sorted(gold_dir.glob("*.json")):
            gen_path = gen_dir / gold_path.name
            if not gen_path.exists():
                raise SystemExit(f"no generated record for {gold_path.name}")
            report = score(
                json.loads(gold_path.read_text("utf-8")),
                json.loads(gen_path.read_text("utf-8")),
                annotations,
            )
            chunks.append(f"== {gold_path.name}\n" + render_report(report))
        output = "".join(chunks)
        if args.out:
            Path(args.out).write_text(output, "utf-8")
        else:
            sys.stdout.write(output)
        return 0

    if args.command == "reviews":
        reviews = json.loads(Path(args.infile).read_text("utf-8"))
        sys.stdout.write(render_reviews(aggregate_reviews(reviews)))
        return 0
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
