"""Small typed predicate language over record field-paths.

Used by alert rules and interview-flow triggers so both stay data, not code.
Deliberately tiny (no arithmetic, no quantifiers) to keep rule files auditable.

Grammar (EBNF, also in docs/formats.md):

    expr        = or_expr ;
    or_expr     = and_expr , { "or" , and_expr } ;
    and_expr    = unary , { "and" , unary } ;
    unary       = "not" , unary | primary ;
    primary     = "(" , expr , ")"
                | "exists" , "(" , path , ")"
                | "ga_weeks()" , "within" , "[" , number , "," , number , "]"
                | term , cmp_op , term ;
    term        = "ga_weeks()" | "latest" , "(" , path , ")" | path | literal ;
    cmp_op      = "=" | "!=" | "<" | "<=" | ">" | ">=" ;
    literal     = number | "'" text "'" | '"' text '"' ;

Dates are ISO strings, written as quoted literals; ISO ordering makes string
comparison correct. Any comparison with a missing operand evaluates false;
``not`` then flips it, which is how "test not yet done" style rules fire on
records that have no lab entry at all.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Callable

from . import emr_model
from .emr_model import MISSING

_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")
_KEYWORDS = {"and", "or", "not", "exists", "latest", "within", "ga_weeks"}
# Time-ordered list roots that latest() may project into.
_LIST_ROOTS = (
    "current_pregnancy.vitals",
    "current_pregnancy.symptoms",
    "current_pregnancy.fetal_movement",
)


class PredicateError(ValueError):
    pass


class PredicateParseError(PredicateError):
    pass


class PredicateTypeError(PredicateError):
    def __init__(self, path: str, expected: str, found: str):
        super().__init__(f"type error at {path}: expected {expected}, found {found}")
        self.path = path
        self.expected = expected
        self.found = found


# --- AST ------------------------------------------------------------------


@dataclass(frozen=True)
class PathTerm:
    path: str


@dataclass(frozen=True)
class LatestTerm:
    path: str  # list root + projected field, e.g. current_pregnancy.vitals.bp_systolic


@dataclass(frozen=True)
class GaWeeksTerm:
    pass


@dataclass(frozen=True)
class Literal:
    value: Any  # int | float | str


@dataclass(frozen=True)
class Comparison:
    op: str
    left: Any
    right: Any


@dataclass(frozen=True)
class Exists:
    path: str


@dataclass(frozen=True)
class GaWithin:
    low: float
    high: float


@dataclass(frozen=True)
class And:
    items: tuple


@dataclass(frozen=True)
class Or:
    items: tuple


@dataclass(frozen=True)
class Not:
    inner: Any


# --- Lexer ------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>\d+(?:\.\d+)?)
  | (?P<string>'[^']*'|"[^"]*")
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*(?:\[\d*\])?(?:\.[A-Za-z_][A-Za-z0-9_]*(?:\[\d*\])?)*)
  | (?P<op>!=|<=|>=|≠|≤|≥|[=<>()\[\],])
    """,
    re.VERBOSE,
)

_OP_CANON = {"≠": "!=", "≤": "<=", "≥": ">="}


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens: list[tuple[str, str]] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise PredicateParseError(f"unexpected character {text[pos]!r} at offset {pos}")
        pos = m.end()
        kind = m.lastgroup
        if kind == "ws":
            continue
        value = m.group()
        if kind == "op":
            value = _OP_CANON.get(value, value)
        tokens.append((kind, value))
    return tokens


# --- Parser -----------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: list[tuple[str, str]]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> tuple[str, str] | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self, expected: str | None = None) -> tuple[str, str]:
        tok = self.peek()
        if tok is None:
            raise PredicateParseError(f"unexpected end of expression (wanted {expected})")
        if expected is not None and tok[1] != expected:
            raise PredicateParseError(f"expected {expected!r}, found {tok[1]!r}")
        self.pos += 1
        return tok

    def parse(self) -> Any:
        node = self.or_expr()
        if self.peek() is not None:
            raise PredicateParseError(f"trailing input at {self.peek()[1]!r}")
        return node

    def or_expr(self) -> Any:
        items = [self.and_expr()]
        while self.peek() == ("name", "or"):
            self.take()
            items.append(self.and_expr())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def and_expr(self) -> Any:
        items = [self.unary()]
        while self.peek() == ("name", "and"):
            self.take()
            items.append(self.unary())
        return items[0] if len(items) == 1 else And(tuple(items))

    def unary(self) -> Any:
        if self.peek() == ("name", "not"):
            self.take()
            return Not(self.unary())
        return self.primary()

    def primary(self) -> Any:
        tok = self.peek()
        if tok is None:
            raise PredicateParseError("unexpected end of expression")
        if tok == ("op", "("):
            self.take()
            node = self.or_expr()
            self.take(")")
            return node
        if tok == ("name", "exists"):
            self.take()
            self.take("(")
            path = self.take()[1]
            self.take(")")
            return Exists(path)
        term = self.term()
        nxt = self.peek()
        if isinstance(term, GaWeeksTerm) and nxt == ("name", "within"):
            self.take()
            self.take("[")
            low = float(self.take()[1])
            self.take(",")
            high = float(self.take()[1])
            self.take("]")
            return GaWithin(low, high)
        if nxt is None or nxt[0] != "op" or nxt[1] not in ("=", "!=", "<", "<=", ">", ">="):
            raise PredicateParseError(f"expected comparison operator after term, found {nxt}")
        op = self.take()[1]
        right = self.term()
        return Comparison(op, term, right)

    def term(self) -> Any:
        kind, value = self.take()
        if kind == "number":
            return Literal(float(value) if "." in value else int(value))
        if kind == "string":
            return Literal(value[1:-1])
        if kind == "name":
            if value == "ga_weeks":
                self.take("(")
                self.take(")")
                return GaWeeksTerm()
            if value == "latest":
                self.take("(")
                path = self.take()[1]
                self.take(")")
                return LatestTerm(path)
            if value in _KEYWORDS:
                raise PredicateParseError(f"keyword {value!r} is not a term")
            return PathTerm(value)
        raise PredicateParseError(f"unexpected token {value!r}")


def parse(text: str) -> Any:
    """Parse an expression; raises PredicateParseError on malformed input."""
    return _Parser(_tokenize(text)).parse()


def parse_term(text: str) -> Any:
    """Parse a single term (used for dedup keys and template placeholders)."""
    parser = _Parser(_tokenize(text))
    term = parser.term()
    if parser.peek() is not None:
        raise PredicateParseError(f"trailing input in term {text!r}")
    return term


# --- Type checking -----------------------------------------------------------


def _split_latest(path: str) -> tuple[str, str]:
    for root in _LIST_ROOTS:
        if path == root:
            raise PredicateTypeError(path, "list-entry field", "bare list")
        if path.startswith(root + "."):
            return root, path[len(root) + 1 :]
    raise PredicateTypeError(path, "time-ordered list path", "unregistered")


def term_type(term: Any) -> str:
    """Static type of a term: number | date | text. Raises on unknown paths."""
    if isinstance(term, GaWeeksTerm):
        return "number"
    if isinstance(term, Literal):
        if isinstance(term.value, (int, float)):
            return "number"
        return "date" if _DATE_RE.match(term.value) else "text"
    if isinstance(term, LatestTerm):
        root, fieldname = _split_latest(term.path)
        spec = emr_model.path_spec(f"{root}[].{fieldname}")
        if spec is None:
            raise PredicateTypeError(term.path, "registered field", "unregistered")
        return _spec_type(spec)
    if isinstance(term, PathTerm):
        spec = emr_model.path_spec(term.path)
        if spec is None or spec.value_type in ("list", "entry", "bp_pair"):
            raise PredicateTypeError(term.path, "scalar field", "unregistered or non-scalar")
        return _spec_type(spec)
    raise PredicateTypeError(str(term), "term", type(term).__name__)


def _spec_type(spec: emr_model.PathSpec) -> str:
    if spec.value_type in ("int", "number"):
        return "number"
    if spec.value_type == "date":
        return "date"
    return "text"  # enum and free text both compare as text


def check(node: Any) -> None:
    """Type-check a parsed expression against the path registry."""
    if isinstance(node, (And, Or)):
        for item in node.items:
            check(item)
    elif isinstance(node, Not):
        check(node.inner)
    elif isinstance(node, Exists):
        if not emr_model.is_registered(node.path):
            raise PredicateTypeError(node.path, "registered field", "unregistered")
    elif isinstance(node, GaWithin):
        if node.low > node.high:
            raise PredicateTypeError("ga_weeks()", "low <= high", f"[{node.low}, {node.high}]")
    elif isinstance(node, Comparison):
        left, right = term_type(node.left), term_type(node.right)
        if left != right:
            raise PredicateTypeError(_describe(node.left), left, right)
        if node.op not in ("=", "!=") and left == "text":
            raise PredicateTypeError(_describe(node.left), "ordered type", "text")
    else:
        raise PredicateTypeError(str(node), "expression", type(node).__name__)


def _describe(term: Any) -> str:
    if isinstance(term, PathTerm):
        return term.path
    if isinstance(term, LatestTerm):
        return f"latest({term.path})"
    if isinstance(term, GaWeeksTerm):
        return "ga_weeks()"
    return repr(getattr(term, "value", term))


def referenced_paths(node: Any) -> set[str]:
    """All field paths the expression reads (latest() paths included bare)."""
    out: set[str] = set()
    if isinstance(node, (And, Or)):
        for item in node.items:
            out |= referenced_paths(item)
    elif isinstance(node, Not):
        out |= referenced_paths(node.inner)
    elif isinstance(node, Exists):
        out.add(node.path)
    elif isinstance(node, Comparison):
        for term in (node.left, node.right):
            if isinstance(term, PathTerm):
                out.add(term.path)
            elif isinstance(term, LatestTerm):
                out.add(term.path)
    return out


def uses_ga(node: Any) -> bool:
    if isinstance(node, (And, Or)):
        return any(uses_ga(i) for i in node.items)
    if isinstance(node, Not):
        return uses_ga(node.inner)
    if isinstance(node, GaWithin):
        return True
    if isinstance(node, Comparison):
        return isinstance(node.left, GaWeeksTerm) or isinstance(node.right, GaWeeksTerm)
    return False


# --- Evaluation ---------------------------------------------------------------

Resolver = Callable[[str], Any]


@dataclass
class EvalContext:
    """Value source for evaluation: a path resolver plus the current GA."""

    resolve: Resolver
    ga_weeks: int | None = None


def eval_term(term: Any, ctx: EvalContext) -> Any:
    if isinstance(term, Literal):
        return term.value
    if isinstance(term, GaWeeksTerm):
        return MISSING if ctx.ga_weeks is None else ctx.ga_weeks
    if isinstance(term, PathTerm):
        return ctx.resolve(term.path)
    if isinstance(term, LatestTerm):
        root, fieldname = _split_latest(term.path)
        entries = ctx.resolve(root)
        if entries is MISSING or not isinstance(entries, list) or not entries:
            return MISSING
        return entries[-1].get(fieldname, MISSING)
    raise PredicateError(f"cannot evaluate {term!r}")


def _compare(op: str, left: Any, right: Any) -> bool:
    if left is MISSING or right is MISSING or left is None or right is None:
        return False
    left_num = isinstance(left, (int, float)) and not isinstance(left, bool)
    right_num = isinstance(right, (int, float)) and not isinstance(right, bool)
    if left_num != right_num:
        return False  # runtime type mismatch (e.g. explicit "unknown" vs number)
    if op == "=":
        return left == right
    if op == "!=":
        return left != right
    if not left_num and not (isinstance(left, str) and isinstance(right, str)):
        return False
    try:
        if op == "<":
            return left < right
        if op == "<=":
            return left <= right
        if op == ">":
            return left > right
        if op == ">=":
            return left >= right
    except TypeError:
        return False
    raise PredicateError(f"unknown operator {op!r}")


def evaluate(node: Any, ctx: EvalContext) -> bool:
    if isinstance(node, And):
        return all(evaluate(i, ctx) for i in node.items)
    if isinstance(node, Or):
        return any(evaluate(i, ctx) for i in node.items)
    if isinstance(node, Not):
        return not evaluate(node.inner, ctx)
    if isinstance(node, Exists):
        return ctx.resolve(node.path) is not MISSING
    if isinstance(node, GaWithin):
        if ctx.ga_weeks is None:
            return False
        return node.low <= ctx.ga_weeks <= node.high
    if isinstance(node, Comparison):
        return _compare(node.op, eval_term(node.left, ctx), eval_term(node.right, ctx))
    raise PredicateError(f"cannot evaluate node {node!r}")


def record_context(record: emr_model.PatientRecord, as_of: str) -> EvalContext:
    """Evaluation context reading directly from a folded record."""
    return EvalContext(
        resolve=lambda path: emr_model.get_path(record, path),
        ga_weeks=emr_model.ga_weeks_for_record(record, as_of),
    )
