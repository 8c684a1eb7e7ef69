"""Rule-driven cleanup of raw DATIS/ATIS messages.

Raw messages arrive as operator-typed teletype text: CRLF line breaks, stray
dashes, doubled periods, trailing '=' terminators, and inconsistent
abbreviations. A fixed ordered rule table (shipped as TSV data, not code)
rewrites each message into one comma-joined line, which then splits into
sentences for the training corpus.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources

from sklearn.base import BaseEstimator, TransformerMixin

CATEGORIES = ("structural", "abbreviation", "weather-code", "punctuation", "relocation")

# Records in a raw dump are separated by LF-only blank lines; CRLF pairs
# belong to the records themselves and never end a record.
_RECORD_SEP = re.compile(r"(?<!\r)\n{2,}")

_SENTENCE_SPLIT = re.compile(r"(?<=\.)\s+(?=[A-Z])")


@dataclass(frozen=True)
class RawMessage:
    """One message exactly as logged, CRLF and all."""

    body: str

    def __post_init__(self):
        if not self.body:
            raise ValueError("raw message body is empty")


@dataclass(frozen=True)
class CleaningRule:
    id: str
    category: str
    order: int
    pattern: re.Pattern
    replacement: str

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"rule {self.id}: unknown category {self.category!r}")


@dataclass(frozen=True)
class CleanMessage:
    """Single-line cleaned body plus the ids of the rules that fired."""

    body: str
    applied_rule_ids: tuple[str, ...] = field(default_factory=tuple)


def parse_raw_file(text: str) -> list[RawMessage]:
    records = [r for r in _RECORD_SEP.split(text) if r.strip()]
    return [RawMessage(r) for r in records]


def load_rules(path=None) -> list[CleaningRule]:
    """Load and validate a rule table; default is the packaged canonical one."""
    if path is None:
        text = resources.files("avse").joinpath("data/cleaning_rules.tsv").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    rules = []
    seen = set()
    for ln, line in enumerate(text.split("\n"), start=1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ValueError(f"rule table line {ln}: expected 5 tab-separated fields, got {len(parts)}")
        rid, category, order, pattern, replacement = parts
        if rid in seen:
            raise ValueError(f"rule table line {ln}: duplicate rule id {rid!r}")
        seen.add(rid)
        try:
            compiled = re.compile(pattern)
        except re.error as exc:
            raise ValueError(f"rule table line {ln}: pattern does not compile: {exc}") from exc
        rules.append(CleaningRule(rid, category, int(order), compiled, replacement))
    rules.sort(key=lambda r: r.order)
    _check_phase_order(rules)
    return rules


def _check_phase_order(rules: list[CleaningRule]) -> None:
    structural = [r.order for r in rules if r.category == "structural"]
    abbrev = [r.order for r in rules if r.category == "abbreviation"]
    if structural and abbrev and max(structural) >= min(abbrev):
        raise ValueError("structural rules must all run before abbreviation rules")


def clean_message(raw: RawMessage | str, rules: list[CleaningRule] | None = None) -> CleanMessage:
    """Apply every rule once, in table order.

    A message that is already clean passes through unchanged with no rule ids
    recorded. Cleaning may legitimately produce an empty body.
    """
    if rules is None:
        rules = load_rules()
    body = raw.body if isinstance(raw, RawMessage) else raw
    applied = []
    for rule in rules:
        body, n = rule.pattern.subn(rule.replacement, body)
        if n:
            applied.append(rule.id)
    return CleanMessage(body, tuple(applied))


def segment_sentences(body: str) -> list[str]:
    """Split a cleaned body after '.' followed by whitespace and an uppercase
    letter. Decimal numbers and clauses resuming with a digit stay intact, so
    joining the segments back with single spaces reproduces the body.
    """
    if not body:
        return []
    return _SENTENCE_SPLIT.split(body)


def build_corpus(messages, dedup: bool = True) -> list[str]:
    """Segment cleaned messages into one sentence list, first occurrence kept
    when dedup is on."""
    out = []
    seen = set()
    for msg in messages:
        body = msg.body if isinstance(msg, CleanMessage) else msg
        for sent in segment_sentences(body):
            if dedup:
                if sent in seen:
                    continue
                seen.add(sent)
            out.append(sent)
    return out


class DatisNormalizer(BaseEstimator, TransformerMixin):
    """Stateless transformer from raw message bodies to cleaned bodies.

    Parameters
    ----------
    rules : None, str, or list of CleaningRule
        None loads the packaged canonical table; a string is a path to an
        alternative TSV table.
    """

    def __init__(self, rules=None):
        self.rules = rules

    def fit(self, X=None, y=None):
        if self.rules is None or isinstance(self.rules, str):
            self.rules_ = load_rules(self.rules)
        else:
            self.rules_ = list(self.rules)
        return self

    def transform(self, X) -> list[str]:
        if not hasattr(self, "rules_"):
            self.fit()
        bodies = list(X)
        for i, b in enumerate(bodies):
            if not isinstance(b, (str, RawMessage)):
                raise TypeError(f"element {i} is {type(b).__name__}, expected str or RawMessage")
        return [clean_message(b, self.rules_).body for b in bodies]
