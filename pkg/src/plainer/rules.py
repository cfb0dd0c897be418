"""Paraphrase rulebase: weighted normal-phrase to simple-phrase rewrites.

The on-disk format is UTF-8 TSV with four columns
``weight<TAB>type<TAB>normal phrase<TAB>simple phrase``; lines starting
with ``#`` are comments. Matching is exact on token surfaces.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from functools import lru_cache

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Rule:
    weight: float
    syntactic_type: str
    normal: tuple[str, ...]
    simple: tuple[str, ...]
    # original weight text, kept so serialization round-trips byte-for-byte
    weight_text: str = field(default="", compare=False)

    def __post_init__(self):
        if self.weight <= 0:
            raise ValueError(f"rule weight must be positive, got {self.weight}")
        if not self.normal or not self.simple:
            raise ValueError("rule sides must be nonempty")
        if self.normal == self.simple:
            raise ValueError(f"rule rewrites {self.normal} to itself")
        if not self.weight_text:
            object.__setattr__(self, "weight_text", repr(self.weight))


@lru_cache(maxsize=None)
def rule_id(rule: Rule) -> str:
    """Stable content hash over (type, normal, simple); identical across runs."""
    key = "\x1f".join([rule.syntactic_type, " ".join(rule.normal), " ".join(rule.simple)])
    return hashlib.sha1(key.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class RuleMatch:
    """One occurrence of a rule's normal side in a sentence.

    ``start:end`` is the token span in the source; ``target_position``, when
    set, is where the rule's simple side begins in the simplified sentence.
    """

    rule: Rule
    start: int
    end: int
    target_position: int | None = None


def parse_rulebase(path, min_weight: float = 0.0) -> list[Rule]:
    """Read a rulebase file; malformed lines are counted and logged, not fatal."""
    rules = []
    malformed = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                malformed += 1
                continue
            weight_text, rtype, normal, simple = parts
            try:
                rule = Rule(
                    weight=float(weight_text),
                    syntactic_type=rtype,
                    normal=tuple(normal.split()),
                    simple=tuple(simple.split()),
                    weight_text=weight_text,
                )
            except ValueError:
                malformed += 1
                continue
            if rule.weight >= min_weight:
                rules.append(rule)
    if malformed:
        log.warning("rulebase %s: skipped %d malformed line(s)", path, malformed)
    return rules


def serialize_rulebase(rules: list[Rule], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rules:
            fh.write(f"{r.weight_text}\t{r.syntactic_type}\t{' '.join(r.normal)}\t{' '.join(r.simple)}\n")


class RuleIndex:
    """Immutable first-token index over a rulebase; safe to share across threads."""

    def __init__(self, rules: list[Rule]):
        self.rules = list(rules)
        buckets: dict[str, list[Rule]] = {}
        for rule in self.rules:
            buckets.setdefault(rule.normal[0], []).append(rule)
        for bucket in buckets.values():
            bucket.sort(key=lambda r: (-r.weight, rule_id(r)))
        self._buckets = buckets

    def starting_with(self, token: str) -> list[Rule]:
        return self._buckets.get(token, [])


def _find_subsequence(haystack: tuple[str, ...] | list[str], needle: tuple[str, ...]) -> int:
    """First index where `needle` occurs contiguously in `haystack`, else -1."""
    n = len(needle)
    for i in range(len(haystack) - n + 1):
        if tuple(haystack[i : i + n]) == needle:
            return i
    return -1


def candidate_rules(sentence, index: RuleIndex) -> list[RuleMatch]:
    """Every occurrence of any rule's normal side in the sentence.

    Order is deterministic: span start first, then descending weight.
    Overlapping spans are all kept; consumers deduplicate as they need.
    """
    sentence = list(sentence)
    matches = []
    for start, token in enumerate(sentence):
        for rule in index.starting_with(token):
            end = start + len(rule.normal)
            if end <= len(sentence) and tuple(sentence[start:end]) == rule.normal:
                matches.append(RuleMatch(rule, start, end))
    return matches


def applied_rules(normal, target, index: RuleIndex) -> list[RuleMatch]:
    """Candidate rules that the target actually exhibits.

    A rule counts as applied when its simple side occurs contiguously in the
    target while its normal side does not (if the original phrase survived,
    no simplification happened). ``target_position`` is the first occurrence
    of the simple side.
    """
    target = list(target)
    applied = []
    for match in candidate_rules(normal, index):
        pos = _find_subsequence(target, match.rule.simple)
        if pos >= 0 and _find_subsequence(target, match.rule.normal) < 0:
            applied.append(RuleMatch(match.rule, match.start, match.end, target_position=pos))
    return applied
