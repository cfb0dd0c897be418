"""Evaluation suite: SARI with add/delete/keep F1s, FKGL, and rule utilization.

SARI scoring conventions used here (the literature leaves both open):

* keep/delete are scored on n-gram multisets with fractional reference
  counts (count / number of references); addition is scored on n-gram sets.
* For a given n and operation, if both the system's and the references'
  operation sets are empty the operation was vacuously perfect and scores
  precision = recall = 1; if exactly one side is empty the F1 is 0. Under
  this convention copying the single identical reference scores 100.
* All three operations report F1. ``delete_precision_only=True`` switches
  deletion to the precision-only convention some earlier tooling used.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

from .rules import RuleIndex, applied_rules, rule_id

MAX_NGRAM = 4


# ---------------------------------------------------------------------------
# SARI
# ---------------------------------------------------------------------------


@dataclass
class SariBreakdown:
    sari: float
    f_add: float
    f_delete: float
    f_keep: float
    # per-operation list of F1s for n = 1..4, on the 0..100 scale
    per_n: dict[str, list[float]] = field(default_factory=dict)


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _overlap(a: dict, b: dict) -> float:
    return sum(min(c, b[g]) for g, c in a.items() if g in b)


def _prf(sys_weight: float, ref_weight: float, hit: float) -> tuple[float, float, float]:
    """Precision/recall/F1 with the empty-operation-set convention."""
    if sys_weight == 0 and ref_weight == 0:
        return 1.0, 1.0, 1.0
    p = hit / sys_weight if sys_weight > 0 else 0.0
    r = hit / ref_weight if ref_weight > 0 else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def _rep_counts(source, output, references, n: int):
    """Counts scaled by the reference count so all set arithmetic stays integral.

    Fractional reference counts (count / num_refs) are the intended
    semantics; multiplying the source/output counts by num_refs instead
    keeps every min/difference exact, and the scale cancels in the final
    precision/recall ratios.
    """
    num_refs = len(references)
    src = Counter({g: c * num_refs for g, c in _ngrams(source, n).items()})
    out = Counter({g: c * num_refs for g, c in _ngrams(output, n).items()})
    ref = Counter()
    for r in references:
        ref.update(_ngrams(r, n))
    return src, out, ref


def _sari_ngram(source, output, references, n: int) -> tuple[float, float, float]:
    """(add, delete, keep) scores for one n-gram order of one sentence."""
    src, out, ref = _rep_counts(source, output, references, n)

    # addition: new n-grams, set semantics
    sys_add = set(out) - set(src)
    ref_add = set(ref) - set(src)
    _, _, f_add = _prf(len(sys_add), len(ref_add), len(sys_add & ref_add))

    # keeping: multiset intersection with (scaled) fractional reference counts
    sys_keep = {g: min(c, out[g]) for g, c in src.items() if g in out}
    ref_keep = {g: min(c, ref[g]) for g, c in src.items() if g in ref}
    _, _, f_keep = _prf(
        sum(sys_keep.values()), sum(ref_keep.values()), _overlap(sys_keep, ref_keep)
    )

    # deletion: multiset difference with (scaled) fractional reference counts
    sys_del = {g: c - out[g] for g, c in src.items() if c > out[g]}
    ref_del = {g: c - ref[g] for g, c in src.items() if c > ref[g]}
    _, _, f_del = _prf(
        sum(sys_del.values()), sum(ref_del.values()), _overlap(sys_del, ref_del)
    )
    return f_add, f_del, f_keep


def sari_sentence(source, output, references, delete_precision_only: bool = False) -> SariBreakdown:
    """SARI for one (source, output, references) triple, on the 0..100 scale."""
    if not references:
        raise ValueError("SARI needs at least one reference")
    per_n: dict[str, list[float]] = {"add": [], "delete": [], "keep": []}
    for n in range(1, MAX_NGRAM + 1):
        if delete_precision_only:
            f_add, f_del, f_keep = _sari_ngram_delete_precision(source, output, references, n)
        else:
            f_add, f_del, f_keep = _sari_ngram(source, output, references, n)
        per_n["add"].append(100.0 * f_add)
        per_n["delete"].append(100.0 * f_del)
        per_n["keep"].append(100.0 * f_keep)
    f_add = sum(per_n["add"]) / MAX_NGRAM
    f_delete = sum(per_n["delete"]) / MAX_NGRAM
    f_keep = sum(per_n["keep"]) / MAX_NGRAM
    return SariBreakdown(
        sari=(f_add + f_delete + f_keep) / 3,
        f_add=f_add,
        f_delete=f_delete,
        f_keep=f_keep,
        per_n=per_n,
    )


def _sari_ngram_delete_precision(source, output, references, n: int):
    """Original-convention variant: deletion scored by precision alone."""
    f_add, _, f_keep = _sari_ngram(source, output, references, n)
    src, out, ref = _rep_counts(source, output, references, n)
    sys_del = {g: c - out[g] for g, c in src.items() if c > out[g]}
    ref_del = {g: c - ref[g] for g, c in src.items() if c > ref[g]}
    if not sys_del and not ref_del:
        p_del = 1.0
    elif not sys_del:
        p_del = 0.0
    else:
        p_del = _overlap(sys_del, ref_del) / sum(sys_del.values())
    return f_add, p_del, f_keep


def sari_corpus(triples, delete_precision_only: bool = False) -> SariBreakdown:
    """Mean of sentence-level SARI over (source, output, references) triples."""
    if not triples:
        raise ValueError("empty corpus")
    parts = [sari_sentence(s, o, r, delete_precision_only) for s, o, r in triples]
    k = len(parts)
    return SariBreakdown(
        sari=sum(p.sari for p in parts) / k,
        f_add=sum(p.f_add for p in parts) / k,
        f_delete=sum(p.f_delete for p in parts) / k,
        f_keep=sum(p.f_keep for p in parts) / k,
    )


# ---------------------------------------------------------------------------
# Readability
# ---------------------------------------------------------------------------


@dataclass
class ReadabilityReport:
    fkgl: float
    wlen: float  # average syllables per word
    slen: float  # average words per sentence


_VOWEL_RUNS = re.compile(r"[aeiouy]+")
_PLACEHOLDER = re.compile(r"^(per|loc|org)@\d+$", re.IGNORECASE)


def count_syllables(word: str) -> int:
    """Deterministic vowel-run heuristic; not dictionary truth.

    Counts maximal [aeiouy] runs, subtracts one for a terminal 'e' unless it
    is the only vowel group, clamps at one. Punctuation and entity
    placeholder tokens count as one syllable.
    """
    if not word:
        raise ValueError("empty word")
    if _PLACEHOLDER.match(word) or not any(c.isalpha() for c in word):
        return 1
    w = word.lower()
    runs = _VOWEL_RUNS.findall(w)
    count = len(runs)
    if w.endswith("e") and count > 1:
        count -= 1
    return max(count, 1)


def fkgl(sentences) -> ReadabilityReport:
    """Grade level 0.39*slen + 11.8*wlen - 15.59 over a tokenized corpus."""
    sentences = list(sentences)
    if not sentences or any(not s for s in sentences):
        raise ValueError("fkgl needs a nonempty corpus of nonempty sentences")
    words = sum(len(s) for s in sentences)
    syllables = sum(count_syllables(w) for s in sentences for w in s)
    slen = words / len(sentences)
    wlen = syllables / words
    return ReadabilityReport(fkgl=0.39 * slen + 11.8 * wlen - 15.59, wlen=wlen, slen=slen)


# ---------------------------------------------------------------------------
# Rule utilization
# ---------------------------------------------------------------------------


@dataclass
class RuleUtilReport:
    precision: float
    recall: float
    f1: float
    # per-sentence (correct, applied, overlap) rule counts
    per_sentence: list[tuple[int, int, int]] = field(default_factory=list)


def rule_utilization(triples, index: RuleIndex) -> RuleUtilReport:
    """Micro-averaged P/R/F1 of rules the outputs applied vs. rules the
    references show were correct to apply.

    Per sentence the correct set is the union over references of rules
    applied between source and reference; the applied set compares source
    and system output. Sentences with empty denominators contribute zero
    counts rather than being skipped.
    """
    per_sentence = []
    hit_total = applied_total = correct_total = 0
    for source, output, references in triples:
        correct = set()
        for ref in references:
            correct |= {rule_id(m.rule) for m in applied_rules(source, ref, index)}
        applied = {rule_id(m.rule) for m in applied_rules(source, output, index)}
        overlap = applied & correct
        per_sentence.append((len(correct), len(applied), len(overlap)))
        hit_total += len(overlap)
        applied_total += len(applied)
        correct_total += len(correct)
    precision = hit_total / applied_total if applied_total else 0.0
    recall = hit_total / correct_total if correct_total else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision > 0 and recall > 0 else 0.0
    return RuleUtilReport(precision=precision, recall=recall, f1=f1, per_sentence=per_sentence)


# ---------------------------------------------------------------------------
# Combined per-corpus report
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    """One row of the evaluation table: readability, SARI, rule utilization."""

    name: str
    readability: ReadabilityReport
    sari: SariBreakdown
    rule_util: RuleUtilReport

    COLUMNS = ("FKGL", "WLen", "SLen", "SARI", "Add", "Delete", "Keep", "Prec", "Recall", "F1")

    def values(self) -> tuple[float, ...]:
        return (
            self.readability.fkgl,
            self.readability.wlen,
            self.readability.slen,
            self.sari.sari,
            self.sari.f_add,
            self.sari.f_delete,
            self.sari.f_keep,
            100.0 * self.rule_util.precision,
            100.0 * self.rule_util.recall,
            100.0 * self.rule_util.f1,
        )


def evaluate_corpus(name, sources, outputs, references_per_sentence, index: RuleIndex) -> EvalReport:
    """Full metric bundle for aligned system outputs."""
    triples = list(zip(sources, outputs, references_per_sentence))
    return EvalReport(
        name=name,
        readability=fkgl(outputs),
        sari=sari_corpus(triples),
        rule_util=rule_utilization(triples, index),
    )
