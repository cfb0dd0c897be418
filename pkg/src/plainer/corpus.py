"""Corpus handling: parallel loading, entity anonymization, vocabulary, embeddings.

Input text is expected pre-tokenized and lowercase, one sentence per line;
the loader only splits on whitespace. Named-entity annotations come from a
sidecar TSV (``line<TAB>start<TAB>end_exclusive<TAB>type``) produced by any
external tagger; a small gazetteer tagger is included for synthetic data.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

log = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
RESERVED = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3

ENTITY_TYPES = ("PER", "LOC", "ORG")


class CorpusError(ValueError):
    pass


class AlignmentError(CorpusError):
    pass


class AnnotationError(CorpusError):
    pass


class EmbeddingFormatError(CorpusError):
    pass


@dataclass
class SentencePair:
    """A normal sentence, its simplified counterpart, and optional references."""

    normal: list[str]
    simple: list[str]
    references: list[list[str]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Entity anonymization
# ---------------------------------------------------------------------------


def anonymize_entities(pair: SentencePair, normal_spans=(), simple_spans=()):
    """Replace annotated spans with TYPE@N placeholders, consistently per pair.

    Spans are (start, end_exclusive, type) token spans. The same surface
    string on both sides gets the same placeholder; N counts distinct
    entities of a type in first-appearance order (normal side first).
    Returns the rewritten pair and a placeholder-to-surface map.
    """
    counters = dict.fromkeys(ENTITY_TYPES, 0)
    by_surface: dict[tuple[str, str], str] = {}
    entity_map: dict[str, str] = {}

    def placeholder_for(etype: str, surface: str) -> str:
        key = (etype, surface)
        if key not in by_surface:
            counters[etype] += 1
            name = f"{etype}@{counters[etype]}"
            by_surface[key] = name
            entity_map[name] = surface
        return by_surface[key]

    def rewrite(tokens: list[str], spans) -> list[str]:
        spans = sorted(spans, key=lambda s: s[0])
        last_end = 0
        for start, end, etype in spans:
            if etype not in ENTITY_TYPES:
                raise AnnotationError(f"unknown entity type {etype!r}")
            if not 0 <= start < end <= len(tokens):
                raise AnnotationError(f"span ({start}, {end}) outside sentence of length {len(tokens)}")
            if start < last_end:
                raise AnnotationError(f"overlapping spans at token {start}")
            last_end = end
        out = []
        cursor = 0
        for start, end, etype in spans:
            out.extend(tokens[cursor:start])
            out.append(placeholder_for(etype, " ".join(tokens[start:end])))
            cursor = end
        out.extend(tokens[cursor:])
        return out

    new_pair = SentencePair(
        normal=rewrite(pair.normal, normal_spans),
        simple=rewrite(pair.simple, simple_spans),
        references=[list(r) for r in pair.references],
    )
    return new_pair, entity_map


def gazetteer_spans(tokens: list[str], gazetteer: dict[str, str]):
    """Longest-match spans for surfaces listed in a {surface: type} gazetteer."""
    entries = sorted(((s.split(), t) for s, t in gazetteer.items()), key=lambda e: -len(e[0]))
    spans = []
    i = 0
    while i < len(tokens):
        for surface, etype in entries:
            n = len(surface)
            if tokens[i : i + n] == surface:
                spans.append((i, i + n, etype))
                i += n
                break
        else:
            i += 1
    return spans


def load_annotations(path) -> dict[int, list[tuple[int, int, str]]]:
    """Sidecar TSV ``line<TAB>start<TAB>end_exclusive<TAB>type`` keyed by line."""
    spans: dict[int, list[tuple[int, int, str]]] = {}
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            raw = raw.strip()
            if not raw or raw.startswith("#"):
                continue
            line, start, end, etype = raw.split("\t")
            spans.setdefault(int(line), []).append((int(start), int(end), etype))
    return spans


def save_entity_maps(maps: list[dict[str, str]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, emap in enumerate(maps):
            for placeholder, surface in emap.items():
                fh.write(f"{i}\t{placeholder}\t{surface}\n")


def load_entity_maps(path, count: int) -> list[dict[str, str]]:
    maps: list[dict[str, str]] = [{} for _ in range(count)]
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            raw = raw.rstrip("\n")
            if not raw:
                continue
            idx, placeholder, surface = raw.split("\t")
            maps[int(idx)][placeholder] = surface
    return maps


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------


class Vocabulary:
    """Bidirectional token/id map with reserved PAD, BOS, EOS and UNK ids.

    Ids are dense and deterministic: reserved tokens first, then training
    tokens ordered by descending frequency (ties alphabetically). Immutable
    once built, so it can be shared freely.
    """

    def __init__(self, tokens: list[str], frequencies: dict[str, int]):
        self._id_to_token = list(RESERVED) + list(tokens)
        self._token_to_id = {t: i for i, t in enumerate(self._id_to_token)}
        if len(self._token_to_id) != len(self._id_to_token):
            raise CorpusError("duplicate tokens in vocabulary")
        self.frequencies = dict(frequencies)

    @classmethod
    def build(cls, pairs: list[SentencePair], min_count: int = 3) -> "Vocabulary":
        """Count tokens over both sides; frequency <= min_count encodes as UNK."""
        if not pairs:
            raise CorpusError("cannot build a vocabulary from an empty corpus")
        freq: dict[str, int] = {}
        for pair in pairs:
            for token in pair.normal:
                freq[token] = freq.get(token, 0) + 1
            for token in pair.simple:
                freq[token] = freq.get(token, 0) + 1
        kept = sorted((t for t, c in freq.items() if c > min_count), key=lambda t: (-freq[t], t))
        return cls(kept, freq)

    def __len__(self) -> int:
        return len(self._id_to_token)

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self._id_to_token):
            raise IndexError(f"id {idx} outside vocabulary of size {len(self)}")
        return self._id_to_token[idx]

    def encode(self, tokens: list[str]) -> list[int]:
        """Map tokens to ids (OOV becomes UNK) and append EOS."""
        return [self.id_of(t) for t in tokens] + [EOS_ID]

    def decode(self, ids, entity_map: dict[str, str] | None = None) -> list[str]:
        """Invert ids, dropping control tokens and restoring entity surfaces."""
        out = []
        for idx in ids:
            token = self.token_of(int(idx))
            if token in (PAD, BOS, EOS):
                continue
            if entity_map and token in entity_map:
                out.extend(entity_map[token].split())
            else:
                out.append(token)
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for idx, token in enumerate(self._id_to_token):
                fh.write(f"{token}\t{idx}\t{self.frequencies.get(token, 0)}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        tokens: list[str] = []
        freq: dict[str, int] = {}
        with open(path, encoding="utf-8") as fh:
            for raw in fh:
                token, idx, count = raw.rstrip("\n").split("\t")
                tokens.append(token)
                if token not in RESERVED:
                    freq[token] = int(count)
        if tokens[: len(RESERVED)] != list(RESERVED):
            raise CorpusError(f"vocabulary file {path} lacks the reserved token header")
        vocab = cls(tokens[len(RESERVED) :], freq)
        return vocab


# ---------------------------------------------------------------------------
# Parallel corpus loading
# ---------------------------------------------------------------------------


def read_token_lines(path) -> list[list[str]]:
    """One whitespace-tokenized sentence per line; empty lines are an error."""
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n").split() for line in fh]
    for i, tokens in enumerate(lines):
        if not tokens:
            raise CorpusError(f"{path}: empty sentence at line {i + 1}")
    return lines


def load_parallel(normal_path, simple_path=None, reference_paths=(), max_len: int = 85):
    """Load line-aligned files into sentence pairs.

    Evaluation sets may supply reference files instead of (or in addition
    to) a simple side; without a simple side the first reference stands in.
    Sentences longer than max_len are truncated with a logged warning.
    """
    normals = read_token_lines(normal_path)
    refs = [read_token_lines(p) for p in reference_paths]
    for path, lines in zip(reference_paths, refs):
        if len(lines) != len(normals):
            raise AlignmentError(f"{path} has {len(lines)} lines, expected {len(normals)}")
    if simple_path is not None:
        simples = read_token_lines(simple_path)
        if len(simples) != len(normals):
            raise AlignmentError(f"{simple_path} has {len(simples)} lines, expected {len(normals)}")
    elif refs:
        simples = [list(r) for r in refs[0]]
    else:
        raise CorpusError("need a simple side or at least one reference file")

    truncated = 0
    pairs = []
    for i, normal in enumerate(normals):
        sentences = [normal, simples[i]] + [r[i] for r in refs]
        for s in sentences:
            if len(s) > max_len:
                truncated += 1
                del s[max_len:]
        pairs.append(SentencePair(normal=normal, simple=simples[i], references=[r[i] for r in refs]))
    if truncated:
        log.warning("truncated %d sentence(s) to max length %d", truncated, max_len)
    return pairs


def save_parallel(pairs: list[SentencePair], normal_path, simple_path) -> None:
    with open(normal_path, "w", encoding="utf-8") as fn, open(simple_path, "w", encoding="utf-8") as fs:
        for pair in pairs:
            fn.write(" ".join(pair.normal) + "\n")
            fs.write(" ".join(pair.simple) + "\n")


# ---------------------------------------------------------------------------
# Pretrained embeddings
# ---------------------------------------------------------------------------


def load_embeddings(path, vocab: Vocabulary, dim: int, rng: np.random.Generator):
    """Read ``token v1 ... vdim`` lines into a (V, dim) matrix.

    Tokens absent from the file keep a seeded uniform(-0.1, 0.1) row.
    Returns (embedding tensor, coverage fraction).
    """
    matrix = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
    covered = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            parts = raw.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}"
                )
            token = parts[0]
            idx = vocab.id_of(token)
            if idx != UNK_ID or token == UNK:
                matrix[idx] = [float(v) for v in parts[1:]]
                covered.add(idx)
    coverage = len(covered) / len(vocab)
    return Tensor(matrix, requires_grad=True), coverage
