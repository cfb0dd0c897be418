"""Greedy and beam-search generation.

Scores are sums of token log-probabilities with no length normalization
unless asked for (`length_normalize` divides final scores by length).
Beam search holds finished hypotheses aside, prunes the active set to the
beam width each step, and breaks ties deterministically: higher score,
then earlier finish, then lexicographic token order. Each step rescores
the whole prefix; at this scale recomputation is cheaper than caching and
trivially consistent with the training forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .corpus import BOS_ID, EOS_ID
from .memory import RuleMemory, decode_read
from .model import ModelConfig, ModelParams, decode_states, encode, output_logits
from .model import combine_with_memory


@dataclass(frozen=True)
class Hypothesis:
    ids: tuple[int, ...]  # BOS-prefixed
    score: float  # cumulative log-probability
    finished: bool

    @property
    def tokens(self) -> list[int]:
        """Generated ids without the BOS prefix or a terminal EOS."""
        body = list(self.ids[1:])
        if body and body[-1] == EOS_ID:
            body.pop()
        return body


class Generator:
    """Per-sentence scoring of next-token log-probabilities.

    In memory mode the final step representation is combined with a memory
    read queried by the current context vector; candidates are the rules
    whose normal side occurs in the source sentence.
    """

    def __init__(
        self,
        params: ModelParams,
        config: ModelConfig,
        memory: RuleMemory | None = None,
        candidate_ids=(),
        probe: list | None = None,
    ):
        self.params = params
        self.config = config
        self.memory = memory if config.uses_memory else None
        self.candidate_ids = list(candidate_ids)
        self.probe = probe

    def start(self, source_ids):
        return encode(source_ids, self.params, self.config)

    def next_log_probs(self, enc, prefix_ids) -> np.ndarray:
        state = decode_states(prefix_ids, enc, self.params, self.config)
        last = len(prefix_ids) - 1
        top_row = T.rows(state.top, last)
        if self.memory is not None:
            context = T.rows(state.context_at(self.config.memory_query_layer), last)
            read = decode_read(context, self.candidate_ids, self.memory)
            if self.probe is not None:
                self.probe.append((last, read.candidate_ids, read.weights))
            top_row = combine_with_memory(top_row, read.output, self.params)
        logits = output_logits(top_row, self.params)
        return T.log_probs(logits.data[0])


def default_max_len(source_ids) -> int:
    # simplifications are rarely longer than their source
    return len(source_ids) + 10


def greedy_decode(source_ids, generator: Generator, max_len: int | None = None) -> list[int]:
    """Argmax token per step until EOS or the length budget runs out."""
    max_len = default_max_len(source_ids) if max_len is None else max_len
    enc = generator.start(source_ids)
    prefix = [BOS_ID]
    out: list[int] = []
    for _ in range(max_len):
        token = int(np.argmax(generator.next_log_probs(enc, prefix)))
        prefix.append(token)
        out.append(token)
        if token == EOS_ID:
            break
    return out


def _rank_key(hyp: Hypothesis, length_normalize: bool):
    score = hyp.score / max(len(hyp.ids) - 1, 1) if length_normalize else hyp.score
    finish_order = len(hyp.ids) if hyp.finished else float("inf")
    return (-score, finish_order, hyp.ids)


def beam_decode(
    source_ids,
    generator: Generator,
    beam_size: int,
    max_len: int | None = None,
    length_normalize: bool = False,
) -> list[Hypothesis]:
    """Breadth-limited best-first search over token sequences.

    Returns up to `beam_size` hypotheses ranked best-first; hypotheses
    still unfinished at the length budget are returned as truncations.
    """
    if beam_size < 1:
        raise ValueError(f"beam_size must be positive, got {beam_size}")
    max_len = default_max_len(source_ids) if max_len is None else max_len
    enc = generator.start(source_ids)
    active = [Hypothesis(ids=(BOS_ID,), score=0.0, finished=False)]
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        if not active:
            break
        candidates = []
        for hyp in active:
            log_probs = generator.next_log_probs(enc, list(hyp.ids))
            order = np.argsort(-log_probs, kind="stable")[:beam_size]
            for token in order:
                candidates.append(
                    Hypothesis(
                        ids=hyp.ids + (int(token),),
                        score=hyp.score + float(log_probs[token]),
                        finished=int(token) == EOS_ID,
                    )
                )
        candidates.sort(key=lambda h: (-h.score, h.ids))
        # the top beam_size candidates compete for slots; the ones that end
        # in EOS retire to the finished pool (with beam 1 this is exactly
        # the greedy choice at every step)
        active = []
        for cand in candidates[:beam_size]:
            if cand.finished:
                finished.append(cand)
            else:
                active.append(cand)
    pool = finished + active  # truncated hypotheses still count
    pool.sort(key=lambda h: _rank_key(h, length_normalize))
    return pool[:beam_size]


def decode_corpus(
    examples,
    generator_factory,
    beam_size: int = 1,
    max_len: int | None = None,
    length_normalize: bool = False,
) -> list[list[int]]:
    """Decode a list of (source_ids, candidate_ids) in corpus order."""
    outputs = []
    for source_ids, candidate_ids in examples:
        generator = generator_factory(candidate_ids)
        if beam_size == 1:
            outputs.append(greedy_decode(source_ids, generator, max_len))
        else:
            best = beam_decode(source_ids, generator, beam_size, max_len, length_normalize)[0]
            body = list(best.ids[1:])
            outputs.append(body)
    return outputs
