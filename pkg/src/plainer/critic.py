"""Rule-critic training: per-step loss terms keyed to applied rules.

At a step whose reference token is a rule's simple side, the teacher-forced
argmax decides the case: if the model would emit the rule's normal word the
loss pushes probability toward the simple word (-w * log P(simple)); if it
already emits the simple word the loss pushes the normal word's probability
down (+w * log P(normal), which a minimizer drives toward -inf). Any other
argmax contributes nothing. The argmax acts as a non-differentiable gate;
gradients flow only through the probabilities.

Sequence and critic objectives are optimized alternately, one optimizer
step each.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .corpus import UNK_ID, Vocabulary
from .optim import Adagrad, clip_gradients
from .rules import Rule, RuleMatch
from .tensor import Tape, Tensor


@dataclass(frozen=True)
class CriticTerm:
    step: int  # target position whose distribution is criticized
    rule: Rule
    normal_id: int
    simple_id: int
    weight: float


@dataclass
class AlignStats:
    terms: int = 0
    skipped_multi_token: int = 0
    skipped_unknown: int = 0


def align_critic_terms(
    target_tokens: list[str], matches: list[RuleMatch], vocab: Vocabulary
) -> tuple[list[CriticTerm], AlignStats]:
    """Turn applied-rule matches into critic terms against the target.

    Only single-word-to-single-word rules become terms: the loss compares
    two word probabilities at one step. Multi-token sides are counted and
    skipped, as are rules whose words fall outside the vocabulary.
    """
    stats = AlignStats()
    terms = []
    for match in matches:
        if match.target_position is None:
            continue
        rule = match.rule
        if len(rule.simple) != 1 or len(rule.normal) != 1:
            stats.skipped_multi_token += 1
            continue
        normal_id = vocab.id_of(rule.normal[0])
        simple_id = vocab.id_of(rule.simple[0])
        if UNK_ID in (normal_id, simple_id) or normal_id == simple_id:
            stats.skipped_unknown += 1
            continue
        if not 0 <= match.target_position < len(target_tokens):
            continue
        terms.append(
            CriticTerm(
                step=match.target_position,
                rule=rule,
                normal_id=normal_id,
                simple_id=simple_id,
                weight=rule.weight,
            )
        )
    stats.terms = len(terms)
    return terms, stats


def critic_loss(logits: Tensor, terms: list[CriticTerm]) -> Tensor:
    """Sum of critic terms over one teacher-forced logit matrix."""
    total: Tensor | None = None
    for term in terms:
        if term.step >= logits.shape[0]:
            raise ValueError(f"term step {term.step} outside {logits.shape[0]} logit rows")
        row = T.rows(logits, term.step)
        generated = int(np.argmax(row.data))
        if generated == term.normal_id:
            # -w * log P(simple): reward switching to the simple word
            piece = T.scale(T.cross_entropy(row, [term.simple_id]), term.weight)
        elif generated == term.simple_id:
            # +w * log P(normal): squash what remains of the normal word
            piece = T.scale(T.cross_entropy(row, [term.normal_id]), -term.weight)
        else:
            continue
        total = piece if total is None else T.add(total, piece)
    return total if total is not None else Tensor(0.0)


def alternating_train_step(
    batch,
    params,
    optimizer: Adagrad,
    phase: str,
    forward,
    clip_limit: float = 4.0,
    clip_mode: str = "norm",
):
    """One optimizer step on L_seq or L_critic, then toggle the phase.

    Batch elements carry a `.terms` list; `forward(example)` runs the
    teacher-forced pass and returns (loss, logits), so the same code drives
    both the plain and the memory-augmented model. A critic phase over a
    batch with no terms changes nothing but still advances the phase.
    """
    if phase not in ("seq", "critic"):
        raise ValueError(f"phase must be seq or critic, got {phase!r}")
    next_phase = "critic" if phase == "seq" else "seq"
    term_count = sum(len(ex.terms) for ex in batch)
    if phase == "critic" and term_count == 0:
        return 0.0, next_phase, 0

    params.zero_grads()
    with Tape() as tape:
        total: Tensor | None = None
        for example in batch:
            loss, logits = forward(example)
            piece = loss if phase == "seq" else critic_loss(logits, example.terms)
            total = piece if total is None else T.add(total, piece)
        total = T.scale(total, 1.0 / len(batch))
        tape.backward(total)
    clip_gradients(params, clip_limit, clip_mode)
    optimizer.step(params)
    return total.item(), next_phase, term_count
