"""Training loop, checkpointing, and corpus-to-example preparation.

One seeded generator drives initialization, batch shuffling and dropout,
so a (config, seed) pair pins every emitted number. Checkpoints are
self-describing npz bundles: parameters, optimizer state, rule memory,
RNG state, step counter and the run configuration; loading restores all
of it bit-exactly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import critic as CR
from . import decoding as D
from .config import RunConfig
from .corpus import SentencePair, Vocabulary
from .memory import RuleMemory, apply_memory_updates, memory_forward
from .metrics import sari_corpus
from .model import ModelConfig, ModelParams, sequence_loss
from .optim import Adagrad, clip_gradients
from .rules import RuleIndex, applied_rules, candidate_rules, rule_id
from .tensor import Tape

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


@dataclass
class Example:
    """One training pair with rule bookkeeping resolved against the vocab."""

    source_ids: list[int]
    target_ids: list[int]
    source_tokens: list[str] = field(default_factory=list)
    candidate_ids: list[str] = field(default_factory=list)
    aligned: list[tuple[str, int]] = field(default_factory=list)
    terms: list[CR.CriticTerm] = field(default_factory=list)
    skipped_multi: int = 0


def prepare_examples(
    pairs: list[SentencePair], vocab: Vocabulary, index: RuleIndex | None
) -> list[Example]:
    examples = []
    for pair in pairs:
        ex = Example(
            source_ids=vocab.encode(pair.normal),
            target_ids=vocab.encode(pair.simple),
            source_tokens=list(pair.normal),
        )
        if index is not None:
            seen = set()
            for match in candidate_rules(pair.normal, index):
                rid = rule_id(match.rule)
                if rid not in seen:
                    seen.add(rid)
                    ex.candidate_ids.append(rid)
            matches = applied_rules(pair.normal, pair.simple, index)
            ex.aligned = [
                (rule_id(m.rule), m.target_position)
                for m in matches
                if m.target_position is not None
            ]
            ex.terms, stats = CR.align_critic_terms(pair.simple, matches, vocab)
            ex.skipped_multi = stats.skipped_multi_token
        examples.append(ex)
    return examples


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------


def save_checkpoint(
    path,
    params: ModelParams,
    optimizer: Adagrad,
    config: RunConfig,
    rng: np.random.Generator,
    step: int,
    memory: RuleMemory | None = None,
) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, t in params.items():
        arrays[f"param/{name}"] = t.data
    arrays.update(optimizer.state_arrays())
    if memory is not None:
        arrays.update(memory.to_arrays())
    arrays["rng_state"] = np.array(json.dumps(rng.bit_generator.state))
    arrays["step"] = np.array([step], dtype=np.int64)
    arrays["config"] = np.array(config.to_text())
    np.savez(path, **arrays)


@dataclass
class Checkpoint:
    params: ModelParams
    optimizer: Adagrad
    config: RunConfig
    rng: np.random.Generator
    step: int
    memory: RuleMemory | None


def load_checkpoint(path) -> Checkpoint:
    from .config import parse_config_text
    from .tensor import Tensor

    with np.load(path) as arrays:
        names = [k[len("param/") :] for k in arrays.files if k.startswith("param/")]
        tensors = {n: Tensor(np.array(arrays[f"param/{n}"]), requires_grad=True) for n in names}
        params = ModelParams(tensors)

        config = parse_config_text(str(arrays["config"]))

        optimizer = Adagrad(params, lr=config.learning_rate, accumulator_init=config.accumulator_init)
        optimizer.load_state_arrays({k: arrays[k] for k in arrays.files if k.startswith("adagrad/")})

        rng = np.random.default_rng()
        rng.bit_generator.state = json.loads(str(arrays["rng_state"]))

        memory = None
        if any(k.startswith("memory/") for k in arrays.files):
            memory = RuleMemory.from_arrays(
                {k: arrays[k] for k in arrays.files if k.startswith("memory/")}
            )
        step = int(arrays["step"][0])
    return Checkpoint(params, optimizer, config, rng, step, memory)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: ModelParams
    memory: RuleMemory | None
    losses: list[float]
    phases: list[str]
    term_counts: list[int]
    validation: list[tuple[int, float]]  # (step, SARI)
    checkpoint_path: Path | None
    best_path: Path | None


def _make_forward(params, config: ModelConfig, memory, rng, snapshots):
    if memory is None:
        def forward(ex):
            loss, _, logits = sequence_loss(
                ex.source_ids, ex.target_ids, params, config, train=True, rng=rng
            )
            return loss, logits
    else:
        def forward(ex):
            fwd = memory_forward(ex, params, config, memory, train=True, rng=rng)
            snapshots.append((ex, fwd))
            return fwd.loss, fwd.logits
    return forward


def _phase_for(step: int, config: RunConfig) -> str:
    if config.mode not in ("dcss", "dmass+dcss"):
        return "seq"
    cycle = config.critic_ratio + 1
    return "critic" if step % cycle == config.critic_ratio else "seq"


def validation_sari(examples, pairs, params, config, memory, beam_size=1, vocab=None):
    """Greedy/beam decode the given pairs and score SARI against references."""
    triples = []
    for ex, pair in zip(examples, pairs):
        gen = D.Generator(params, config, memory=memory, candidate_ids=ex.candidate_ids)
        if beam_size == 1:
            out_ids = D.greedy_decode(ex.source_ids, gen)
        else:
            out_ids = list(D.beam_decode(ex.source_ids, gen, beam_size)[0].ids[1:])
        out_tokens = vocab.decode(out_ids)
        refs = pair.references if pair.references else [pair.simple]
        triples.append((pair.normal, out_tokens, refs))
    return sari_corpus(triples).sari, triples


def train_run(
    config: RunConfig,
    pairs: list[SentencePair],
    vocab: Vocabulary,
    index: RuleIndex | None = None,
    valid_pairs: list[SentencePair] | None = None,
    checkpoint_dir=None,
) -> TrainResult:
    """Run `config.train_steps` optimizer steps in the configured mode."""
    if config.mode != "base" and index is None:
        raise TrainingAborted(f"mode {config.mode} needs a rulebase")
    rng = np.random.default_rng(config.seed)
    model_config = config.model_config(len(vocab))
    params = ModelParams.init(model_config, rng)
    optimizer = Adagrad(params, lr=config.learning_rate, accumulator_init=config.accumulator_init)
    memory = RuleMemory(model_config.d_model, config.slots_per_rule) if model_config.uses_memory else None
    examples = prepare_examples(pairs, vocab, index)
    valid_examples = prepare_examples(valid_pairs, vocab, index) if valid_pairs else None

    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
    if checkpoint_dir:
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
    last_path = best_path = None
    best_sari = -1.0

    losses: list[float] = []
    phases: list[str] = []
    term_counts: list[int] = []
    validation: list[tuple[int, float]] = []
    order: list[int] = []
    cursor = 0

    for step in range(config.train_steps):
        if cursor + config.batch_size > len(order):
            order = list(rng.permutation(len(examples)))
            cursor = 0
        batch = [examples[i] for i in order[cursor : cursor + config.batch_size]]
        cursor += config.batch_size

        phase = _phase_for(step, config)
        snapshots: list = []
        forward = _make_forward(params, model_config, memory, rng, snapshots)
        loss_value, _, terms = CR.alternating_train_step(
            batch, params, optimizer, phase, forward,
            clip_limit=config.gradient_clip, clip_mode=config.clip_mode,
        )
        for ex, fwd in snapshots:
            apply_memory_updates(memory, ex, fwd)
        losses.append(loss_value)
        phases.append(phase)
        term_counts.append(terms)
        log.info(
            "step %d phase %s loss %.6f terms %d skipped_multi %d",
            step, phase, loss_value, terms, sum(ex.skipped_multi for ex in batch),
        )

        if not np.isfinite(loss_value):
            raise TrainingAborted(
                f"non-finite loss at step {step}; last good checkpoint kept",
                checkpoint_path=last_path,
            )

        due = (step + 1) % config.checkpoint_every == 0 or step + 1 == config.train_steps
        if checkpoint_dir and due:
            last_path = checkpoint_dir / "checkpoint.npz"
            save_checkpoint(last_path, params, optimizer, config, rng, step + 1, memory)
        if valid_examples and config.validate_every and (step + 1) % config.validate_every == 0:
            score, _ = validation_sari(
                valid_examples, valid_pairs, params, model_config, memory,
                beam_size=config.beam_size, vocab=vocab,
            )
            validation.append((step + 1, score))
            log.info("step %d validation SARI %.2f", step + 1, score)
            if checkpoint_dir and score > best_sari:
                best_sari = score
                best_path = checkpoint_dir / "checkpoint.best.npz"
                save_checkpoint(best_path, params, optimizer, config, rng, step + 1, memory)

    return TrainResult(
        params, memory, losses, phases, term_counts, validation, last_path, best_path
    )


def token_accuracy(examples, params, config: ModelConfig, memory=None) -> float:
    """Teacher-forced next-token accuracy over a prepared example list."""
    hit = total = 0
    for ex in examples:
        if memory is not None and config.uses_memory:
            fwd = memory_forward(ex, params, config, memory)
            logits = fwd.logits.data
        else:
            _, _, logits_t = sequence_loss(ex.source_ids, ex.target_ids, params, config)
            logits = logits_t.data
        predictions = logits.argmax(axis=1)
        hit += int((predictions == np.asarray(ex.target_ids)).sum())
        total += len(ex.target_ids)
    return hit / total if total else 0.0
