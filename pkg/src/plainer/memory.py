"""Per-rule key-value memory read/update and the memory-augmented forward pass.

Each rule that has been seen in training owns a slot: the key is a stored
decoder context vector, the value a stored final output representation.
Reading treats the current context vector as a query over the candidate
slots (softmax of dot products) and returns the weighted sum of values;
an absent candidate set reads as the zero vector. Writing either appends
a fresh slot or folds the new vectors in with a running pairwise mean.
Stored vectors are detached numeric snapshots; no gradient ever reaches
the memory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .model import (
    ModelConfig,
    ModelParams,
    combine_with_memory,
    decode_states,
    encode,
    output_logits,
    teacher_inputs,
)
from .optim import Adagrad, clip_gradients
from .tensor import Tape, Tensor


@dataclass
class MemorySlot:
    rule_id: str
    key: np.ndarray
    value: np.ndarray
    update_count: int = 1


@dataclass
class MemoryReadResult:
    weights: np.ndarray  # attention over candidate slots, empty when none
    output: Tensor  # weighted sum of slot values, zero vector when none
    candidate_ids: list[str] = field(default_factory=list)


class RuleMemory:
    """Slots keyed by rule id; one per rule unless `slots_per_rule` raises it.

    With capacity above one, writes append until the rule is full and then
    update the slot whose key is nearest the incoming query.
    """

    def __init__(self, d_model: int, slots_per_rule: int = 1):
        if slots_per_rule < 1:
            raise ValueError("slots_per_rule must be at least 1")
        self.d_model = d_model
        self.slots_per_rule = slots_per_rule
        self._slots: dict[str, list[MemorySlot]] = {}

    def __len__(self) -> int:
        return sum(len(v) for v in self._slots.values())

    def rule_ids(self) -> list[str]:
        return list(self._slots)

    def slots_for(self, rule_ids) -> list[MemorySlot]:
        out = []
        for rid in rule_ids:
            out.extend(self._slots.get(rid, ()))
        return out

    def update(self, rule_id: str, query: np.ndarray, output: np.ndarray) -> None:
        """Append when the rule is absent; otherwise average into the slot."""
        query = np.asarray(query, dtype=np.float64).reshape(self.d_model)
        output = np.asarray(output, dtype=np.float64).reshape(self.d_model)
        slots = self._slots.setdefault(rule_id, [])
        if len(slots) < self.slots_per_rule:
            slots.append(MemorySlot(rule_id, query.copy(), output.copy()))
            return
        nearest = min(range(len(slots)), key=lambda i: float(((slots[i].key - query) ** 2).sum()))
        slot = slots[nearest]
        slot.key = (slot.key + query) / 2.0
        slot.value = (slot.value + output) / 2.0
        slot.update_count += 1

    # -- persistence ---------------------------------------------------

    def to_arrays(self) -> dict[str, np.ndarray]:
        arrays: dict[str, np.ndarray] = {
            "memory/meta": np.array([self.d_model, self.slots_per_rule], dtype=np.int64)
        }
        for rid, slots in self._slots.items():
            for i, slot in enumerate(slots):
                arrays[f"memory/{rid}/{i}/key"] = slot.key
                arrays[f"memory/{rid}/{i}/value"] = slot.value
                arrays[f"memory/{rid}/{i}/count"] = np.array([slot.update_count], dtype=np.int64)
        return arrays

    @classmethod
    def from_arrays(cls, arrays) -> "RuleMemory":
        meta = arrays["memory/meta"]
        memory = cls(int(meta[0]), int(meta[1]))
        names = sorted(n for n in arrays if n.startswith("memory/") and n.endswith("/key"))
        for name in names:
            _, rid, idx, _ = name.split("/")
            stem = f"memory/{rid}/{idx}"
            memory._slots.setdefault(rid, []).append(
                MemorySlot(
                    rule_id=rid,
                    key=np.array(arrays[f"{stem}/key"]),
                    value=np.array(arrays[f"{stem}/value"]),
                    update_count=int(arrays[f"{stem}/count"][0]),
                )
            )
        return memory

    def save(self, path) -> None:
        np.savez(path, **self.to_arrays())

    @classmethod
    def load(cls, path) -> "RuleMemory":
        with np.load(path) as arrays:
            return cls.from_arrays(arrays)


def memory_read(query: Tensor, candidates: list[MemorySlot]) -> MemoryReadResult:
    """Softmax-of-dot-products attention over candidate slots.

    Gradient flows through the query only; keys and values enter as
    constants. No candidates reads as the zero vector.
    """
    d = query.shape[-1]
    if query.shape != (1, d):
        raise T.ShapeError(f"memory query must be a (1, d) row, got {query.shape}")
    if not candidates:
        return MemoryReadResult(weights=np.zeros(0), output=Tensor(np.zeros((1, d))))
    if any(slot.key.shape != (d,) for slot in candidates):
        raise T.ShapeError(f"candidate key width does not match query width {d}")
    keys = Tensor(np.stack([slot.key for slot in candidates]))
    values = Tensor(np.stack([slot.value for slot in candidates]))
    scores = T.matmul(query, T.transpose(keys))
    weights = T.softmax(scores, axis=-1)
    return MemoryReadResult(
        weights=weights.data[0].copy(),
        output=T.matmul(weights, values),
        candidate_ids=[slot.rule_id for slot in candidates],
    )


# ---------------------------------------------------------------------------
# Memory-augmented forward pass
# ---------------------------------------------------------------------------


@dataclass
class MemoryExample:
    """One training pair with its rule bookkeeping precomputed."""

    source_ids: list[int]
    target_ids: list[int]
    candidate_ids: list[str] = field(default_factory=list)  # rules present in the source
    aligned: list[tuple[str, int]] = field(default_factory=list)  # (rule id, target step)


@dataclass
class MemoryForward:
    loss: Tensor
    logits: Tensor
    reads: list[MemoryReadResult]
    contexts: np.ndarray  # detached query vectors per step
    combined: np.ndarray  # detached final output representations per step


def memory_forward(
    example: MemoryExample,
    params: ModelParams,
    config: ModelConfig,
    memory: RuleMemory,
    train: bool = False,
    rng=None,
) -> MemoryForward:
    """Teacher-forced pass where every step's logits go through the memory.

    The query at step s is the layer-j context vector; candidates are the
    slots of rules whose normal side occurs in the source sentence.
    """
    dec_in, dec_out = teacher_inputs(example.target_ids)
    enc = encode(example.source_ids, params, config, train, rng)
    state = decode_states(dec_in, enc, params, config, train, rng)
    contexts = state.context_at(config.memory_query_layer)
    slots = memory.slots_for(example.candidate_ids)

    reads = []
    read_rows = []
    for step in range(len(dec_in)):
        read = memory_read(T.rows(contexts, step), slots)
        reads.append(read)
        read_rows.append(read.output)
    memory_out = read_rows[0] if len(read_rows) == 1 else T.concat(read_rows, axis=0)
    combined = combine_with_memory(state.top, memory_out, params)
    logits = output_logits(combined, params)
    loss = T.cross_entropy(logits, dec_out)
    return MemoryForward(
        loss=loss,
        logits=logits,
        reads=reads,
        contexts=contexts.data.copy(),
        combined=combined.data.copy(),
    )


def apply_memory_updates(memory: RuleMemory, example: MemoryExample, fwd: MemoryForward) -> int:
    """Write rule-aligned steps into the memory; returns the update count."""
    seen = set()
    written = 0
    for rid, step in example.aligned:
        if (rid, step) in seen or step >= fwd.contexts.shape[0]:
            continue
        seen.add((rid, step))
        memory.update(rid, fwd.contexts[step], fwd.combined[step])
        written += 1
    return written


def dmass_train_step(
    batch: list[MemoryExample],
    params: ModelParams,
    config: ModelConfig,
    memory: RuleMemory,
    optimizer: Adagrad,
    rng=None,
    clip_limit: float = 4.0,
    clip_mode: str = "norm",
) -> float:
    """One optimizer step on the memory-augmented sequence loss.

    Memory writes happen after the parameter update, from detached forward
    snapshots, so the step's own loss never depends on its own writes.
    """
    params.zero_grads()
    forwards = []
    with Tape() as tape:
        total = None
        for example in batch:
            fwd = memory_forward(example, params, config, memory, train=True, rng=rng)
            forwards.append(fwd)
            total = fwd.loss if total is None else T.add(total, fwd.loss)
        total = T.scale(total, 1.0 / len(batch))
        tape.backward(total)
    clip_gradients(params, clip_limit, clip_mode)
    optimizer.step(params)
    for example, fwd in zip(batch, forwards):
        apply_memory_updates(memory, example, fwd)
    return total.item()


def decode_read(
    context_row: Tensor, candidate_ids, memory: RuleMemory
) -> MemoryReadResult:
    """Inference-time read: same query mechanism, candidates from the source."""
    return memory_read(context_row, memory.slots_for(candidate_ids))
