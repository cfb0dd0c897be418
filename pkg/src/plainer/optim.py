"""Per-coordinate adaptive gradient descent with gradient clipping."""

from __future__ import annotations

import math

import numpy as np

from .model import ModelParams


def global_grad_norm(params: ModelParams) -> float:
    total = 0.0
    for _, t in params.items():
        if t.grad is not None:
            total += float((t.grad * t.grad).sum())
    return math.sqrt(total)


def clip_gradients(params: ModelParams, limit: float, mode: str = "norm") -> float:
    """Clip gradients in place; returns the pre-clip global norm.

    ``norm`` rescales all gradients so the global norm is at most `limit`;
    ``value`` clamps each coordinate to [-limit, limit].
    """
    norm = global_grad_norm(params)
    if mode == "norm":
        if norm > limit:
            factor = limit / norm
            for _, t in params.items():
                if t.grad is not None:
                    t.grad *= factor
    elif mode == "value":
        for _, t in params.items():
            if t.grad is not None:
                np.clip(t.grad, -limit, limit, out=t.grad)
    else:
        raise ValueError(f"unknown clip mode {mode!r}")
    return norm


class Adagrad:
    """Accumulates squared gradients; effective step decays per coordinate.

    The accumulator starts at a small positive constant so early updates
    are bounded without an epsilon term.
    """

    def __init__(self, params: ModelParams, lr: float = 0.1, accumulator_init: float = 0.1):
        self.lr = lr
        self.accumulator_init = accumulator_init
        self.accum = {name: np.full_like(t.data, accumulator_init) for name, t in params.items()}

    def step(self, params: ModelParams) -> None:
        for name, t in params.items():
            if t.grad is None:
                continue
            acc = self.accum[name]
            acc += t.grad * t.grad
            t.data -= self.lr * t.grad / np.sqrt(acc)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {f"adagrad/{name}": acc for name, acc in self.accum.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name in self.accum:
            self.accum[name] = np.array(arrays[f"adagrad/{name}"])
