"""Named parameter tensors with optimizer state.

Weight matrices initialize from a centered uniform scaled by 1/sqrt(fan_in),
biases start at zero, and the bilinear score scale starts at 1. Parameter
order is fixed by insertion, which keeps runs and checkpoints deterministic.
"""

from __future__ import annotations

import numpy as np

from .config import HyperParams
from .errors import ShapeError, StateError
from .tensor import Tensor

# Tag inventory for SRL argument labels; index 0 is the untagged slot.
SRL_TAGS = (
    "", "V", "ARG0", "ARG1", "ARG2", "ARG3", "ARG4",
    "ARGM-TMP", "ARGM-LOC", "ARGM-MNR", "ARGM-DIR", "ARGM-CAU",
)


class ModelParams:
    """Every learnable map, addressable by name, plus AdamW moment buffers."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = tensors
        self.m = {k: np.zeros_like(t.data) for k, t in tensors.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in tensors.items()}
        self.step = 0

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = np.zeros_like(t.data)

    def require_grads(self) -> None:
        missing = [k for k, t in self.tensors.items() if t.grad is None]
        if missing:
            raise StateError(f"gradients missing for: {missing[:3]}")

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def load_snapshot(self, snap: dict[str, np.ndarray]) -> None:
        if set(snap) != set(self.tensors):
            raise ShapeError("snapshot parameter names do not match")
        for k, arr in snap.items():
            if arr.shape != self.tensors[k].data.shape:
                raise ShapeError(f"snapshot shape mismatch for {k}")
            self.tensors[k].data = arr.copy()


def init_params(hp: HyperParams, seed: int) -> ModelParams:
    """Build a freshly initialized parameter set for the given shapes."""
    hp.validate()
    rng = np.random.default_rng(seed)
    d, d_in = hp.d, hp.d_in

    def weight(rows: int, cols: int) -> Tensor:
        bound = 1.0 / np.sqrt(rows)
        return Tensor(rng.uniform(-bound, bound, size=(rows, cols)),
                      requires_grad=True)

    def bias(cols: int) -> Tensor:
        return Tensor(np.zeros((1, cols)), requires_grad=True)

    tensors: dict[str, Tensor] = {
        "embed.tokens": weight(hp.vocab_size, d),
        "embed.tags": weight(len(SRL_TAGS), d),
        "frames.proj.w": weight(d_in, d),
        "frames.proj.b": bias(d),
        "question.proj.w": weight(d, d),
        "question.proj.b": bias(d),
        "srl.proj.w": weight(d, d),
        "srl.proj.b": bias(d),
        "answers.proj.w": weight(d, d),
        "answers.proj.b": bias(d),
        "reason.cov_query.w": weight(d + hp.max_args, d),
        "reason.cov_query.b": bias(d),
        "reason.frame_query.w": weight(2 * d, d),
        "reason.frame_query.b": bias(d),
        "reason.gate.w": weight(2 * d, 1),
        "reason.gate.b": bias(1),
        "reason.update_gate.w": weight(2 * d, d),
        "reason.update_gate.b": bias(d),
        "reason.update_cand.w": weight(2 * d, d),
        "reason.update_cand.b": bias(d),
        "score.bilinear": weight(d, d),
        "score.scale": Tensor(np.ones((1, 1)), requires_grad=True),
    }
    return ModelParams(tensors)


def expected_shapes(hp: HyperParams) -> dict[str, tuple[int, int]]:
    """Parameter name -> shape map implied by the hyperparameters."""
    return {k: t.data.shape for k, t in init_params(hp, seed=0).tensors.items()}
