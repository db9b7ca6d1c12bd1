"""Small dense-tensor engine with reverse-mode differentiation.

Everything downstream (encoders, the reasoner, the answer scorer) is built
from the handful of primitives here. Tensors are 2-D float64 numpy arrays
with a recorded computation graph; ``backward`` walks the graph once per
call and accumulates gradients into leaf tensors. Masked softmax excludes
masked positions before exponentiation (no -inf logits), and every softmax
uses max-subtraction, so finite inputs always produce finite outputs.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, ShapeError

Array = np.ndarray

_RECORDING = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (forward-only evaluation)."""
    global _RECORDING
    prev = _RECORDING
    _RECORDING = False
    try:
        yield
    finally:
        _RECORDING = prev


class Tensor:
    """A 2-D float64 value in a recorded computation graph.

    Leaf tensors created with ``requires_grad=True`` act as parameters:
    ``backward`` on a downstream scalar accumulates into their ``grad``
    buffer (additively across calls, until cleared by the caller).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _vjp: Callable[[Array], tuple[Array | None, ...]] | None = None,
    ):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self._parents = _parents
        self._vjp = _vjp

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> Array:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operators -----------------------------------------------------

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return add(self, affine(other, -1.0, 0.0))

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def _result(data: Array, parents: tuple[Tensor, ...], vjp) -> Tensor:
    """Record an op result; graphs are only kept where grads can flow."""
    if _RECORDING and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _vjp=vjp)
    return Tensor(data)


# -- elementwise and linear primitives ---------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; ``b`` may be a 1-row bias broadcast over rows."""
    if a.shape == b.shape:
        def vjp(g: Array):
            return g, g
    elif b.shape == (1, a.shape[1]):
        def vjp(g: Array):
            return g, g.sum(axis=0, keepdims=True)
    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    return _result(a.data + b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def vjp(g: Array):
        return g * b.data, g * a.data

    return _result(a.data * b.data, (a, b), vjp)


def affine(a: Tensor, scale: float, shift: float) -> Tensor:
    """``a * scale + shift`` with python-float constants."""

    def vjp(g: Array):
        return (g * scale,)

    return _result(a.data * scale + shift, (a,), vjp)


def mul_scalar(a: Tensor, s: Tensor) -> Tensor:
    """Multiply every entry of ``a`` by a learnable 1x1 scalar."""
    if s.shape != (1, 1):
        raise ShapeError(f"mul_scalar wants a 1x1 scalar, got {s.shape}")

    def vjp(g: Array):
        return g * s.data[0, 0], np.array([[float((g * a.data).sum())]])

    return _result(a.data * s.data[0, 0], (a, s), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def vjp(g: Array):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    def vjp(g: Array):
        return (g.T,)

    return _result(a.data.T.copy(), (a,), vjp)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def vjp(g: Array):
        return (g * (1.0 - out * out),)

    return _result(out, (a,), vjp)


def _sigmoid(x: Array) -> Array:
    # Stable in both tails.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)

    def vjp(g: Array):
        return (g * out * (1.0 - out),)

    return _result(out, (a,), vjp)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow; grad is sigmoid(x)."""
    out = np.logaddexp(0.0, a.data)

    def vjp(g: Array):
        return (g * _sigmoid(a.data),)

    return _result(out, (a,), vjp)


def sum_all(a: Tensor) -> Tensor:
    def vjp(g: Array):
        return (np.full_like(a.data, g.reshape(-1)[0]),)

    return _result(np.array([[a.data.sum()]]), (a,), vjp)


def pick(a: Tensor, row: int, col: int) -> Tensor:
    """Extract one entry as a 1x1 tensor."""
    r, c = a.shape
    if not (0 <= row < r and 0 <= col < c):
        raise ShapeError(f"pick: index ({row},{col}) outside shape {a.shape}")

    def vjp(g: Array):
        ga = np.zeros_like(a.data)
        ga[row, col] = g.reshape(-1)[0]
        return (ga,)

    return _result(np.array([[a.data[row, col]]]), (a,), vjp)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 1-row tensors along columns."""
    if not parts or any(p.shape[0] != 1 for p in parts):
        raise ShapeError("concat_cols wants a nonempty list of 1-row tensors")
    widths = [p.shape[1] for p in parts]

    def vjp(g: Array):
        grads, at = [], 0
        for w in widths:
            grads.append(g[:, at:at + w])
            at += w
        return tuple(grads)

    return _result(np.concatenate([p.data for p in parts], axis=1), tuple(parts), vjp)


def stack_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack 1-row tensors of equal width into a matrix."""
    if not parts or any(p.shape[0] != 1 for p in parts):
        raise ShapeError("stack_rows wants a nonempty list of 1-row tensors")
    if len({p.shape[1] for p in parts}) != 1:
        raise ShapeError("stack_rows: rows must share a width")

    def vjp(g: Array):
        return tuple(g[i:i + 1, :] for i in range(len(parts)))

    return _result(np.concatenate([p.data for p in parts], axis=0), tuple(parts), vjp)


def embedding_mean(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Mean of table rows selected by ``ids`` (repeats allowed)."""
    idx = list(ids)
    if not idx:
        raise DomainError("embedding_mean: empty id sequence")
    rows, _ = table.shape
    for i in idx:
        if not (0 <= i < rows):
            raise DomainError(f"embedding_mean: id {i} outside table of {rows} rows")
    inv = 1.0 / len(idx)

    def vjp(g: Array):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g * inv)
        return (gt,)

    return _result(table.data[idx].mean(axis=0, keepdims=True), (table,), vjp)


# -- masks and softmax --------------------------------------------------


@dataclass(frozen=True)
class MaskSpec:
    """Which key positions an attention call may see.

    ``kind`` is "none", "retro" (positions 0..j) or "prosp" (positions
    j..length-1). The admitted set always contains the anchor index, so it
    is never empty for a valid anchor.
    """

    kind: str
    length: int
    anchor: int = 0

    @staticmethod
    def none(length: int) -> "MaskSpec":
        return MaskSpec("none", length)

    @staticmethod
    def retro(j: int, length: int) -> "MaskSpec":
        return MaskSpec("retro", length, j)

    @staticmethod
    def prosp(j: int, length: int) -> "MaskSpec":
        return MaskSpec("prosp", length, j)

    def admitted(self) -> Array:
        if self.length < 1:
            raise DomainError("mask over zero positions")
        mask = np.zeros(self.length, dtype=bool)
        if self.kind == "none":
            mask[:] = True
        elif self.kind == "retro":
            self._check_anchor()
            mask[: self.anchor + 1] = True
        elif self.kind == "prosp":
            self._check_anchor()
            mask[self.anchor:] = True
        else:
            raise DomainError(f"unknown mask kind {self.kind!r}")
        return mask

    def _check_anchor(self) -> None:
        if not (0 <= self.anchor < self.length):
            raise DomainError(
                f"mask anchor {self.anchor} outside [0, {self.length})"
            )


def softmax_with_temperature(logits: Tensor, tau: float, mask: MaskSpec) -> Tensor:
    """Temperature softmax over the admitted positions of a 1xn tensor.

    Masked positions get exactly zero weight; admitted weights sum to 1.
    Computed as exp((z - max(z))/tau) over the admitted subset only.
    """
    if tau <= 0:
        raise DomainError(f"temperature must be positive, got {tau}")
    if logits.shape[0] != 1:
        raise ShapeError(f"softmax expects a 1xn tensor, got {logits.shape}")
    n = logits.shape[1]
    if mask.length != n:
        raise ShapeError(f"mask length {mask.length} != logit count {n}")
    adm = mask.admitted()
    if not adm.any():
        raise DomainError("mask admits no positions")

    z = logits.data[0, adm] / tau
    e = np.exp(z - z.max())
    w = np.zeros((1, n))
    w[0, adm] = e / e.sum()

    def vjp(g: Array):
        inner = float((g * w).sum())
        return ((w * (g - inner)) / tau,)

    return _result(w, (logits,), vjp)


def row_softmax(logits: Tensor, tau: float) -> Tensor:
    """Unmasked temperature softmax applied independently to each row."""
    if tau <= 0:
        raise DomainError(f"temperature must be positive, got {tau}")
    z = logits.data / tau
    e = np.exp(z - z.max(axis=1, keepdims=True))
    w = e / e.sum(axis=1, keepdims=True)

    def vjp(g: Array):
        inner = (g * w).sum(axis=1, keepdims=True)
        return ((w * (g - inner)) / tau,)

    return _result(w, (logits,), vjp)


def logsumexp(a: Tensor) -> Tensor:
    """log sum exp of a 1xn tensor, max-subtracted; grad is softmax(a)."""
    if a.shape[0] != 1:
        raise ShapeError(f"logsumexp expects a 1xn tensor, got {a.shape}")
    m = a.data.max()
    e = np.exp(a.data - m)
    s = e.sum()

    def vjp(g: Array):
        return (g.reshape(-1)[0] * e / s,)

    return _result(np.array([[m + math.log(s)]]), (a,), vjp)


# -- attention -----------------------------------------------------------


@dataclass
class AttentionOutput:
    """Context row plus the attention distribution that produced it."""

    context: Tensor  # 1 x d
    weights: Tensor  # 1 x n


def attention(
    query: Tensor,
    keys: Tensor,
    values: Tensor,
    tau: float,
    mask: MaskSpec | None = None,
) -> AttentionOutput:
    """Scaled dot-product attention for a single query row.

    logits_i = (query . keys_i) / sqrt(d); weights are the masked
    temperature softmax of the logits; context = weights @ values.
    Differentiable with respect to query, keys and values.
    """
    if query.shape[0] != 1:
        raise ShapeError(f"attention query must be 1xd, got {query.shape}")
    n, d = keys.shape
    if query.shape[1] != d:
        raise ShapeError(f"query width {query.shape[1]} != key width {d}")
    if values.shape[0] != n:
        raise ShapeError(f"{n} keys but {values.shape[0]} value rows")
    if mask is None:
        mask = MaskSpec.none(n)
    logits = affine(matmul(query, transpose(keys)), 1.0 / math.sqrt(d), 0.0)
    weights = softmax_with_temperature(logits, tau, mask)
    context = matmul(weights, values)
    return AttentionOutput(context=context, weights=weights)


def argmax_row(weights: Tensor) -> int:
    """Index of the largest entry in a 1xn tensor; lowest index on ties."""
    return int(np.argmax(weights.data[0]))


# -- backward pass -------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    # Iterative DFS: batched losses can exceed the recursion limit.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    Repeated calls on the same scalar add up; callers clear grads
    themselves (the optimizer does so after each step).
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            if acc is None:
                grads[id(parent)] = pg.copy() if pg.base is not None else pg
            else:
                acc += pg


# -- gradient checking ----------------------------------------------------


@dataclass
class GradCheckReport:
    """Max relative error per parameter, analytic vs central differences."""

    per_param: dict[str, float]

    @property
    def max_rel_err(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0

    def worst(self) -> tuple[str, float]:
        name = max(self.per_param, key=self.per_param.get)  # type: ignore[arg-type]
        return name, self.per_param[name]


def grad_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-6,
) -> GradCheckReport:
    """Compare backward() gradients of ``f`` against central differences.

    ``f`` must rebuild its computation from the current parameter values on
    every call. Relative error uses max(|analytic|, |numeric|, 1e-8) as the
    denominator, elementwise, and the report keeps the per-parameter max.
    """
    if eps <= 0:
        raise DomainError(f"eps must be positive, got {eps}")
    for p in params.values():
        p.grad = np.zeros_like(p.data)
    loss = f()
    if not np.isfinite(loss.data).all():
        raise DomainError("grad_check: function value is not finite")
    backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    report: dict[str, float] = {}
    for name, p in params.items():
        worst = 0.0
        flat = p.data.reshape(-1)
        a = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = f().item()
            flat[i] = orig - eps
            f_minus = f().item()
            flat[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise DomainError("grad_check: perturbed value is not finite")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(a[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(a[i] - numeric) / denom)
        report[name] = worst
    return GradCheckReport(per_param=report)
