"""Finite-difference verification suites for the CLI and acceptance tests.

The op scope drives every differentiable primitive through a scalar head;
the end-to-end scope differentiates the full episode loss with the discrete
controls (initial focus, branch choices, focus updates) pinned to their
forward-pass values, so central differences see a smooth function.
"""

from __future__ import annotations

import numpy as np

from .config import HyperParams
from .encoders import encode_record
from .episodes import EpisodeRecord
from .params import init_params
from .reasoner import controls_from_trace, run
from .synth import GenSpec, generate_episode
from .tensor import (
    MaskSpec,
    Tensor,
    add,
    affine,
    attention,
    concat_cols,
    embedding_mean,
    grad_check,
    logsumexp,
    matmul,
    mul,
    mul_scalar,
    pick,
    row_softmax,
    sigmoid,
    softmax_with_temperature,
    softplus,
    stack_rows,
    sum_all,
    tanh,
    transpose,
)
from .training import build_answer_set, loss_multi, score_answers


def _leaf(rng: np.random.Generator, rows: int, cols: int) -> Tensor:
    return Tensor(rng.standard_normal((rows, cols)), requires_grad=True)


def per_op_report(seed: int = 0, eps: float = 1e-6) -> dict[str, float]:
    """Max relative FD error for each differentiable primitive."""
    rng = np.random.default_rng(seed)
    a = _leaf(rng, 2, 3)
    b = _leaf(rng, 2, 3)
    bias = _leaf(rng, 1, 3)
    m1 = _leaf(rng, 2, 4)
    m2 = _leaf(rng, 4, 3)
    v1 = _leaf(rng, 1, 5)
    v2 = _leaf(rng, 1, 4)
    scalar = _leaf(rng, 1, 1)
    table = _leaf(rng, 6, 3)
    q = _leaf(rng, 1, 4)
    keys = _leaf(rng, 5, 4)
    values = _leaf(rng, 5, 4)

    cases = {
        "add": (lambda: sum_all(mul(add(a, b), a)), {"a": a, "b": b}),
        "add_row_broadcast": (lambda: sum_all(mul(add(a, bias), a)),
                              {"a": a, "bias": bias}),
        "mul": (lambda: sum_all(mul(mul(a, b), b)), {"a": a, "b": b}),
        "affine": (lambda: sum_all(mul(affine(a, 1.7, -0.3), a)), {"a": a}),
        "mul_scalar": (lambda: sum_all(mul_scalar(a, scalar)),
                       {"a": a, "scalar": scalar}),
        "matmul": (lambda: sum_all(mul(matmul(m1, m2), matmul(m1, m2))),
                   {"m1": m1, "m2": m2}),
        "transpose": (lambda: sum_all(mul(transpose(m1), transpose(m1))), {"m1": m1}),
        "tanh": (lambda: sum_all(mul(tanh(a), a)), {"a": a}),
        "sigmoid": (lambda: sum_all(mul(sigmoid(a), a)), {"a": a}),
        "softplus": (lambda: sum_all(mul(softplus(a), a)), {"a": a}),
        "sum_all": (lambda: mul(sum_all(a), sum_all(a)), {"a": a}),
        "pick": (lambda: mul(pick(a, 1, 2), pick(a, 0, 1)), {"a": a}),
        "concat_cols": (lambda: sum_all(mul(concat_cols([v1, v2]),
                                            concat_cols([v1, v2]))),
                        {"v1": v1, "v2": v2}),
        "stack_rows": (lambda: sum_all(mul(stack_rows([q, q]), stack_rows([q, q]))),
                       {"q": q}),
        "embedding_mean": (lambda: sum_all(mul(embedding_mean(table, [0, 2, 2, 5]),
                                               embedding_mean(table, [1, 2]))),
                           {"table": table}),
        "softmax_none": (
            lambda: sum_all(mul(softmax_with_temperature(v1, 0.7, MaskSpec.none(5)), v1)),
            {"v1": v1},
        ),
        "softmax_retro": (
            lambda: sum_all(mul(softmax_with_temperature(v1, 0.4, MaskSpec.retro(2, 5)), v1)),
            {"v1": v1},
        ),
        "softmax_prosp": (
            lambda: sum_all(mul(softmax_with_temperature(v1, 1.3, MaskSpec.prosp(3, 5)), v1)),
            {"v1": v1},
        ),
        "row_softmax": (lambda: sum_all(mul(row_softmax(m1, 0.8), m1)), {"m1": m1}),
        "logsumexp": (lambda: mul(logsumexp(v1), logsumexp(v1)), {"v1": v1}),
        "attention": (
            lambda: sum_all(mul(
                attention(q, keys, values, 0.5, MaskSpec.retro(3, 5)).context, q)),
            {"q": q, "keys": keys, "values": values},
        ),
    }
    report = {}
    for name, (fn, leaves) in cases.items():
        report[name] = grad_check(fn, leaves, eps=eps).max_rel_err
    return report


def end_to_end_episode(seed: int = 0) -> tuple[EpisodeRecord, HyperParams]:
    """The small episode the gradient-fidelity criterion is defined on."""
    hp = HyperParams(steps=3, d=8, d_in=8, vocab_size=32, max_args=4).validate()
    spec = GenSpec(frames=7, args=3, hops=2, d_in=hp.d_in)
    record = generate_episode(seed, spec)
    # Fold token ids into the small gradcheck vocabulary.
    record.question_tokens = [t % hp.vocab_size for t in record.question_tokens]
    record.answer_options = [[t % hp.vocab_size for t in opt]
                             for opt in record.answer_options]
    return record, hp


def end_to_end_report(seed: int = 0, eps: float = 1e-6) -> dict[str, float]:
    """FD-check the full loss on a 7-frame, 3-argument, d=8, T=3 episode.

    The loss includes the direction-supervision term so the gate weights
    carry real gradients (the answer term alone cannot reach them once the
    branch choice is pinned).
    """
    from .training import _direction_loss

    record, hp = end_to_end_episode(seed)
    params = init_params(hp, seed=seed + 1)

    v, q, s = encode_record(record, params, hp)
    _, trace = run(q, v, s, params, hp)
    controls = controls_from_trace(trace[0].focus_before, trace)

    def pinned_loss() -> Tensor:
        v, q, s = encode_record(record, params, hp)
        h, trace = run(q, v, s, params, hp, controls=controls)
        answers = build_answer_set(record, params, hp)
        loss = loss_multi(score_answers(h, answers, params), record.label)
        direction = _direction_loss(trace, record)
        if direction is not None:
            loss = loss + affine(direction, 0.5, 0.0)
        return loss

    report = grad_check(pinned_loss, params.tensors, eps=eps)
    return dict(report.per_param)
