"""Answer scoring, objectives, the AdamW loop, and both evaluation settings."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig, HyperParams
from .encoders import encode_answers, encode_record
from .episodes import EpisodeRecord
from .errors import DomainError, NumericError, ShapeError
from .params import ModelParams
from .reasoner import RETRO, StepTrace, run
from .tensor import (
    Tensor,
    affine,
    backward,
    logsumexp,
    matmul,
    mul_scalar,
    no_grad,
    pick,
    softplus,
    transpose,
)


@dataclass
class AnswerSet:
    """Encoded answer options plus the index of the correct one."""

    options: list[list[int]]
    encodings: Tensor  # M x d
    label: int

    @property
    def count(self) -> int:
        return self.encodings.shape[0]


def score_answers(h: Tensor, answers: AnswerSet, params: ModelParams) -> Tensor:
    """Scaled bilinear similarity between h and every option encoding.

    score_k = scale * (h . W a_k) / sqrt(d). Prediction is the argmax,
    lowest index on ties.
    """
    d = h.shape[1]
    if answers.encodings.shape[1] != d:
        raise ShapeError("answer encodings do not match hidden width")
    lifted = matmul(h, params["score.bilinear"])           # 1 x d
    raw = matmul(lifted, transpose(answers.encodings))     # 1 x M
    scaled = affine(raw, 1.0 / math.sqrt(d), 0.0)
    return mul_scalar(scaled, params["score.scale"])


def loss_multi(scores: Tensor, label: int) -> Tensor:
    """Cross entropy of the normalized exponential over answer scores."""
    m = scores.shape[1]
    if not (0 <= label < m):
        raise DomainError(f"label {label} outside {m} options")
    return logsumexp(scores) - pick(scores, 0, label)


def loss_binary(score: Tensor, is_correct: bool) -> Tensor:
    """Logistic loss: -log sigmoid(s) if correct, else -log(1 - sigmoid(s))."""
    return softplus(affine(score, -1.0, 0.0)) if is_correct else softplus(score)


def predicted_index(scores: Tensor) -> int:
    return int(np.argmax(scores.data[0]))


def optimizer_step(params: ModelParams, config: TrainConfig) -> None:
    """Decoupled-weight-decay Adam update with bias correction.

    beta1=0.9, beta2=0.999, eps=1e-8. Gradients are cleared afterward and
    the shared step counter advances by one.
    """
    params.require_grads()
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    params.step += 1
    t = params.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.tensors.items():
        g = p.grad
        m = params.m[name]
        v = params.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if config.weight_decay:
            p.data -= config.lr * config.weight_decay * p.data
        p.data -= config.lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = None


def build_answer_set(record: EpisodeRecord, params: ModelParams, hp: HyperParams) -> AnswerSet:
    return AnswerSet(
        options=record.answer_options,
        encodings=encode_answers(record.answer_options, params, hp),
        label=record.label,
    )


def _direction_loss(trace: list[StepTrace], record: EpisodeRecord) -> Tensor | None:
    """Logistic loss of each supervised step's gate logit vs the planted hop."""
    if record.plan is None:
        return None
    terms = []
    for step in trace:
        hop_idx = step.step - 1
        if hop_idx >= len(record.plan.hops):
            break
        terms.append(loss_binary(step.gate_logit,
                                 record.plan.hops[hop_idx].direction == RETRO))
    if not terms:
        return None
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return affine(total, 1.0 / len(terms), 0.0)


def episode_loss(
    record: EpisodeRecord,
    params: ModelParams,
    config: TrainConfig,
) -> tuple[Tensor, Tensor, list[StepTrace]]:
    """Forward pass for one episode: (loss, scores, trace)."""
    hp = config.hp
    v, q, s = encode_record(record, params, hp)
    h, trace = run(q, v, s, params, hp)
    answers = build_answer_set(record, params, hp)
    scores = score_answers(h, answers, params)
    loss = loss_multi(scores, record.label)
    if config.binary_weight > 0:
        terms = [
            loss_binary(pick(scores, 0, k), k == record.label)
            for k in range(answers.count)
        ]
        aux = terms[0]
        for t in terms[1:]:
            aux = aux + t
        loss = loss + affine(aux, config.binary_weight / answers.count, 0.0)
    if config.direction_weight > 0:
        dloss = _direction_loss(trace, record)
        if dloss is not None:
            loss = loss + affine(dloss, config.direction_weight, 0.0)
    return loss, scores, trace


def predict(
    record: EpisodeRecord,
    params: ModelParams,
    hp: HyperParams,
) -> tuple[int, np.ndarray, list[StepTrace]]:
    """Forward-only prediction: (argmax index, raw scores, trace)."""
    with no_grad():
        v, q, s = encode_record(record, params, hp)
        h, trace = run(q, v, s, params, hp)
        answers = build_answer_set(record, params, hp)
        scores = score_answers(h, answers, params)
    return predicted_index(scores), scores.data[0].copy(), trace


def binary_pairs(record: EpisodeRecord) -> list[tuple[int, bool]]:
    """Balanced candidate pairs for the binary setting.

    Each episode contributes its correct option and one deterministic
    distractor, keeping the positive/negative ratio at one.
    """
    distractor = (record.label + 1) % len(record.answer_options)
    return [(record.label, True), (distractor, False)]


def _eval_quarter_chunk(args) -> int:
    records, params, hp = args
    return sum(1 for r in records if predict(r, params, hp)[0] == r.label)


def _eval_half_chunk(args) -> int:
    records, params, hp = args
    hits = 0
    for r in records:
        _, scores, _ = predict(r, params, hp)
        for idx, is_correct in binary_pairs(r):
            hits += (scores[idx] > 0.0) == is_correct
    return hits


def evaluate(
    dataset: list[EpisodeRecord],
    params: ModelParams,
    hp: HyperParams,
    setting: str = "quarter",
    jobs: int = 1,
) -> float:
    """Accuracy under the four-way ("quarter") or binary ("half") setting."""
    if not dataset:
        raise DomainError("cannot evaluate an empty dataset")
    if setting not in ("quarter", "half"):
        raise DomainError(f"unknown setting {setting!r}")
    worker = _eval_quarter_chunk if setting == "quarter" else _eval_half_chunk
    if jobs <= 1 or len(dataset) < 2 * jobs:
        hits = worker((dataset, params, hp))
    else:
        from concurrent.futures import ProcessPoolExecutor
        chunks = [dataset[i::jobs] for i in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            hits = sum(pool.map(worker, [(c, params, hp) for c in chunks]))
    total = len(dataset) if setting == "quarter" else sum(
        len(binary_pairs(r)) for r in dataset
    )
    return hits / total


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    dev_accuracy: float


@dataclass
class TrainReport:
    epochs: list[EpochReport]
    best_epoch: int
    best_dev_accuracy: float


def train(
    dataset: list[EpisodeRecord],
    config: TrainConfig,
    dev: list[EpisodeRecord] | None = None,
    params: ModelParams | None = None,
    log=None,
) -> tuple[ModelParams, TrainReport]:
    """Mini-batch training with per-epoch dev scoring and best-checkpoint keep.

    Shuffling, initialization, and therefore the whole report are
    deterministic functions of ``config.seed``.
    """
    config.validate()
    if not dataset:
        raise DomainError("cannot train on an empty dataset")
    from .params import init_params
    hp = config.hp
    if params is None:
        params = init_params(hp, config.seed)
    dev = dev if dev else dataset
    best_snapshot = params.snapshot()
    best_acc, best_epoch = -1.0, 0
    reports: list[EpochReport] = []
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng((config.seed, epoch)).permutation(len(dataset))
        losses: list[float] = []
        for start in range(0, len(order), config.batch_size):
            batch = [dataset[i] for i in order[start:start + config.batch_size]]
            params.zero_grad()
            for record in batch:
                loss, _, _ = episode_loss(record, params, config)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericError(
                        f"non-finite loss on episode {record.id} (epoch {epoch})"
                    )
                losses.append(value)
                backward(affine(loss, 1.0 / len(batch), 0.0))
            optimizer_step(params, config)
        dev_acc = evaluate(dev, params, hp, setting="quarter")
        report = EpochReport(epoch=epoch, train_loss=float(np.mean(losses)),
                             dev_accuracy=dev_acc)
        reports.append(report)
        if log is not None:
            log(report)
        if dev_acc > best_acc:
            best_acc, best_epoch = dev_acc, epoch
            best_snapshot = params.snapshot()
    params.load_snapshot(best_snapshot)
    return params, TrainReport(epochs=reports, best_epoch=best_epoch,
                               best_dev_accuracy=best_acc)
