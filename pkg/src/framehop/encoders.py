"""Toy trainable encoders producing Q', S' and temporal-aware V'.

The text side is a bag-of-tokens encoder over a shared embedding table with
separate output projections for questions, SRL argument spans, and answer
options. The frame side projects raw per-frame features, adds sinusoidal
position encodings, and runs one self-attention layer (temperature 1, no
mask, no learned q/k/v maps) with residual addition so V' is order-aware.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import HyperParams
from .episodes import EpisodeRecord
from .errors import CapacityError, DataFormatError, DomainError, ShapeError
from .params import SRL_TAGS, ModelParams
from .tensor import (
    Tensor,
    add,
    affine,
    embedding_mean,
    matmul,
    row_softmax,
    stack_rows,
    transpose,
)


@dataclass
class FrameBank:
    """Raw per-frame feature vectors in temporal order."""

    raw: Tensor  # n x d_in

    @property
    def n(self) -> int:
        return self.raw.shape[0]


@dataclass
class EncodedFrames:
    v_prime: Tensor  # n x d

    @property
    def n(self) -> int:
        return self.v_prime.shape[0]


@dataclass
class QuestionEncoding:
    q_prime: Tensor  # 1 x d
    token_count: int


@dataclass
class SrlEncodings:
    s_prime: Tensor  # N x d
    tags: list[str]
    spans: list[tuple[int, int]]

    @property
    def n_args(self) -> int:
        return self.s_prime.shape[0]


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    """Standard fixed sin/cos position table, one row per frame."""
    pos = np.arange(n)[:, None].astype(np.float64)
    dim = np.arange(d)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, 2.0 * (dim // 2) / d)
    table = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return table


def temporal_attention(x: Tensor, pos_scale: float, use_positions: bool = True) -> Tensor:
    """Position-encode rows, self-attend (tau=1), and add the residual.

    ``pos_scale`` keeps the fixed position table small enough that frame
    content, not position, dominates attention logits.
    """
    n, d = x.shape
    if use_positions:
        u = add(x, Tensor(pos_scale * sinusoidal_positions(n, d)))
    else:
        u = x
    logits = affine(matmul(u, transpose(u)), 1.0 / math.sqrt(d), 0.0)
    mixed = matmul(row_softmax(logits, tau=1.0), u)
    return add(u, mixed)


def encode_frames(
    bank: FrameBank,
    params: ModelParams,
    hp: HyperParams,
    use_positions: bool = True,
) -> EncodedFrames:
    """Project raw frames to width d and make them order-aware."""
    if bank.n < 1:
        raise DomainError("cannot encode an empty frame bank")
    if bank.n > hp.max_frames:
        raise CapacityError(f"{bank.n} frames exceeds max_frames={hp.max_frames}")
    if bank.raw.shape[1] != hp.d_in:
        raise ShapeError(
            f"frame width {bank.raw.shape[1]} != configured d_in {hp.d_in}"
        )
    projected = add(matmul(bank.raw, params["frames.proj.w"]), params["frames.proj.b"])
    return EncodedFrames(
        temporal_attention(projected, hp.pos_scale, use_positions=use_positions)
    )


def _check_tokens(tokens: list[int], vocab_size: int) -> None:
    if not tokens:
        raise DomainError("empty token sequence")
    for t in tokens:
        if not (0 <= t < vocab_size):
            raise DomainError(f"token id {t} outside vocabulary of {vocab_size}")


def encode_question(tokens: list[int], params: ModelParams, hp: HyperParams) -> QuestionEncoding:
    """Mean of token embeddings followed by a learned linear map to d."""
    _check_tokens(tokens, hp.vocab_size)
    mean = embedding_mean(params["embed.tokens"], tokens)
    q = add(matmul(mean, params["question.proj.w"]), params["question.proj.b"])
    return QuestionEncoding(q_prime=q, token_count=len(tokens))


def tag_index(tag: str) -> int:
    try:
        return SRL_TAGS.index(tag)
    except ValueError:
        raise DomainError(f"unknown SRL tag {tag!r}; known: {SRL_TAGS}") from None


def encode_srl(
    tokens: list[int],
    spans: list[tuple[int, int]],
    tags: list[str],
    params: ModelParams,
    hp: HyperParams,
) -> SrlEncodings:
    """One row per argument: span-mean embedding plus tag embedding, projected."""
    _check_tokens(tokens, hp.vocab_size)
    if not spans:
        raise DomainError("SRL structure needs at least one argument span")
    if len(spans) != len(tags):
        raise ShapeError(f"{len(spans)} spans but {len(tags)} tags")
    rows = []
    for (start, end), tag in zip(spans, tags):
        if not (0 <= start < end <= len(tokens)):
            raise DomainError(
                f"span ({start},{end}) empty or outside {len(tokens)} tokens"
            )
        span_mean = embedding_mean(params["embed.tokens"], tokens[start:end])
        tag_emb = embedding_mean(params["embed.tags"], [tag_index(tag)])
        rows.append(add(span_mean, tag_emb))
    stacked = stack_rows(rows) if len(rows) > 1 else rows[0]
    s = add(matmul(stacked, params["srl.proj.w"]), params["srl.proj.b"])
    return SrlEncodings(s_prime=s, tags=list(tags), spans=list(spans))


def encode_answers(options: list[list[int]], params: ModelParams, hp: HyperParams) -> Tensor:
    """Encode answer options with the shared table and their own projection."""
    if not options:
        raise DomainError("no answer options to encode")
    rows = []
    for tokens in options:
        _check_tokens(tokens, hp.vocab_size)
        rows.append(embedding_mean(params["embed.tokens"], tokens))
    stacked = stack_rows(rows) if len(rows) > 1 else rows[0]
    return add(matmul(stacked, params["answers.proj.w"]), params["answers.proj.b"])


def ingest_embeddings(
    record: EpisodeRecord,
    params: ModelParams,
    hp: HyperParams,
) -> tuple[EncodedFrames, QuestionEncoding, SrlEncodings]:
    """Wrap precomputed question/SRL vectors; frames still get encoded.

    Raw frames always pass through the frame encoder so V' stays
    temporal-aware; the provided question and SRL vectors are used as-is.
    """
    block = record.embeddings
    if block is None:
        raise DataFormatError("record has no precomputed embeddings block")
    if block.question is None:
        raise DataFormatError("embeddings block is missing field: question")
    if block.srl is None:
        raise DataFormatError("embeddings block is missing field: srl")
    q = np.asarray(block.question, dtype=np.float64).reshape(1, -1)
    s = np.asarray(block.srl, dtype=np.float64)
    if q.shape[1] != hp.d:
        raise DataFormatError(f"question vector width {q.shape[1]} != d {hp.d}")
    if s.ndim != 2 or s.shape[1] != hp.d:
        raise DataFormatError(f"srl matrix width {s.shape[-1]} != d {hp.d}")
    if record.frames.shape[1] != hp.d_in:
        raise DataFormatError(
            f"frame width {record.frames.shape[1]} != d_in {hp.d_in}"
        )
    v = encode_frames(FrameBank(Tensor(record.frames)), params, hp)
    return (
        v,
        QuestionEncoding(q_prime=Tensor(q), token_count=len(record.question_tokens)),
        SrlEncodings(s_prime=Tensor(s), tags=list(record.srl_tags),
                     spans=list(record.srl_spans)),
    )


def encode_record(
    record: EpisodeRecord,
    params: ModelParams,
    hp: HyperParams,
) -> tuple[EncodedFrames, QuestionEncoding, SrlEncodings]:
    """Encode an episode, preferring precomputed vectors when present."""
    if record.embeddings is not None:
        return ingest_embeddings(record, params, hp)
    v = encode_frames(FrameBank(Tensor(record.frames)), params, hp)
    q = encode_question(record.question_tokens, params, hp)
    s = encode_srl(record.question_tokens, record.srl_spans, record.srl_tags, params, hp)
    return v, q, s
