"""Episode record types shared by the generator, encoders, and file I/O."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Hop:
    direction: str   # "retro" | "prosp"
    target: int      # frame index the hop lands on


@dataclass(frozen=True)
class HopPlan:
    """Ground-truth trajectory a correct reasoner should follow.

    Retro hops never move forward and prosp hops never move backward;
    the evidence frame is the final hop target and is the only frame
    whose payload determines the correct answer.
    """

    start_frame: int
    hops: tuple[Hop, ...]
    evidence_frame: int


@dataclass
class EmbeddingBlock:
    """Precomputed question/SRL vectors ingested instead of token encoding."""

    question: np.ndarray | None = None   # 1 x d
    srl: np.ndarray | None = None        # N x d


@dataclass
class EpisodeRecord:
    """One training or evaluation example.

    ``frames`` holds raw per-frame feature vectors (n x d_in). The plan is
    present only for synthetic episodes and never leaks into the model
    inputs; it drives the oracle, the direction-supervision auxiliary loss,
    and trace scoring.
    """

    id: str
    frames: np.ndarray
    question_tokens: list[int]
    srl_spans: list[tuple[int, int]]
    srl_tags: list[str]
    answer_options: list[list[int]]
    label: int
    plan: HopPlan | None = None
    embeddings: EmbeddingBlock | None = field(default=None, repr=False)

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def n_args(self) -> int:
        return len(self.srl_spans)
