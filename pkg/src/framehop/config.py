"""Dataclass configs for the reasoner, training runs, and the generator."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .errors import DomainError

COVERAGE_MODES = ("argcount", "off")


@dataclass(frozen=True)
class HyperParams:
    """Model-shape and reasoning knobs.

    ``tau`` is the frame-attention temperature; SRL attention runs at
    ``srl_tau`` (kept at 1 by default: sharpening is only wanted when
    picking the single most relevant frame). ``chi_mode`` selects the
    coverage normalization: "argcount" divides each step's attention
    distribution by the argument count, "off" freezes coverage at zero.
    """

    steps: int = 3            # reasoning steps T
    tau: float = 0.2
    srl_tau: float = 1.0
    alpha: float = 0.5        # gate threshold; retro iff p > alpha
    chi_mode: str = "argcount"
    d: int = 64
    d_in: int = 64
    vocab_size: int = 256
    max_frames: int = 64
    max_args: int = 8         # coverage is zero-padded to this width
    pos_scale: float = 0.1    # amplitude of the sinusoidal position table

    def validate(self) -> "HyperParams":
        if self.steps < 1:
            raise DomainError(f"steps must be >= 1, got {self.steps}")
        if self.tau <= 0 or self.srl_tau <= 0:
            raise DomainError("temperatures must be positive")
        if not (0.0 < self.alpha < 1.0):
            raise DomainError(f"alpha must lie in (0,1), got {self.alpha}")
        if self.chi_mode not in COVERAGE_MODES:
            raise DomainError(f"chi_mode must be one of {COVERAGE_MODES}")
        if min(self.d, self.d_in, self.vocab_size, self.max_frames, self.max_args) < 1:
            raise DomainError("model dimensions must be positive")
        if self.pos_scale <= 0:
            raise DomainError("pos_scale must be positive")
        return self

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @staticmethod
    def from_dict(data: dict) -> "HyperParams":
        known = {f.name for f in fields(HyperParams)}
        unknown = set(data) - known
        if unknown:
            raise DomainError(f"unknown hyperparameter keys: {sorted(unknown)}")
        return HyperParams(**data).validate()


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.

    The desk-scale default learning rate is 1e-3; paper-style 1e-6 suits
    fine-tuning pretrained encoders, not the randomly initialized toy ones
    used here, and remains reachable through config. ``direction_weight``
    scales an auxiliary logistic loss on the gate probability against the
    planted hop direction; it only applies to plan-annotated episodes and
    is what lets the (hard, non-differentiable) branch choice learn.
    """

    lr: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 8
    epochs: int = 10
    seed: int = 0
    direction_weight: float = 0.5
    binary_weight: float = 0.0   # 0.5 enables the joint Setting-1/2 head
    hp: HyperParams = field(default_factory=HyperParams)

    def validate(self) -> "TrainConfig":
        if self.lr <= 0:
            raise DomainError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise DomainError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise DomainError(f"epochs must be >= 1, got {self.epochs}")
        if self.weight_decay < 0:
            raise DomainError("weight decay must be nonnegative")
        if self.direction_weight < 0 or self.binary_weight < 0:
            raise DomainError("auxiliary loss weights must be nonnegative")
        self.hp.validate()
        return self
