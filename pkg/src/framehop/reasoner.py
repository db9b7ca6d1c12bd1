"""Multi-step retrospective/prospective reasoning over encoded frames.

One step works on the current hidden row h and focus index j:

  1. attend over SRL arguments with a query built from [h ; coverage],
  2. fold the attention distribution into the coverage vector,
  3. build a frame query from [h ; attended argument] and attend twice over
     the frames, once masked to positions <= j and once to positions >= j,
  4. squash a learned score of both candidate contexts into a probability p
     and pick the retrospective branch iff p exceeds the threshold,
  5. update h with a gated (GRU-style) blend of the chosen context and move
     j to the argmax of the chosen branch's attention weights.

h stays fully differentiable end to end; j and the branch decision are
hard control signals. They only select masks, so gradient checking pins
them to their forward-pass values (see ``ReasoningControls``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import HyperParams
from .encoders import EncodedFrames, QuestionEncoding, SrlEncodings
from .errors import CapacityError, DomainError, ShapeError
from .params import ModelParams
from .tensor import (
    AttentionOutput,
    MaskSpec,
    Tensor,
    add,
    affine,
    argmax_row,
    attention,
    concat_cols,
    matmul,
    mul,
    sigmoid,
    tanh,
)

RETRO = "retro"
PROSP = "prosp"


@dataclass
class ReasoningState:
    """Complete mutable state of the reasoning loop."""

    h: Tensor                 # 1 x d
    focus_index: int          # j, in [0, n)
    coverage: Tensor          # 1 x N, entries non-decreasing across steps
    step: int


@dataclass
class StepTrace:
    """Everything one step decided, for export, tests, and aux losses."""

    step: int
    srl_weights: np.ndarray
    coverage: np.ndarray
    retro_weights: np.ndarray
    prosp_weights: np.ndarray
    gate_prob: float
    branch: str
    focus_before: int
    focus_after: int
    gate_logit: Tensor = field(repr=False, default=None)  # live graph node


@dataclass(frozen=True)
class ReasoningControls:
    """Forward-pass values of the discrete controls, for pinned replays."""

    init_focus: int
    branches: tuple[str, ...]
    focuses: tuple[int, ...]


def controls_from_trace(init_focus: int, trace: list[StepTrace]) -> ReasoningControls:
    return ReasoningControls(
        init_focus=init_focus,
        branches=tuple(s.branch for s in trace),
        focuses=tuple(s.focus_after for s in trace),
    )


def init_state(
    q: QuestionEncoding,
    v: EncodedFrames,
    hp: HyperParams,
    n_args: int = 0,
    pinned_focus: int | None = None,
) -> ReasoningState:
    """Initialize h from question-to-frame attention; focus = its argmax.

    ``n_args`` sizes the zeroed coverage vector (the argument count only
    becomes known once the SRL structure is in hand).
    """
    att = attention(q.q_prime, v.v_prime, v.v_prime, hp.tau, MaskSpec.none(v.n))
    focus = argmax_row(att.weights) if pinned_focus is None else pinned_focus
    coverage = Tensor(np.zeros((1, n_args))) if n_args > 0 else Tensor(np.zeros((1, 0)))
    return ReasoningState(h=att.context, focus_index=focus, coverage=coverage, step=0)


def srl_attend(
    state: ReasoningState,
    s: SrlEncodings,
    params: ModelParams,
    hp: HyperParams,
) -> tuple[Tensor, Tensor]:
    """Coverage-aware attention over SRL arguments.

    The query is a learned projection of [h ; coverage zero-padded to
    max_args]. Returns the context row and the weights; the same weights
    feed the coverage update.
    """
    n_args = s.n_args
    if n_args > hp.max_args:
        raise CapacityError(f"{n_args} SRL arguments exceeds max_args={hp.max_args}")
    cov = state.coverage
    if cov.shape[1] != n_args:
        raise ShapeError(f"coverage width {cov.shape[1]} != argument count {n_args}")
    pad = hp.max_args - n_args
    padded = concat_cols([cov, Tensor(np.zeros((1, pad)))]) if pad else cov
    query_in = concat_cols([state.h, padded])
    query = add(matmul(query_in, params["reason.cov_query.w"]),
                params["reason.cov_query.b"])
    att = attention(query, s.s_prime, s.s_prime, hp.srl_tau, MaskSpec.none(n_args))
    return att.context, att.weights


def update_coverage(state: ReasoningState, srl_weights: Tensor, hp: HyperParams) -> Tensor:
    """Add the normalized attention distribution onto the running coverage."""
    if hp.chi_mode == "off":
        return state.coverage
    chi = float(srl_weights.shape[1])  # argument-count normalization
    return add(state.coverage, affine(srl_weights, 1.0 / chi, 0.0))


def candidate_frames(
    state: ReasoningState,
    s_t: Tensor,
    v: EncodedFrames,
    params: ModelParams,
    hp: HyperParams,
) -> tuple[AttentionOutput, AttentionOutput]:
    """Masked frame attention on both sides of the focus index.

    Both masks admit the focus frame itself, so neither side is ever
    empty. The shared query is tanh of a learned map of [h ; s_t].
    """
    j, n = state.focus_index, v.n
    if not (0 <= j < n):
        raise DomainError(f"focus index {j} outside [0, {n})")
    r = tanh(add(matmul(concat_cols([state.h, s_t]), params["reason.frame_query.w"]),
                 params["reason.frame_query.b"]))
    v_retro = attention(r, v.v_prime, v.v_prime, hp.tau, MaskSpec.retro(j, n))
    v_prosp = attention(r, v.v_prime, v.v_prime, hp.tau, MaskSpec.prosp(j, n))
    return v_retro, v_prosp


def gate(
    v_retro: AttentionOutput,
    v_prosp: AttentionOutput,
    params: ModelParams,
) -> tuple[Tensor, Tensor]:
    """Probability of taking the retrospective branch; returns (p, logit)."""
    both = concat_cols([v_retro.context, v_prosp.context])
    logit = add(matmul(both, params["reason.gate.w"]), params["reason.gate.b"])
    return sigmoid(logit), logit


def apply_update(
    state: ReasoningState,
    chosen: AttentionOutput,
    params: ModelParams,
) -> tuple[Tensor, int]:
    """Gated hidden-state update; focus moves to the chosen argmax frame.

    z = sigmoid(Wz [h ; c]); h' = (1 - z) * h + z * tanh(Wh [h ; c]).
    """
    hc = concat_cols([state.h, chosen.context])
    z = sigmoid(add(matmul(hc, params["reason.update_gate.w"]),
                    params["reason.update_gate.b"]))
    cand = tanh(add(matmul(hc, params["reason.update_cand.w"]),
                    params["reason.update_cand.b"]))
    keep = affine(z, -1.0, 1.0)  # 1 - z
    h_new = add(mul(keep, state.h), mul(z, cand))
    return h_new, argmax_row(chosen.weights)


def run(
    q: QuestionEncoding,
    v: EncodedFrames,
    s: SrlEncodings,
    params: ModelParams,
    hp: HyperParams,
    controls: ReasoningControls | None = None,
) -> tuple[Tensor, list[StepTrace]]:
    """Execute the full reasoning loop for hp.steps steps.

    With ``controls`` given, the hard decisions (initial focus, branch per
    step, focus per step) are replayed instead of recomputed, which keeps
    the loss a smooth function of the parameters for finite differencing.
    """
    hp.validate()
    if controls is not None and len(controls.branches) != hp.steps:
        raise DomainError("controls do not cover the configured step count")
    state = init_state(
        q, v, hp, n_args=s.n_args,
        pinned_focus=None if controls is None else controls.init_focus,
    )
    trace: list[StepTrace] = []
    for t in range(1, hp.steps + 1):
        s_t, srl_w = srl_attend(state, s, params, hp)
        coverage = update_coverage(state, srl_w, hp)
        v_retro, v_prosp = candidate_frames(state, s_t, v, params, hp)
        p, logit = gate(v_retro, v_prosp, params)
        if controls is None:
            branch = RETRO if p.item() > hp.alpha else PROSP
        else:
            branch = controls.branches[t - 1]
        chosen = v_retro if branch == RETRO else v_prosp
        h_new, focus_after = apply_update(state, chosen, params)
        if controls is not None:
            focus_after = controls.focuses[t - 1]
        trace.append(StepTrace(
            step=t,
            srl_weights=srl_w.data[0].copy(),
            coverage=coverage.data[0].copy(),
            retro_weights=v_retro.weights.data[0].copy(),
            prosp_weights=v_prosp.weights.data[0].copy(),
            gate_prob=p.item(),
            branch=branch,
            focus_before=state.focus_index,
            focus_after=focus_after,
            gate_logit=logit,
        ))
        state = ReasoningState(h=h_new, focus_index=focus_after,
                               coverage=coverage, step=t)
    return state.h, trace
