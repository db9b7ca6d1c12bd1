"""framehop: multi-step retrospective/prospective reasoning over video frames.

A desk-scale library and CLI: a small reverse-mode tensor engine, toy
trainable encoders, the masked-attention reasoning loop with a coverage
mechanism, answer scoring with cross-entropy training, a synthetic
multi-hop episode generator with ground-truth hop plans, and strict JSON
file formats for episodes, checkpoints, and reasoning traces.
"""

from .config import HyperParams, TrainConfig
from .encoders import (
    EncodedFrames,
    FrameBank,
    QuestionEncoding,
    SrlEncodings,
    encode_frames,
    encode_question,
    encode_record,
    encode_srl,
    ingest_embeddings,
)
from .episodes import EpisodeRecord, Hop, HopPlan
from .errors import (
    CapacityError,
    DataFormatError,
    DomainError,
    FramehopError,
    IntegrityError,
    NumericError,
    SchemaError,
    ShapeError,
    StateError,
)
from .params import ModelParams, init_params
from .reasoner import (
    ReasoningControls,
    ReasoningState,
    StepTrace,
    apply_update,
    candidate_frames,
    gate,
    init_state,
    run,
    srl_attend,
    update_coverage,
)
from .synth import GenSpec, generate_episode, make_split, oracle_answer
from .tensor import (
    AttentionOutput,
    MaskSpec,
    Tensor,
    attention,
    backward,
    grad_check,
    no_grad,
    softmax_with_temperature,
)
from .training import (
    AnswerSet,
    evaluate,
    loss_binary,
    loss_multi,
    optimizer_step,
    predict,
    score_answers,
    train,
)

__version__ = "0.1.0"
