"""Episode files, checkpoints, and trace export.

Episodes and traces are JSON Lines (one object per line, UTF-8).
Checkpoints are a single versioned JSON object whose tensors are base64 of
little-endian 64-bit floats, so round trips are bit-exact on any host.
Readers reject malformed input with the offending line and field; nothing
is silently coerced or repaired.
"""

from __future__ import annotations

import base64
import json
import os
from pathlib import Path

import numpy as np

from .config import HyperParams
from .episodes import EmbeddingBlock, EpisodeRecord, Hop, HopPlan
from .errors import DataFormatError, SchemaError, ShapeError
from .params import ModelParams, expected_shapes, init_params
from .reasoner import StepTrace
from .tensor import Tensor

CHECKPOINT_VERSION = 1


# -- episodes -------------------------------------------------------------


def _need(obj: dict, field: str, kind, line: int):
    if field not in obj:
        raise SchemaError("missing required field", line=line, field=field)
    value = obj[field]
    if kind is not None and not isinstance(value, kind):
        raise SchemaError(
            f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}",
            line=line, field=field,
        )
    return value


def _parse_episode(obj: dict, line: int) -> EpisodeRecord:
    eid = _need(obj, "id", str, line)
    frames_raw = _need(obj, "frames", list, line)
    if not frames_raw:
        raise SchemaError("episode has no frames", line=line, field="frames")
    widths = {len(row) if isinstance(row, list) else -1 for row in frames_raw}
    if len(widths) != 1 or -1 in widths:
        raise SchemaError("frame rows are not rectangular", line=line, field="frames")
    frames = np.asarray(frames_raw, dtype=np.float64)
    if not np.isfinite(frames).all():
        raise SchemaError("frame values must be finite", line=line, field="frames")

    question = _need(obj, "question", dict, line)
    tokens = _need(question, "tokens", list, line)
    if not tokens or not all(isinstance(t, int) and not isinstance(t, bool) for t in tokens):
        raise SchemaError("question tokens must be a nonempty int list",
                          line=line, field="question.tokens")
    srl = _need(question, "srl", list, line)
    if not srl:
        raise SchemaError("question needs at least one SRL argument",
                          line=line, field="question.srl")
    spans, tags = [], []
    for arg in srl:
        if not isinstance(arg, dict):
            raise SchemaError("SRL argument must be an object",
                              line=line, field="question.srl")
        tag = _need(arg, "tag", str, line)
        span = _need(arg, "span", list, line)
        if len(span) != 2 or not all(isinstance(x, int) for x in span):
            raise SchemaError("span must be [start, end]", line=line, field="span")
        start, end = span
        if not (0 <= start < end <= len(tokens)):
            raise SchemaError(
                f"span ({start},{end}) empty or outside {len(tokens)} tokens",
                line=line, field="span",
            )
        spans.append((start, end))
        tags.append(tag)

    answers_raw = _need(obj, "answers", list, line)
    if len(answers_raw) < 2:
        raise SchemaError("need at least two answer options", line=line, field="answers")
    options = []
    for ans in answers_raw:
        if not isinstance(ans, dict) or "tokens" not in ans:
            raise SchemaError("answer option must be {\"tokens\": [...]}",
                              line=line, field="answers")
        toks = ans["tokens"]
        if not toks or not all(isinstance(t, int) and not isinstance(t, bool) for t in toks):
            raise SchemaError("answer tokens must be a nonempty int list",
                              line=line, field="answers")
        options.append(list(toks))

    label = _need(obj, "label", int, line)
    if isinstance(label, bool) or not (0 <= label < len(options)):
        raise SchemaError(f"label {label} outside {len(options)} answers",
                          line=line, field="label")

    plan = None
    if obj.get("plan") is not None:
        p = obj["plan"]
        if not isinstance(p, dict):
            raise SchemaError("plan must be an object", line=line, field="plan")
        hops = tuple(
            Hop(direction=_need(h, "direction", str, line),
                target=_need(h, "target", int, line))
            for h in _need(p, "hops", list, line)
        )
        plan = HopPlan(
            start_frame=_need(p, "start_frame", int, line),
            hops=hops,
            evidence_frame=_need(p, "evidence_frame", int, line),
        )
        for hop in hops:
            if hop.direction not in ("retro", "prosp"):
                raise SchemaError(f"bad hop direction {hop.direction!r}",
                                  line=line, field="plan")
            if not (0 <= hop.target < frames.shape[0]):
                raise SchemaError("hop target outside frame range",
                                  line=line, field="plan")

    embeddings = None
    if obj.get("embeddings") is not None:
        e = obj["embeddings"]
        if not isinstance(e, dict):
            raise SchemaError("embeddings must be an object",
                              line=line, field="embeddings")
        question_vec = e.get("question")
        srl_mat = e.get("srl")
        embeddings = EmbeddingBlock(
            question=None if question_vec is None else np.asarray(question_vec, dtype=np.float64),
            srl=None if srl_mat is None else np.asarray(srl_mat, dtype=np.float64),
        )

    return EpisodeRecord(
        id=eid, frames=frames, question_tokens=list(tokens),
        srl_spans=spans, srl_tags=tags, answer_options=options,
        label=label, plan=plan, embeddings=embeddings,
    )


def read_episodes(path: str | Path) -> list[EpisodeRecord]:
    """Strictly parse a JSON Lines episode file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"episode file not found: {path}")
    records = []
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise DataFormatError(f"line {line_no}: malformed JSON: {err.msg}") from err
            if not isinstance(obj, dict):
                raise SchemaError("episode line must be a JSON object", line=line_no)
            records.append(_parse_episode(obj, line_no))
    return records


def episode_to_obj(record: EpisodeRecord) -> dict:
    obj = {
        "id": record.id,
        "frames": [[float(x) for x in row] for row in record.frames],
        "question": {
            "tokens": list(record.question_tokens),
            "srl": [
                {"tag": tag, "span": [int(s), int(e)]}
                for (s, e), tag in zip(record.srl_spans, record.srl_tags)
            ],
        },
        "answers": [{"tokens": list(toks)} for toks in record.answer_options],
        "label": int(record.label),
    }
    if record.plan is not None:
        obj["plan"] = {
            "start_frame": int(record.plan.start_frame),
            "hops": [{"direction": h.direction, "target": int(h.target)}
                     for h in record.plan.hops],
            "evidence_frame": int(record.plan.evidence_frame),
        }
    if record.embeddings is not None:
        block = {}
        if record.embeddings.question is not None:
            block["question"] = [float(x) for x in np.ravel(record.embeddings.question)]
        if record.embeddings.srl is not None:
            block["srl"] = [[float(x) for x in row] for row in record.embeddings.srl]
        obj["embeddings"] = block
    return obj


def write_episodes(records: list[EpisodeRecord], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(episode_to_obj(record)) + "\n")


# -- checkpoints ------------------------------------------------------------


def _encode_tensor(arr: np.ndarray) -> dict:
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii"),
    }


def _decode_tensor(obj: dict, name: str) -> np.ndarray:
    shape = obj.get("shape")
    blob = obj.get("data")
    if not isinstance(shape, list) or not isinstance(blob, str):
        raise DataFormatError(f"tensor {name}: malformed entry")
    try:
        raw = base64.b64decode(blob.encode("ascii"), validate=True)
    except Exception as err:
        raise DataFormatError(f"tensor {name}: corrupt base64") from err
    arr = np.frombuffer(raw, dtype="<f8")
    if arr.size != int(np.prod(shape)):
        raise DataFormatError(
            f"tensor {name}: {arr.size} values do not fill shape {shape}"
        )
    return arr.reshape(shape).astype(np.float64)


def write_checkpoint(
    params: ModelParams,
    hp: HyperParams,
    path: str | Path,
    seed: int = 0,
) -> None:
    """Atomically write parameters plus the hyperparameters that shaped them."""
    path = Path(path)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "hyperparams": hp.to_dict(),
        "seed": seed,
        "step": params.step,
        "tensors": {name: _encode_tensor(t.data) for name, t in params.tensors.items()},
    }
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def read_checkpoint(
    path: str | Path,
    expect_hp: HyperParams | None = None,
) -> tuple[ModelParams, HyperParams, int]:
    """Load a checkpoint; returns (params, hyperparams, seed).

    With ``expect_hp`` given, any disagreement in model shape is a
    ``ShapeError`` before any state is built.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise DataFormatError(f"corrupt checkpoint file: {err.msg}") from err
    if not isinstance(payload, dict):
        raise DataFormatError("checkpoint must be a JSON object")
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(
            f"checkpoint format version {version!r} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    hp = HyperParams.from_dict(payload.get("hyperparams", {}))
    if expect_hp is not None and hp.to_dict() != expect_hp.to_dict():
        raise ShapeError(
            f"checkpoint hyperparams {hp.to_dict()} do not match configured "
            f"{expect_hp.to_dict()}"
        )
    tensors_obj = payload.get("tensors")
    if not isinstance(tensors_obj, dict):
        raise DataFormatError("checkpoint carries no tensors")
    shapes = expected_shapes(hp)
    unknown = set(tensors_obj) - set(shapes)
    if unknown:
        raise DataFormatError(f"checkpoint has unknown tensors: {sorted(unknown)}")
    missing = set(shapes) - set(tensors_obj)
    if missing:
        raise DataFormatError(f"checkpoint is missing tensors: {sorted(missing)}")
    params = init_params(hp, seed=0)
    for name, obj in tensors_obj.items():
        arr = _decode_tensor(obj, name)
        if arr.shape != shapes[name]:
            raise ShapeError(
                f"tensor {name}: shape {arr.shape} != expected {shapes[name]}"
            )
        params.tensors[name] = Tensor(arr, requires_grad=True)
    params.m = {k: np.zeros_like(t.data) for k, t in params.tensors.items()}
    params.v = {k: np.zeros_like(t.data) for k, t in params.tensors.items()}
    params.step = int(payload.get("step", 0))
    return params, hp, int(payload.get("seed", 0))


# -- traces -----------------------------------------------------------------


def trace_lines(
    episode_id: str,
    trace: list[StepTrace],
    prediction: int,
    label: int,
) -> list[dict]:
    """One JSON object per reasoning step plus a summary object."""
    lines = []
    for step in trace:
        chosen = step.retro_weights if step.branch == "retro" else step.prosp_weights
        lines.append({
            "episode": episode_id,
            "step": step.step,
            "srl_weights": [float(x) for x in step.srl_weights],
            "coverage": [float(x) for x in step.coverage],
            "p": float(step.gate_prob),
            "branch": step.branch,
            "focus_before": int(step.focus_before),
            "focus_after": int(step.focus_after),
            "frame_weights": [float(x) for x in chosen],
        })
    lines.append({
        "episode": episode_id,
        "summary": True,
        "prediction": int(prediction),
        "label": int(label),
    })
    return lines


def write_trace(
    episodes: list[tuple[str, list[StepTrace], int, int]],
    path: str | Path,
) -> None:
    """Write traces ordered by (episode id, step), flushed before return."""
    path = Path(path)
    ordered = sorted(episodes, key=lambda item: item[0])
    with path.open("w", encoding="utf-8") as fh:
        for episode_id, trace, prediction, label in ordered:
            for line in trace_lines(episode_id, trace, prediction, label):
                fh.write(json.dumps(line) + "\n")
        fh.flush()
        os.fsync(fh.fileno())
