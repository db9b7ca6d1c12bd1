"""Synthetic multi-hop episodes with known ground-truth hop plans.

Task construction
-----------------
Each frame carries two planted codes: an *event* code identifying what
happens in the frame and a *payload* code naming that frame's answer
token. The question is a chain:

  * an anchor argument names the start frame's (unique) event,
  * each hop argument pairs a direction word with an event name; the hop
    lands on the frame carrying that event *nearest to the current frame
    on the stated side*.

Hop events recur across the video: the first hop's event also appears on
the wrong side of the start frame, and the second hop's event appears
three times (once on the wrong side of the first hop's landing, twice on
its stated side, the nearer copy being correct). Landing on a later hop
therefore requires knowing where the previous hop landed: no single
attention lookup, however trained, can address "the copy nearest to a
frame that has not been retrieved yet". That is what makes the reasoning
genuinely multi-step, and it is exactly the retrospective/prospective
choice the gate has to make.

The correct answer is the payload of the final landing. Distractors are
the payloads of the frames wrong turns land on: the far same-side copy
(punishes ignoring the pivot), the wrong-side copy (punishes direction
mistakes), the start frame (punishes not moving at all), plus one payload
that appears nowhere in the video, which gives early training a foothold
before attention is sharp.

Token ids are partitioned into fixed pools (anchor events, hop events,
payloads, verbs, fillers, direction words) so the text encoder can learn
the role of each vocabulary region; the pools are kept small so the
token-to-code dictionary is learnable in a few epochs. Frame vectors
concatenate the event and payload codebook entries; codebooks are unit
Gaussian directions derived from a fixed seed, shared across episodes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .episodes import EpisodeRecord, Hop, HopPlan
from .errors import DomainError, IntegrityError

RETRO = "retro"
PROSP = "prosp"

# Vocabulary layout (requires vocab_size >= 112).
TOKEN_BEFORE = 2
TOKEN_AFTER = 3
START_EVENTS = range(8, 16)
HOP_EVENTS = range(16, 24)
PAYLOADS = range(24, 40)
VERBS = range(40, 48)
FILLERS = range(48, 112)

DEFAULT_CODEBOOK_SEED = 9417


@dataclass(frozen=True)
class GenSpec:
    """Shape of the generated task.

    ``absent_distractors`` counts options whose payload appears nowhere in
    the video. One such option gives training a foothold (telling present
    from absent payloads is learnable before attention is sharp) while the
    remaining distractors stay on-screen so direction mistakes cost
    accuracy.
    """

    frames: int = 10
    args: int = 4
    hops: int = 2          # plan depth; episodes sample min_hops..hops
    min_hops: int = 0
    d_in: int = 64
    options: int = 4
    absent_distractors: int = 1
    noise: float = 0.0
    codebook_seed: int = DEFAULT_CODEBOOK_SEED

    def validate(self) -> "GenSpec":
        if self.frames < 2:
            raise DomainError(f"need at least 2 frames, got {self.frames}")
        if self.hops < 1:
            raise DomainError(f"need at least 1 hop, got {self.hops}")
        if not (0 <= self.min_hops <= self.hops):
            raise DomainError("min_hops must lie in 0..hops")
        if self.frames < self.hops + 1:
            raise DomainError(
                f"unreachable plan: {self.hops} hops need at least "
                f"{self.hops + 1} frames, got {self.frames}"
            )
        if self.hops > 4:
            raise DomainError("at most 4 hops (one SRL argument slot each)")
        if self.args < self.hops + 1:
            raise DomainError(
                f"{self.args} arguments cannot host {self.hops} hops plus an anchor"
            )
        if self.options < 2:
            raise DomainError("need at least 2 answer options")
        if not (0 <= self.absent_distractors <= self.options - 2):
            raise DomainError(
                "absent_distractors must leave at least one on-screen distractor"
            )
        if self.d_in < 4:
            raise DomainError("d_in too small to split into event/payload halves")
        if self.noise < 0:
            raise DomainError("noise must be nonnegative")
        return self


def _code(token: int, width: int, seed: int) -> np.ndarray:
    """Fixed unit direction for a token, independent of any episode."""
    rng = np.random.default_rng((seed, token))
    vec = rng.standard_normal(width)
    return vec / np.linalg.norm(vec)


def event_code(token: int, spec: GenSpec) -> np.ndarray:
    return _code(token, spec.d_in // 2, spec.codebook_seed)


def payload_code(token: int, spec: GenSpec) -> np.ndarray:
    return _code(token, spec.d_in - spec.d_in // 2, spec.codebook_seed + 1)


def _frame_vector(event_tok: int, payload_tok: int, spec: GenSpec,
                  rng: np.random.Generator) -> np.ndarray:
    vec = np.concatenate([event_code(event_tok, spec), payload_code(payload_tok, spec)])
    if spec.noise > 0:
        vec = vec + spec.noise * rng.standard_normal(spec.d_in)
    return vec


def _free_side(events: dict[int, int], n: int, pivot: int, direction: str) -> list[int]:
    """Unassigned positions strictly on one side of the pivot, nearest first."""
    if direction == RETRO:
        side = range(pivot - 1, -1, -1)
    else:
        side = range(pivot + 1, n)
    return [i for i in side if i not in events]


def generate_episode(seed: int, spec: GenSpec) -> EpisodeRecord:
    """Build one episode; identical (seed, spec) pairs yield identical records."""
    spec.validate()
    rng = np.random.default_rng((20177, seed))
    n = spec.frames

    n_hops = int(rng.integers(spec.min_hops, spec.hops + 1))
    anchor_tok = int(rng.choice(list(START_EVENTS)))
    start = int(rng.integers(n))
    events: dict[int, int] = {start: anchor_tok}
    hop_toks = [int(t) for t in rng.choice(list(HOP_EVENTS), size=max(n_hops, 1),
                                           replace=False)]

    # Place hops: the target is the nearest same-event frame on the stated
    # side of the pivot; a far same-side copy and a wrong-side copy make
    # both "ignore the pivot" and "flip the direction" concrete mistakes.
    hops: list[Hop] = []
    decoys: list[tuple[int | None, int | None]] = []  # (far_copy, wrong_side)
    pivot = start
    for h in range(n_hops):
        tok = hop_toks[h]
        dirs = [d for d in (RETRO, PROSP) if _free_side(events, n, pivot, d)]
        if not dirs:
            break  # no room to continue the chain; plan ends here
        direction = str(rng.choice(dirs))
        side = _free_side(events, n, pivot, direction)
        near_rank = int(rng.integers(min(len(side), 2)))  # keep targets near-ish
        target = side[near_rank]
        events[target] = tok
        far_copy = None
        remaining = [i for i in _free_side(events, n, pivot, direction)
                     if abs(i - pivot) > abs(target - pivot)]
        if remaining:
            far_copy = int(rng.choice(remaining))
            events[far_copy] = tok
        opposite = RETRO if direction == PROSP else PROSP
        wrong = _free_side(events, n, pivot, opposite)
        wrong_side = int(rng.choice(wrong)) if wrong else None
        if wrong_side is not None:
            events[wrong_side] = tok
        hops.append(Hop(direction=direction, target=target))
        decoys.append((far_copy, wrong_side))
        pivot = target
    n_hops = len(hops)
    plan = HopPlan(start_frame=start, hops=tuple(hops), evidence_frame=pivot)

    free = [i for i in range(n) if i not in events]
    filler_toks = rng.choice(list(FILLERS), size=len(free), replace=False)
    for pos, tok in zip(free, filler_toks):
        events[pos] = int(tok)

    # Distinct payload per frame; the evidence payload is the answer.
    payload_toks = [int(t) for t in rng.choice(list(PAYLOADS), size=n, replace=False)]
    frames = np.stack([
        _frame_vector(events[i], payload_toks[i], spec, rng) for i in range(n)
    ])

    # Question: anchor + verb + one (direction, event) argument per hop.
    spans: list[tuple[int, int]] = []
    tags: list[str] = []
    tokens: list[int] = []

    def add_span(tag: str, toks: list[int]) -> None:
        spans.append((len(tokens), len(tokens) + len(toks)))
        tags.append(tag)
        tokens.extend(toks)

    add_span("ARG0", [anchor_tok])
    if spec.args >= spec.hops + 2:  # verb span only when the budget allows
        add_span("V", [int(rng.choice(list(VERBS)))])
    hop_tags = ["ARG1", "ARG2", "ARG3", "ARG4"]
    for idx, hop in enumerate(hops):
        tok = TOKEN_BEFORE if hop.direction == RETRO else TOKEN_AFTER
        add_span(hop_tags[idx], [tok, hop_toks[idx]])
    for _ in range(spec.args - len(spans)):
        add_span("ARGM-MNR", [int(rng.choice(list(FILLERS)))])

    # Options: the evidence payload plus payloads of frames wrong turns
    # land on, then other off-path frames, then payload tokens absent from
    # the video entirely.
    path = {start, *(h.target for h in hops)}
    correct = payload_toks[plan.evidence_frame]
    pool: list[int] = []
    if hops:
        far_copy, wrong_side = decoys[-1]
        confusable = [payload_toks[p] for p in (far_copy, wrong_side) if p is not None]
        confusable.append(payload_toks[start])
        if n_hops >= 2:
            confusable.append(payload_toks[hops[-2].target])  # stopping early
        pool.extend(int(t) for t in rng.permutation(confusable))
    off_path = [payload_toks[i] for i in range(n)
                if i not in path and payload_toks[i] not in pool]
    pool.extend(int(t) for t in rng.permutation(off_path))
    unused = [t for t in PAYLOADS if t not in payload_toks]
    n_absent = min(spec.absent_distractors, len(unused))
    n_onscreen = spec.options - 1 - n_absent
    seen = {correct}
    distractors = []
    for t in pool:
        if t not in seen:
            distractors.append(t)
            seen.add(t)
        if len(distractors) == n_onscreen:
            break
    distractors += [int(t) for t in rng.permutation(unused)[:n_absent]]
    if len(distractors) < spec.options - 1:  # tiny videos: fall back to unused
        extra = [t for t in unused if t not in distractors and t != correct]
        distractors += extra[: spec.options - 1 - len(distractors)]
    options = [[correct]] + [[t] for t in distractors]
    order = rng.permutation(spec.options)
    shuffled = [options[i] for i in order]
    label = int(np.where(order == 0)[0][0])

    return EpisodeRecord(
        id=f"ep-{seed:08d}",
        frames=frames,
        question_tokens=tokens,
        srl_spans=spans,
        srl_tags=tags,
        answer_options=shuffled,
        label=label,
        plan=plan,
    )


def _decode(vec: np.ndarray, candidates: list[int], codes) -> int:
    """Nearest-code decode; returns the best-matching candidate token."""
    sims = [float(vec @ codes(t)) for t in candidates]
    return candidates[int(np.argmax(sims))]


def oracle_answer(record: EpisodeRecord, spec: GenSpec | None = None) -> int:
    """Mechanically follow the plan over planted frame contents.

    Verifies the planted event chain along the way and raises
    ``IntegrityError`` when the frames disagree with the plan (for example
    after the frames were permuted without updating the plan).
    """
    if record.plan is None:
        raise DomainError("episode carries no hop plan")
    spec = (spec or GenSpec(d_in=record.frames.shape[1])).validate()
    half = spec.d_in // 2
    plan = record.plan
    n = record.n_frames

    # The anchor argument names the start event; each hop argument pairs a
    # direction word with the event to land on (nearest copy on that side).
    hop_args = [
        (tag, record.question_tokens[s:e])
        for (s, e), tag in zip(record.srl_spans, record.srl_tags)
        if tag in ("ARG1", "ARG2", "ARG3", "ARG4")
    ]
    anchor_span = next(
        record.question_tokens[s:e]
        for (s, e), tag in zip(record.srl_spans, record.srl_tags) if tag == "ARG0"
    )
    if len(hop_args) != len(plan.hops):
        raise IntegrityError(
            f"{len(hop_args)} hop arguments but plan has {len(plan.hops)} hops"
        )
    if not (0 <= plan.start_frame < n):
        raise IntegrityError(f"start frame {plan.start_frame} outside {n} frames")
    event_pool = list(START_EVENTS) + list(HOP_EVENTS) + list(FILLERS)

    def frame_event(pos: int) -> int:
        return _decode(record.frames[pos, :half], event_pool,
                       lambda t: event_code(t, spec))

    if frame_event(plan.start_frame) != anchor_span[0]:
        raise IntegrityError(
            f"start frame {plan.start_frame} does not carry the anchor event "
            f"{anchor_span[0]}"
        )
    at = plan.start_frame
    for (tag, span), hop in zip(hop_args, plan.hops):
        direction = RETRO if span[0] == TOKEN_BEFORE else PROSP
        event_tok = span[1]
        if direction != hop.direction:
            raise IntegrityError(f"{tag} direction disagrees with plan")
        if not (0 <= hop.target < n):
            raise IntegrityError(f"hop target {hop.target} outside {n} frames")
        if (direction == RETRO and hop.target >= at) or \
           (direction == PROSP and hop.target <= at):
            raise IntegrityError(f"hop to {hop.target} is not {direction} of {at}")
        if frame_event(hop.target) != event_tok:
            raise IntegrityError(
                f"frame {hop.target} does not carry event {event_tok}"
            )
        between = range(at - 1, hop.target, -1) if direction == RETRO \
            else range(at + 1, hop.target)
        for pos in between:
            if frame_event(pos) == event_tok:
                raise IntegrityError(
                    f"event {event_tok} occurs at frame {pos}, nearer than the "
                    f"planned target {hop.target}"
                )
        at = hop.target
    if at != plan.evidence_frame:
        raise IntegrityError("plan evidence frame is not the final hop target")

    payload = _decode(record.frames[at, half:],
                      [opt[0] for opt in record.answer_options],
                      lambda t: payload_code(t, spec))
    for idx, opt in enumerate(record.answer_options):
        if opt[0] == payload:
            return idx
    raise IntegrityError("evidence payload matches no answer option")


def make_split(
    count: int, seed: int, spec: GenSpec,
) -> tuple[list[EpisodeRecord], list[EpisodeRecord], list[EpisodeRecord]]:
    """Deterministic 80/10/10 split, assigned by episode-id hash order."""
    if count < 3:
        raise DomainError(f"need at least 3 episodes to split, got {count}")
    records = [generate_episode(seed * 1_000_003 + i, spec) for i in range(count)]
    ranked = sorted(records,
                    key=lambda r: hashlib.sha1(r.id.encode()).hexdigest())
    n_dev = max(1, count // 10)
    n_test = max(1, count // 10)
    n_train = count - n_dev - n_test
    return ranked[:n_train], ranked[n_train:n_train + n_dev], ranked[n_train + n_dev:]
