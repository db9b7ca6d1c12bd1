"""Operator entry point: gen-synth, train, eval, trace, gradcheck.

Exit codes: 0 success, 1 check failure, 2 usage/data error, 3 numeric
failure. Config precedence is flags > config file > defaults; the resolved
configuration is echoed as the first structured output line of every run.
The FRAMEHOP_CONFIG environment variable names a default config file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import HyperParams, TrainConfig
from .dataio import read_checkpoint, read_episodes, write_checkpoint, write_episodes, write_trace
from .errors import DataFormatError, DomainError, FramehopError, NumericError, ShapeError
from .params import init_params
from .synth import GenSpec, generate_episode, make_split
from .training import evaluate, predict, train

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3

HP_KEYS = {
    "steps": "steps", "tau": "tau", "srl_tau": "srl_tau", "alpha": "alpha",
    "coverage": "chi_mode", "dim": "d", "d_in": "d_in",
}
TRAIN_KEYS = {
    "lr": "lr", "batch": "batch_size", "epochs": "epochs", "seed": "seed",
    "weight_decay": "weight_decay", "direction_weight": "direction_weight",
    "binary_weight": "binary_weight",
}


def _emit(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def _load_config_file(path: str | None) -> dict:
    if path is None:
        path = os.environ.get("FRAMEHOP_CONFIG")
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise DataFormatError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise DataFormatError(f"config file is not valid JSON: {err.msg}") from err
    if not isinstance(data, dict):
        raise DataFormatError("config file must hold a JSON object")
    return data


def _resolve(args: argparse.Namespace, file_cfg: dict) -> tuple[HyperParams, TrainConfig]:
    """Merge defaults < config file < flags into validated configs."""
    hp_kwargs: dict = {}
    train_kwargs: dict = {}
    for source in (file_cfg, _flag_dict(args)):
        for key, value in source.items():
            if value is None:
                continue
            if key in HP_KEYS:
                hp_kwargs[HP_KEYS[key]] = value
            elif key in TRAIN_KEYS:
                train_kwargs[TRAIN_KEYS[key]] = value
    hp = HyperParams(**hp_kwargs).validate()
    cfg = TrainConfig(hp=hp, **train_kwargs).validate()
    return hp, cfg


def _flag_dict(args: argparse.Namespace) -> dict:
    known = set(HP_KEYS) | set(TRAIN_KEYS)
    return {k: v for k, v in vars(args).items() if k in known}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="framehop",
        description="Multi-step retrospective/prospective frame reasoning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file (flags win)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--steps", type=int, default=None, help="reasoning steps T")
        p.add_argument("--tau", type=float, default=None, help="frame attention temperature")
        p.add_argument("--srl-tau", dest="srl_tau", type=float, default=None)
        p.add_argument("--alpha", type=float, default=None, help="gate threshold")
        p.add_argument("--dim", type=int, default=None, help="model width d")
        p.add_argument("--coverage", choices=["argcount", "off"], default=None)

    gen = sub.add_parser("gen-synth", help="generate synthetic episode splits")
    shared(gen)
    gen.add_argument("--count", type=int, required=True)
    gen.add_argument("--frames", type=int, default=10)
    gen.add_argument("--args", dest="n_args", type=int, default=4)
    gen.add_argument("--hops", type=int, default=2)
    gen.add_argument("--d-in", dest="d_in", type=int, default=None)
    gen.add_argument("--noise", type=float, default=0.0)
    gen.add_argument("--out", required=True, help="path stem for .train/.dev/.test files")

    tr = sub.add_parser("train", help="train on episode files")
    shared(tr)
    tr.add_argument("--train", dest="train_path", required=True)
    tr.add_argument("--dev", dest="dev_path", default=None)
    tr.add_argument("--lr", type=float, default=None)
    tr.add_argument("--batch", type=int, default=None)
    tr.add_argument("--epochs", type=int, default=None)
    tr.add_argument("--weight-decay", dest="weight_decay", type=float, default=None)
    tr.add_argument("--direction-weight", dest="direction_weight", type=float, default=None)
    tr.add_argument("--binary-weight", dest="binary_weight", type=float, default=None)
    tr.add_argument("--out", required=True, help="checkpoint output path")

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    shared(ev)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--setting", choices=["quarter", "half"], default="quarter")
    ev.add_argument("--jobs", type=int, default=1)

    trc = sub.add_parser("trace", help="export reasoning traces")
    shared(trc)
    trc.add_argument("--checkpoint", required=True)
    trc.add_argument("--data", required=True)
    trc.add_argument("--out", required=True)
    trc.add_argument("--summary", action="store_true",
                     help="also print a per-episode hop summary")

    gc = sub.add_parser("gradcheck", help="verify gradients against finite differences")
    shared(gc)
    gc.add_argument("--scope", choices=["op", "end2end"], default="end2end")

    return parser


def _echo_config(command: str, hp: HyperParams, cfg: TrainConfig | None, extra: dict) -> None:
    obj = {"event": "config", "command": command}
    obj.update({f"hp.{k}": v for k, v in hp.to_dict().items()})
    if cfg is not None:
        obj.update({
            "lr": cfg.lr, "weight_decay": cfg.weight_decay, "batch": cfg.batch_size,
            "epochs": cfg.epochs, "seed": cfg.seed,
            "direction_weight": cfg.direction_weight, "binary_weight": cfg.binary_weight,
        })
    obj.update(extra)
    _emit(obj)


def cmd_gen_synth(args: argparse.Namespace) -> int:
    hp, cfg = _resolve(args, _load_config_file(args.config))
    if args.count < 3:
        raise DomainError(f"--count must be at least 3, got {args.count}")
    spec = GenSpec(
        frames=args.frames, args=args.n_args, hops=args.hops,
        d_in=args.d_in if args.d_in is not None else hp.d_in,
        noise=args.noise,
    ).validate()
    _echo_config("gen-synth", hp, None, {
        "count": args.count, "frames": spec.frames, "args": spec.args,
        "hops": spec.hops, "d_in": spec.d_in, "noise": spec.noise,
        "seed": cfg.seed, "out": args.out,
    })
    splits = make_split(args.count, cfg.seed, spec)
    for name, records in zip(("train", "dev", "test"), splits):
        path = f"{args.out}.{name}.jsonl"
        write_episodes(records, path)
        _emit({"event": "written", "split": name, "count": len(records), "path": path})
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    hp, cfg = _resolve(args, _load_config_file(args.config))
    train_set = read_episodes(args.train_path)
    dev_set = read_episodes(args.dev_path) if args.dev_path else None
    _echo_config("train", hp, cfg, {
        "train": args.train_path, "dev": args.dev_path,
        "episodes": len(train_set), "out": args.out,
    })
    params, report = train(
        train_set, cfg, dev=dev_set,
        log=lambda ep: _emit({
            "event": "epoch", "epoch": ep.epoch,
            "train_loss": round(ep.train_loss, 6),
            "dev_acc": round(ep.dev_accuracy, 6),
        }),
    )
    write_checkpoint(params, hp, args.out, seed=cfg.seed)
    _emit({"event": "best", "epoch": report.best_epoch,
           "dev_acc": round(report.best_dev_accuracy, 6), "checkpoint": args.out})
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    params, hp, _ = read_checkpoint(args.checkpoint)
    _check_overrides(args, file_cfg, hp)
    if args.jobs < 1:
        raise DomainError(f"--jobs must be >= 1, got {args.jobs}")
    data = read_episodes(args.data)
    _echo_config("eval", hp, None, {
        "checkpoint": args.checkpoint, "data": args.data,
        "setting": args.setting, "jobs": args.jobs,
    })
    accuracy = evaluate(data, params, hp, setting=args.setting, jobs=args.jobs)
    _emit({"event": "accuracy", "setting": args.setting,
           "episodes": len(data), "accuracy": round(accuracy, 6)})
    return EXIT_OK


def _check_overrides(args: argparse.Namespace, file_cfg: dict, hp: HyperParams) -> None:
    """Flags may restate checkpoint hyperparams but not contradict them."""
    merged = dict(file_cfg)
    merged.update({k: v for k, v in _flag_dict(args).items() if v is not None})
    for flag, field in HP_KEYS.items():
        if flag in merged and merged[flag] is not None:
            configured = getattr(hp, field)
            if merged[flag] != configured:
                raise ShapeError(
                    f"--{flag}={merged[flag]} conflicts with checkpoint "
                    f"{field}={configured}"
                )


def cmd_trace(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    params, hp, _ = read_checkpoint(args.checkpoint)
    _check_overrides(args, file_cfg, hp)
    data = read_episodes(args.data)
    _echo_config("trace", hp, None, {
        "checkpoint": args.checkpoint, "data": args.data, "out": args.out,
    })
    episodes = []
    matches, planned = 0, 0
    for record in data:
        pred, _, trace = predict(record, params, hp)
        episodes.append((record.id, trace, pred, record.label))
        if record.plan is not None and record.plan.hops:
            planned += 1
            matches += trace[0].branch == record.plan.hops[0].direction
        if args.summary:
            for step in trace:
                top_arg = int(np.argmax(step.srl_weights))
                tag = record.srl_tags[top_arg]
                print(
                    f"{record.id} step {step.step}: {step.branch}, frame "
                    f"{step.focus_before}->{step.focus_after}, top arg {tag} "
                    f"({step.srl_weights[top_arg]:.2f})"
                )
    write_trace(episodes, args.out)
    result = {"event": "trace", "episodes": len(data), "out": args.out}
    if planned:
        result["step1_direction_match"] = round(matches / planned, 6)
    _emit(result)
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    from .gradchecks import end_to_end_report, per_op_report
    hp, cfg = _resolve(args, _load_config_file(args.config))
    _echo_config("gradcheck", hp, None, {"scope": args.scope, "seed": cfg.seed})
    tolerance = 1e-4
    if args.scope == "op":
        report = per_op_report(seed=cfg.seed)
    else:
        report = end_to_end_report(seed=cfg.seed)
    failed = []
    for name, err in sorted(report.items()):
        _emit({"event": "gradcheck", "component": name, "max_rel_err": err})
        if err >= tolerance:
            failed.append(name)
    if failed:
        _emit({"event": "gradcheck_failed", "tolerance": tolerance, "offenders": failed})
        return EXIT_CHECK_FAILED
    _emit({"event": "gradcheck_ok", "tolerance": tolerance,
           "worst": max(report.values())})
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "gen-synth": cmd_gen_synth,
        "train": cmd_train,
        "eval": cmd_eval,
        "trace": cmd_trace,
        "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except NumericError as err:
        _emit({"event": "error", "kind": "numeric", "message": str(err)})
        return EXIT_NUMERIC
    except (FramehopError, FileNotFoundError, OSError) as err:
        _emit({"event": "error", "kind": type(err).__name__, "message": str(err)})
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
