"""Command-line entry point.

Exit status: 0 on success, 2 on validation errors, 1 on runtime failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import typing
from pathlib import Path

from .errors import CavSyncError, ConfigurationError
from .harness import (RunConfig, generate_synthetic, ingest_manifest, load_checkpoint,
                      run_eval, run_gradcheck, run_pretrain, run_sweep, write_manifest)
from .harness.runner import SWEEPS, dump_json, gradcheck_config

log = logging.getLogger("cavsync")

TRAIN_COMMANDS = ("pretrain", "sweep")
EVAL_COMMANDS = {"probe": "classify", "retrieve": "retrieve", "localize": "localize",
                 "segment": "segment"}


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _optional_float(text: str):
    return None if text.lower() == "none" else float(text)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("run configuration (overrides --config)")
    hints = typing.get_type_hints(RunConfig)
    for f in dataclasses.fields(RunConfig):
        if f.name == "seed":
            continue
        hint = hints[f.name]
        if hint is bool:
            conv = _parse_bool
        elif hint is int:
            conv = int
        elif hint is float:
            conv = float
        elif hint == typing.Optional[float]:
            conv = _optional_float
        else:
            conv = str
        group.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=conv, default=None,
                           metavar=f.name.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cavsync", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="random seed (mandatory for training commands)")
        p.add_argument("--out", type=Path, help="write metrics JSON here")
        _add_config_flags(p)
        return p

    p = command("synth", "write a synthetic dataset as CAVT files + manifest")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--split", choices=("train", "eval"), default="train")

    p = command("pretrain", "pretrain a model and write a checkpoint")
    p.add_argument("--data", type=Path, help="training manifest (default: synthetic)")
    p.add_argument("--out-dir", type=Path, required=True, help="checkpoint and log directory")

    for name, task in EVAL_COMMANDS.items():
        p = command(name, f"evaluate a checkpoint on the {task} task")
        p.add_argument("--checkpoint", type=Path, required=True)
        p.add_argument("--data", type=Path, help="evaluation manifest (default: synthetic)")
        if name == "probe":
            p.add_argument("--train-data", type=Path, help="probe training manifest")
        if name == "localize":
            p.add_argument("--dump-dir", type=Path, help="write maps as CAVT + PGM")

    command("gradcheck", "finite-difference check of every parameter group")

    p = command("sweep", "pretrain + evaluate along one ablation axis")
    p.add_argument("--axis", choices=sorted(SWEEPS), required=True)
    p.add_argument("--values", help="comma-separated override of the axis values")
    p.add_argument("--tasks", default="retrieve", help="comma-separated tasks to evaluate")
    return parser


def _resolve_config(args, base: RunConfig | None = None) -> RunConfig:
    data = (base or RunConfig()).to_dict()
    if args.config:
        data.update(_read_config(args.config))
    for f in dataclasses.fields(RunConfig):
        value = args.seed if f.name == "seed" else getattr(args, f.name, None)
        if value is not None:
            data[f.name] = value
    if args.command in EVAL_COMMANDS:
        data["task"] = EVAL_COMMANDS[args.command]
    return RunConfig.from_dict(data)


def _read_config(path: Path) -> dict:
    RunConfig.from_json_file(path)  # validates field names and values
    return json.loads(path.read_text())


def _parse_values(text: str, axis: str):
    field_name = SWEEPS[axis][0]
    out = []
    for item in text.split(","):
        item = item.strip()
        try:
            if field_name == "use_global":
                out.append(_parse_bool(item))
            elif field_name in ("n_registers", "T", "s_length"):
                out.append(int(item))
            else:
                out.append(float(item))
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise ConfigurationError(f"bad sweep value {item!r} for {axis}: {exc}") from exc
    return out


def _emit(result: dict, out: Path | None) -> None:
    text = dump_json(result, out)
    if out is None:
        sys.stdout.write(text)


def _run(args) -> int:
    if args.command in TRAIN_COMMANDS and args.seed is None:
        raise ConfigurationError(f"--seed is mandatory for {args.command}")

    if args.command == "gradcheck":
        cfg = _resolve_config(args, gradcheck_config())
        report = run_gradcheck(cfg)
        _emit(report, args.out)
        return 0 if report["passed"] else 1

    if args.command in EVAL_COMMANDS:
        state, meta = load_checkpoint(args.checkpoint)
        trained = RunConfig.from_dict(meta["run_config"]) if "run_config" in meta else None
        cfg = _resolve_config(args, trained)
        eval_data = ingest_manifest(args.data, cfg.s_length) if args.data else None
        kwargs = {}
        if args.command == "probe" and args.train_data:
            kwargs["train_data"] = ingest_manifest(args.train_data, cfg.s_length)
        if args.command == "localize":
            kwargs["dump_dir"] = args.dump_dir
        _emit(run_eval(cfg, state, eval_data=eval_data, **kwargs), args.out)
        return 0

    cfg = _resolve_config(args)

    if args.command == "synth":
        pairs = generate_synthetic(cfg.synthetic_config(args.split))
        path = write_manifest(pairs, args.out_dir)
        _emit({"manifest": str(path), "clips": len(pairs), "split": args.split}, args.out)
        return 0

    if args.command == "pretrain":
        data = ingest_manifest(args.data, cfg.s_length) if args.data else None
        result = run_pretrain(cfg, data, args.out_dir)
        _emit({"checkpoint": str(result.checkpoint), "epochs": result.epochs}, args.out)
        return 0

    if args.command == "sweep":
        values = _parse_values(args.values, args.axis) if args.values else None
        tasks = tuple(t.strip() for t in args.tasks.split(","))
        _emit(run_sweep(cfg, args.axis, values, tasks), args.out)
        return 0

    raise ConfigurationError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except CavSyncError as exc:
        print(f"cavsync: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"cavsync: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
