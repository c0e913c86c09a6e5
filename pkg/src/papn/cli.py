"""Command-line entry point: ``papn <command> [flags]``.

Results go to stdout, diagnostics and the reproducibility header to stderr.
Exit codes: 0 success, 2 bad input or I/O failure, 3 config fingerprint mismatch.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .baselines import KINDS, BaselinePredictor
from .config import TrainConfig, load_config
from .instance import ParseError, ValidationError, generate, load_ndjson, save_ndjson
from .layers import ConfigError
from .metrics import format_table
from .trainer import (
    FingerprintMismatch, TrainingError, evaluate, load_checkpoint, lr_sweep, mix_sweep,
    save_checkpoint, train,
)

EXIT_INPUT = 2
EXIT_FINGERPRINT = 3


class CliError(Exception):
    pass


def _env_seed() -> int:
    raw = os.environ.get("PAPN_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"PAPN_SEED must be an integer, got {raw!r}") from None


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _header(seed: int, config: TrainConfig | None) -> None:
    fp = config.fingerprint() if config is not None else "-"
    _err(f"# papn {__version__} seed={seed} config={fp}")
    if config is not None:
        for key, val in config.to_dict().items():
            _err(f"#   {key}={val}")


def _resolve_config(args) -> TrainConfig:
    overrides = {
        "lr": getattr(args, "lr", None), "epochs": getattr(args, "epochs", None),
        "hidden": getattr(args, "hidden", None), "heads": getattr(args, "heads", None),
        "batch_size": getattr(args, "batch_size", None),
        "seed": args.seed,
    }
    return load_config(args.config, **overrides)


def _load(path) -> list:
    data = load_ndjson(path)
    if not data:
        raise CliError(f"{path}: no instances")
    return data


def _write_lines(path: str | None, lines) -> int:
    count = 0
    out = open(path, "w", encoding="utf-8") if path else sys.stdout
    try:
        for line in lines:
            out.write(line + "\n")
            count += 1
    finally:
        if path:
            out.close()
    return count


# -- commands -----------------------------------------------------------------
def cmd_gen_data(args) -> int:
    _header(args.seed, None)
    _err(f"#   count={args.count} n_range=({args.n_min}, {args.n_max}) noise={args.noise}")
    data = generate(args.seed, args.count, (args.n_min, args.n_max), p_noise=args.noise)
    count = save_ndjson(data, args.out)
    nf = data[0].nf if data else 0
    ef = data[0].ef if data else 0
    print(f"wrote {count} instances to {args.out} (nf={nf}, ef={ef})")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    _header(cfg.seed, cfg)
    train_set = _load(args.data)
    val_set = _load(args.val) if args.val else None

    def progress(rec):
        extra = f" val_krc={rec['val']['krc']['mean']:.4f}" if "val" in rec else ""
        _err(f"epoch {rec['epoch']} loss={rec['train_loss']:.6f}{extra}")

    model, history = train(cfg, train_set, val_set, callback=progress)
    save_checkpoint(args.out_checkpoint, model, model.optimizer, model.epoch)
    hist_path = args.history or str(Path(args.out_checkpoint).with_suffix(".history.json"))
    Path(hist_path).write_text(history.to_json() + "\n")
    print(json.dumps({"checkpoint": str(args.out_checkpoint), "history": hist_path,
                      "best_epoch": history.best_epoch, "best_val_krc": history.best_krc,
                      "fingerprint": history.fingerprint}, sort_keys=True))
    return 0


def _checkpoint(args):
    expected = load_config(args.config) if getattr(args, "config", None) else None
    predictor, meta = load_checkpoint(args.checkpoint, expected)
    seed = meta.get("config", {}).get("seed", args.seed)
    _err(f"# papn {__version__} seed={seed} config={meta['fingerprint']} predictor={meta['predictor']}")
    return predictor


def cmd_eval(args) -> int:
    if args.validate_only:
        _header(args.seed, None)
        data = _load(args.data)
        print(f"ok: {len(data)} valid instances in {args.data}")
        return 0
    if not args.checkpoint:
        raise CliError("eval needs --checkpoint unless --validate-only is given")
    predictor = _checkpoint(args)
    report = evaluate(predictor, _load(args.data), ks=tuple(args.k), name=Path(args.checkpoint).stem)
    print(report.to_json() if args.format == "json" else format_table([report]))
    return 0


def cmd_predict(args) -> int:
    predictor = _checkpoint(args)
    preds = predictor.predict(_load(args.data))
    lines = (json.dumps({"route": p.route, "stepwise_probs": p.stepwise_probs}) for p in preds)
    count = _write_lines(args.out, lines)
    if args.out:
        print(f"wrote {count} predictions to {args.out}")
    return 0


def cmd_baseline(args) -> int:
    _header(args.seed, None)
    _err(f"#   kind={args.kind}")
    data = _load(args.data)
    predictor = BaselinePredictor(args.kind)
    preds = predictor.predict(data)
    if args.out:
        _write_lines(args.out, (json.dumps({"route": p.route}) for p in preds))
    report = evaluate(predictor, data, name=f"{args.kind}-greedy")
    print(report.to_json() if args.format == "json" else format_table([report]))
    return 0


def _sweep_rows(rows, key) -> str:
    reports = []
    for r in rows:
        r["report"].name = key(r)
        reports.append(r["report"])
    return format_table(reports)


def cmd_lr_sweep(args) -> int:
    cfg = _resolve_config(args)
    _header(cfg.seed, cfg)
    try:
        grid = [float(v) for v in args.grid.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"--grid must be comma-separated numbers, got {args.grid!r}") from None
    train_set = _load(args.data)
    val_set = _load(args.val) if args.val else train_set
    rows = lr_sweep(cfg, grid, train_set, val_set)
    print(_sweep_rows(rows, lambda r: f"lr={r['lr']:g}"))
    return 0


def cmd_mix_sweep(args) -> int:
    cfg = _resolve_config(args)
    _header(cfg.seed, cfg)
    train_set = _load(args.data)
    val_set = _load(args.val) if args.val else train_set
    rows = mix_sweep(cfg, train_set, val_set)
    print(_sweep_rows(rows, lambda r: f"{r['aggregation']}/{r['mixing']}"))
    return 0


# -- parser -------------------------------------------------------------------
def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; flags below override it")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--batch-size", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="papn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"papn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    seed_default = None

    p = sub.add_parser("gen-data", help="write a synthetic NDJSON data set")
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--n-min", type=int, default=2)
    p.add_argument("--n-max", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--val")
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--history", help="history JSON path (default: next to the checkpoint)")
    p.add_argument("--seed", type=int, default=seed_default)
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, or only validate a data file")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--config", help="refuse checkpoints trained with a different config")
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.add_argument("--k", type=int, nargs="+", default=[3])
    p.add_argument("--validate-only", action="store_true")
    p.add_argument("--seed", type=int, default=seed_default)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write one predicted route per input line")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.add_argument("--out", help="output NDJSON path (default: stdout)")
    p.add_argument("--seed", type=int, default=seed_default)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("baseline", help="score a greedy baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=KINDS, default="distance")
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.add_argument("--out", help="also write the predicted routes as NDJSON")
    p.add_argument("--seed", type=int, default=seed_default)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("lr-sweep", help="one training run per learning rate")
    p.add_argument("--data", required=True)
    p.add_argument("--val")
    p.add_argument("--grid", required=True, help="comma-separated learning rates")
    p.add_argument("--seed", type=int, default=seed_default)
    _train_flags(p)
    p.set_defaults(func=cmd_lr_sweep)

    p = sub.add_parser("mix-sweep", help="every aggregation x mixing combination")
    p.add_argument("--data", required=True)
    p.add_argument("--val")
    p.add_argument("--seed", type=int, default=seed_default)
    _train_flags(p)
    p.set_defaults(func=cmd_mix_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.seed is None:
            args.seed = _env_seed()
        return args.func(args)
    except FingerprintMismatch as exc:
        _err(f"error: {exc}")
        _err(f"expected fingerprint: {exc.expected}")
        _err(f"found fingerprint:    {exc.found}")
        return EXIT_FINGERPRINT
    except (ParseError, ValidationError, ConfigError, CliError, OSError, ValueError,
            json.JSONDecodeError) as exc:
        _err(f"error: {exc}")
        return EXIT_INPUT
    except TrainingError as exc:
        _err(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
