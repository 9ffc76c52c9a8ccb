"""Command-line surface: gen-data, train, caption, eval, gradcheck.

Exit codes: 0 success, 1 verification failure, 2 usage or config error.
A flat ``key = value`` config file (TOML-style scalars only) can seed any
train flag; explicit flags win.  ``CHA_THREADS`` caps worker threads for
the evaluation decode pool.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

from . import gradcheck as gc
from .dataset import load_split, save_dataset
from .decoder import LSTM_INPUT_MODES
from .features import compute_raw_features, project_features
from .metrics import evaluate_split
from .training import (
    CheckpointError,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
)

USAGE_ERROR = 2
VERIFY_ERROR = 1


class ConfigError(Exception):
    pass


_CONFIG_FIELDS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def parse_config_file(path) -> dict:
    """Flat key = value pairs; unknown keys are rejected."""
    values: dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _CONFIG_FIELDS:
                raise ConfigError(f"{path}:{line_no}: unknown config key {key!r}")
            values[key] = _coerce(key, value.strip('"').strip("'"), path, line_no)
    return values


def _coerce(key: str, value: str, path, line_no):
    if key == "lstm_input":
        if value not in LSTM_INPUT_MODES:
            raise ConfigError(
                f"{path}:{line_no}: lstm_input must be one of {LSTM_INPUT_MODES}"
            )
        return value
    try:
        if key in ("patch_scale", "lr"):
            return float(value)
        return int(value)
    except ValueError as exc:
        raise ConfigError(f"{path}:{line_no}: bad value for {key}: {value!r}") from exc


def worker_count() -> int:
    env = os.environ.get("CHA_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"CHA_THREADS must be an integer, got {env!r}") from exc
    return 1


def _add_train_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--d", dest="feature_dim", type=int)
    parser.add_argument("--hidden", dest="hidden_dim", type=int)
    parser.add_argument("--attn", dest="attn_dim", type=int)
    parser.add_argument("--out-hidden", dest="out_hidden_dim", type=int)
    parser.add_argument("--n", dest="n_objects", type=int)
    parser.add_argument("--k", dest="patch_scale", type=float)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--lstm-input", dest="lstm_input", choices=LSTM_INPUT_MODES)
    parser.add_argument("--beam", type=int)
    parser.add_argument("--max-len", dest="max_len", type=int)


def effective_config(args) -> TrainConfig:
    values = {}
    if args.config:
        values.update(parse_config_file(args.config))
    for name in _CONFIG_FIELDS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    return TrainConfig(**values)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hiercap")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate the synthetic corpus")
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--count", type=int, default=200)
    gen.add_argument("--image-size", type=int, default=64)
    gen.add_argument("--force", action="store_true")

    tr = sub.add_parser("train", help="train a captioner")
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True, help="checkpoint path")
    tr.add_argument("--log", help="CSV log path (default: <out>.csv)")
    _add_train_config_flags(tr)

    cap = sub.add_parser("caption", help="caption one image from a dataset")
    cap.add_argument("--ckpt", required=True)
    cap.add_argument("--data", required=True)
    cap.add_argument("--image", required=True, help="image id")
    cap.add_argument("--split", default=None, help="restrict lookup to one split")
    cap.add_argument("--beam", type=int, default=None)
    cap.add_argument("--max-len", dest="max_len", type=int, default=None)
    cap.add_argument("--dump-attention", help="write per-step attention JSONL here")

    ev = sub.add_parser("eval", help="score a checkpoint on a split")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", default="test")
    ev.add_argument("--beam", type=int, default=None)
    ev.add_argument("--max-len", dest="max_len", type=int, default=None)
    ev.add_argument("--json", dest="json_out", help="write the full report here")

    gcp = sub.add_parser("gradcheck", help="finite-difference verification")
    gcp.add_argument("--trials", type=int, default=100)
    gcp.add_argument("--seed", type=int, default=0)
    return parser


def cmd_gen_data(args) -> int:
    out = args.out
    if os.path.isdir(out) and os.listdir(out) and not args.force:
        print(f"error: {out} exists and is not empty (use --force)", file=sys.stderr)
        return USAGE_ERROR
    try:
        manifest = save_dataset(out, args.seed, args.count, args.image_size)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    print(
        f"wrote {sum(manifest.counts.values())} samples to {out} "
        f"(train {manifest.counts['train']}, val {manifest.counts['val']}, "
        f"test {manifest.counts['test']})"
    )
    return 0


def cmd_train(args) -> int:
    config = effective_config(args)
    print("effective config:")
    for field in dataclasses.fields(config):
        print(f"  {field.name} = {getattr(config, field.name)}")
    train_samples = load_split(args.data, "train")
    val_samples = load_split(args.data, "val")
    ckpt, logs = train(config, train_samples, val_samples)
    save_checkpoint(ckpt, args.out)
    log_path = args.log or args.out + ".csv"
    with open(log_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_bleu4"])
        for row in logs:
            writer.writerow([row.epoch, repr(row.train_loss), repr(row.val_bleu4)])
    print(f"saved checkpoint to {args.out} (best epoch {ckpt.epoch}); log in {log_path}")
    return 0


def _find_sample(data_dir, image_id, split=None):
    splits = [split] if split else ["train", "val", "test"]
    for name in splits:
        for sample in load_split(data_dir, name):
            if sample.image_id == image_id:
                return sample
    raise ConfigError(f"image id {image_id!r} not found in {data_dir}")


def cmd_caption(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    params = ckpt.build_model()
    config = ckpt.config
    beam = args.beam if args.beam is not None else config.beam
    max_len = args.max_len if args.max_len is not None else config.max_len
    sample = _find_sample(args.data, args.image, args.split)
    raw = compute_raw_features(sample, config.n_objects, config.patch_scale)
    stack = project_features(raw, params)
    from .decoder import beam_decode, greedy_decode

    if args.dump_attention:
        tokens, records = greedy_decode(
            stack, params, max_len, record_attention=True, vocab=ckpt.vocab
        )
        with open(args.dump_attention, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec) + "\n")
        if beam != 1:
            tokens = beam_decode(stack, params, beam, max_len)
    elif beam == 1:
        tokens = greedy_decode(stack, params, max_len)
    else:
        tokens = beam_decode(stack, params, beam, max_len)
    print(" ".join(ckpt.vocab.decode(tokens)))
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    params = ckpt.build_model()
    config = ckpt.config
    beam = args.beam if args.beam is not None else config.beam
    max_len = args.max_len if args.max_len is not None else config.max_len
    samples = load_split(args.data, args.split)
    report = evaluate_split(
        params,
        ckpt.vocab,
        samples,
        beam=beam,
        max_len=max_len,
        n_objects=config.n_objects,
        patch_scale=config.patch_scale,
        workers=worker_count(),
    )
    print(report.table())
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2)
            fh.write("\n")
    return 0


def cmd_gradcheck(args) -> int:
    results = gc.run_op_suite(trials=args.trials, seed=args.seed)
    results += gc.run_decoder_suite(seed=args.seed)
    failed = False
    for res in results:
        status = "ok" if res.passed else "FAIL"
        print(
            f"{status:4} {res.name:24} max rel error {res.max_rel_error:.3e} "
            f"({res.cases} cases)"
        )
        failed = failed or not res.passed
    return VERIFY_ERROR if failed else 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "gen-data": cmd_gen_data,
        "train": cmd_train,
        "caption": cmd_caption,
        "eval": cmd_eval,
        "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
