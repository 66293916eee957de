"""Command-line front end: train, embed, extract, eval, ablate.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every command takes ``--seed`` and echoes it so runs are reproducible.  The
``PROGSTEG_DEVICE`` environment variable overrides the configured device.

The config file is JSON with four sections::

    {
      "model": { ... ModelConfig fields ... },
      "train": { ... TrainConfig fields ... },
      "eval":  { "seed": 0, "msssim_scales": null },
      "paths": { "out": "runs" }
    }

Unknown sections or keys are rejected with the offending name.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np
import torch

from . import payload
from .errors import CapacityExceeded, ConfigMismatch
from .evaluation import ablation_suite, evaluate, report_filename
from .models import ModelConfig, load_checkpoint
from .training import TrainConfig, run_training

_EVAL_KEYS = {"seed", "msssim_scales"}
_PATH_KEYS = {"out"}


class ConfigError(ValueError):
    """Config file is malformed; message carries the line or key."""


def load_config(path) -> dict:
    """Parse and validate the JSON config file into its four sections."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config parse error at line {exc.lineno}: {exc.msg}")
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(raw) - {"model", "train", "eval", "paths"}
    if unknown:
        raise ConfigError(f"unknown config section: {sorted(unknown)[0]!r}")
    for section, keys in (("eval", _EVAL_KEYS), ("paths", _PATH_KEYS)):
        extra = set(raw.get(section, {})) - keys
        if extra:
            raise ConfigError(f"unknown {section} config key: {sorted(extra)[0]!r}")
    try:
        model_cfg = ModelConfig.from_dict(raw.get("model", {}))
        train_cfg = TrainConfig.from_dict(raw.get("train", {}))
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc))
    return {
        "model": model_cfg,
        "train": train_cfg,
        "eval": raw.get("eval", {}),
        "paths": raw.get("paths", {}),
    }


def _apply_device(train_cfg: TrainConfig) -> TrainConfig:
    device = os.environ.get("PROGSTEG_DEVICE")
    if device:
        return dataclasses.replace(train_cfg, device=device)
    return train_cfg


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    train_cfg = _apply_device(cfg["train"])
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    print(f"seed={train_cfg.seed} variant={args.variant}")
    result = run_training(
        train_cfg,
        cfg["model"],
        args.manifest,
        args.out,
        variant=args.variant,
        resume=args.resume,
        max_steps=args.max_steps,
    )
    print(f"best checkpoint: {result['best']}")
    print(f"metrics log: {result['metrics']}")
    return 0


def cmd_embed(args) -> int:
    encoder, _, _, cfg, sidecar = load_checkpoint(args.model)
    cover = payload.load_image(args.cover)
    h, w = cover.shape[1:]
    if h % 8 or w % 8:
        raise ValueError(f"cover size {h}x{w} must be divisible by 8")
    capacity = cfg.payload_depth * h * w
    with open(args.payload, "rb") as fh:
        bits = payload.bytes_to_bits(fh.read())
    if args.bits is not None:
        if args.bits > bits.size:
            raise ValueError(f"payload file holds {bits.size} bits, --bits asked for {args.bits}")
        bits = bits[: args.bits]
    if bits.size > capacity:
        raise CapacityExceeded(
            f"payload is {bits.size} bits but capacity is {capacity} bits "
            f"({cfg.payload_depth} bpp at {h}x{w})"
        )
    used = int(bits.size)
    padded = np.zeros(capacity, dtype=np.uint8)
    padded[:used] = bits
    secret = payload.encode_payload(padded, cfg.payload_depth, h, w)
    with torch.no_grad():
        container = encoder(torch.from_numpy(payload.concat_inputs(cover, secret)))
    payload.save_image(container.numpy(), args.out)
    print(f"seed={args.seed} bits_used={used} capacity={capacity} out={args.out}")
    return 0


def cmd_extract(args) -> int:
    _, decoder, _, cfg, _ = load_checkpoint(args.model)
    stego = payload.load_image(args.stego)
    h, w = stego.shape[1:]
    capacity = cfg.payload_depth * h * w
    if args.bits > capacity:
        raise CapacityExceeded(
            f"requested {args.bits} bits but capacity is {capacity} bits "
            f"({cfg.payload_depth} bpp at {h}x{w})"
        )
    with torch.no_grad():
        logits = decoder(torch.from_numpy(stego))
    bits = payload.flatten_payload(payload.threshold_bits(logits))[: args.bits]
    with open(args.out, "wb") as fh:
        fh.write(payload.bits_to_bytes(bits))
    print(f"seed={args.seed} bits_written={int(bits.size)} out={args.out}")
    return 0


def cmd_eval(args) -> int:
    encoder, decoder, critic, cfg, sidecar = load_checkpoint(args.model)
    record = evaluate(
        encoder,
        decoder,
        critic,
        args.manifest,
        seed=args.seed or 0,
        image_size=tuple(args.image_size) if args.image_size else None,
        msssim_scales=args.msssim_scales,
    )
    os.makedirs(args.report, exist_ok=True)
    name = report_filename(sidecar.get("variant", "clpstnet"), record.dataset, record.depth)
    json_path = os.path.join(args.report, name)
    with open(json_path, "w") as fh:
        fh.write(record.to_json() + "\n")
    csv_path = json_path.replace(".json", ".csv")
    with open(csv_path, "w") as fh:
        keys = ["dataset", "depth", "ssim", "msssim", "psnr", "rmse", "accuracy", "critic_score", "seed"]
        values = [record.to_dict()[k] for k in keys]
        fh.write(",".join(keys) + "\n")
        fh.write(",".join(str(v) for v in values) + "\n")
    print(f"seed={record.seed} report={json_path}")
    print(record.to_json())
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    train_cfg = _apply_device(cfg["train"])
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    variants = [v for v in (args.variants or "").split(",") if v]
    eval_seed = cfg["eval"].get("seed", train_cfg.seed)
    result = ablation_suite(
        variants,
        train_cfg,
        cfg["model"],
        args.manifest,
        args.out,
        eval_seed=eval_seed,
        max_steps=args.max_steps,
    )
    failures = [row["variant"] for row in result["rows"] if row["error"]]
    print(f"seed={train_cfg.seed} table={result['csv']}")
    if failures:
        print(f"failed variants: {', '.join(failures)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="progsteg",
        description="Train and run the progressive multi-scale steganography pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model variant on a manifest")
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--manifest", required=True, help="newline-delimited image paths")
    p.add_argument("--out", required=True, help="output directory for checkpoints and logs")
    p.add_argument("--variant", default="clpstnet")
    p.add_argument("--resume", default=None, help="resume from a saved training state")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None, help="cap total codec updates")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="hide a payload file in a cover image")
    p.add_argument("--model", required=True, help="checkpoint path (expects sidecar JSON)")
    p.add_argument("--cover", required=True)
    p.add_argument("--payload", required=True, help="raw binary payload file")
    p.add_argument("--bits", type=int, default=None, help="use only the first N payload bits")
    p.add_argument("--out", required=True, help="container PNG path")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("extract", help="recover payload bits from a container image")
    p.add_argument("--model", required=True)
    p.add_argument("--stego", required=True)
    p.add_argument("--bits", type=int, required=True, help="number of bits to extract")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("eval", help="metric report over a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True, help="report output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, nargs=2, default=None, metavar=("H", "W"))
    p.add_argument("--msssim-scales", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare registered variants")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--variants", required=True, help="comma-separated variant names")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ConfigMismatch) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
