"""Metric reports over held-out manifests and the ablation comparison table.

Evaluation is read-only over a frozen model: each manifest image gets a
seeded secret, is embedded and decoded, and the cover/container pair is
scored.  Per-image seeds derive from the report seed and the image index, so
results do not depend on evaluation order.  Reports serialize to one JSON
object (and CSV rows) with the metric columns in the order SSIM, MSSSIM,
PSNR, RMSE, Accuracy, critic score.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from dataclasses import dataclass

import numpy as np
import torch

from . import losses, payload
from .errors import CardinalityMismatch, EmptyDataset
from .losses import MsSsimParams
from .training import (
    TrainConfig,
    load_manifest,
    pick_msssim_scales,
    run_training,
)
from .models import ModelConfig, load_checkpoint

__all__ = [
    "MetricsRecord",
    "evaluate",
    "steganalysis_report",
    "ablation_suite",
    "report_filename",
    "METRIC_COLUMNS",
]

METRIC_COLUMNS = ("ssim", "msssim", "psnr", "rmse", "accuracy")
_COLUMN_LABELS = {"ssim": "SSIM", "msssim": "MSSSIM", "psnr": "PSNR", "rmse": "RMSE", "accuracy": "Accuracy"}


@dataclass(frozen=True)
class MetricsRecord:
    """Dataset-mean quality and recovery metrics of one evaluation run."""

    dataset: str
    depth: int
    ssim: float
    msssim: float
    psnr: float
    rmse: float
    accuracy: float
    critic_score: float
    seed: int
    msssim_scales: int
    images: int

    def to_dict(self) -> dict:
        d = {
            "dataset": self.dataset,
            "depth": self.depth,
            "ssim": self.ssim,
            "msssim": self.msssim,
            "psnr": self.psnr if math.isfinite(self.psnr) else "inf",
            "rmse": self.rmse,
            "accuracy": self.accuracy,
            "critic_score": self.critic_score,
            "seed": self.seed,
            "msssim_scales": self.msssim_scales,
            "images": self.images,
        }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsRecord":
        kwargs = dict(data)
        if kwargs.get("psnr") == "inf":
            kwargs["psnr"] = float("inf")
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> "MetricsRecord":
        return cls.from_dict(json.loads(text))


def report_filename(variant: str, dataset: str, depth: int) -> str:
    return f"{variant}_{dataset}_{depth}bpp.json"


def _dataset_id(manifest_path) -> str:
    stem = os.path.basename(str(manifest_path))
    return stem.rsplit(".", 1)[0] if "." in stem else stem


def evaluate(
    encoder,
    decoder,
    critic,
    manifest_path,
    seed: int = 0,
    image_size: tuple[int, int] | None = None,
    msssim_scales: int | None = None,
    dataset_id: str | None = None,
    bypass_encoder: bool = False,
) -> MetricsRecord:
    """Embed a seeded secret into every manifest image and score the result.

    ``bypass_encoder`` is a sanity mode that uses the cover itself as the
    container (infinite PSNR, chance-level accuracy expected).  Results are
    deterministic given (weights, manifest, seed).
    """
    paths = load_manifest(manifest_path)
    depth = encoder.cfg.payload_depth
    if decoder.cfg.payload_depth != depth:
        raise ValueError(
            f"encoder depth {depth} != decoder depth {decoder.cfg.payload_depth}"
        )
    encoder.eval()
    decoder.eval()
    critic.eval()
    device = next(encoder.parameters()).device

    sums = {"ssim": 0.0, "msssim": 0.0, "psnr": 0.0, "rmse": 0.0, "accuracy": 0.0, "critic": 0.0}
    inf_psnr = False
    scales = msssim_scales
    with torch.no_grad():
        for idx, path in enumerate(paths):
            cover_np = payload.load_image(path, target=image_size)
            h, w = cover_np.shape[1:]
            if scales is None:
                scales = msssim_scales or pick_msssim_scales(h, w)
            rng = np.random.default_rng([seed, idx])
            secret_np = payload.random_secret(depth, h, w, rng)
            cover = torch.from_numpy(cover_np).to(device)
            secret = torch.from_numpy(secret_np).to(device)
            if bypass_encoder:
                container = cover
            else:
                container = encoder(torch.cat([cover, secret], dim=0))
            logits = decoder(container)
            recovered = payload.threshold_bits(logits)

            # metrics in double precision so independent recomputation agrees
            cover64, container64 = cover.double(), container.double()
            sums["ssim"] += float(losses.ssim(cover64, container64))
            sums["msssim"] += float(
                losses.msssim(cover64, container64, MsSsimParams(scales=scales))
            )
            p = losses.psnr(cover64, container64)
            if math.isinf(p):
                inf_psnr = True
            else:
                sums["psnr"] += p
            sums["rmse"] += float(losses.rmse(cover64, container64))
            sums["accuracy"] += losses.decode_accuracy(secret_np, recovered)
            sums["critic"] += float(critic.score(container))

    n = len(paths)
    return MetricsRecord(
        dataset=dataset_id or _dataset_id(manifest_path),
        depth=depth,
        ssim=sums["ssim"] / n,
        msssim=sums["msssim"] / n,
        psnr=float("inf") if inf_psnr else sums["psnr"] / n,
        rmse=sums["rmse"] / n,
        accuracy=sums["accuracy"] / n,
        critic_score=sums["critic"] / n,
        seed=seed,
        msssim_scales=scales or 1,
        images=n,
    )


def steganalysis_report(critic, cover_manifest, container_dir, image_size=None) -> dict:
    """Mean critic score per class and detection accuracy at threshold 0.5.

    Container images are the files of ``container_dir`` in sorted order; the
    two sets must have equal cardinality.
    """
    cover_paths = load_manifest(cover_manifest)
    container_paths = sorted(
        os.path.join(container_dir, name)
        for name in os.listdir(container_dir)
        if name.lower().endswith((".png", ".jpg", ".jpeg"))
    )
    if len(cover_paths) != len(container_paths):
        raise CardinalityMismatch(
            f"{len(cover_paths)} covers vs {len(container_paths)} containers"
        )
    if not container_paths:
        raise EmptyDataset(f"no images found under {container_dir}")

    critic.eval()
    device = next(critic.parameters()).device

    def mean_scores(paths):
        scores = []
        with torch.no_grad():
            for p in paths:
                img = torch.from_numpy(payload.load_image(p, target=image_size)).to(device)
                scores.append(float(critic.score(img)))
        return scores

    cover_scores = mean_scores(cover_paths)
    container_scores = mean_scores(container_paths)
    correct = sum(1 for s in cover_scores if s < 0.5) + sum(
        1 for s in container_scores if s >= 0.5
    )
    total = len(cover_scores) + len(container_scores)
    return {
        "cover_mean_score": sum(cover_scores) / len(cover_scores),
        "container_mean_score": sum(container_scores) / len(container_scores),
        "detection_accuracy": correct / total,
        "images_per_class": len(cover_scores),
    }


def ablation_suite(
    variants,
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    manifest_path,
    out_dir,
    eval_seed: int = 0,
    max_steps: int | None = None,
) -> dict:
    """Train every variant under one budget and tabulate their metrics.

    Rows are variants, columns the standard metric order.  A variant that
    fails is recorded with its error and the suite continues.  Writes
    ``ablation.csv`` and ``ablation.json`` under ``out_dir``.
    """
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for variant in variants:
        try:
            run_dir = os.path.join(out_dir, variant)
            result = run_training(
                train_cfg, model_cfg, manifest_path, run_dir, variant=variant, max_steps=max_steps
            )
            encoder, decoder, critic, _, _ = load_checkpoint(result["best"])
            record = evaluate(
                encoder,
                decoder,
                critic,
                manifest_path,
                seed=eval_seed,
                image_size=train_cfg.image_size,
                msssim_scales=train_cfg.msssim_scales,
            )
            rows.append({"variant": variant, "error": None, "record": record})
        except Exception as exc:  # noqa: BLE001 - suite must survive per-variant failure
            rows.append({"variant": variant, "error": f"{type(exc).__name__}: {exc}", "record": None})

    csv_path = os.path.join(out_dir, "ablation.csv")
    json_path = os.path.join(out_dir, "ablation.json")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", *(_COLUMN_LABELS[c] for c in METRIC_COLUMNS), "error"])
        for row in rows:
            if row["record"] is None:
                writer.writerow([row["variant"], *([""] * len(METRIC_COLUMNS)), row["error"]])
            else:
                rec = row["record"]
                values = [getattr(rec, c) for c in METRIC_COLUMNS]
                values = ["inf" if isinstance(v, float) and math.isinf(v) else v for v in values]
                writer.writerow([row["variant"], *values, ""])
    payload_json = {
        "seed": train_cfg.seed,
        "eval_seed": eval_seed,
        "columns": list(METRIC_COLUMNS),
        "rows": [
            {
                "variant": row["variant"],
                "error": row["error"],
                "metrics": row["record"].to_dict() if row["record"] else None,
            }
            for row in rows
        ],
    }
    with open(json_path, "w") as fh:
        json.dump(payload_json, fh, indent=2)
    return {"csv": csv_path, "json": json_path, "rows": rows}
