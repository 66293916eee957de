from __future__ import annotations

import json
import os

import numpy as np
import pytest
import torch

from progsteg.models import ModelConfig
from progsteg.training import TrainConfig

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DESK_CONFIG_PATH = os.path.join(REPO_ROOT, "configs", "desk-32.json")


def tiny_model_config(depth: int = 1, **overrides) -> ModelConfig:
    """Smallest config that still exercises every block type."""
    kwargs = dict(
        payload_depth=depth,
        base_channels=4,
        growth=4,
        stage_channels=(8, 8, 8),
        decoder_channels=(6, 8, 10, 12),
        dropout_rate=0.0,
    )
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def tiny_train_config(**overrides) -> TrainConfig:
    kwargs = dict(
        batch_size=4,
        image_size=(32, 32),
        msssim_scales=2,
        seed=11,
        max_epochs=1,
    )
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


def smooth_covers(hw: int, n: int, seed: int = 123, span: float = 0.25) -> torch.Tensor:
    """Smooth random fields centered on mid-gray; easy to reconstruct."""
    g = torch.Generator().manual_seed(seed)
    base = torch.rand(n, 3, 8, 8, generator=g) - 0.5
    up = torch.nn.functional.interpolate(base, size=(hw, hw), mode="bilinear", align_corners=False)
    return (0.5 + 2 * span * up).clamp(0.0, 1.0)


def write_cover_pngs(directory, covers: torch.Tensor) -> list[str]:
    from progsteg.payload import save_image

    paths = []
    os.makedirs(directory, exist_ok=True)
    for i, cover in enumerate(covers):
        path = os.path.join(directory, f"cover_{i:02d}.png")
        save_image(cover.numpy(), path)
        paths.append(path)
    return paths


def write_manifest(path, image_paths) -> str:
    with open(path, "w") as fh:
        fh.write("\n".join(str(p) for p in image_paths) + "\n")
    return str(path)


@pytest.fixture(scope="session")
def desk_config() -> dict:
    """The committed desk-scale config used by the training proxies."""
    with open(DESK_CONFIG_PATH) as fh:
        raw = json.load(fh)
    return {
        "model": ModelConfig.from_dict(raw["model"]),
        "train": TrainConfig.from_dict(raw["train"]),
        "eval": raw.get("eval", {}),
    }


@pytest.fixture(scope="session")
def cover_dir(tmp_path_factory):
    """Eight 32x32 synthetic covers on disk plus their manifest."""
    root = tmp_path_factory.mktemp("covers")
    covers = smooth_covers(32, 8)
    paths = write_cover_pngs(root, covers)
    manifest = write_manifest(root / "manifest.txt", paths)
    return {"dir": root, "paths": paths, "manifest": manifest, "covers": covers}


@pytest.fixture(autouse=True)
def _fixed_seed():
    torch.manual_seed(0)
    np.random.seed(0)
