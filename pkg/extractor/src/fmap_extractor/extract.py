"""Run a backbone over an image folder and export conv5 pre-ReLU maps."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from PIL import Image

from .backbones import FEATURE_DIMS, load_backbone, preprocess
from .fmapio import FmapWriter
from .manifest import list_images, prepare_manifest

CANONICAL_RESOLUTION = (640, 480)  # width, height


@dataclass
class ExtractionJob:
    image_dir: str
    backbone: str  # 'vgg16' | 'alexnet'
    out_path: str
    weights: str = "pretrained"  # 'pretrained' | 'none' | state_dict path
    resolution: tuple[int, int] = CANONICAL_RESOLUTION  # (width, height)
    batch_size: int = 4
    pose_source: Optional[str] = None
    pose_format: str = "xy"

    def __post_init__(self):
        if self.backbone not in FEATURE_DIMS:
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if tuple(self.resolution) != CANONICAL_RESOLUTION:
            warnings.warn(
                f"resolution {self.resolution} is non-canonical; feature map "
                "dims will not match the published geometry"
            )


def _load_image(path: Path, resolution) -> Optional[torch.Tensor]:
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB").resize(resolution, Image.BILINEAR)
    except Exception as exc:
        warnings.warn(f"skipping undecodable image {path.name}: {exc}")
        return None
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1)


def extract(job: ExtractionJob) -> list[str]:
    """Write one FMAP record per decodable image; returns the record ids.

    Record order (and the manifest, when a pose source is configured)
    follows the lexicographic image order. Fails fast when weights cannot
    be loaded.
    """
    model = load_backbone(job.backbone, job.weights)
    paths = list_images(job.image_dir)

    entries = []
    for path in paths:
        tensor = _load_image(path, tuple(job.resolution))
        if tensor is not None:
            entries.append((path.stem, tensor))
    if not entries:
        raise ValueError(f"no decodable images in {job.image_dir}")

    width, height = job.resolution
    with torch.inference_mode():
        probe = model(preprocess(torch.zeros(1, 3, height, width), job.backbone))
    dims = tuple(probe.shape[1:])

    ids = []
    with FmapWriter(job.out_path, job.backbone, dims, len(entries)) as writer:
        for start in range(0, len(entries), job.batch_size):
            chunk = entries[start : start + job.batch_size]
            batch = torch.stack([t for _, t in chunk])
            with torch.inference_mode():
                feats = model(preprocess(batch, job.backbone))
            feats = feats.numpy().astype(np.float32)
            for (image_id, _), fmap in zip(chunk, feats):
                writer.add(image_id, fmap)
                ids.append(image_id)

    if job.pose_source is not None:
        stem = Path(job.out_path)
        prepare_manifest(
            job.image_dir,
            stem.with_suffix(".manifest.csv"),
            pose_source=job.pose_source,
            pose_format=job.pose_format,
            out_poses=stem.with_suffix(".poses.csv"),
        )
    return ids
