"""Dataset manifest and pose preparation.

The manifest fixes image membership and ordering (lexicographic by file
stem), which downstream frame-window ground truth relies on. GPS pose
sources are projected to a local metric frame anchored at the first fix.
"""

from __future__ import annotations

import csv
import math
import warnings
from pathlib import Path

from .fmapio import write_manifest_csv, write_pose_csv

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".ppm", ".tif", ".tiff"}

EARTH_RADIUS_M = 6371000.0


def list_images(image_dir) -> list[Path]:
    """Image files under ``image_dir``, ordered lexicographically by name."""
    image_dir = Path(image_dir)
    if not image_dir.is_dir():
        raise FileNotFoundError(f"image directory {image_dir} does not exist")
    return sorted(
        (p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: p.name,
    )


def gps_to_local_xy(lat_lon: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Project GPS degrees to planar meters around the first fix.

    Equirectangular local tangent approximation; sub-centimeter error at
    place-recognition scales (tens of meters).
    """
    lat0, lon0 = lat_lon[0]
    cos0 = math.cos(math.radians(lat0))
    out = []
    for lat, lon in lat_lon:
        x = EARTH_RADIUS_M * math.radians(lon - lon0) * cos0
        y = EARTH_RADIUS_M * math.radians(lat - lat0)
        out.append((x, y))
    return out


def read_pose_source(path, pose_format: str = "xy") -> dict[str, tuple[float, float]]:
    """Parse `image_id,a,b` rows; `a,b` are (x, y) meters or (lat, lon)."""
    rows: list[tuple[str, float, float]] = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 3:
                raise ValueError(f"pose source line {lineno}: expected id and 2 values")
            rows.append((row[0].strip(), float(row[1]), float(row[2])))
    if pose_format == "gps":
        xy = gps_to_local_xy([(a, b) for _, a, b in rows])
        return {image_id: pos for (image_id, _, _), pos in zip(rows, xy)}
    if pose_format != "xy":
        raise ValueError(f"unknown pose format {pose_format!r}")
    return {image_id: (a, b) for image_id, a, b in rows}


def prepare_manifest(
    image_dir,
    out_manifest,
    pose_source=None,
    pose_format: str = "xy",
    out_poses=None,
):
    """Write a manifest CSV (and pose CSV when a pose source is given).

    Returns the ordered image ids. Every image must have a pose when a
    source is supplied; extra pose rows are ignored.
    """
    ids = [p.stem for p in list_images(image_dir)]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ValueError(f"duplicate image stems in {image_dir}: {dupes}")

    poses = None
    if pose_source is not None:
        if not Path(pose_source).exists():
            warnings.warn(f"pose source {pose_source} missing; writing manifest only")
        else:
            table = read_pose_source(pose_source, pose_format)
            missing = [i for i in ids if i not in table]
            if missing:
                raise ValueError(f"images without pose entries: {missing}")
            poses = [table[i] for i in ids]

    write_manifest_csv(out_manifest, ids, poses)
    if poses is not None and out_poses is not None:
        write_pose_csv(out_poses, [(i, x, y) for i, (x, y) in zip(ids, poses)])
    return ids
