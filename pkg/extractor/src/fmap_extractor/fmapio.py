"""Writers for the pipeline's on-disk formats.

Implemented here against the documented byte layouts (not by importing the
consumer library), so the files are the only coupling point.

FMAP: magic "FMAP", version u16, backbone tag u8, (c, h, w) u32 x3,
count u32, then records of (id length u16, UTF-8 id, c*h*w float32).
All integers and floats little-endian. Manifest and pose files are CSV:
`image_id[,x,y]` and `image_id,x,y`.
"""

from __future__ import annotations

import csv
import struct
from typing import Iterable, Sequence

import numpy as np

FMAP_MAGIC = b"FMAP"
FORMAT_VERSION = 1
BACKBONE_TAGS = {"vgg16": 0, "alexnet": 1, "custom": 2}


class FmapWriter:
    """Streams feature-map records to disk with a fixed header."""

    def __init__(self, path, backbone: str, dims: tuple[int, int, int], count: int):
        self.dims = tuple(int(d) for d in dims)
        self.count = int(count)
        self.written = 0
        self._ids: set[str] = set()
        self._fh = open(path, "wb")
        self._fh.write(struct.pack("<4sH", FMAP_MAGIC, FORMAT_VERSION))
        self._fh.write(struct.pack("<B", BACKBONE_TAGS[backbone]))
        self._fh.write(struct.pack("<3I", *self.dims))
        self._fh.write(struct.pack("<I", self.count))

    def add(self, image_id: str, feature_map: np.ndarray) -> None:
        if image_id in self._ids:
            raise ValueError(f"duplicate image id {image_id!r}")
        if tuple(feature_map.shape) != self.dims:
            raise ValueError(
                f"feature map for {image_id!r} has dims {feature_map.shape}, "
                f"expected {self.dims}"
            )
        raw_id = image_id.encode("utf-8")
        self._fh.write(struct.pack("<H", len(raw_id)))
        self._fh.write(raw_id)
        self._fh.write(np.ascontiguousarray(feature_map, dtype="<f4").tobytes())
        self._ids.add(image_id)
        self.written += 1

    def close(self) -> None:
        self._fh.close()
        if self.written != self.count:
            raise ValueError(
                f"wrote {self.written} records but the header promised {self.count}"
            )

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self._fh.close()
        return False


def write_manifest_csv(path, ids: Sequence[str], poses=None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for i, image_id in enumerate(ids):
            if poses is None:
                writer.writerow([image_id])
            else:
                x, y = poses[i]
                writer.writerow([image_id, repr(float(x)), repr(float(y))])


def write_pose_csv(path, rows: Iterable[tuple[str, float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for image_id, x, y in rows:
            writer.writerow([image_id, repr(float(x)), repr(float(y))])
