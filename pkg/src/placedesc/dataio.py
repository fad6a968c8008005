"""Binary containers and dataset plumbing.

Two little-endian formats carry the pipeline's tensors between tools:

* FMAP - backbone feature maps. Header: magic "FMAP", version u16, backbone
  tag u8, (c, h, w) u32 x3, count u32. Records: id length u16, UTF-8 id,
  c*h*w float32 payload.
* DVEC - flattened unit descriptors. Header: magic "DVEC", version u16,
  dim u32, count u32, flatten-order tag u8, model checksum 8 bytes.
  Records: id length u16, UTF-8 id, dim float32 payload.

Ground truth is a query -> valid-reference relation built by one of three
protocols: a metric radius over planar poses, a frame window over aligned
traverses, or an explicit pair list.
"""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, FormatError

__all__ = [
    "FeatureMapSet",
    "DescriptorSet",
    "GroundTruth",
    "PoseTable",
    "write_fmap",
    "read_fmap",
    "write_dvec",
    "read_dvec",
    "read_manifest",
    "write_manifest",
    "read_pose_csv",
    "write_pose_csv",
    "build_ground_truth_radius",
    "build_ground_truth_frames",
    "load_pair_list",
    "write_ground_truth_csv",
    "FLATTEN_CHW",
    "BACKBONE_TAGS",
]

FMAP_MAGIC = b"FMAP"
DVEC_MAGIC = b"DVEC"
FORMAT_VERSION = 1

BACKBONE_TAGS = {"vgg16": 0, "alexnet": 1, "custom": 2}
_TAG_NAMES = {v: k for k, v in BACKBONE_TAGS.items()}

# Flatten-order tags for DVEC: channel-major, then row-major spatial.
FLATTEN_CHW = 1

UNIT_NORM_READ_TOL = 1e-4
ZERO_CHECKSUM = b"\x00" * 8


def _check_unique_ids(ids: Sequence[str]):
    seen = set()
    for i in ids:
        if i in seen:
            raise FormatError(f"duplicate image id {i!r}")
        seen.add(i)


@dataclass
class FeatureMapSet:
    """A keyed collection of equally-shaped feature maps."""

    backbone: str
    ids: list[str]
    maps: np.ndarray  # (count, c, h, w) float32

    def __post_init__(self):
        if self.backbone not in BACKBONE_TAGS:
            raise FormatError(f"unknown backbone tag {self.backbone!r}")
        self.maps = np.asarray(self.maps, dtype=np.float32)
        if self.maps.ndim != 4:
            raise FormatError(f"maps must be (count, c, h, w), got {self.maps.shape}")
        if len(self.ids) != self.maps.shape[0]:
            raise FormatError(
                f"{len(self.ids)} ids for {self.maps.shape[0]} feature maps"
            )
        _check_unique_ids(self.ids)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.maps.shape[1:])


@dataclass
class DescriptorSet:
    """A keyed collection of unit-norm descriptor vectors."""

    ids: list[str]
    vectors: np.ndarray  # (count, dim) float32
    flatten_order: int = FLATTEN_CHW
    model_checksum: bytes = ZERO_CHECKSUM

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2 or self.vectors.shape[1] < 1:
            raise FormatError(
                f"vectors must be (count, dim) with dim > 0, got {self.vectors.shape}"
            )
        if len(self.ids) != self.vectors.shape[0]:
            raise FormatError(f"{len(self.ids)} ids for {self.vectors.shape[0]} vectors")
        if len(self.model_checksum) != 8:
            raise FormatError("model checksum must be 8 bytes")
        _check_unique_ids(self.ids)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def index_of(self) -> dict[str, int]:
        return {i: k for k, i in enumerate(self.ids)}


@dataclass
class GroundTruth:
    """Query id -> set of valid reference ids, with the protocol that built it."""

    protocol: str  # 'radius' | 'frame_window' | 'pair_list'
    mapping: dict[str, set[str]]
    radius_m: Optional[float] = None
    window: Optional[int] = None

    def __post_init__(self):
        if self.protocol not in ("radius", "frame_window", "pair_list"):
            raise DataError(f"unknown ground-truth protocol {self.protocol!r}")
        if self.protocol == "radius" and (self.radius_m is None or self.radius_m <= 0):
            raise DataError("radius protocol requires radius_m > 0")
        if self.protocol == "frame_window" and (self.window is None or self.window < 0):
            raise DataError("frame protocol requires window >= 0")


@dataclass
class PoseTable:
    """Planar poses in meters, keyed by image id."""

    ids: list[str]
    xy: np.ndarray  # (count, 2) float64

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        if len(self.ids) != self.xy.shape[0]:
            raise DataError(f"{len(self.ids)} ids for {self.xy.shape[0]} poses")
        if not np.all(np.isfinite(self.xy)):
            raise DataError("poses must be finite")
        _check_unique_ids(self.ids)

    def select(self, ids: Sequence[str]) -> "PoseTable":
        index = {i: k for k, i in enumerate(self.ids)}
        missing = [i for i in ids if i not in index]
        if missing:
            raise DataError(f"ids missing pose entries: {missing}")
        rows = [index[i] for i in ids]
        return PoseTable(list(ids), self.xy[rows])


# ---------------------------------------------------------------------------
# FMAP / DVEC binary IO
# ---------------------------------------------------------------------------


class _Cursor:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int, context: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"truncated {self.what}: {context} needs {n} bytes at offset "
                f"{self.pos}, file has {len(self.data)}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, context: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), context))


def _write_records(out, ids, payloads):
    for image_id, payload in zip(ids, payloads):
        raw_id = image_id.encode("utf-8")
        if len(raw_id) > 0xFFFF:
            raise FormatError(f"image id too long: {image_id[:32]!r}...")
        out.write(struct.pack("<H", len(raw_id)))
        out.write(raw_id)
        out.write(payload.astype("<f4", copy=False).tobytes())


def _read_records(cur: _Cursor, count: int, floats_per_record: int):
    ids, payloads = [], []
    for rec in range(count):
        (id_len,) = cur.unpack("<H", f"record {rec} id length")
        raw_id = cur.take(id_len, f"record {rec} id")
        try:
            image_id = raw_id.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"record {rec}: id is not valid UTF-8") from exc
        raw = cur.take(4 * floats_per_record, f"record {rec} payload")
        ids.append(image_id)
        payloads.append(np.frombuffer(raw, dtype="<f4").copy())
    if cur.pos != len(cur.data):
        raise FormatError(
            f"{len(cur.data) - cur.pos} trailing bytes after the last record"
        )
    return ids, payloads


def write_fmap(path, fmap_set: FeatureMapSet) -> None:
    """Serialize a FeatureMapSet; the round trip is bit-exact."""
    c, h, w = fmap_set.dims
    with open(path, "wb") as out:
        out.write(struct.pack("<4sH", FMAP_MAGIC, FORMAT_VERSION))
        out.write(struct.pack("<B", BACKBONE_TAGS[fmap_set.backbone]))
        out.write(struct.pack("<3I", c, h, w))
        out.write(struct.pack("<I", len(fmap_set.ids)))
        flat = fmap_set.maps.reshape(len(fmap_set.ids), c * h * w)
        _write_records(out, fmap_set.ids, flat)


def read_fmap(path) -> FeatureMapSet:
    cur = _Cursor(Path(path).read_bytes(), "FMAP file")
    magic, version = cur.unpack("<4sH", "header")
    if magic != FMAP_MAGIC:
        raise FormatError(f"bad FMAP magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported FMAP version {version}")
    (backbone_tag,) = cur.unpack("<B", "backbone tag")
    if backbone_tag not in _TAG_NAMES:
        raise FormatError(f"unknown backbone tag {backbone_tag}")
    c, h, w = cur.unpack("<3I", "dims")
    if min(c, h, w) < 1:
        raise FormatError(f"non-positive dims ({c}, {h}, {w})")
    (count,) = cur.unpack("<I", "count")
    ids, payloads = _read_records(cur, count, c * h * w)
    maps = (
        np.stack(payloads).reshape(count, c, h, w)
        if count
        else np.zeros((0, c, h, w), np.float32)
    )
    return FeatureMapSet(_TAG_NAMES[backbone_tag], ids, maps)


def write_dvec(path, dset: DescriptorSet) -> None:
    """Serialize a DescriptorSet; vectors must be unit-norm within 1e-5."""
    norms = np.linalg.norm(dset.vectors.astype(np.float64), axis=1)
    bad = np.nonzero(np.abs(norms - 1.0) > 1e-5)[0]
    if bad.size:
        raise FormatError(
            f"descriptor {dset.ids[int(bad[0])]!r} has norm {norms[int(bad[0])]:.6f}, "
            "expected unit"
        )
    with open(path, "wb") as out:
        out.write(struct.pack("<4sH", DVEC_MAGIC, FORMAT_VERSION))
        out.write(struct.pack("<II", dset.dim, len(dset.ids)))
        out.write(struct.pack("<B", dset.flatten_order))
        out.write(dset.model_checksum)
        _write_records(out, dset.ids, dset.vectors)


def read_dvec(path) -> DescriptorSet:
    cur = _Cursor(Path(path).read_bytes(), "DVEC file")
    magic, version = cur.unpack("<4sH", "header")
    if magic != DVEC_MAGIC:
        raise FormatError(f"bad DVEC magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported DVEC version {version}")
    dim, count = cur.unpack("<II", "dim/count")
    if dim < 1:
        raise FormatError(f"non-positive descriptor dim {dim}")
    (flatten_order,) = cur.unpack("<B", "flatten order")
    checksum = cur.take(8, "model checksum")
    ids, payloads = _read_records(cur, count, dim)
    vectors = np.stack(payloads) if count else np.zeros((0, dim), np.float32)
    norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
    bad = np.nonzero(np.abs(norms - 1.0) > UNIT_NORM_READ_TOL)[0]
    if bad.size:
        raise FormatError(
            f"descriptor {ids[int(bad[0])]!r} has norm {norms[int(bad[0])]:.6f}, "
            "not unit within tolerance"
        )
    return DescriptorSet(ids, vectors, flatten_order, checksum)


# ---------------------------------------------------------------------------
# Manifests and poses (CSV)
# ---------------------------------------------------------------------------


def read_manifest(path):
    """Parse a manifest CSV: image_id[,x,y[,timestamp]] per row.

    Row order defines frame indices. Returns (ids, PoseTable or None);
    poses must be present on all rows or none.
    """
    ids: list[str] = []
    xs, ys = [], []
    with_pose = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            image_id = row[0].strip()
            if not image_id:
                raise FormatError(f"manifest line {lineno}: empty image id")
            has_pose = len(row) >= 3
            if with_pose is None:
                with_pose = has_pose
            elif with_pose != has_pose:
                raise FormatError(
                    f"manifest line {lineno}: mixed rows with and without poses"
                )
            if has_pose:
                try:
                    xs.append(float(row[1]))
                    ys.append(float(row[2]))
                except ValueError as exc:
                    raise FormatError(
                        f"manifest line {lineno}: bad pose values {row[1:3]}"
                    ) from exc
            ids.append(image_id)
    _check_unique_ids(ids)
    poses = PoseTable(list(ids), np.column_stack([xs, ys])) if with_pose else None
    return ids, poses


def write_manifest(path, ids: Sequence[str], poses: Optional[PoseTable] = None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if poses is None:
            for image_id in ids:
                writer.writerow([image_id])
        else:
            table = poses.select(list(ids))
            for image_id, (x, y) in zip(table.ids, table.xy):
                writer.writerow([image_id, repr(float(x)), repr(float(y))])


def read_pose_csv(path) -> PoseTable:
    """Parse a pose CSV: image_id,x,y per row (meters, planar)."""
    ids, xy = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 3:
                raise FormatError(f"pose line {lineno}: expected image_id,x,y")
            try:
                xy.append((float(row[1]), float(row[2])))
            except ValueError as exc:
                raise FormatError(f"pose line {lineno}: bad coordinates") from exc
            ids.append(row[0].strip())
    return PoseTable(ids, np.array(xy, dtype=np.float64).reshape(-1, 2))


def write_pose_csv(path, poses: PoseTable) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for image_id, (x, y) in zip(poses.ids, poses.xy):
            writer.writerow([image_id, repr(float(x)), repr(float(y))])


# ---------------------------------------------------------------------------
# Ground-truth construction
# ---------------------------------------------------------------------------


def build_ground_truth_radius(
    queries: PoseTable, references: PoseTable, radius_m: float = 25.0
) -> GroundTruth:
    """Reference valid for a query iff planar distance <= radius (inclusive)."""
    if radius_m <= 0:
        raise DataError(f"radius must be > 0, got {radius_m}")
    mapping: dict[str, set[str]] = {}
    r2 = float(radius_m) ** 2
    ref_ids = np.array(references.ids, dtype=object)
    for qid, q in zip(queries.ids, queries.xy):
        if references.xy.shape[0]:
            d2 = ((references.xy - q) ** 2).sum(axis=1)
            mapping[qid] = set(ref_ids[d2 <= r2])
        else:
            mapping[qid] = set()
    return GroundTruth("radius", mapping, radius_m=radius_m)


def build_ground_truth_frames(
    query_count: int,
    window: int = 2,
    query_ids: Optional[Sequence[str]] = None,
    reference_ids: Optional[Sequence[str]] = None,
) -> GroundTruth:
    """Aligned equal-length traverses: reference j valid for query i iff
    |i - j| <= window. Ids default to the decimal frame indices."""
    if window < 0:
        raise DataError(f"window must be >= 0, got {window}")
    if query_count < 1:
        raise DataError("query_count must be >= 1")
    if query_ids is None:
        query_ids = [str(i) for i in range(query_count)]
    if reference_ids is None:
        reference_ids = [str(i) for i in range(query_count)]
    if len(query_ids) != query_count or len(reference_ids) != query_count:
        raise DataError(
            "frame protocol requires aligned equal-length id lists "
            f"(expected {query_count})"
        )
    mapping = {
        query_ids[i]: {
            reference_ids[j]
            for j in range(max(0, i - window), min(query_count, i + window + 1))
        }
        for i in range(query_count)
    }
    return GroundTruth("frame_window", mapping, window=window)


def load_pair_list(path, query_ids: Optional[Sequence[str]] = None) -> GroundTruth:
    """Parse explicit `query_id,ref_id` rows; duplicates are dropped with a
    warning. Queries from ``query_ids`` absent in the file get empty sets."""
    mapping: dict[str, set[str]] = {}
    if query_ids is not None:
        mapping = {q: set() for q in query_ids}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise FormatError(
                    f"pair list line {lineno}: expected query_id,ref_id, got {row}"
                )
            q, r = row[0].strip(), row[1].strip()
            if not q or not r:
                raise FormatError(f"pair list line {lineno}: empty id")
            bucket = mapping.setdefault(q, set())
            if r in bucket:
                warnings.warn(f"pair list line {lineno}: duplicate pair ({q}, {r})")
            bucket.add(r)
    return GroundTruth("pair_list", mapping)


def write_ground_truth_csv(path, gt: GroundTruth) -> None:
    """Emit the mapping as `query_id,ref_id` rows (refs sorted per query)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for q, refs in gt.mapping.items():
            for r in sorted(refs):
                writer.writerow([q, r])
