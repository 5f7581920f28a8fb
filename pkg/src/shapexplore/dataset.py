"""Dataset materialization: voxel/sketch files, JSONL manifest, splits.

File formats:
  * Voxel file: magic ``LXV1``, little-endian u16 resolution, then R^3
    bytes (0 or 1) in x-fastest order.
  * Sketch file: binary PGM (``P5``), maxval 255, stroke pixels at 255.
  * Manifest: one JSON object per line with id, category, seed,
    attribute flags, caption and relative file paths.

Splits are 80/10/10 by a stable hash of (category, seed) so membership
never depends on generation order or dataset size.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DataError, FormatError
from .procgen import (
    ShapeSpec,
    SketchImage,
    VoxelGrid,
    caption_for,
    render_sketch,
    sample_spec,
    voxelize,
)
from .util import atomic_write_bytes, atomic_write_text

LXV_MAGIC = b"LXV1"

SPLITS = ("train", "val", "test")


# ---------------------------------------------------------------------------
# Voxel files


def write_voxel_file(grid: VoxelGrid, path: str | os.PathLike) -> None:
    occ = (grid.values > 0.5).astype(np.uint8)
    blob = LXV_MAGIC + np.uint16(grid.resolution).tobytes()
    # x-fastest: index = ix + R*(iy + R*iz)
    blob += np.ascontiguousarray(occ.transpose(2, 1, 0)).tobytes()
    atomic_write_bytes(path, blob)


def read_voxel_file(path: str | os.PathLike) -> VoxelGrid:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 6 or raw[:4] != LXV_MAGIC:
        raise FormatError(f"{path}: bad magic, not an LXV file")
    r = int(np.frombuffer(raw[4:6], dtype="<u2")[0])
    if len(raw) != 6 + r**3:
        raise FormatError(f"{path}: expected {6 + r**3} bytes, got {len(raw)}")
    flat = np.frombuffer(raw, dtype=np.uint8, offset=6)
    if flat.max(initial=0) > 1:
        raise FormatError(f"{path}: voxel bytes must be 0 or 1")
    values = flat.reshape(r, r, r).transpose(2, 1, 0).astype(np.float64)
    return VoxelGrid(r, values)


# ---------------------------------------------------------------------------
# PGM sketches


def write_pgm(sketch: SketchImage, path: str | os.PathLike) -> None:
    atomic_write_bytes(path, encode_pgm(sketch))


def encode_pgm(sketch: SketchImage) -> bytes:
    header = f"P5\n{sketch.width} {sketch.width}\n255\n".encode("ascii")
    body = np.rint(sketch.pixels * 255.0).astype(np.uint8).tobytes()
    return header + body


def decode_pgm(raw: bytes, source: str = "<bytes>") -> SketchImage:
    if not raw.startswith(b"P5"):
        raise FormatError(f"{source}: not a binary PGM (missing P5)")
    # header: three whitespace-separated tokens after P5, '#' comments allowed
    tokens: list[int] = []
    i = 2
    while len(tokens) < 3:
        while i < len(raw) and raw[i : i + 1].isspace():
            i += 1
        if i < len(raw) and raw[i : i + 1] == b"#":
            while i < len(raw) and raw[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(raw) and not raw[j : j + 1].isspace():
            j += 1
        if j == i:
            raise FormatError(f"{source}: truncated PGM header")
        try:
            tokens.append(int(raw[i:j]))
        except ValueError as e:
            raise FormatError(f"{source}: bad PGM header token {raw[i:j]!r}") from e
        i = j
    i += 1  # single whitespace after maxval
    w, h, maxval = tokens
    if w != h:
        raise DataError(f"{source}: sketch must be square, got {w}x{h}")
    if maxval != 255:
        raise FormatError(f"{source}: maxval must be 255")
    if len(raw) - i != w * h:
        raise FormatError(f"{source}: expected {w * h} pixel bytes, got {len(raw) - i}")
    px = np.frombuffer(raw, dtype=np.uint8, offset=i).reshape(h, w) / 255.0
    return SketchImage(w, px)


def read_pgm(path: str | os.PathLike) -> SketchImage:
    with open(path, "rb") as f:
        return decode_pgm(f.read(), source=str(path))


# ---------------------------------------------------------------------------
# Manifest


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    category: str
    seed: int
    attributes: dict[str, bool]
    caption: str
    voxel_path: str
    sketch_path: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.id,
                "category": self.category,
                "seed": self.seed,
                "attributes": self.attributes,
                "caption": self.caption,
                "voxel": self.voxel_path,
                "sketch": self.sketch_path,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "ManifestRecord":
        try:
            d = json.loads(line)
            return cls(
                id=d["id"],
                category=d["category"],
                seed=int(d["seed"]),
                attributes={k: bool(v) for k, v in d["attributes"].items()},
                caption=d["caption"],
                voxel_path=d["voxel"],
                sketch_path=d["sketch"],
            )
        except (ValueError, KeyError, TypeError) as e:
            raise DataError(f"bad manifest record: {e}") from e


def shape_id(category: str, seed: int) -> str:
    return f"{category}-{seed:06d}"


def split_of(category: str, seed: int) -> str:
    """Stable 80/10/10 split by hash of the shape's identity."""
    digest = hashlib.sha256(f"split:{category}:{seed}".encode()).digest()
    bucket = digest[0] % 10
    if bucket < 8:
        return "train"
    return "val" if bucket == 8 else "test"


def generate_dataset(
    data_dir: str | os.PathLike,
    num_shapes: int,
    resolution: int,
    sketch_width: int,
) -> list[ManifestRecord]:
    """Sample, voxelize, render and caption num_shapes shapes (half chairs,
    half tables), write all files plus manifest and split id lists."""
    data_dir = Path(data_dir)
    (data_dir / "voxels").mkdir(parents=True, exist_ok=True)
    (data_dir / "sketches").mkdir(parents=True, exist_ok=True)

    per_cat = {"chair": (num_shapes + 1) // 2, "table": num_shapes // 2}
    records: list[ManifestRecord] = []
    split_ids: dict[str, list[str]] = {s: [] for s in SPLITS}
    for category in ("chair", "table"):
        for seed in range(per_cat[category]):
            spec = sample_spec(seed, category)
            grid = voxelize(spec, resolution)
            sketch = render_sketch(grid, sketch_width)
            sid = shape_id(category, seed)
            vrel = f"voxels/{sid}.lxv"
            srel = f"sketches/{sid}.pgm"
            write_voxel_file(grid, data_dir / vrel)
            write_pgm(sketch, data_dir / srel)
            records.append(
                ManifestRecord(
                    id=sid,
                    category=category,
                    seed=seed,
                    attributes={
                        a: a in spec.attributes for a in sorted_applicable(category)
                    },
                    caption=caption_for(spec),
                    voxel_path=vrel,
                    sketch_path=srel,
                )
            )
            split_ids[split_of(category, seed)].append(sid)

    atomic_write_text(
        data_dir / "manifest.jsonl", "".join(r.to_json() + "\n" for r in records)
    )
    for s in SPLITS:
        atomic_write_text(data_dir / f"{s}.ids", "".join(i + "\n" for i in split_ids[s]))
    return records


def sorted_applicable(category: str) -> list[str]:
    from .procgen import APPLICABLE_ATTRIBUTES

    return sorted(APPLICABLE_ATTRIBUTES[category])


def load_manifest(data_dir: str | os.PathLike) -> list[ManifestRecord]:
    path = Path(data_dir) / "manifest.jsonl"
    if not path.exists():
        raise DataError(f"no manifest at {path}")
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(ManifestRecord.from_json(line))
    return records


class DataStore:
    """Manifest index with lazy file loading, keyed by shape id."""

    def __init__(self, data_dir: str | os.PathLike):
        self.data_dir = Path(data_dir)
        self.records = load_manifest(data_dir)
        self.by_id = {r.id: r for r in self.records}
        self.split_ids = {}
        for s in SPLITS:
            p = self.data_dir / f"{s}.ids"
            if not p.exists():
                raise DataError(f"missing split file {p}")
            self.split_ids[s] = [l.strip() for l in p.read_text().splitlines() if l.strip()]

    def record(self, sid: str) -> ManifestRecord:
        if sid not in self.by_id:
            raise DataError(f"unknown shape id {sid!r}")
        return self.by_id[sid]

    def voxels(self, sid: str) -> VoxelGrid:
        return read_voxel_file(self.data_dir / self.record(sid).voxel_path)

    def sketch(self, sid: str) -> SketchImage:
        return read_pgm(self.data_dir / self.record(sid).sketch_path)

    def split(self, name: str) -> list[ManifestRecord]:
        if name not in SPLITS:
            raise ArgumentError(f"unknown split {name!r}")
        return [self.by_id[i] for i in self.split_ids[name]]
