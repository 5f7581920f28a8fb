"""File format round trips and manifest determinism."""

import numpy as np
import pytest

from shapexplore.dataset import (
    DataStore,
    ManifestRecord,
    decode_pgm,
    encode_pgm,
    generate_dataset,
    read_pgm,
    read_voxel_file,
    split_of,
    write_pgm,
    write_voxel_file,
)
from shapexplore.errors import DataError, FormatError
from shapexplore.procgen import SketchImage, render_sketch, sample_spec, voxelize


def test_voxel_file_round_trip(tmp_path):
    grid = voxelize(sample_spec(12, "chair"))
    path = tmp_path / "g.lxv"
    write_voxel_file(grid, path)
    loaded = read_voxel_file(path)
    assert loaded.resolution == grid.resolution
    assert np.array_equal(loaded.values, grid.values)


def test_voxel_file_layout_is_x_fastest(tmp_path):
    # single occupied voxel at (ix=3, iy=0, iz=0) must land at flat index 3
    values = np.zeros((16, 16, 16))
    values[3, 0, 0] = 1.0
    from shapexplore.procgen import VoxelGrid

    path = tmp_path / "one.lxv"
    write_voxel_file(VoxelGrid(16, values), path)
    raw = path.read_bytes()
    assert raw[:4] == b"LXV1"
    assert int.from_bytes(raw[4:6], "little") == 16
    payload = raw[6:]
    assert payload[3] == 1 and sum(payload) == 1


def test_voxel_file_truncation_rejected(tmp_path):
    grid = voxelize(sample_spec(1, "table"))
    path = tmp_path / "g.lxv"
    write_voxel_file(grid, path)
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(FormatError):
        read_voxel_file(path)


def test_pgm_round_trip(tmp_path):
    sk = render_sketch(voxelize(sample_spec(2, "chair")), 64)
    path = tmp_path / "s.pgm"
    write_pgm(sk, path)
    loaded = read_pgm(path)
    assert loaded.width == 64
    assert np.array_equal(loaded.pixels, sk.pixels)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n64 64\n255\n")


def test_pgm_stroke_byte_is_255():
    sk = SketchImage(64, np.zeros((64, 64)))
    sk.pixels[5, 7] = 1.0
    raw = encode_pgm(sk)
    body = raw.split(b"255\n", 1)[1]
    assert body[5 * 64 + 7] == 255


def test_pgm_rejects_non_square():
    with pytest.raises(DataError):
        decode_pgm(b"P5\n4 8\n255\n" + b"\x00" * 32)


def test_pgm_rejects_bad_magic():
    with pytest.raises(FormatError):
        decode_pgm(b"P2\n4 4\n255\n" + b"\x00" * 16)


def test_manifest_record_round_trip():
    rec = ManifestRecord(
        id="chair-000001",
        category="chair",
        seed=1,
        attributes={"armrest": True, "stretcher": False},
        caption="a chair with armrests",
        voxel_path="voxels/chair-000001.lxv",
        sketch_path="sketches/chair-000001.pgm",
    )
    assert ManifestRecord.from_json(rec.to_json()) == rec


def test_split_hash_is_stable_and_roughly_80_10_10():
    buckets = {"train": 0, "val": 0, "test": 0}
    for seed in range(4000):
        buckets[split_of("chair", seed)] += 1
    assert split_of("chair", 0) == split_of("chair", 0)
    assert 0.75 * 4000 <= buckets["train"] <= 0.85 * 4000
    assert 0.06 * 4000 <= buckets["val"] <= 0.14 * 4000
    assert 0.06 * 4000 <= buckets["test"] <= 0.14 * 4000


def test_generate_dataset_and_store(tmp_path):
    records = generate_dataset(tmp_path, 20, 16, 64)
    assert len(records) == 20
    manifest = (tmp_path / "manifest.jsonl").read_text().strip().splitlines()
    assert len(manifest) == 20
    store = DataStore(tmp_path)
    rec = records[0]
    grid = store.voxels(rec.id)
    sketch = store.sketch(rec.id)
    spec = sample_spec(rec.seed, rec.category)
    assert np.array_equal(grid.values, voxelize(spec).values)
    assert np.array_equal(sketch.pixels, render_sketch(voxelize(spec), 64).pixels)
    with pytest.raises(DataError):
        store.record("chair-999999")


def test_generate_dataset_rerun_identical_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    generate_dataset(a, 12, 16, 64)
    generate_dataset(b, 12, 16, 64)
    assert (a / "manifest.jsonl").read_bytes() == (b / "manifest.jsonl").read_bytes()
    for split in ("train", "val", "test"):
        assert (a / f"{split}.ids").read_bytes() == (b / f"{split}.ids").read_bytes()
