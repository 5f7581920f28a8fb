"""Code refinement contracts: fixed point, best-iterate guarantee,
freeze integrity, trace format."""

import numpy as np
import pytest

from shapexplore.coopt import co_optimize, export_trace
from shapexplore.errors import StateError
from shapexplore.mapper import map_code
from shapexplore.nn import build_mlp, param_hash
from shapexplore.spaces import ClipCode, encode_image, encode_shape


def test_fixed_point_stops_immediately(tiny_bundle):
    rng = np.random.default_rng(0)
    c = ClipCode(rng.standard_normal(tiny_bundle.clip_dim))
    z_bar = map_code(tiny_bundle.mapper, c)  # loss is exactly zero at c
    res = co_optimize(tiny_bundle.mapper, c, z_bar, iters=50, lr=2e-4)
    assert res.initial_loss == 0.0
    assert res.final_loss == 0.0
    assert np.array_equal(res.code.vector, c.vector)
    assert res.trace == [(0, 0.0)]


def test_final_never_exceeds_initial(tiny_bundle, tiny_store):
    for rec in tiny_store.records[:5]:
        c = encode_image(tiny_bundle.image_encoder, tiny_store.sketch(rec.id))
        z_bar = encode_shape(tiny_bundle.shape_encoder, tiny_store.voxels(rec.id))
        res = co_optimize(tiny_bundle.mapper, c, z_bar, iters=40, lr=2e-4)
        assert res.final_loss <= res.initial_loss
        assert res.final_loss == min(loss for _, loss in res.trace)
        assert [it for it, _ in res.trace] == sorted(it for it, _ in res.trace)


def test_loss_actually_improves(tiny_bundle, tiny_store):
    rec = tiny_store.records[0]
    c = encode_image(tiny_bundle.image_encoder, tiny_store.sketch(rec.id))
    z_bar = encode_shape(tiny_bundle.shape_encoder, tiny_store.voxels(rec.id))
    res = co_optimize(tiny_bundle.mapper, c, z_bar, iters=200, lr=2e-3)
    assert res.final_loss < res.initial_loss


def test_mapper_unchanged_by_coopt(tiny_bundle, tiny_store):
    before = param_hash(tiny_bundle.mapper)
    rec = tiny_store.records[2]
    c = encode_image(tiny_bundle.image_encoder, tiny_store.sketch(rec.id))
    z_bar = encode_shape(tiny_bundle.shape_encoder, tiny_store.voxels(rec.id))
    z_copy = z_bar.copy()
    co_optimize(tiny_bundle.mapper, c, z_bar, iters=30, lr=2e-4)
    assert param_hash(tiny_bundle.mapper) == before
    assert np.array_equal(z_bar, z_copy)


def test_unfrozen_mapper_rejected():
    net = build_mlp([4, 4], ["identity"], seed=0)
    with pytest.raises(StateError):
        co_optimize(net, ClipCode(np.zeros(4)), np.zeros(4), iters=1)


def test_shape_code_is_mapped_result(tiny_bundle):
    rng = np.random.default_rng(3)
    c = ClipCode(rng.standard_normal(tiny_bundle.clip_dim))
    z_bar = rng.standard_normal(tiny_bundle.shape_dim)
    res = co_optimize(tiny_bundle.mapper, c, z_bar, iters=25, lr=2e-4)
    assert np.array_equal(res.shape_code, map_code(tiny_bundle.mapper, res.code))


def test_trace_export_two_columns(tiny_bundle):
    rng = np.random.default_rng(1)
    c = ClipCode(rng.standard_normal(tiny_bundle.clip_dim))
    z_bar = rng.standard_normal(tiny_bundle.shape_dim)
    res = co_optimize(tiny_bundle.mapper, c, z_bar, iters=10, lr=2e-4)
    text = export_trace(res)
    rows = [line.split() for line in text.strip().splitlines()]
    assert all(len(r) == 2 for r in rows)
    assert int(rows[0][0]) == 0
    assert float(rows[0][1]) == pytest.approx(res.initial_loss)
