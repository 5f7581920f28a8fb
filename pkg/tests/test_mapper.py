"""Mapper contracts: architecture, freeze integrity, differentiability.
The gradient oracle is central finite differences through the full
code-to-loss chain."""

import numpy as np
import pytest

from shapexplore.errors import ArgumentError, StateError
from shapexplore.mapper import (
    MAPPER_LAYERS,
    build_clip2shape_mapper,
    map_code,
    train_mapper,
)
from shapexplore.nn import backward, build_mlp, forward, param_hash
from shapexplore.spaces import ClipCode


def test_mapper_has_eight_layers_with_interior_skips():
    net = build_clip2shape_mapper(32, 32, hidden=256, seed=0)
    assert len(net.layers) == MAPPER_LAYERS
    assert net.input_dim == 32 and net.output_dim == 32
    skips = [ly.skip for ly in net.layers]
    assert skips == [False] + [True] * 6 + [False]
    assert [ly.activation for ly in net.layers] == ["leaky_relu"] * 7 + ["identity"]


def test_train_mapper_requires_frozen_encoders():
    img = build_mlp([16, 8], ["identity"], seed=0)  # unfrozen
    shp = build_mlp([16, 8], ["identity"], seed=1).freeze()
    with pytest.raises(StateError):
        train_mapper(np.zeros((10, 8)), np.zeros((10, 8)), img, shp, epochs=1)


def test_train_mapper_loss_decreases_and_freezes(tiny_bundle):
    rng = np.random.default_rng(0)
    codes = rng.standard_normal((200, 8))
    codes /= np.linalg.norm(codes, axis=1, keepdims=True)
    target = np.tanh(codes @ rng.standard_normal((8, 6)))
    img = build_mlp([4, 4], ["identity"], seed=0).freeze()
    shp = build_mlp([4, 4], ["identity"], seed=1).freeze()
    net, losses = train_mapper(
        codes, target, img, shp, hidden=32, epochs=40, lr=1e-3, seed=2
    )
    assert net.frozen
    assert losses[-1] < 0.1 * losses[0]


def test_mapper_training_does_not_touch_encoders(tiny_bundle):
    assert tiny_bundle.mapper is not None
    # the bundle was trained through the CLI; hashes recorded at save time
    # must match the current in-memory parameters of every network
    for name, net in tiny_bundle.networks().items():
        assert param_hash(net) == tiny_bundle.hashes()[name]


def test_map_code_deterministic_and_accepts_unnormalized(tiny_bundle):
    rng = np.random.default_rng(4)
    c = ClipCode(rng.standard_normal(tiny_bundle.clip_dim) * 2.5, normalized=False)
    a = map_code(tiny_bundle.mapper, c)
    b = map_code(tiny_bundle.mapper, c)
    assert np.array_equal(a, b)
    assert a.shape == (tiny_bundle.shape_dim,)


def test_map_code_dimension_mismatch(tiny_bundle):
    with pytest.raises(ArgumentError):
        map_code(tiny_bundle.mapper, np.zeros(tiny_bundle.clip_dim + 1))


def test_code_gradient_matches_finite_differences(tiny_bundle):
    # d||F(c) - z||^2 / dc against central differences
    net = tiny_bundle.mapper
    rng = np.random.default_rng(9)
    c = rng.standard_normal(net.input_dim)
    z = rng.standard_normal(net.output_dim)

    out, tape = forward(net, c)
    analytic = np.asarray(backward(net, tape, 2.0 * (out - z)).input_grad)

    h = 1e-5
    worst = 0.0
    for k in range(net.input_dim):
        e = np.zeros_like(c)
        e[k] = h
        lp, _ = forward(net, c + e)
        lm, _ = forward(net, c - e)
        fd = (np.sum((lp - z) ** 2) - np.sum((lm - z) ** 2)) / (2 * h)
        worst = max(worst, abs(fd - analytic[k]) / max(abs(fd), abs(analytic[k]), 1e-3))
    assert worst < 1e-4
