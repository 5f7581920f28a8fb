"""The mapper network coupling the embedding space to the shape space.

An 8-layer leaky-ReLU MLP with additive skip connections between the
equal-width hidden layers, trained to regress each training shape's
directly-encoded shape code from the embedding code of its rendered
sketch. Both encoders stay frozen; only the mapper learns. After
training it is frozen too, and later stages differentiate *through* it
(never updating it) to move codes around.
"""

from __future__ import annotations

import logging

import numpy as np

from .errors import ArgumentError, NumericError, StateError
from .nn import DenseNetwork, NetAdam, backward, build_mlp, forward, param_hash
from .spaces import ClipCode
from .util import derive_seed

log = logging.getLogger(__name__)

MAPPER_LAYERS = 8
MAPPER_HIDDEN = 256
LARGE_INPUT_NORM = 3.0  # traced codes drifting past this are worth flagging


def build_clip2shape_mapper(
    clip_dim: int, shape_dim: int, hidden: int = MAPPER_HIDDEN, seed: int = 0
) -> DenseNetwork:
    dims = [clip_dim] + [hidden] * (MAPPER_LAYERS - 1) + [shape_dim]
    activations = ["leaky_relu"] * (MAPPER_LAYERS - 1) + ["identity"]
    # residuals only where widths match: the six interior hidden layers
    skips = [a == b for a, b in zip(dims[:-1], dims[1:])]
    return build_mlp(dims, activations, skips, seed=derive_seed("mapper", seed))


def train_mapper(
    clip_codes: np.ndarray,
    shape_codes: np.ndarray,
    image_encoder: DenseNetwork,
    shape_encoder: DenseNetwork,
    hidden: int = MAPPER_HIDDEN,
    epochs: int = 500,
    batch_size: int = 64,
    lr: float = 1e-4,
    seed: int = 0,
) -> tuple[DenseNetwork, list[float]]:
    """Minimize the mean squared code regression error over paired codes.

    ``clip_codes`` (N, m) must come from the frozen image encoder and
    ``shape_codes`` (N, n) from the frozen shape encoder; both encoders
    are taken only to enforce and verify the freeze contract.
    """
    for net, name in ((image_encoder, "image encoder"), (shape_encoder, "shape encoder")):
        if not net.frozen:
            raise StateError(f"{name} must be frozen before mapper training")
    hashes_before = (param_hash(image_encoder), param_hash(shape_encoder))

    clip_codes = np.asarray(clip_codes, dtype=np.float64)
    shape_codes = np.asarray(shape_codes, dtype=np.float64)
    if clip_codes.shape[0] != shape_codes.shape[0]:
        raise ArgumentError("code arrays must pair up")
    n = clip_codes.shape[0]

    net = build_clip2shape_mapper(clip_codes.shape[1], shape_codes.shape[1], hidden, seed)
    opt = NetAdam(net, lr)
    rng = np.random.default_rng(derive_seed("mapper-order", seed))

    losses = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            pred, tape = forward(net, clip_codes[idx])
            diff = pred - shape_codes[idx]
            loss = float((diff * diff).sum(axis=1).mean())
            if not np.isfinite(loss):
                raise NumericError(f"non-finite mapper loss at epoch {epoch}")
            total += loss * len(idx)
            grads = backward(net, tape, 2.0 * diff / len(idx))
            opt.apply(grads)
        losses.append(total / n)

    if (param_hash(image_encoder), param_hash(shape_encoder)) != hashes_before:
        raise StateError("encoder parameters changed during mapper training")
    net.freeze()
    return net, losses


_warned_large_norm = False


def map_code(mapper: DenseNetwork, code: ClipCode | np.ndarray) -> np.ndarray:
    """Shape code for an embedding code; accepts off-sphere inputs."""
    global _warned_large_norm
    vec = code.vector if isinstance(code, ClipCode) else np.asarray(code, dtype=np.float64)
    if vec.shape != (mapper.input_dim,):
        raise ArgumentError(f"code dim {vec.shape} != mapper input {mapper.input_dim}")
    norm = float(np.linalg.norm(vec))
    if norm > LARGE_INPUT_NORM:
        # expected for far traces; warn once per process, then debug-log
        level = logging.DEBUG if _warned_large_norm else logging.WARNING
        log.log(level, "mapping a code with norm %.2f (> %.1f)", norm, LARGE_INPUT_NORM)
        _warned_large_norm = True
    out, _ = forward(mapper, vec)
    return out


def map_codes_batch(mapper: DenseNetwork, codes: np.ndarray) -> np.ndarray:
    out, _ = forward(mapper, np.asarray(codes, dtype=np.float64))
    return out
