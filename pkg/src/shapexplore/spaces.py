"""The two frozen latent spaces: a shape autoencoder and a joint
sketch/text embedding.

Both are trained here once, frozen, and never updated by any later
stage. The image and text encoders project into a shared unit sphere
(outputs are L2-normalized) so cosine similarity is meaningful for
retrieval, direction finding and scoring. The shape code space is an
unconstrained real vector space.

Training is plain batched Adam over the dense-network engine in
``nn``; everything is seeded and single-threaded deterministic.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, ConfigError, DataError, NumericError, StateError
from .nn import (
    DenseNetwork,
    NetAdam,
    backward,
    build_mlp,
    forward,
    load_weights,
    param_hash,
    save_weights,
)
from .procgen import SketchImage, VoxelGrid, caption_words
from .util import derive_seed

log = logging.getLogger(__name__)

DEFAULT_CLIP_DIM = 32  # m
DEFAULT_SHAPE_DIM = 32  # n
INFONCE_TEMPERATURE = 0.07


@dataclass(frozen=True)
class ClipCode:
    """Point in the joint embedding space. Encoder outputs are unit norm;
    traced or optimized codes may leave the sphere (normalized=False)."""

    vector: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        object.__setattr__(self, "vector", v)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ArgumentError("clip code must be a finite 1-D vector")
        if self.normalized and abs(np.linalg.norm(v) - 1.0) > 1e-6:
            raise ArgumentError("normalized code must have unit L2 norm")

    @property
    def dim(self) -> int:
        return self.vector.shape[0]

    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))


ShapeCode = np.ndarray  # n-dim float64 vector


class Vocabulary:
    """Closed token set with a bijective token/index map."""

    def __init__(self, tokens: list[str] | None = None):
        self.tokens = list(tokens) if tokens is not None else caption_words()
        if len(set(self.tokens)) != len(self.tokens):
            raise ArgumentError("vocabulary tokens must be unique")
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def tokenize(self, caption: str) -> list[str]:
        words = caption.lower().split()
        unknown = [w for w in words if w not in self.index]
        if unknown:
            raise DataError(f"unknown token(s) {unknown} not in vocabulary")
        return words

    def bag_of_tokens(self, caption: str) -> np.ndarray:
        vec = np.zeros(len(self.tokens))
        for w in self.tokenize(caption):
            vec[self.index[w]] += 1.0
        return vec


# ---------------------------------------------------------------------------
# Shape autoencoder


def _require_frozen(net: DenseNetwork, name: str) -> None:
    if not net.frozen:
        raise StateError(f"{name} must be frozen")


def train_shape_autoencoder(
    grids: np.ndarray,
    shape_dim: int = DEFAULT_SHAPE_DIM,
    hidden: int = 512,
    epochs: int = 20,
    batch_size: int = 256,
    lr: float = 1e-3,
    seed: int = 0,
) -> tuple[DenseNetwork, DenseNetwork, list[float]]:
    """Train encoder/decoder on flattened occupancy grids with binary
    cross-entropy; returns both networks frozen plus per-epoch mean loss.

    ``grids`` is (N, R^3) with entries in {0, 1}; N must be >= 1000.
    """
    grids = np.asarray(grids, dtype=np.float64)
    if grids.ndim != 2:
        raise ArgumentError("grids must be (N, R^3)")
    n_samples, in_dim = grids.shape
    if n_samples < 1000:
        raise ConfigError(f"autoencoder needs >= 1000 grids, got {n_samples}")

    enc = build_mlp(
        [in_dim, hidden, hidden, shape_dim],
        ["leaky_relu", "leaky_relu", "identity"],
        seed=derive_seed("ae-enc", seed),
    )
    dec = build_mlp(
        [shape_dim, hidden, hidden, in_dim],
        ["leaky_relu", "leaky_relu", "sigmoid"],
        seed=derive_seed("ae-dec", seed),
    )
    opt_e, opt_d = NetAdam(enc, lr), NetAdam(dec, lr)
    rng = np.random.default_rng(derive_seed("ae-order", seed))

    losses = []
    for epoch in range(epochs):
        order = rng.permutation(n_samples)
        total = 0.0
        for lo in range(0, n_samples, batch_size):
            idx = order[lo : lo + batch_size]
            x = grids[idx]
            code, tape_e = forward(enc, x)
            prob, tape_d = forward(dec, code)
            p = np.clip(prob, 1e-12, 1.0 - 1e-12)
            bce = -(x * np.log(p) + (1.0 - x) * np.log(1.0 - p)).mean()
            if not np.isfinite(bce):
                raise NumericError(f"non-finite autoencoder loss at epoch {epoch}")
            total += bce * len(idx)
            # d(BCE)/d(logits) folds the output sigmoid analytically
            dz_last = (prob - x) / prob.size
            g_dec = backward(dec, tape_d, dl_dz_last=dz_last)
            g_enc = backward(enc, tape_e, g_dec.input_grad)
            opt_d.apply(g_dec)
            opt_e.apply(g_enc)
        losses.append(total / n_samples)
    enc.freeze()
    dec.freeze()
    return enc, dec, losses


def encode_shape(encoder: DenseNetwork, grid: VoxelGrid) -> ShapeCode:
    _require_frozen(encoder, "shape encoder")
    flat = grid.values.reshape(-1)
    if flat.shape[0] != encoder.input_dim:
        raise ArgumentError(
            f"grid size {flat.shape[0]} != encoder input dim {encoder.input_dim}"
        )
    code, _ = forward(encoder, flat)
    return code


def decode_shape(decoder: DenseNetwork, code: ShapeCode, resolution: int) -> VoxelGrid:
    _require_frozen(decoder, "shape decoder")
    code = np.asarray(code, dtype=np.float64)
    if code.shape != (decoder.input_dim,):
        raise ArgumentError(f"code dim {code.shape} != decoder input {decoder.input_dim}")
    if decoder.output_dim != resolution**3:
        raise ArgumentError("decoder output does not match resolution^3")
    probs, _ = forward(decoder, code)
    return VoxelGrid(resolution, probs.reshape(resolution, resolution, resolution))


def encode_shapes_batch(encoder: DenseNetwork, grids: np.ndarray) -> np.ndarray:
    _require_frozen(encoder, "shape encoder")
    codes, _ = forward(encoder, np.asarray(grids, dtype=np.float64))
    return codes


# ---------------------------------------------------------------------------
# Joint sketch/text embedding


def _normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / norms, norms


def _normalize_backward(y: np.ndarray, norms: np.ndarray, dl_dy: np.ndarray) -> np.ndarray:
    # y = x/||x||: dL/dx = (dL/dy - y * <y, dL/dy>) / ||x||
    inner = (y * dl_dy).sum(axis=-1, keepdims=True)
    return (dl_dy - y * inner) / norms


def _infonce_grad(sim: np.ndarray, positives: np.ndarray) -> tuple[float, np.ndarray]:
    """Multi-positive InfoNCE over similarity rows.

    positives[i, j] = 1 where j is a valid match for row i (duplicate
    captions in a batch are matches, not negatives). Returns (loss,
    d loss / d sim).
    """
    sim = sim - sim.max(axis=1, keepdims=True)
    e = np.exp(sim)
    denom = e.sum(axis=1, keepdims=True)
    p = e / denom
    pos_mass = (p * positives).sum(axis=1, keepdims=True)
    loss = float(-np.log(pos_mass).mean())
    grad = (p - p * positives / pos_mass) / sim.shape[0]
    return loss, grad


def train_joint_embedding(
    sketches: np.ndarray,
    captions: list[str],
    vocab: Vocabulary,
    clip_dim: int = DEFAULT_CLIP_DIM,
    image_hidden: int = 256,
    text_embed: int = 64,
    epochs: int = 4,
    batch_size: int = 64,
    lr: float = 1e-3,
    temperature: float = INFONCE_TEMPERATURE,
    seed: int = 0,
) -> tuple[DenseNetwork, DenseNetwork, list[float]]:
    """Contrastively align flattened sketches with caption bags of tokens.

    Symmetric InfoNCE with in-batch negatives at fixed temperature;
    rows sharing a caption string count as positives for each other.
    Returns (image encoder, text encoder, per-epoch loss), both frozen.

    The default schedule is deliberately short: retrieval saturates
    within an epoch, and prolonged contrastive pressure at this
    temperature pushes the caption anchors toward mutual orthogonality,
    which bends the per-class attribute displacement chords apart and
    ruins linear direction tracing.
    """
    sketches = np.asarray(sketches, dtype=np.float64)
    n = sketches.shape[0]
    if n < 1000:
        raise ConfigError(f"joint embedding needs >= 1000 pairs, got {n}")
    if len(captions) != n:
        raise ArgumentError("captions and sketches must pair up")

    bags = np.stack([vocab.bag_of_tokens(c) for c in captions])
    cap_ids = np.array([hash_caption(c) for c in captions])

    img = build_mlp(
        [sketches.shape[1], image_hidden, image_hidden, clip_dim],
        ["leaky_relu", "leaky_relu", "identity"],
        seed=derive_seed("emb-img", seed),
    )
    # first layer is the token embedding sum; two dense layers follow
    txt = build_mlp(
        [len(vocab), text_embed, text_embed, clip_dim],
        ["identity", "leaky_relu", "identity"],
        seed=derive_seed("emb-txt", seed),
    )
    opt_i, opt_t = NetAdam(img, lr), NetAdam(txt, lr)
    rng = np.random.default_rng(derive_seed("emb-order", seed))

    losses = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        batches = 0
        for lo in range(0, n - 1, batch_size):
            idx = order[lo : lo + batch_size]
            if len(idx) < 2:
                continue
            u_raw, tape_i = forward(img, sketches[idx])
            v_raw, tape_t = forward(txt, bags[idx])
            u, un = _normalize_rows(u_raw)
            v, vn = _normalize_rows(v_raw)
            sim = (u @ v.T) / temperature
            pos = (cap_ids[idx][:, None] == cap_ids[idx][None, :]).astype(np.float64)
            l_i2t, g_i2t = _infonce_grad(sim, pos)
            l_t2i, g_t2i = _infonce_grad(sim.T, pos.T)
            loss = 0.5 * (l_i2t + l_t2i)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite embedding loss at epoch {epoch}")
            total += loss
            batches += 1
            g_sim = 0.5 * (g_i2t + g_t2i.T)
            dl_du = (g_sim @ v) / temperature
            dl_dv = (g_sim.T @ u) / temperature
            g_img = backward(img, tape_i, _normalize_backward(u, un, dl_du))
            g_txt = backward(txt, tape_t, _normalize_backward(v, vn, dl_dv))
            opt_i.apply(g_img)
            opt_t.apply(g_txt)
        losses.append(total / max(batches, 1))
    img.freeze()
    txt.freeze()
    return img, txt, losses


def hash_caption(caption: str) -> int:
    return derive_seed("caption", caption)


def encode_image(encoder: DenseNetwork, sketch: SketchImage) -> ClipCode:
    _require_frozen(encoder, "image encoder")
    flat = sketch.pixels.reshape(-1)
    if flat.shape[0] != encoder.input_dim:
        raise ArgumentError(
            f"sketch size {flat.shape[0]} != encoder input dim {encoder.input_dim}"
        )
    raw, _ = forward(encoder, flat)
    return ClipCode(raw / np.linalg.norm(raw), normalized=True)


def encode_images_batch(encoder: DenseNetwork, pixels: np.ndarray) -> np.ndarray:
    _require_frozen(encoder, "image encoder")
    raw, _ = forward(encoder, np.asarray(pixels, dtype=np.float64))
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def encode_text(encoder: DenseNetwork, caption: str, vocab: Vocabulary) -> ClipCode:
    _require_frozen(encoder, "text encoder")
    raw, _ = forward(encoder, vocab.bag_of_tokens(caption))
    return ClipCode(raw / np.linalg.norm(raw), normalized=True)


# ---------------------------------------------------------------------------
# Bundles: the frozen spaces plus metadata on disk


BUNDLE_FILES = {
    "shape_encoder": "shape_encoder.lxw",
    "shape_decoder": "shape_decoder.lxw",
    "image_encoder": "image_encoder.lxw",
    "text_encoder": "text_encoder.lxw",
    "mapper": "mapper.lxw",
}


@dataclass
class SpaceBundle:
    shape_encoder: DenseNetwork
    shape_decoder: DenseNetwork
    image_encoder: DenseNetwork
    text_encoder: DenseNetwork
    vocab: Vocabulary
    clip_dim: int
    shape_dim: int
    resolution: int
    sketch_width: int
    seeds: dict[str, int] = field(default_factory=dict)
    mapper: DenseNetwork | None = None

    def networks(self) -> dict[str, DenseNetwork]:
        nets = {
            "shape_encoder": self.shape_encoder,
            "shape_decoder": self.shape_decoder,
            "image_encoder": self.image_encoder,
            "text_encoder": self.text_encoder,
        }
        if self.mapper is not None:
            nets["mapper"] = self.mapper
        return nets

    def hashes(self) -> dict[str, str]:
        return {name: param_hash(net) for name, net in self.networks().items()}

    def require_mapper(self) -> DenseNetwork:
        if self.mapper is None:
            raise StateError("bundle has no trained mapper; run the mapper stage first")
        return self.mapper

    def save(self, bundle_dir: str | os.PathLike) -> None:
        bundle_dir = Path(bundle_dir)
        bundle_dir.mkdir(parents=True, exist_ok=True)
        for name, net in self.networks().items():
            save_weights(net, bundle_dir / BUNDLE_FILES[name])
        meta = {
            "clip_dim": self.clip_dim,
            "shape_dim": self.shape_dim,
            "resolution": self.resolution,
            "sketch_width": self.sketch_width,
            "vocabulary": self.vocab.tokens,
            "seeds": self.seeds,
            "hashes": self.hashes(),
        }
        from .util import atomic_write_text

        atomic_write_text(bundle_dir / "bundle.json", json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, bundle_dir: str | os.PathLike, require_mapper: bool = False) -> "SpaceBundle":
        bundle_dir = Path(bundle_dir)
        meta_path = bundle_dir / "bundle.json"
        if not meta_path.exists():
            raise StateError(f"no bundle metadata at {meta_path}; train the spaces first")
        meta = json.loads(meta_path.read_text())
        nets: dict[str, DenseNetwork] = {}
        for name, fname in BUNDLE_FILES.items():
            path = bundle_dir / fname
            if not path.exists():
                if name == "mapper" and not require_mapper:
                    continue
                raise StateError(f"bundle is missing {fname}")
            nets[name] = load_weights(path)
            recorded = meta.get("hashes", {}).get(name)
            actual = param_hash(nets[name])
            if recorded is not None and recorded != actual:
                raise DataError(
                    f"{fname}: parameter hash {actual} does not match bundle metadata"
                )
        return cls(
            shape_encoder=nets["shape_encoder"],
            shape_decoder=nets["shape_decoder"],
            image_encoder=nets["image_encoder"],
            text_encoder=nets["text_encoder"],
            vocab=Vocabulary(meta["vocabulary"]),
            clip_dim=int(meta["clip_dim"]),
            shape_dim=int(meta["shape_dim"]),
            resolution=int(meta["resolution"]),
            sketch_width=int(meta["sketch_width"]),
            seeds={k: int(v) for k, v in meta.get("seeds", {}).items()},
            mapper=nets.get("mapper"),
        )
