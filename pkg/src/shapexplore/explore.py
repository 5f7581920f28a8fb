"""Direction discovery and trajectory tracing in the embedding space.

Three ways to get a direction:

* binary attribute: train a linear SVM on embedding codes of shapes
  with/without the attribute and take the separating hyperplane's unit
  normal, oriented toward the positive class;
* text: the difference between two caption embeddings;
* sketch: the difference between an edited and an original sketch
  embedding.

Tracing is the affine step code + alpha * direction. Each traced code
maps through the frozen mapper and decodes to a shape; in shape space
the result is a curved trajectory even though the embedding-space path
is a straight line. For sketch conditions the step size is selected
automatically by re-rendering every candidate and picking the one whose
embedding is closest to the edited sketch's.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DataError
from .mapper import map_code
from .nn import DenseNetwork, forward
from .procgen import SketchImage, VoxelGrid, render_sketch
from .spaces import ClipCode, Vocabulary, decode_shape, encode_image, encode_text
from .util import derive_seed

log = logging.getLogger(__name__)

SVM_EPOCHS = 50
SVM_LAMBDA = 3e-2  # soft enough that the direction tracks the class gap, not a few support vectors
RECOMMENDED_CLASS_SIZE = 1000


@dataclass(frozen=True)
class Direction:
    vector: np.ndarray
    mode: str  # "binary" | "text" | "sketch"
    unit: bool
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        object.__setattr__(self, "vector", v)
        if self.mode not in ("binary", "text", "sketch"):
            raise ArgumentError(f"unknown direction mode {self.mode!r}")
        if self.unit and abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ArgumentError("unit direction must have unit norm")

    @property
    def degenerate(self) -> bool:
        return float(np.linalg.norm(self.vector)) == 0.0

    def negated(self) -> "Direction":
        return Direction(-self.vector, self.mode, self.unit, dict(self.metadata))


@dataclass
class TrajectoryCandidate:
    alpha: float
    clip_code: ClipCode
    shape_code: np.ndarray
    grid: VoxelGrid  # decoded occupancy probabilities
    sketch: SketchImage  # rendering of the binarized grid
    similarity: float | None = None


@dataclass
class SvmModel:
    weights: np.ndarray
    bias: float
    lam: float
    train_accuracy: float


# ---------------------------------------------------------------------------
# Linear SVM (deterministic Pegasos-style subgradient descent)


def svm_train(
    positives: np.ndarray,
    negatives: np.ndarray,
    lam: float = SVM_LAMBDA,
    epochs: int = SVM_EPOCHS,
    seed: int = 0,
) -> SvmModel:
    """L2-regularized hinge loss via deterministic subgradient descent on
    balanced (one positive, one negative) pairs, fixed shuffling seed.

    Pair batching keeps the classes balanced regardless of their sizes,
    and because each class's visit order is seeded by the class size
    alone, swapping the two classes negates the whole trajectory exactly
    (label antisymmetry). The bias is an augmented coordinate.
    """
    positives = np.atleast_2d(np.asarray(positives, dtype=np.float64))
    negatives = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if positives.shape[0] == 0 or negatives.shape[0] == 0:
        raise ArgumentError("both classes must be non-empty")
    if positives.shape[1] != negatives.shape[1]:
        raise ArgumentError("class sample dims differ")
    n_pos, n_neg = positives.shape[0], negatives.shape[0]
    if min(n_pos, n_neg) < RECOMMENDED_CLASS_SIZE:
        log.warning(
            "svm classes are small (%d pos / %d neg); >= %d each is recommended",
            n_pos, n_neg, RECOMMENDED_CLASS_SIZE,
        )
    if max(n_pos, n_neg) > 2 * min(n_pos, n_neg):
        log.warning("svm classes are unbalanced (%d pos / %d neg)", n_pos, n_neg)

    pos = np.hstack([positives, np.ones((n_pos, 1))])  # bias coordinate
    neg = np.hstack([negatives, np.ones((n_neg, 1))])

    def visit_order(size: int, length: int) -> np.ndarray:
        rng = np.random.default_rng(derive_seed("svm-order", seed, size))
        reps = -(-length // size)
        return np.concatenate([rng.permutation(size) for _ in range(reps)])[:length]

    steps_per_epoch = max(n_pos, n_neg)
    order_p = visit_order(n_pos, epochs * steps_per_epoch)
    order_n = visit_order(n_neg, epochs * steps_per_epoch)

    w = np.zeros(pos.shape[1])
    for t in range(1, epochs * steps_per_epoch + 1):
        eta = 1.0 / (lam * t)
        xp, xn = pos[order_p[t - 1]], neg[order_n[t - 1]]
        grad = np.zeros_like(w)
        if w @ xp < 1.0:
            grad += xp
        if -(w @ xn) < 1.0:
            grad -= xn
        w = (1.0 - eta * lam) * w + (eta / 2.0) * grad

    weights, bias = w[:-1], float(w[-1])
    if np.linalg.norm(weights) == 0.0:
        raise DataError("degenerate SVM: zero weight vector after training")
    scores = np.concatenate([pos @ w, -(neg @ w)])
    acc = float((scores > 0).mean())
    return SvmModel(weights=weights, bias=bias, lam=lam, train_accuracy=acc)


def svm_decision(model: SvmModel, codes: np.ndarray) -> np.ndarray:
    return np.atleast_2d(codes) @ model.weights + model.bias


# ---------------------------------------------------------------------------
# Directions


def direction_from_binary(model: SvmModel, metadata: dict | None = None) -> Direction:
    """Unit normal of the separating hyperplane, pointing at the positives."""
    norm = float(np.linalg.norm(model.weights))
    if norm == 0.0:
        raise DataError("degenerate SVM weights")
    return Direction(model.weights / norm, "binary", unit=True, metadata=metadata or {})


def projection_gap(
    direction: Direction, pos_codes: np.ndarray, neg_codes: np.ndarray
) -> dict:
    """Separation statistics of two code sets projected onto a direction:
    class means and their standardized gap (pooled sigma)."""
    d = direction.vector / np.linalg.norm(direction.vector)
    pp = np.atleast_2d(pos_codes) @ d
    pn = np.atleast_2d(neg_codes) @ d
    mu_p, mu_n = float(pp.mean()), float(pn.mean())
    n_p, n_n = len(pp), len(pn)
    pooled_var = (
        pp.var(ddof=1) * (n_p - 1) + pn.var(ddof=1) * (n_n - 1)
    ) / max(n_p + n_n - 2, 1)
    sigma = float(np.sqrt(pooled_var)) if pooled_var > 0 else 0.0
    gap = (mu_p - mu_n) / sigma if sigma > 0 else float("inf")
    return {
        "mu_pos": mu_p,
        "mu_neg": mu_n,
        "pooled_sigma": sigma,
        "gap": float(gap),
        "n_pos": n_p,
        "n_neg": n_n,
    }


def direction_from_text(
    text_encoder: DenseNetwork, vocab: Vocabulary, caption_from: str, caption_to: str
) -> Direction:
    a = encode_text(text_encoder, caption_from, vocab)
    b = encode_text(text_encoder, caption_to, vocab)
    vec = b.vector - a.vector
    d = Direction(
        vec, "text", unit=False, metadata={"from": caption_from, "to": caption_to}
    )
    if d.degenerate:
        log.warning("text direction is degenerate (identical captions); tracing is a no-op")
    return d


def direction_from_sketch(
    image_encoder: DenseNetwork, original: SketchImage, edited: SketchImage
) -> Direction:
    if original.width != edited.width:
        raise ArgumentError("sketch dimensions differ")
    a = encode_image(image_encoder, original)
    b = encode_image(image_encoder, edited)
    d = Direction(b.vector - a.vector, "sketch", unit=False)
    if d.degenerate:
        log.warning("sketch direction is degenerate (no edit); tracing is a no-op")
    return d


def trace_code(code: ClipCode, direction: Direction, alpha: float) -> ClipCode:
    if code.dim != direction.vector.shape[0]:
        raise ArgumentError("code and direction dims differ")
    return ClipCode(code.vector + alpha * direction.vector, normalized=False)


# ---------------------------------------------------------------------------
# Trajectories


def explore_trajectory(
    mapper: DenseNetwork,
    shape_decoder: DenseNetwork,
    code: ClipCode,
    direction: Direction,
    alphas: list[float],
    resolution: int,
    sketch_width: int,
) -> list[TrajectoryCandidate]:
    """Materialize the trajectory at each step size, ascending order.

    Each candidate holds the traced code, its mapped shape code, the
    decoded occupancy grid, and a rendering of the binarized grid.
    """
    if not alphas:
        raise ArgumentError("alphas must be non-empty")
    candidates = []
    for alpha in sorted(float(a) for a in alphas):
        try:
            traced = trace_code(code, direction, alpha)
            z = map_code(mapper, traced)
            grid = decode_shape(shape_decoder, z, resolution)
            sketch = render_sketch(grid.binarized(), sketch_width)
        except Exception as e:
            raise type(e)(f"alpha={alpha}: {e}") from e
        candidates.append(TrajectoryCandidate(alpha, traced, z, grid, sketch))
    return candidates


def uniform_alphas(alpha_min: float, alpha_max: float, count: int) -> list[float]:
    if count < 1 or alpha_max < alpha_min:
        raise ArgumentError("need count >= 1 and alpha_max >= alpha_min")
    return [float(a) for a in np.linspace(alpha_min, alpha_max, count)]


def select_alpha_by_sketch(
    image_encoder: DenseNetwork,
    candidates: list[TrajectoryCandidate],
    edited_code: ClipCode,
) -> TrajectoryCandidate:
    """Pick the candidate whose re-encoded rendering is most similar to the
    edited sketch's code; ties go to the smaller step size."""
    if not candidates:
        raise ArgumentError("empty candidate list")
    target = edited_code.vector / np.linalg.norm(edited_code.vector)
    best = None
    for cand in sorted(candidates, key=lambda c: c.alpha):
        code = encode_image(image_encoder, cand.sketch)
        cand.similarity = float(code.vector @ target)
        if best is None or cand.similarity > best.similarity:
            best = cand
    return best
