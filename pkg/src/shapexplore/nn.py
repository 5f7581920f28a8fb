"""Dense-network substrate: MLP forward/backward, Adam, weight files.

Everything downstream (shape autoencoder, joint embedding, mapper,
code optimization) runs on the small engine in this module. Networks
are plain lists of fully connected layers with an activation and an
optional additive skip connection per layer. Gradients are exact
reverse-mode; correctness is pinned against central finite differences
in the test suite.

Math is float64 in memory; weight files store float32 (see LXW format
at the bottom), and parameter hashes are taken over the canonical
float32 serialization so a save/load round trip never changes a hash.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, FormatError, NumericError, StateError

ACTIVATIONS = ("leaky_relu", "sigmoid", "identity")

LXW_MAGIC = b"LXW1"
LXW_VERSION = 1


@dataclass
class Layer:
    weight: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str
    slope: float = 0.01  # leaky_relu negative slope; ignored otherwise
    skip: bool = False  # additive residual; requires in_dim == out_dim

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


class DenseNetwork:
    """A stack of dense layers with per-layer activation and skip flags.

    A frozen network rejects parameter updates; freezing is one-way.
    The internal version counter invalidates tapes after any parameter
    mutation so a stale tape cannot silently produce wrong gradients.
    """

    def __init__(self, layers: list[Layer], frozen: bool = False):
        if not layers:
            raise ArgumentError("network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ArgumentError(
                    f"layer dims do not chain: {a.out_dim} -> {b.in_dim}"
                )
        for ly in layers:
            if ly.activation not in ACTIVATIONS:
                raise ArgumentError(f"unknown activation {ly.activation!r}")
            if ly.skip and ly.in_dim != ly.out_dim:
                raise ArgumentError("skip connection requires equal in/out dims")
        self.layers = layers
        self.frozen = frozen
        self._version = 0

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def freeze(self) -> "DenseNetwork":
        self.frozen = True
        return self

    def parameters(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for ly in self.layers:
            out.append(ly.weight)
            out.append(ly.bias)
        return out

    def mark_mutated(self) -> None:
        """Must be called by any code that writes to parameter arrays."""
        if self.frozen:
            raise StateError("network is frozen; parameters are immutable")
        self._version += 1

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


@dataclass
class Tape:
    """Recording of one forward pass, sufficient for exact gradients."""

    version: int
    single: bool  # input was 1-D
    inputs: list[np.ndarray]  # per-layer input (batch, in_dim)
    preacts: list[np.ndarray]  # per-layer pre-activation z
    outputs: list[np.ndarray]  # per-layer activation output (before skip add)


@dataclass
class GradientRecord:
    weight_grads: list[np.ndarray]
    bias_grads: list[np.ndarray]
    input_grad: np.ndarray


def _activate(z: np.ndarray, act: str, slope: float) -> np.ndarray:
    if act == "leaky_relu":
        return np.where(z >= 0.0, z, slope * z)
    if act == "sigmoid":
        # stable two-branch form; exp never sees a positive argument
        out = np.empty_like(z)
        pos = z >= 0.0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    return z


def _activate_grad(z: np.ndarray, a: np.ndarray, act: str, slope: float) -> np.ndarray:
    if act == "leaky_relu":
        return np.where(z >= 0.0, 1.0, slope)
    if act == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


def forward(net: DenseNetwork, x: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Run the network on a vector or a batch of row vectors.

    Returns the output and a tape bound to the network's current
    parameter version.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ArgumentError(
            f"input dim {x.shape[-1] if x.ndim else 0} != network input dim {net.input_dim}"
        )
    inputs, preacts, outputs = [], [], []
    h = x
    for ly in net.layers:
        inputs.append(h)
        z = h @ ly.weight.T + ly.bias
        a = _activate(z, ly.activation, ly.slope)
        preacts.append(z)
        outputs.append(a)
        h = a + h if ly.skip else a
    y = h[0] if single else h
    return y, Tape(net._version, single, inputs, preacts, outputs)


def backward(
    net: DenseNetwork,
    tape: Tape,
    dl_dy: np.ndarray | None = None,
    *,
    dl_dz_last: np.ndarray | None = None,
) -> GradientRecord:
    """Exact reverse-mode gradients for all parameters and the input.

    Exactly one of ``dl_dy`` (gradient at the network output) or
    ``dl_dz_last`` (gradient at the last layer's pre-activation, used
    by losses that fold the final sigmoid analytically) must be given.
    """
    if tape.version != net._version:
        raise StateError("stale tape: network parameters changed since forward")
    if (dl_dy is None) == (dl_dz_last is None):
        raise ArgumentError("pass exactly one of dl_dy or dl_dz_last")
    if dl_dz_last is not None and net.layers[-1].skip:
        raise ArgumentError("dl_dz_last unsupported when the last layer has a skip")

    n_layers = len(net.layers)
    w_grads: list[np.ndarray | None] = [None] * n_layers
    b_grads: list[np.ndarray | None] = [None] * n_layers

    upstream = (
        None
        if dl_dy is None
        else np.atleast_2d(np.asarray(dl_dy, dtype=np.float64))
    )
    for i in range(n_layers - 1, -1, -1):
        ly = net.layers[i]
        if upstream is None:  # first step of the dl_dz_last path
            da = None
            dz = np.atleast_2d(np.asarray(dl_dz_last, dtype=np.float64))
        else:
            da = upstream
            dz = da * _activate_grad(
                tape.preacts[i], tape.outputs[i], ly.activation, ly.slope
            )
        w_grads[i] = dz.T @ tape.inputs[i]
        b_grads[i] = dz.sum(axis=0)
        dx = dz @ ly.weight
        if ly.skip:
            dx = dx + da
        upstream = dx

    input_grad = upstream[0] if tape.single else upstream
    return GradientRecord(w_grads, b_grads, input_grad)  # type: ignore[arg-type]


# ---------------------------------------------------------------------------
# Initialization


def build_mlp(
    dims: list[int],
    activations: list[str],
    skips: list[bool] | None = None,
    seed: int = 0,
    slope: float = 0.01,
) -> DenseNetwork:
    """He-style initialization, gain matched to each layer's activation."""
    if len(activations) != len(dims) - 1:
        raise ArgumentError("need one activation per layer")
    if skips is None:
        skips = [False] * len(activations)
    rng = np.random.default_rng(seed)
    layers = []
    for i, act in enumerate(activations):
        fan_in = dims[i]
        if act == "leaky_relu":
            gain2 = 2.0 / (1.0 + slope * slope)
        else:
            gain2 = 1.0
        std = np.sqrt(gain2 / fan_in)
        w = rng.standard_normal((dims[i + 1], fan_in)) * std
        b = np.zeros(dims[i + 1])
        layers.append(Layer(w, b, act, slope=slope, skip=skips[i]))
    return DenseNetwork(layers)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Moment estimates for one optimized variable."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def adam_step(state: AdamState, var: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; returns the new variable value.

    The state is mutated in place; the variable array is not.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != var.shape:
        raise ArgumentError(f"grad shape {grad.shape} != var shape {var.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient; step aborted")
    if state.m is None:
        state.m = np.zeros_like(var, dtype=np.float64)
        state.v = np.zeros_like(var, dtype=np.float64)
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return var - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


class NetAdam:
    """Adam over every parameter array of one trainable network."""

    def __init__(self, net: DenseNetwork, lr: float):
        if net.frozen:
            raise StateError("cannot attach an optimizer to a frozen network")
        self.net = net
        self.states = [AdamState(lr=lr) for _ in net.parameters()]

    def apply(self, grads: GradientRecord) -> None:
        net = self.net
        net.mark_mutated()
        flat: list[np.ndarray] = []
        for wg, bg in zip(grads.weight_grads, grads.bias_grads):
            flat.append(wg)
            flat.append(bg)
        for p, st, g in zip(net.parameters(), self.states, flat):
            p[...] = adam_step(st, p, g)


# ---------------------------------------------------------------------------
# Hashing and serialization


def param_hash(net: DenseNetwork) -> str:
    """SHA-256 over the canonical little-endian float32 parameter bytes."""
    h = hashlib.sha256()
    for p in net.parameters():
        h.update(np.ascontiguousarray(p, dtype="<f4").tobytes())
    return h.hexdigest()


def _metadata(net: DenseNetwork) -> dict:
    return {
        "frozen": net.frozen,
        "layers": [
            {
                "in": ly.in_dim,
                "out": ly.out_dim,
                "activation": ly.activation,
                "slope": ly.slope,
                "skip": ly.skip,
            }
            for ly in net.layers
        ],
    }


def save_weights(net: DenseNetwork, path: str | os.PathLike) -> None:
    """Write the LXW container: magic, u32 version, u64 metadata length,
    JSON metadata, then contiguous little-endian f32 parameter arrays."""
    meta = json.dumps(_metadata(net), sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += LXW_MAGIC
    blob += np.uint32(LXW_VERSION).tobytes()
    blob += np.uint64(len(meta)).tobytes()
    blob += meta
    for p in net.parameters():
        blob += np.ascontiguousarray(p, dtype="<f4").tobytes()
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)


def load_weights(path: str | os.PathLike) -> DenseNetwork:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16 or raw[:4] != LXW_MAGIC:
        raise FormatError(f"{path}: bad magic, not an LXW file")
    version = int(np.frombuffer(raw[4:8], dtype="<u4")[0])
    if version != LXW_VERSION:
        raise FormatError(f"{path}: unsupported LXW version {version}")
    meta_len = int(np.frombuffer(raw[8:16], dtype="<u8")[0])
    if len(raw) < 16 + meta_len:
        raise FormatError(f"{path}: truncated metadata")
    try:
        meta = json.loads(raw[16 : 16 + meta_len].decode("utf-8"))
        specs = meta["layers"]
        frozen = bool(meta["frozen"])
    except (ValueError, KeyError, UnicodeDecodeError) as e:
        raise FormatError(f"{path}: bad metadata: {e}") from e

    payload = raw[16 + meta_len :]
    expected = sum(s["out"] * s["in"] + s["out"] for s in specs) * 4
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload length {len(payload)} != declared shapes ({expected})"
        )
    layers = []
    off = 0
    for s in specs:
        n_w = s["out"] * s["in"]
        w = (
            np.frombuffer(payload, dtype="<f4", count=n_w, offset=off)
            .reshape(s["out"], s["in"])
            .astype(np.float64)
        )
        off += n_w * 4
        b = np.frombuffer(payload, dtype="<f4", count=s["out"], offset=off).astype(
            np.float64
        )
        off += s["out"] * 4
        layers.append(Layer(w, b, s["activation"], slope=s["slope"], skip=s["skip"]))
    return DenseNetwork(layers, frozen=frozen)


# ---------------------------------------------------------------------------
# Gradient checking


def gradient_check(
    net: DenseNetwork,
    x: np.ndarray,
    seed: int = 0,
    h: float = 1e-4,
) -> float:
    """Max relative error between backward() and central finite differences.

    The scalar test loss is <y, u> for a fixed random u, so dL/dy = u and
    every parameter gradient is exercised. Relative error uses a floored
    denominator: finite differences carry ~1e-11 absolute noise at h=1e-4,
    so tiny true gradients are compared absolutely.
    """
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(net.output_dim)

    y, tape = forward(net, x)
    rec = backward(net, tape, u)

    def loss_at(xv: np.ndarray) -> float:
        yv, _ = forward(net, xv)
        return float(yv @ u)

    worst = 0.0

    def rel(a: float, b: float) -> float:
        return abs(a - b) / max(abs(a), abs(b), 1e-3)

    params = net.parameters()
    analytic = []
    for wg, bg in zip(rec.weight_grads, rec.bias_grads):
        analytic.append(wg)
        analytic.append(bg)
    frozen_was = net.frozen
    net.frozen = False  # direct perturbation below bypasses mark_mutated
    try:
        for p, g in zip(params, analytic):
            flat_p = p.reshape(-1)
            flat_g = g.reshape(-1)
            for k in range(flat_p.size):
                orig = flat_p[k]
                flat_p[k] = orig + h
                lp = loss_at(x)
                flat_p[k] = orig - h
                lm = loss_at(x)
                flat_p[k] = orig
                worst = max(worst, rel((lp - lm) / (2.0 * h), flat_g[k]))
    finally:
        net.frozen = frozen_was
        net._version += 1

    xf = np.asarray(x, dtype=np.float64).copy()
    gin = np.asarray(rec.input_grad).reshape(-1)
    flat_x = xf.reshape(-1)
    for k in range(flat_x.size):
        orig = flat_x[k]
        flat_x[k] = orig + h
        lp = loss_at(xf)
        flat_x[k] = orig - h
        lm = loss_at(xf)
        flat_x[k] = orig
        worst = max(worst, rel((lp - lm) / (2.0 * h), gin[k]))
    return worst


def min_preact_margin(tape: Tape, net: DenseNetwork) -> float:
    """Smallest |pre-activation| over leaky-ReLU layers.

    Finite differences are invalid within h of the kink; callers that
    compare against them should redraw inputs until this margin clears
    the step size comfortably.
    """
    m = np.inf
    for ly, z in zip(net.layers, tape.preacts):
        if ly.activation == "leaky_relu" and z.size:
            m = min(m, float(np.min(np.abs(z))))
    return m
