"""Minimal differentiable network core with exact analytic gradients.

Dense layers (affine -> optional layer normalization -> activation), a
streaming input normalizer, tanh-squashed Gaussian sampling with exact
log-probabilities, and an adaptive-moment optimizer.  Everything is plain
float64 numpy; reverse-mode gradients are hand-derived and verified against
central finite differences in the test suite.

Checkpoint format (versioned flat binary): magic ``LBNN``, uint32 version,
uint32 length of a JSON layer-spec blob, the blob itself, then all
parameters as little-endian float64 in row-major order, in layer order
(weight, bias, then layer-norm gain and shift when present).
"""
from __future__ import annotations

import json
import math
from typing import Optional, Sequence

import numpy as np

LN_EPS = 1e-5
LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
SQUASH_EPS = 1e-6
# largest double strictly below 1: float tanh rounds to exactly +-1 for
# |u| > ~19, but squashed samples must stay strictly inside the unit box
_TANH_LIMIT = float(np.nextafter(1.0, 0.0))

_MAGIC = b"LBNN"
_VERSION = 1


class GradientError(RuntimeError):
    """Backward called without a matching cached forward pass."""


class DivergenceError(RuntimeError):
    """Non-finite gradients reached the optimizer."""


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "linear":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name: str, z: np.ndarray, y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    if name == "relu":
        return dy * (z > 0.0)
    if name == "tanh":
        return dy * (1.0 - y * y)
    return dy


class DenseLayer:
    """Affine map with optional layer normalization and activation."""

    def __init__(self, w: np.ndarray, b: np.ndarray, activation: str = "linear",
                 layer_norm: bool = False):
        self.w = np.asarray(w, dtype=float)
        self.b = np.asarray(b, dtype=float)
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[1],):
            raise ValueError(f"bad layer shapes w={self.w.shape} b={self.b.shape}")
        self.activation = activation
        self.layer_norm = layer_norm
        if layer_norm:
            self.gain = np.ones(self.w.shape[1])
            self.shift = np.zeros(self.w.shape[1])

    @property
    def in_dim(self) -> int:
        return self.w.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w.shape[1]

    def params(self) -> list:
        out = [self.w, self.b]
        if self.layer_norm:
            out += [self.gain, self.shift]
        return out

    def forward(self, x: np.ndarray):
        z = x @ self.w + self.b
        if self.layer_norm:
            mu = z.mean(axis=-1, keepdims=True)
            zc = z - mu
            var = np.mean(zc * zc, axis=-1, keepdims=True)
            inv = 1.0 / np.sqrt(var + LN_EPS)
            zhat = zc * inv
            h = self.gain * zhat + self.shift
        else:
            zhat = inv = None
            h = z
        y = _act(self.activation, h)
        return y, (x, z, zhat, inv, h, y)

    def backward(self, cache, dy: np.ndarray):
        x, z, zhat, inv, h, y = cache
        dh = _act_grad(self.activation, h, y, dy)
        grads = []
        if self.layer_norm:
            dgain = (dh * zhat).sum(axis=0)
            dshift = dh.sum(axis=0)
            dzhat = dh * self.gain
            m1 = dzhat.mean(axis=-1, keepdims=True)
            m2 = (dzhat * zhat).mean(axis=-1, keepdims=True)
            dz = inv * (dzhat - m1 - zhat * m2)
            grads = [dgain, dshift]
        else:
            dz = dh
        dw = x.T @ dz
        db = dz.sum(axis=0)
        dx = dz @ self.w.T
        return dx, [dw, db] + grads


class DenseNet:
    """A stack of dense layers with cached-forward reverse-mode gradients."""

    def __init__(self, layers: Sequence[DenseLayer]):
        self.layers = list(layers)
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")
        self._cache = None

    @classmethod
    def build(cls, dims: Sequence[int], rng: np.random.Generator,
              hidden_activation: str = "relu", out_activation: str = "linear",
              layer_norm: bool = True) -> "DenseNet":
        """He-style random init; layer norm on hidden layers only."""
        layers = []
        for i in range(len(dims) - 1):
            last = i == len(dims) - 2
            w = rng.normal(0.0, 1.0 / math.sqrt(dims[i]), size=(dims[i], dims[i + 1]))
            b = np.zeros(dims[i + 1])
            layers.append(DenseLayer(
                w, b,
                activation=out_activation if last else hidden_activation,
                layer_norm=layer_norm and not last,
            ))
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> list:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        if h.shape[-1] != self.in_dim:
            raise ValueError(f"input dim {h.shape[-1]} != expected {self.in_dim}")
        caches = []
        for layer in self.layers:
            h, cache = layer.forward(h)
            caches.append(cache)
        self._cache = (squeeze, caches)
        return h[0] if squeeze else h

    def backward(self, upstream: np.ndarray):
        """Gradients of sum(upstream * output) w.r.t. params and input."""
        if self._cache is None:
            raise GradientError("backward called before forward")
        squeeze, caches = self._cache
        dy = np.asarray(upstream, dtype=float)
        if squeeze:
            dy = dy[None, :]
        grads: list = []
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy, layer_grads = layer.backward(cache, dy)
            grads = layer_grads + grads
        dx = dy[0] if squeeze else dy
        return dx, grads

    def copy(self) -> "DenseNet":
        layers = []
        for src in self.layers:
            dup = DenseLayer(src.w.copy(), src.b.copy(), src.activation, src.layer_norm)
            if src.layer_norm:
                dup.gain = src.gain.copy()
                dup.shift = src.shift.copy()
            layers.append(dup)
        return DenseNet(layers)


def forward(net: DenseNet, x: np.ndarray) -> np.ndarray:
    """Evaluate the network, caching activations for a later backward."""
    return net.forward(x)


def backward(net: DenseNet, x: np.ndarray, upstream: np.ndarray):
    """Exact reverse-mode gradients contracted with ``upstream``.

    Requires a prior forward on the same input; returns (input gradient,
    parameter gradients in params() order).
    """
    if net._cache is None:
        raise GradientError("no cached forward pass")
    return net.backward(upstream)


class InputNormalizer:
    """Streaming per-feature standardization with running statistics.

    Single-sample Welford updates; normalization is (x - mean)/sqrt(var+1e-5)
    applied identically at action and training time.
    """

    def __init__(self, dim: int):
        self.dim = dim
        self.count = 0
        self.mean = np.zeros(dim)
        self._m2 = np.zeros(dim)

    @property
    def var(self) -> np.ndarray:
        if self.count == 0:
            return np.ones(self.dim)
        return self._m2 / self.count

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=float)
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self._m2 = self._m2 + delta * (x - self.mean)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / np.sqrt(self.var + LN_EPS)

    def state(self) -> dict:
        return {"count": self.count, "mean": self.mean.tolist(), "m2": self._m2.tolist()}

    @classmethod
    def from_state(cls, state: dict) -> "InputNormalizer":
        norm = cls(len(state["mean"]))
        norm.count = int(state["count"])
        norm.mean = np.asarray(state["mean"], dtype=float)
        norm._m2 = np.asarray(state["m2"], dtype=float)
        return norm


def gaussian_head_sample(mean: np.ndarray, log_std: np.ndarray, noise: np.ndarray):
    """Tanh-squashed Gaussian sample and its exact log-probability.

    a = tanh(mean + exp(log_std) * noise) with log_std clamped to [-20, 2];
    the log-probability includes the tanh change-of-variables correction
    -log(1 - a^2 + 1e-6) per coordinate, summed over the last axis.
    """
    ls = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(ls)
    u = mean + std * noise
    a = np.clip(np.tanh(u), -_TANH_LIMIT, _TANH_LIMIT)
    logp_terms = -0.5 * noise * noise - ls - 0.5 * math.log(2.0 * math.pi) \
        - np.log(1.0 - a * a + SQUASH_EPS)
    return a, logp_terms.sum(axis=-1)


def gaussian_head_grads(mean: np.ndarray, log_std_raw: np.ndarray, noise: np.ndarray):
    """Partial derivatives used by the reparameterized actor update.

    Returns (a, logp, da_dmean, da_dlogstd, dlogp_dmean, dlogp_dlogstd); the
    log_std derivatives are masked to zero where the clamp is active.
    """
    ls = np.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
    clamp_mask = (log_std_raw > LOG_STD_MIN) & (log_std_raw < LOG_STD_MAX)
    std = np.exp(ls)
    u = mean + std * noise
    a = np.clip(np.tanh(u), -_TANH_LIMIT, _TANH_LIMIT)
    one_m_a2 = 1.0 - a * a
    logp_terms = -0.5 * noise * noise - ls - 0.5 * math.log(2.0 * math.pi) \
        - np.log(one_m_a2 + SQUASH_EPS)
    dlogp_da = 2.0 * a / (one_m_a2 + SQUASH_EPS)
    da_dmean = one_m_a2
    da_dlogstd = one_m_a2 * std * noise * clamp_mask
    dlogp_dmean = dlogp_da * da_dmean
    dlogp_dlogstd = (-1.0 + dlogp_da * one_m_a2 * std * noise) * clamp_mask
    return a, logp_terms.sum(axis=-1), da_dmean, da_dlogstd, dlogp_dmean, dlogp_dlogstd


class Adam:
    """Adaptive-moment optimizer with bias correction, updating in place.

    Optional decoupled weight decay (AdamW style): parameters selected by
    ``decay_mask`` shrink by lr * weight_decay * p each step, independent of
    the moment estimates.  By default only matrix-shaped parameters decay,
    leaving biases and normalization gains free.
    """

    def __init__(self, params: Sequence[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0, decay_mask: Optional[Sequence[bool]] = None):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        if decay_mask is None:
            decay_mask = [p.ndim == 2 for p in self.params]
        self.decay_mask = list(decay_mask)
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError(f"expected {len(self.params)} gradients, got {len(grads)}")
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        shrink = self.lr * self.weight_decay
        for i, g in enumerate(grads):
            g = np.asarray(g, dtype=float)
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient in parameter {i}")
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            self.params[i] -= self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            if shrink and self.decay_mask[i]:
                self.params[i] -= shrink * self.params[i]


def save_net(path, net: DenseNet) -> None:
    """Write a network in the versioned flat binary checkpoint format."""
    spec = {"layers": [
        {"in": layer.in_dim, "out": layer.out_dim, "activation": layer.activation,
         "layer_norm": layer.layer_norm}
        for layer in net.layers
    ]}
    blob = json.dumps(spec, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.asarray([_VERSION, len(blob)], dtype="<u4").tobytes())
        fh.write(blob)
        for p in net.params():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_net(path) -> DenseNet:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a network checkpoint")
        version, blob_len = np.frombuffer(fh.read(8), dtype="<u4")
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        spec = json.loads(fh.read(int(blob_len)).decode("utf-8"))
        layers = []
        for entry in spec["layers"]:
            d_in, d_out = entry["in"], entry["out"]
            w = np.frombuffer(fh.read(8 * d_in * d_out), dtype="<f8").reshape(d_in, d_out).copy()
            b = np.frombuffer(fh.read(8 * d_out), dtype="<f8").copy()
            layer = DenseLayer(w, b, entry["activation"], entry["layer_norm"])
            if entry["layer_norm"]:
                layer.gain = np.frombuffer(fh.read(8 * d_out), dtype="<f8").copy()
                layer.shift = np.frombuffer(fh.read(8 * d_out), dtype="<f8").copy()
            layers.append(layer)
    return DenseNet(layers)
