"""Minimal dense/conv network stack with hand-written reverse-mode gradients.

Everything the Q-network needs lives here: valid-padding stride-1 conv
layers, ReLU, a two-branch (local map / global map) trunk joined with the
scalar battery input, dense head, smooth-L1 loss, Adam, He init, and a
binary checkpoint format. No autograd framework; the backward pass is
derived by hand and pinned against finite differences in the tests.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .rng import RngStream


@dataclass(frozen=True)
class ConvSpec:
    """One conv layer: square kernel, output channel count, ReLU activation."""

    kernel: int
    channels: int


@dataclass(frozen=True)
class QNetworkSpec:
    """Architecture of the two-branch Q-network.

    Each branch is a stack of valid-padding stride-1 convs (possibly empty)
    followed by a flatten; the flattened branches and the battery scalar
    concatenate into a dense head whose last width is the action count.
    """

    local_shape: tuple[int, int, int]
    global_shape: tuple[int, int, int]
    local_conv: tuple[ConvSpec, ...]
    global_conv: tuple[ConvSpec, ...]
    head: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "local_shape": list(self.local_shape),
            "global_shape": list(self.global_shape),
            "local_conv": [[c.kernel, c.channels] for c in self.local_conv],
            "global_conv": [[c.kernel, c.channels] for c in self.global_conv],
            "head": list(self.head),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QNetworkSpec":
        return cls(
            local_shape=tuple(d["local_shape"]),
            global_shape=tuple(d["global_shape"]),
            local_conv=tuple(ConvSpec(k, c) for k, c in d["local_conv"]),
            global_conv=tuple(ConvSpec(k, c) for k, c in d["global_conv"]),
            head=tuple(d["head"]),
        )

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def n_actions(self) -> int:
        return self.head[-1]


class _ConvPlan:
    def __init__(self, in_shape, kernel, channels, w_off, first):
        c, h, w = in_shape
        if kernel < 1 or kernel > h or kernel > w:
            raise ValueError(f"conv kernel {kernel} does not fit input {in_shape}")
        self.in_shape = in_shape
        self.kernel = kernel
        self.out_shape = (channels, h - kernel + 1, w - kernel + 1)
        self.fan_in = c * kernel * kernel
        self.w_slice = slice(w_off, w_off + channels * self.fan_in)
        self.b_slice = slice(self.w_slice.stop, self.w_slice.stop + channels)
        self.first = first  # first layer of a branch: input gradient not needed
        self.end = self.b_slice.stop

    def weights(self, params):
        c = self.out_shape[0]
        return params[self.w_slice].reshape(c, self.fan_in), params[self.b_slice]

    def forward(self, x, params):
        wmat, b = self.weights(params)
        bsz = x.shape[0]
        c, h, w = self.in_shape
        k = self.kernel
        ho, wo = self.out_shape[1:]
        s = x.strides
        win = np.lib.stride_tricks.as_strided(
            x, (bsz, ho, wo, c, k, k), (s[0], s[2], s[3], s[1], s[2], s[3])
        )
        cols = win.reshape(bsz * ho * wo, c * k * k)
        y = cols @ wmat.T
        y += b
        y = y.reshape(bsz, ho, wo, self.out_shape[0]).transpose(0, 3, 1, 2)
        mask = y > 0
        return y * mask, (cols, mask)

    def backward(self, dy, cache, params, grads):
        cols, mask = cache
        wmat, _ = self.weights(params)
        bsz = dy.shape[0]
        c, h, w = self.in_shape
        k = self.kernel
        ho, wo = self.out_shape[1:]
        dy = dy * mask
        dym = dy.transpose(0, 2, 3, 1).reshape(bsz * ho * wo, self.out_shape[0])
        grads[self.w_slice] = (dym.T @ cols).ravel()
        grads[self.b_slice] = dym.sum(axis=0)
        if self.first:
            return None
        dcols = (dym @ wmat).reshape(bsz, ho, wo, c, k, k)
        dx = np.zeros((bsz, c, h, w), dtype=dy.dtype)
        for a in range(k):
            for b_ in range(k):
                dx[:, :, a : a + ho, b_ : b_ + wo] += dcols[:, :, :, :, a, b_].transpose(0, 3, 1, 2)
        return dx


class _DensePlan:
    def __init__(self, in_dim, out_dim, w_off, relu):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.relu = relu
        self.fan_in = in_dim
        self.w_slice = slice(w_off, w_off + out_dim * in_dim)
        self.b_slice = slice(self.w_slice.stop, self.w_slice.stop + out_dim)
        self.end = self.b_slice.stop

    def weights(self, params):
        return params[self.w_slice].reshape(self.out_dim, self.in_dim), params[self.b_slice]

    def forward(self, x, params):
        w, b = self.weights(params)
        y = x @ w.T
        y += b
        if not self.relu:
            return y, (x, None)
        mask = y > 0
        return y * mask, (x, mask)

    def backward(self, dy, cache, params, grads):
        x, mask = cache
        w, _ = self.weights(params)
        if mask is not None:
            dy = dy * mask
        grads[self.w_slice] = (dy.T @ x).ravel()
        grads[self.b_slice] = dy.sum(axis=0)
        return dy @ w


class QNetwork:
    """Executable plan for a QNetworkSpec over a flat parameter vector.

    forward() optionally returns a cache of activations; backward() consumes
    that cache plus an upstream gradient on the Q-values and returns the
    gradient for the whole parameter vector.
    """

    def __init__(self, spec: QNetworkSpec, dtype=np.float32):
        if len(spec.head) == 0:
            raise ValueError("head must contain at least the action count")
        self.spec = spec
        self.dtype = dtype
        off = 0
        self.local_plan = []
        shape = spec.local_shape
        for i, cs in enumerate(spec.local_conv):
            plan = _ConvPlan(shape, cs.kernel, cs.channels, off, first=(i == 0))
            self.local_plan.append(plan)
            shape = plan.out_shape
            off = plan.end
        self.local_flat = int(np.prod(shape))
        self.global_plan = []
        shape = spec.global_shape
        for i, cs in enumerate(spec.global_conv):
            plan = _ConvPlan(shape, cs.kernel, cs.channels, off, first=(i == 0))
            self.global_plan.append(plan)
            shape = plan.out_shape
            off = plan.end
        self.global_flat = int(np.prod(shape))
        self.head_plan = []
        dim = self.local_flat + self.global_flat + 1
        for i, width in enumerate(spec.head):
            plan = _DensePlan(dim, width, off, relu=(i < len(spec.head) - 1))
            self.head_plan.append(plan)
            dim = width
            off = plan.end
        self.param_count = off

    def init_params(self, rng: RngStream) -> np.ndarray:
        """He-style init: weights N(0, sqrt(2 / fan_in)), biases zero."""
        params = np.zeros(self.param_count, dtype=self.dtype)
        for plan in [*self.local_plan, *self.global_plan, *self.head_plan]:
            std = np.sqrt(2.0 / plan.fan_in)
            n = plan.w_slice.stop - plan.w_slice.start
            params[plan.w_slice] = rng.normal(0.0, std, n).astype(self.dtype)
        return params

    def _prep(self, arr, shape):
        a = np.asarray(arr, dtype=self.dtype)
        if a.shape == shape:
            return a[None], True
        if a.shape[1:] == shape:
            return a, False
        raise ValueError(f"expected shape {shape} or batched, got {a.shape}")

    def forward(self, params, local, global_, budget, need_cache: bool = False):
        """Q-values for one observation or a batch.

        Returns (B, n_actions) for batched input, (n_actions,) for a single
        observation; with need_cache=True also returns the backward cache.
        """
        if params.shape != (self.param_count,):
            raise ValueError(f"expected {self.param_count} parameters, got {params.shape}")
        local, single = self._prep(local, self.spec.local_shape)
        global_, _ = self._prep(global_, self.spec.global_shape)
        budget = np.atleast_1d(np.asarray(budget, dtype=self.dtype))
        caches = []
        x = local
        for plan in self.local_plan:
            x, c = plan.forward(x, params)
            caches.append(c)
        lf = x.reshape(x.shape[0], -1)
        x = global_
        for plan in self.global_plan:
            x, c = plan.forward(x, params)
            caches.append(c)
        gf = x.reshape(x.shape[0], -1)
        x = np.concatenate([lf, gf, budget[:, None]], axis=1)
        for plan in self.head_plan:
            x, c = plan.forward(x, params)
            caches.append(c)
        q = x[0] if single else x
        if need_cache:
            return q, caches
        return q

    def backward(self, params, caches, upstream) -> np.ndarray:
        """Parameter gradient for d(loss)/d(q) = upstream, shape (B, n_actions)."""
        if caches is None or len(caches) != len(self.local_plan) + len(self.global_plan) + len(self.head_plan):
            raise ValueError("backward needs the cache returned by forward(need_cache=True)")
        grads = np.zeros(self.param_count, dtype=self.dtype)
        dy = np.asarray(upstream, dtype=self.dtype)
        if dy.ndim == 1:
            dy = dy[None]
        n_local = len(self.local_plan)
        n_global = len(self.global_plan)
        for i, plan in enumerate(reversed(self.head_plan)):
            dy = plan.backward(dy, caches[-1 - i], params, grads)
        dl = dy[:, : self.local_flat]
        dg = dy[:, self.local_flat : self.local_flat + self.global_flat]
        if n_global:
            shape = self.global_plan[-1].out_shape
            d = dg.reshape(dg.shape[0], *shape)
            for i, plan in enumerate(reversed(self.global_plan)):
                d = plan.backward(d, caches[n_local + n_global - 1 - i], params, grads)
        if n_local:
            shape = self.local_plan[-1].out_shape
            d = dl.reshape(dl.shape[0], *shape)
            for i, plan in enumerate(reversed(self.local_plan)):
                d = plan.backward(d, caches[n_local - 1 - i], params, grads)
        return grads


def smooth_l1(diff: np.ndarray, beta: float = 1.0) -> np.ndarray:
    """Elementwise smooth-L1: quadratic inside |d| < beta, linear outside."""
    d = np.abs(diff)
    return np.where(d < beta, 0.5 * d * d / beta, d - 0.5 * beta)


def smooth_l1_grad(diff: np.ndarray, beta: float = 1.0) -> np.ndarray:
    return np.where(np.abs(diff) < beta, diff / beta, np.sign(diff))


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int, dtype=np.float32) -> "AdamState":
        return cls(np.zeros(n, dtype=dtype), np.zeros(n, dtype=dtype))


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One in-place Adam update with bias correction."""
    state.t += 1
    state.m += (1.0 - beta1) * (grads - state.m)
    state.v += (1.0 - beta2) * (grads * grads - state.v)
    mhat = state.m / (1.0 - beta1**state.t)
    vhat = state.v / (1.0 - beta2**state.t)
    params -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(params.dtype)


CHECKPOINT_MAGIC = b"WSQNET01"
CHECKPOINT_VERSION = 1


def save_params(path, params: np.ndarray, spec: QNetworkSpec) -> None:
    """Binary checkpoint: magic, version, endian marker, spec hash, count, f32 LE data."""
    if params.shape != (count_params(spec),):
        raise ValueError("parameter vector does not match the spec")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(b"<")
        fh.write(bytes.fromhex(spec.spec_hash()))
        fh.write(struct.pack("<Q", len(params)))
        fh.write(np.asarray(params, dtype="<f4").tobytes())


def load_params(path, spec: QNetworkSpec) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", blob, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    if blob[12:13] != b"<":
        raise ValueError(f"{path}: unsupported byte order marker")
    file_hash = blob[13:45].hex()
    if file_hash != spec.spec_hash():
        raise ValueError(
            f"{path}: checkpoint was trained for a different network "
            f"(spec hash {file_hash[:12]}.. != {spec.spec_hash()[:12]}..)"
        )
    (count,) = struct.unpack_from("<Q", blob, 45)
    if count != count_params(spec):
        raise ValueError(f"{path}: parameter count {count} does not match the spec")
    data = np.frombuffer(blob, dtype="<f4", offset=53, count=count)
    return data.astype(np.float32)


def count_params(spec: QNetworkSpec) -> int:
    return QNetwork(spec).param_count
