"""Parameter store, dense / multi-head self-attention layers, Adam.

Layers pull their weights lazily from a :class:`ParamStore`, so a model
is just a store plus functions that reference parameters by name.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, concat, softmax

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class ShapeError(ValueError):
    pass


class ParamStore:
    """Named parameters with matching Adam moment buffers."""

    def __init__(self, seed: int = 0):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        self.rng = np.random.default_rng(seed)
        self.seed = seed

    def param(self, name: str, shape: tuple, init: str = "he") -> Tensor:
        if name in self.params:
            p = self.params[name]
            if p.shape != tuple(shape):
                raise ShapeError(
                    f"parameter {name!r}: stored shape {p.shape} vs requested {tuple(shape)}")
            return p
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "he":
            fan_in = shape[0] if len(shape) > 1 else shape[0]
            bound = np.sqrt(6.0 / fan_in)
            data = self.rng.uniform(-bound, bound, size=shape)
        elif init == "linear":
            # variance 1/fan_in: preserves activation scale through
            # layers that are not followed by a nonlinearity
            fan_in = shape[0] if len(shape) > 1 else shape[0]
            bound = np.sqrt(3.0 / fan_in)
            data = self.rng.uniform(-bound, bound, size=shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        self.m[name] = np.zeros(shape)
        self.v[name] = np.zeros(shape)
        return t

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def adam_step(self, lr: float, weight_decay: float = 0.0,
                  clip: float = 0.0):
        """Adaptive-moment update; zeroes gradients afterwards.

        clip > 0 rescales all gradients so their global L2 norm does not
        exceed clip.
        """
        if clip > 0.0:
            sq = sum(float((p.grad ** 2).sum())
                     for p in self.params.values() if p.grad is not None)
            norm = np.sqrt(sq)
            if norm > clip:
                scale = clip / norm
                for p in self.params.values():
                    if p.grad is not None:
                        p.grad = p.grad * scale
        self.step += 1
        b1c = 1.0 - ADAM_BETA1 ** self.step
        b2c = 1.0 - ADAM_BETA2 ** self.step
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if weight_decay:
                g = g + weight_decay * p.data
            m = self.m[name]
            v = self.v[name]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            p.data -= lr * (m / b1c) / (np.sqrt(v / b2c) + ADAM_EPS)
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, p in self.params.items():
            out[name] = p.data
            out[name + ".m"] = self.m[name]
            out[name + ".v"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step: int):
        self.params.clear()
        self.m.clear()
        self.v.clear()
        for name, a in arrays.items():
            if name.endswith(".m") or name.endswith(".v"):
                continue
            self.params[name] = Tensor(a.copy(), requires_grad=True)
            self.m[name] = arrays[name + ".m"].copy()
            self.v[name] = arrays[name + ".v"].copy()
        self.step = step


def dense(store: ParamStore, x: Tensor, name: str, dout: int,
          zero_init: bool = False, init: str = "he") -> Tensor:
    """x[n, din] -> x @ W + b with lazily registered weights."""
    if x.data.ndim < 2:
        raise ShapeError(f"dense {name!r}: input must be at least 2-D, got {x.shape}")
    din = x.shape[-1]
    w = store.param(f"{name}.W", (din, dout), init="zeros" if zero_init else init)
    b = store.param(f"{name}.b", (dout,), init="zeros")
    return x @ w + b


def msa(store: ParamStore, x: Tensor, n_heads: int, name: str,
        scale_by_head_dim: bool = False) -> Tensor:
    """Multi-head self-attention over the rows of x[k, d].

    A single shared projection produces Q = K = V. Attention logits are
    scaled by sqrt(d) by default (sqrt(d_h) behind a switch).
    """
    k, d = x.shape
    if d % n_heads != 0:
        raise ShapeError(f"msa {name!r}: width {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    qkv = dense(store, x, f"{name}.qkv", d, init="linear")  # (k, d), Q = K = V
    heads = qkv.reshape(k, n_heads, dh).transpose(1, 0, 2)  # (h, k, dh)
    scale = 1.0 / np.sqrt(dh if scale_by_head_dim else d)
    logits = (heads @ heads.transpose(0, 2, 1)) * scale      # (h, k, k)
    attn = softmax(logits, axis=-1)
    mixed = attn @ heads                                      # (h, k, dh)
    merged = mixed.transpose(1, 0, 2).reshape(k, d)
    return dense(store, merged, f"{name}.out", d, init="linear")
