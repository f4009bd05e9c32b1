"""Perception-feature extraction from six-view projections.

A compact strided conv stack (trainable from scratch on a CPU) plays
the role of the heavyweight 2-D backbone; each 4-channel view is pooled
to a vector, the six view vectors are averaged, and a 2-layer MLP maps
the result to the d-dimensional perception feature. The backbone is a
seam: anything exposing ``forward(views) -> Tensor`` can replace it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netcore import ParamStore, ShapeError, dense
from .projection import ProjectionSet
from .tensor import Tensor, gather_cols


@dataclass
class PerceptionFeature:
    vector: Tensor  # (d,)
    sample_id: str = ""


# Named backbone presets (channel progression of the conv stack). "slim"
# trades capacity for cross-content generalization on small datasets.
BACKBONE_PRESETS = {
    "default": (8, 16, 32, 64),
    "slim": (8, 16, 16, 16),
}


def augment_views(views: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Training-time augmentation of stacked views (B, 6, H, W, C).

    Horizontal/vertical flips, H/W transposition and view-order
    permutation are all symmetries of the six-face orthographic cube,
    so labels are unaffected.
    """
    out = views.copy()
    for b in range(len(out)):
        if rng.random() < 0.5:
            out[b] = out[b][:, ::-1]
        if rng.random() < 0.5:
            out[b] = out[b][:, :, ::-1]
        if rng.random() < 0.5:
            out[b] = np.swapaxes(out[b], 1, 2)
        out[b] = out[b][rng.permutation(6)]
    return np.ascontiguousarray(out)


def _im2col_indices(h: int, w: int, c: int, k: int, stride: int) -> tuple:
    """Flat gather indices for valid convolution; (P, k*k*c) plus out dims."""
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    r0 = np.repeat(np.arange(oh) * stride, ow)
    c0 = np.tile(np.arange(ow) * stride, oh)
    dr, dc = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    rows = r0[:, None] + dr.ravel()[None, :]          # (P, k*k)
    cols = c0[:, None] + dc.ravel()[None, :]
    flat = (rows * w + cols)[:, :, None] * c + np.arange(c)[None, None, :]
    return flat.reshape(oh * ow, k * k * c), oh, ow


class ConvBackbone:
    """Stride-2 valid-conv stack with ReLU and global average pooling."""

    def __init__(self, store: ParamStore, in_channels: int = 4,
                 channels: tuple = (8, 16, 32, 64), kernel: int = 3,
                 name: str = "backbone"):
        self.store = store
        self.in_channels = in_channels
        self.channels = tuple(channels)
        self.kernel = kernel
        self.name = name
        self._idx_cache: dict = {}

    @property
    def out_dim(self) -> int:
        return self.channels[-1]

    def _conv(self, x: Tensor, h: int, w: int, cin: int, cout: int,
              layer: int) -> tuple:
        key = (h, w, cin)
        if key not in self._idx_cache:
            self._idx_cache[key] = _im2col_indices(h, w, cin, self.kernel, 2)
        idx, oh, ow = self._idx_cache[key]
        n = x.shape[0]
        cols = gather_cols(x.reshape(n, h * w * cin), idx)
        wgt = self.store.param(f"{self.name}.conv{layer}.W",
                               (self.kernel * self.kernel * cin, cout))
        bias = self.store.param(f"{self.name}.conv{layer}.b", (cout,),
                                init="zeros")
        out = (cols @ wgt + bias).relu()
        return out.reshape(n, oh, ow, cout), oh, ow

    def forward(self, views: np.ndarray) -> Tensor:
        """views (N, H, W, C) -> pooled features (N, out_dim)."""
        n, h, w, cin = views.shape
        if cin != self.in_channels:
            raise ShapeError(f"backbone expects {self.in_channels} channels, got {cin}")
        x = Tensor(views)
        for layer, cout in enumerate(self.channels):
            if min(h, w) < self.kernel:
                raise ShapeError(f"image collapsed to {h}x{w} before layer {layer}")
            x, h, w = self._conv(x, h, w, cin, cout, layer)
            cin = cout
        return x.mean(axis=(1, 2))


class FeatureExtractor:
    """Backbone + 2-layer MLP producing d-dimensional perception features."""

    def __init__(self, store: ParamStore, d: int = 64, d_m: int = 64,
                 image_size: int = 64, backbone: ConvBackbone | None = None,
                 name: str = "feat"):
        self.store = store
        self.d = d
        self.d_m = d_m
        self.image_size = image_size
        self.backbone = backbone or ConvBackbone(store, name=f"{name}.backbone")
        self.name = name

    def forward_batch(self, views: np.ndarray) -> Tensor:
        """views (B, 6, H, W, 4) -> perception features (B, d)."""
        b, n_views, h, w, c = views.shape
        if h != self.image_size or w != self.image_size:
            raise ShapeError(
                f"projection size {h}x{w} does not match configured "
                f"{self.image_size}")
        pooled = self.backbone.forward(views.reshape(b * n_views, h, w, c))
        per_sample = pooled.reshape(b, n_views, self.backbone.out_dim).mean(axis=1)
        hidden = dense(self.store, per_sample, f"{self.name}.mlp0", self.d_m).relu()
        return dense(self.store, hidden, f"{self.name}.mlp1", self.d,
                     init="linear")

    def extract(self, proj: ProjectionSet) -> PerceptionFeature:
        feats = self.forward_batch(proj.stacked_views()[None])
        return PerceptionFeature(vector=feats.reshape(self.d),
                                 sample_id=proj.sample_id)

    def extract_batch(self, projs) -> Tensor:
        views = np.stack([p.stacked_views() for p in projs])
        return self.forward_batch(views)


def projection_stats(proj: ProjectionSet) -> np.ndarray:
    """Hand-crafted per-cloud statistics (fixed features for the kernel

    reference model): texture moments over occupied pixels, depth
    moments, occupancy ratio, density, blur radius and a texture
    gradient-energy term.
    """
    occ = proj.occupancy
    tex = proj.textures[occ]            # (n_occ, 3)
    dep = proj.depths[occ]
    gx = np.diff(proj.textures, axis=2)
    gy = np.diff(proj.textures, axis=1)
    feats = np.array([
        tex.mean(), tex.std(),
        tex.min(initial=1.0), tex.max(initial=0.0),
        dep.mean(), dep.std(),
        occ.mean(),
        proj.density,
        float(proj.blur_radius),
        np.abs(gx).mean(), np.abs(gy).mean(),
        np.sqrt((gx ** 2).mean()),
    ])
    return feats
