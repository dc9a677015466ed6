"""Base attention blocks the pyramid stacks.

Two mechanisms:

* channel gates: global average pool -> two fully-connected layers
  (squeeze/excite bottleneck) -> sigmoid, one scalar per channel;
* spatial gates: pairwise dot-product position affinities, whose row and
  column vectors are stacked with a global 1x1-projection branch and fed
  through a two-layer 1x1-convolution head -> sigmoid, one scalar per
  position.

No block carries bias terms, so zero weights give exactly 0.5 gates.
All blocks accept a single (C,H,W) map or a batched (B,C,H,W) stack.
The ``*_logits`` variants return the pre-sigmoid maps; the pyramid merges
part logits and normalizes once (elementwise sigmoid commutes with the
merge, so per-part gates and merged-then-gated logits agree bit for bit).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, ShapeError
from .tensor import (
    Tensor,
    concat,
    global_avg_pool,
    matmul,
    relu,
    reshape,
    sigmoid,
    transpose,
)


def he_normal(rng, shape, fan_in):
    """Fan-in scaled normal init used for every learned weight."""
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def se_reduction(channels: int) -> int:
    """Bottleneck reduction: 16 for wide layers, 2 for narrow ones."""
    return 16 if channels >= 32 else 2


@dataclass
class ChannelAttentionParams:
    """Squeeze/excite pair: w1 (C/rho x C), w2 (C x C/rho)."""

    w1: Tensor
    w2: Tensor
    reduction: int

    @classmethod
    def build(cls, channels: int, rng) -> "ChannelAttentionParams":
        rho = se_reduction(channels)
        if channels % rho != 0:
            raise GeometryError(
                f"channel extent {channels} not divisible by reduction {rho}"
            )
        hidden = channels // rho
        w1 = Tensor(he_normal(rng, (hidden, channels), channels), requires_grad=True)
        w2 = Tensor(he_normal(rng, (channels, hidden), hidden), requires_grad=True)
        return cls(w1, w2, rho)

    @property
    def channels(self) -> int:
        return self.w1.shape[1]

    def logits(self, x: Tensor) -> Tensor:
        return channel_attention_logits(x, self)

    def named_tensors(self):
        return [("w1", self.w1), ("w2", self.w2)]


def channel_attention_logits(x: Tensor, p: ChannelAttentionParams) -> Tensor:
    if x.shape[-3] != p.channels:
        raise ShapeError(
            f"channel attention expects {p.channels} channels, input has shape {x.shape}"
        )
    pooled = global_avg_pool(x)  # (C,) or (B, C)
    vec = reshape(pooled, (1, -1)) if x.ndim == 3 else pooled
    hidden = relu(matmul(vec, transpose(p.w1)))
    z = matmul(hidden, transpose(p.w2))
    return reshape(z, (-1,)) if x.ndim == 3 else z


def channel_attention(x: Tensor, p: ChannelAttentionParams) -> Tensor:
    """Per-channel gate in (0,1): sigma(w2 . relu(w1 . pool(x)))."""
    return sigmoid(channel_attention_logits(x, p))


@dataclass
class SpatialAttentionParams:
    """Relation-aware spatial block, sized for one (C,H,W) geometry.

    theta/phi project position features to the affinity space; global_w is
    the 1x1 global branch (one extra channel); w1s/w2s form the relation
    head over 2*H*W+1 stacked channels.
    """

    theta: Tensor
    phi: Tensor
    global_w: Tensor
    w1s: Tensor
    w2s: Tensor
    channels: int
    height: int
    width: int

    @classmethod
    def build(cls, channels: int, height: int, width: int, rng) -> "SpatialAttentionParams":
        hw = height * width
        if hw < 2:
            raise GeometryError(
                f"spatial attention needs at least 2 positions, got {height}x{width}"
            )
        c_int = max(channels // 8, 1)
        c_mid = max(hw // 8, 1)
        theta = Tensor(he_normal(rng, (c_int, channels), channels), requires_grad=True)
        phi = Tensor(he_normal(rng, (c_int, channels), channels), requires_grad=True)
        global_w = Tensor(he_normal(rng, (1, channels), channels), requires_grad=True)
        w1s = Tensor(he_normal(rng, (c_mid, 2 * hw + 1), 2 * hw + 1), requires_grad=True)
        w2s = Tensor(he_normal(rng, (1, c_mid), c_mid), requires_grad=True)
        return cls(theta, phi, global_w, w1s, w2s, channels, height, width)

    def logits(self, x: Tensor) -> Tensor:
        return spatial_attention_logits(x, self)

    def named_tensors(self):
        return [
            ("theta", self.theta),
            ("phi", self.phi),
            ("global_w", self.global_w),
            ("w1s", self.w1s),
            ("w2s", self.w2s),
        ]


def _check_spatial_input(x: Tensor, p: SpatialAttentionParams):
    c, h, w = x.shape[-3], x.shape[-2], x.shape[-1]
    if (c, h, w) != (p.channels, p.height, p.width):
        raise ShapeError(
            f"spatial attention built for {(p.channels, p.height, p.width)}, "
            f"input has shape {x.shape}"
        )


def spatial_relations(x: Tensor, p: SpatialAttentionParams) -> Tensor:
    """Pairwise affinity matrix r[p,q] = theta(f_p) . phi(f_q).

    Returns (H*W, H*W) for a single map, (B, H*W, H*W) batched. Not
    symmetric in general; transposing equals swapping theta and phi.
    """
    _check_spatial_input(x, p)
    single = x.ndim == 3
    hw = p.height * p.width
    feats = reshape(x, (p.channels, hw) if single else (x.shape[0], p.channels, hw))
    th = matmul(p.theta, feats)
    ph = matmul(p.phi, feats)
    th_t = transpose(th) if single else transpose(th, (0, 2, 1))
    return matmul(th_t, ph)


def spatial_attention_logits(x: Tensor, p: SpatialAttentionParams) -> Tensor:
    _check_spatial_input(x, p)
    single = x.ndim == 3
    b = 1 if single else x.shape[0]
    h, w = p.height, p.width
    hw = h * w
    x4 = reshape(x, (1,) + x.shape) if single else x
    rel = spatial_relations(x4, p)  # (B, HW, HW)
    rows = reshape(transpose(rel, (0, 2, 1)), (b, hw, h, w))  # channel c at pos q = r[q,c]
    cols = reshape(rel, (b, hw, h, w))  # channel c at pos q = r[c,q]
    feats = reshape(x4, (b, p.channels, hw))
    glob = reshape(matmul(p.global_w, feats), (b, 1, h, w))
    stack = concat([rows, cols, glob], axis=1)  # (B, 2*HW+1, H, W)
    if stack.shape[1] != p.w1s.shape[1]:
        raise ShapeError(
            f"assembled relation stack has {stack.shape[1]} channels, "
            f"head expects {p.w1s.shape[1]}"
        )
    flat = reshape(stack, (b, 2 * hw + 1, hw))
    hidden = relu(matmul(p.w1s, flat))  # (B, c_mid, HW)
    z = reshape(matmul(p.w2s, hidden), (b, h, w))
    return reshape(z, (h, w)) if single else z


def spatial_attention(x: Tensor, p: SpatialAttentionParams) -> Tensor:
    """Per-position gate in (0,1) over the H x W grid."""
    return sigmoid(spatial_attention_logits(x, p))
