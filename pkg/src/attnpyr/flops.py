"""Analytic multiply-accumulate accounting.

Counting convention (documented here once, used everywhere):

* convolution: C_out * C_in * k^2 * H' * W' MACs;
* matrix product / fully-connected layer: M * K * N MACs;
* pooling and activations: one op per produced element;
* elementwise arithmetic (the gate product): one op per element.

Counts are derived from the model geometry alone; nothing is executed.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import pyramid as pyr
from .attention import se_reduction
from .model import ToyBackbone


@dataclass
class LayerCount:
    name: str
    macs: int


@dataclass
class FlopReport:
    layers: list
    backbone_macs: int
    attention_macs: int
    total_macs: int

    def as_dict(self):
        return {
            "layers": [{"name": l.name, "macs": l.macs} for l in self.layers],
            "backbone_macs": self.backbone_macs,
            "attention_macs": self.attention_macs,
            "total_macs": self.total_macs,
        }


def conv_macs(c_out, c_in, k, h_out, w_out):
    return c_out * c_in * k * k * h_out * w_out


def matmul_macs(m, k, n):
    return m * k * n


def _channel_level_macs(channels, h, w, n_parts):
    """One channel-gate level on a (C,H,W) map split into n parts."""
    c_part = channels // n_parts
    rho = se_reduction(c_part)
    hidden = c_part // rho
    per_part = (
        c_part  # global average pool outputs
        + matmul_macs(1, c_part, hidden)  # squeeze FC
        + hidden  # relu
        + matmul_macs(1, hidden, c_part)  # excite FC
    )
    return n_parts * per_part + channels + channels * h * w  # sigmoid + gate product


def _spatial_level_macs(channels, h, w, n_parts):
    """One spatial-gate level on a (C,H,W) map split along height."""
    h_part = h // n_parts
    hw = h_part * w
    c_int = max(channels // 8, 1)
    c_mid = max(hw // 8, 1)
    per_part = (
        2 * matmul_macs(c_int, channels, hw)  # theta and phi projections
        + matmul_macs(hw, c_int, hw)  # pairwise affinities
        + matmul_macs(1, channels, hw)  # global branch
        + matmul_macs(c_mid, 2 * hw + 1, hw)  # head FC 1
        + c_mid * hw  # relu
        + matmul_macs(1, c_mid, hw)  # head FC 2
    )
    return n_parts * per_part + h * w + channels * h * w  # sigmoid + gate product


def count_flops(model: ToyBackbone) -> FlopReport:
    cfg = model.cfg
    layers = []
    backbone = 0
    attention = 0
    total = 0

    def emit(name, macs, is_attention):
        nonlocal backbone, attention, total
        layers.append(LayerCount(name, int(macs)))
        total += int(macs)
        if is_attention:
            attention += int(macs)
        else:
            backbone += int(macs)

    h, w = cfg.image_height, cfg.image_width
    cin = cfg.in_channels
    for s, (c, h_out, w_out) in enumerate(model.stage_shapes):
        emit(f"stage{s}.conv", conv_macs(c, cin, 3, h, w), False)
        emit(f"stage{s}.relu", c * h * w, False)
        emit(f"stage{s}.pool", c * h_out * w_out, False)
        pcfg = model.stage_pyramid_config(s)
        for lvl in model.stage_levels[s]:
            n = pyr.num_parts(lvl.index, pcfg.radix)
            if pcfg.kind == pyr.CHANNEL:
                macs = _channel_level_macs(c, h_out, w_out, n)
            else:
                macs = _spatial_level_macs(c, h_out, w_out, n)
            emit(f"stage{s}.pyramid.level{lvl.index}", macs, True)
        h, w = h_out, w_out
        cin = c
    c_last = model.stage_shapes[-1][0]
    emit("head.gap", c_last, False)
    emit("head.embed", matmul_macs(1, c_last, cfg.embed_dim), False)
    emit("head.bn", cfg.embed_dim, False)
    emit("head.cls", matmul_macs(1, cfg.embed_dim, cfg.num_classes), False)
    return FlopReport(layers, backbone, attention, total)
