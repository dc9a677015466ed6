"""Four-stage convolutional backbone with a gating pyramid after each stage.

Stage s: 3x3 convolution (stride 1, pad 1) -> relu -> 2x average-pool
downsample -> pyramid gating on the stage output. Channel plan
(16, 32, 64, 128). Head: global average pool -> 128-d projection ->
normalization bottleneck (per-feature standardization with a learned
scale; batch statistics while training, running averages at eval) ->
class logits. The bottlenecked embedding is the one returned: it feeds
the triplet term, the classifier and retrieval matching alike.

Spatial pyramids whose height cannot support all configured levels at a
stage are capped per stage at build time and the cap is recorded for the
run manifest; channel pyramids fail fast instead (an undersized channel
split is a configuration error, not a geometry accident of the image
size).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import pyramid as pyr
from . import tensorfile
from .attention import he_normal
from .errors import CheckpointError, GeometryError
from .pyramid import PyramidConfig
from .tensor import (
    Tensor,
    avg_pool2d,
    conv2d,
    flip,
    global_avg_pool,
    matmul,
    no_grad,
    relu,
    sqrt,
    tmean,
    transpose,
)

CHANNEL_PLAN = (16, 32, 64, 128)


@dataclass
class ModelConfig:
    num_classes: int
    pyramid: PyramidConfig = field(default_factory=PyramidConfig)
    image_height: int = 48
    image_width: int = 24
    in_channels: int = 3
    channels: tuple = CHANNEL_PLAN
    embed_dim: int = 128
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    seed: int = 0


def _stage_geometry(cfg: ModelConfig):
    """(C, H, W) of each stage output (after the downsample pool)."""
    h, w = cfg.image_height, cfg.image_width
    shapes = []
    for c in cfg.channels:
        h, w = (h - 2) // 2 + 1, (w - 2) // 2 + 1
        if h < 1 or w < 1:
            raise GeometryError(
                f"image {cfg.image_height}x{cfg.image_width} too small for 4 downsamples"
            )
        shapes.append((c, h, w))
    return shapes


def _feasible_spatial_levels(height, cfg: PyramidConfig) -> int:
    lv = 0
    for i in range(1, cfg.levels + 1):
        n = cfg.radix**i
        if height % n != 0 or height // n < 1:
            break
        lv = i
    return lv


class ToyBackbone:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.stage_shapes = _stage_geometry(cfg)
        rng = np.random.default_rng(cfg.seed)
        self.stage_convs = []
        self.stage_levels = []
        self.level_caps = []  # manifest notes: (stage, configured, effective)
        cin = cfg.in_channels
        for s, (c, h, w) in enumerate(self.stage_shapes):
            wconv = Tensor(he_normal(rng, (c, cin, 3, 3), cin * 9), requires_grad=True)
            self.stage_convs.append(wconv)
            pcfg = cfg.pyramid
            if pcfg.kind == pyr.SPATIAL and pcfg.levels > 0:
                eff = _feasible_spatial_levels(h, pcfg)
                if eff < pcfg.levels:
                    self.level_caps.append((s, pcfg.levels, eff))
                pcfg_eff = PyramidConfig(pcfg.radix, eff, pcfg.kind)
            else:
                pcfg_eff = pcfg
            self.stage_levels.append(pyr.build_levels(c, h, w, pcfg_eff, rng))
            cin = c
        c_last = self.stage_shapes[-1][0]
        self.embed_w = Tensor(
            he_normal(rng, (cfg.embed_dim, c_last), c_last), requires_grad=True
        )
        self.bn_gamma = Tensor(np.ones(cfg.embed_dim), requires_grad=True)
        self.bn_mean = np.zeros(cfg.embed_dim)
        self.bn_var = np.ones(cfg.embed_dim)
        self.cls_w = Tensor(
            he_normal(rng, (cfg.num_classes, cfg.embed_dim), cfg.embed_dim),
            requires_grad=True,
        )

    def stage_pyramid_config(self, s: int) -> PyramidConfig:
        base = self.cfg.pyramid
        return PyramidConfig(base.radix, len(self.stage_levels[s]), base.kind)

    # -- parameters ----------------------------------------------------

    def parameters(self):
        out = []
        for s, wconv in enumerate(self.stage_convs):
            out.append((f"stage{s}.conv", wconv))
            for lvl in self.stage_levels[s]:
                out.extend(lvl.named_tensors(prefix=f"stage{s}.pyramid."))
        out.append(("head.embed", self.embed_w))
        out.append(("head.bn_gamma", self.bn_gamma))
        out.append(("head.cls", self.cls_w))
        return out

    def census(self):
        return {name: t.size for name, t in self.parameters()}

    def pyramid_param_count(self):
        return sum(t.size for name, t in self.parameters() if ".pyramid." in name)

    # -- forward -------------------------------------------------------

    def forward(self, images: Tensor, train: bool = False, gate_sink=None):
        """(embeddings, logits) for a (B,3,H,W) image batch.

        ``gate_sink`` collects ((stage, level), gate-values) dumps.
        """
        x = images
        for s, wconv in enumerate(self.stage_convs):
            x = relu(conv2d(x, wconv, stride=1, pad=1))
            x = avg_pool2d(x, 2, 2)
            sink = [] if gate_sink is not None else None
            x = pyr.pyramid_forward(
                x, self.stage_levels[s], self.stage_pyramid_config(s), gate_sink=sink
            )
            if gate_sink is not None:
                for idx, g in sink:
                    gate_sink[(s, idx)] = g
        pooled = global_avg_pool(x)  # (B, C)
        raw = matmul(pooled, transpose(self.embed_w))  # (B, D)
        emb = self._bottleneck(raw, train)
        logits = matmul(emb, transpose(self.cls_w))
        return emb, logits

    def _bottleneck(self, raw: Tensor, train: bool) -> Tensor:
        if train:
            mu = tmean(raw, axis=0)
            centered = raw - mu
            var = tmean(centered * centered, axis=0)
            m = self.cfg.bn_momentum
            self.bn_mean = (1 - m) * self.bn_mean + m * mu.data
            self.bn_var = (1 - m) * self.bn_var + m * var.data
            denom = sqrt(var + self.cfg.bn_eps)
        else:
            centered = raw - Tensor(self.bn_mean)
            denom = sqrt(Tensor(self.bn_var + self.cfg.bn_eps))
        return (centered / denom) * self.bn_gamma

    # -- persistence ---------------------------------------------------

    def save(self, ckpt_dir):
        os.makedirs(ckpt_dir, exist_ok=True)
        for name, t in self.parameters():
            tensorfile.write_tensor(os.path.join(ckpt_dir, f"{name}.tsr"), t.data)
        tensorfile.write_tensor(os.path.join(ckpt_dir, "head.bn_mean.tsr"), self.bn_mean)
        tensorfile.write_tensor(os.path.join(ckpt_dir, "head.bn_var.tsr"), self.bn_var)
        meta = {
            "format": 1,
            "num_classes": self.cfg.num_classes,
            "image_height": self.cfg.image_height,
            "image_width": self.cfg.image_width,
            "channels": list(self.cfg.channels),
            "embed_dim": self.cfg.embed_dim,
            "pyramid": {
                "kind": self.cfg.pyramid.kind,
                "radix": self.cfg.pyramid.radix,
                "levels": self.cfg.pyramid.levels,
            },
        }
        with open(os.path.join(ckpt_dir, "meta.json"), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)

    def load(self, ckpt_dir):
        meta_path = os.path.join(ckpt_dir, "meta.json")
        if not os.path.exists(meta_path):
            raise CheckpointError(f"no checkpoint at {ckpt_dir}")
        with open(meta_path) as fh:
            meta = json.load(fh)
        mine = {
            "kind": self.cfg.pyramid.kind,
            "radix": self.cfg.pyramid.radix,
            "levels": self.cfg.pyramid.levels,
        }
        if meta.get("pyramid") != mine or meta.get("num_classes") != self.cfg.num_classes:
            raise CheckpointError(
                f"checkpoint built for {meta.get('pyramid')}/{meta.get('num_classes')} "
                f"classes, model is {mine}/{self.cfg.num_classes}"
            )
        for name, t in self.parameters():
            path = os.path.join(ckpt_dir, f"{name}.tsr")
            if not os.path.exists(path):
                raise CheckpointError(f"checkpoint missing parameter {name}")
            arr = tensorfile.read_tensor(path)
            if arr.shape != t.shape:
                raise CheckpointError(
                    f"checkpoint parameter {name} has shape {arr.shape}, "
                    f"model expects {t.shape}"
                )
            t.data = arr
        self.bn_mean = tensorfile.read_tensor(os.path.join(ckpt_dir, "head.bn_mean.tsr"))
        self.bn_var = tensorfile.read_tensor(os.path.join(ckpt_dir, "head.bn_var.tsr"))


def model_forward(images: Tensor, model: ToyBackbone, train: bool = False):
    """Functional alias for ToyBackbone.forward."""
    return model.forward(images, train=train)


def extract_features(images, model: ToyBackbone, flip_average: bool) -> Tensor:
    """Inference embeddings; optionally averaged with the mirrored pass."""
    images = images if isinstance(images, Tensor) else Tensor(images)
    with no_grad():
        emb, _ = model.forward(images, train=False)
        if flip_average:
            emb2, _ = model.forward(flip(images, axis=-1), train=False)
            emb = 0.5 * (emb + emb2)
    return emb
