"""Split-attend-merge-stack gating.

Level i splits the running feature into radix**i parts along the kind's
axis (channels for channel gates, height for spatial gates), runs one
independent sub-attention per part, merges the part maps back in order,
and multiplies the sigmoid-normalized merged gate into the feature.
Levels run coarse to fine; a 0-level pyramid is the identity and a
radix-1 pyramid degenerates to plainly stacked whole-tensor attentions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .attention import ChannelAttentionParams, SpatialAttentionParams
from .errors import DivisibilityError, GeometryError
from .tensor import Tensor, concat, mul, reshape, sigmoid, split

CHANNEL = "channel"
SPATIAL = "spatial"


@dataclass(frozen=True)
class PyramidConfig:
    radix: int = 2
    levels: int = 2
    kind: str = CHANNEL

    def __post_init__(self):
        if self.radix < 1:
            raise GeometryError(f"radix must be >= 1, got {self.radix}")
        if self.levels < 0:
            raise GeometryError(f"levels must be >= 0, got {self.levels}")
        if self.kind not in (CHANNEL, SPATIAL):
            raise GeometryError(f"kind must be 'channel' or 'spatial', got {self.kind!r}")

    @property
    def split_axis(self) -> int:
        """Axis index in (C,H,W) terms: channels for channel kind, height else."""
        return 0 if self.kind == CHANNEL else 1


def num_parts(level: int, radix: int) -> int:
    """Part count at a level: radix**level (exponential refinement)."""
    if level < 1:
        raise GeometryError(f"level index must be >= 1, got {level}")
    if radix < 1:
        raise GeometryError(f"radix must be >= 1, got {radix}")
    return radix**level


@dataclass
class PyramidLevel:
    """Level i holds radix**i independent sub-attention blocks, in part order."""

    index: int
    blocks: list = field(default_factory=list)

    def named_tensors(self, prefix=""):
        out = []
        for j, blk in enumerate(self.blocks):
            for name, t in blk.named_tensors():
                out.append((f"{prefix}level{self.index}.part{j}.{name}", t))
        return out


def build_levels(channels, height, width, cfg: PyramidConfig, rng):
    """Construct all levels for one (C,H,W) attachment point.

    Fails fast (before any forward pass) if the split axis extent is not
    divisible by radix**i at some level, or a part is too narrow for its
    attention block.
    """
    levels = []
    for i in range(1, cfg.levels + 1):
        n = num_parts(i, cfg.radix)
        extent = channels if cfg.kind == CHANNEL else height
        if extent % n != 0:
            raise DivisibilityError(extent, n, axis=cfg.split_axis, level=i)
        blocks = []
        for _ in range(n):
            if cfg.kind == CHANNEL:
                blocks.append(ChannelAttentionParams.build(channels // n, rng))
            else:
                blocks.append(
                    SpatialAttentionParams.build(channels, height // n, width, rng)
                )
        levels.append(PyramidLevel(i, blocks))
    return levels


def _split_axis_for(x: Tensor, cfg: PyramidConfig) -> int:
    base = cfg.split_axis
    return base + 1 if x.ndim == 4 else base


def level_attention(x: Tensor, lvl: PyramidLevel, cfg: PyramidConfig) -> Tensor:
    """Merged gate of one level, each part's gate occupying its slice.

    Channel kind returns a (C,)/(B,C) gate, spatial kind (H,W)/(B,H,W).
    """
    n = len(lvl.blocks)
    parts = split(x, _split_axis_for(x, cfg), n)
    gates = [sigmoid(blk.logits(part)) for blk, part in zip(lvl.blocks, parts)]
    merge_axis = 0 if x.ndim == 3 else 1
    if n == 1:
        return gates[0]
    return concat(gates, axis=merge_axis)


def _broadcast_gate(gate: Tensor, x: Tensor, cfg: PyramidConfig) -> Tensor:
    if cfg.kind == CHANNEL:
        shape = gate.shape + (1, 1)
    else:
        hw = gate.shape[-2:]
        shape = ((x.shape[0], 1) if x.ndim == 4 else (1,)) + hw
    return reshape(gate, shape)


def apply_level(x_prev: Tensor, lvl: PyramidLevel, cfg: PyramidConfig) -> Tensor:
    """One stack step: sigmoid-normalized level gate times the feature."""
    gate = level_attention(x_prev, lvl, cfg)
    return mul(x_prev, _broadcast_gate(gate, x_prev, cfg))


def pyramid_forward(x: Tensor, levels, cfg: PyramidConfig, gate_sink=None) -> Tensor:
    """Fold all levels coarse to fine over x; no levels means identity.

    ``gate_sink``, when given, receives (level_index, gate_values) pairs
    for dumping. A divisibility failure aborts with the offending level.
    """
    indices = [lvl.index for lvl in levels]
    if indices != sorted(indices):
        raise GeometryError(f"levels must run coarse to fine, got order {indices}")
    for lvl in levels:
        try:
            gate = level_attention(x, lvl, cfg)
        except DivisibilityError as e:
            raise DivisibilityError(e.extent, e.n, axis=e.axis, level=lvl.index) from e
        if gate_sink is not None:
            gate_sink.append((lvl.index, gate.data.copy()))
        x = mul(x, _broadcast_gate(gate, x, cfg))
    return x
