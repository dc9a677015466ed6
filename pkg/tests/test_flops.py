"""MAC accounting: closed forms, double-entry total, monotone overhead."""

import pytest

from attnpyr.flops import FlopReport, conv_macs, count_flops, matmul_macs
from attnpyr.model import ModelConfig, ToyBackbone
from attnpyr.pyramid import PyramidConfig


def build(levels, kind="channel", radix=2):
    return ToyBackbone(
        ModelConfig(num_classes=16, pyramid=PyramidConfig(radix, levels, kind), seed=0)
    )


class TestClosedForms:
    def test_one_by_one_conv(self):
        # C_in=2, C_out=3 on a 4x4 map: 3*2*1*1*16 = 96 MACs
        assert conv_macs(3, 2, 1, 4, 4) == 96

    def test_matmul(self):
        assert matmul_macs(5, 7, 2) == 70


class TestReport:
    def test_total_equals_per_layer_sum_second_traversal(self):
        report = count_flops(build(3))
        assert report.total_macs == sum(l.macs for l in report.layers)
        assert report.total_macs == report.backbone_macs + report.attention_macs

    def test_zero_levels_no_attention_entries(self):
        report = count_flops(build(0))
        assert report.attention_macs == 0
        assert not any("pyramid" in l.name for l in report.layers)

    def test_backbone_macs_independent_of_levels(self):
        assert count_flops(build(0)).backbone_macs == count_flops(build(3)).backbone_macs

    def test_overhead_monotone_in_levels(self):
        totals = [count_flops(build(l)).total_macs for l in range(4)]
        assert all(b >= a for a, b in zip(totals, totals[1:]))
        attn = [count_flops(build(l)).attention_macs for l in range(4)]
        assert all(b > a for a, b in zip(attn, attn[1:]))

    def test_channel_overhead_below_one_percent(self):
        base = count_flops(build(0)).total_macs
        full = count_flops(build(3)).total_macs
        assert (full - base) / base < 0.01

    def test_spatial_counts_respect_capped_stages(self):
        report = count_flops(build(3, kind="spatial"))
        names = [l.name for l in report.layers if "pyramid" in l.name]
        # stage heights 24,12,6,3 allow 3,2,1,0 levels
        assert sum(n.startswith("stage0") for n in names) == 3
        assert sum(n.startswith("stage1") for n in names) == 2
        assert sum(n.startswith("stage2") for n in names) == 1
        assert sum(n.startswith("stage3") for n in names) == 0

    def test_as_dict_round_trip(self):
        d = count_flops(build(1)).as_dict()
        assert d["total_macs"] == d["backbone_macs"] + d["attention_macs"]
        assert all({"name", "macs"} == set(e) for e in d["layers"])
