from __future__ import annotations

import pytest

from conftest import single_block
from cspscale.ir import BlockKind, ConvPrimitive, expand
from cspscale.oracle import (
    flops_by_role,
    oracle_cost,
    primitive_cio,
    primitive_flops,
    primitive_mac,
    primitive_params,
)
from cspscale.presets import get_preset


def test_primitive_flops_pointwise():
    assert primitive_flops(ConvPrimitive(16, 16, 64, 32, 1)) == 524_288


def test_primitive_flops_3x3():
    assert primitive_flops(ConvPrimitive(16, 16, 32, 64, 3)) == 4_718_592


def test_primitive_flops_grouped():
    assert primitive_flops(ConvPrimitive(1, 1, 32, 32, 3, groups=32)) == 288


def test_primitive_params_mac_cio():
    p = ConvPrimitive(8, 8, 32, 32, 3)
    assert primitive_params(p) == 9216
    assert primitive_mac(p) == 64 * 64 + 9216
    assert primitive_cio(p) == 1024


@pytest.mark.parametrize(
    "kind,expected",
    [
        (BlockKind.DARK, 5_242_880),
        (BlockKind.RES, 1_114_112),
        (BlockKind.RESX, 1_122_304),
    ],
)
def test_oracle_single_layer(kind, expected):
    assert oracle_cost(single_block(kind, 16, 1, 64)).flops == expected


def test_report_totals_are_stage_sums():
    report = oracle_cost(get_preset("yolov4-csp"))
    for metric in ("flops", "params", "mac", "cio"):
        assert getattr(report, metric) == sum(getattr(s, metric) for s in report.per_stage)
    assert report.receptive_field == max(s.receptive_field for s in report.per_stage)


def test_additivity_over_concatenated_specs():
    spec = get_preset("darknet53")
    head = spec.with_stages(spec.stages[:3])
    full = oracle_cost(spec)
    assert full.per_stage[:3] == oracle_cost(head).per_stage
    assert full.flops == sum(s.flops for s in oracle_cost(head).per_stage) + sum(
        s.flops for s in full.per_stage[3:]
    )


def test_flops_by_role_sums_to_total():
    spec = get_preset("yolov4-tiny")
    assert sum(flops_by_role(spec).values()) == oracle_cost(spec).flops


def test_oracle_counts_every_primitive():
    spec = get_preset("cd53s")
    assert oracle_cost(spec).params == sum(primitive_params(p) for p in expand(spec))


@pytest.mark.parametrize("kind", [BlockKind.DARK, BlockKind.CSP_RES, BlockKind.OSA])
def test_monotone_in_each_argument(kind):
    g = 16 if kind.needs_growth else None
    base = oracle_cost(single_block(kind, 8, 2, 64, g=g))
    for w, k, b in ((16, 2, 64), (8, 3, 64), (8, 2, 128)):
        bigger = oracle_cost(single_block(kind, w, k, b, g=g))
        for metric in ("flops", "params", "mac", "cio"):
            assert getattr(bigger, metric) >= getattr(base, metric)
