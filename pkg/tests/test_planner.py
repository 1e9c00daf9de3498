from __future__ import annotations

from dataclasses import replace
from fractions import Fraction

import pytest

from conftest import single_block
from cspscale.costmodel import closed_form_cost
from cspscale.ir import BlockKind, BlockSpec, NetworkSpec, Stage, TensorShape
from cspscale.planner import (
    Budget,
    BudgetKind,
    PlanningError,
    ScalingFactors,
    check_tiny_principles,
    cio_argmin,
    cio_region_map,
    compound_scale_up,
    derive_tiny_growth,
    receptive_field,
)
from cspscale.presets import get_preset


def conv_chain(*kernels, size=32):
    stages = tuple(Stage(BlockSpec(BlockKind.CONV, 1, 8, kernel=k)) for k in kernels)
    return NetworkSpec("chain", TensorShape(size, size, 8), stages)


def test_rf_single_conv():
    assert receptive_field(conv_chain(3))[-1] == 3


def test_rf_two_convs():
    assert receptive_field(conv_chain(3, 3))[-1] == 5


def test_rf_pointwise_adds_nothing():
    assert receptive_field(conv_chain(3, 1, 1))[-1] == 3


def test_rf_after_downsample_grows_twice_as_fast():
    down = Stage(BlockSpec(BlockKind.CONV, 1, 8, kernel=3), downsample=True)
    conv = Stage(BlockSpec(BlockKind.CONV, 1, 8, kernel=3))
    base = NetworkSpec("a", TensorShape(32, 32, 8), (conv, conv))
    strided = NetworkSpec("b", TensorShape(32, 32, 8), (conv, down, conv, conv))
    growth_before = receptive_field(base)[1] - receptive_field(base)[0]
    rf = receptive_field(strided)
    assert rf[3] - rf[2] == 2 * growth_before


def test_rf_ignores_width_and_input_size():
    spec = get_preset("yolov4-p5")
    wider = get_preset("yolov4-p7")
    assert receptive_field(spec) == receptive_field(
        NetworkSpec(spec.name, replace(spec.input, width=1280, height=1280), spec.stages)
    )
    narrow = compound_scale_up(spec, 1536, Budget(10**15)).resulting_spec
    assert receptive_field(narrow) == receptive_field(wider)


def test_scaling_factors_identity_and_validation():
    assert ScalingFactors().is_identity
    with pytest.raises(ValueError):
        ScalingFactors(alpha_size=0)


def test_budget_kinds():
    assert Budget(2, "ratio-to-base").limit(100) == 200
    assert Budget(50).limit(100) == 50
    with pytest.raises(ValueError):
        Budget(0)


def test_scale_to_p6():
    p6 = get_preset("yolov4-p6")
    plan = compound_scale_up(get_preset("yolov4-p5"), 1280, Budget(closed_form_cost(p6).flops))
    assert plan.width_multiplier == 1
    assert plan.stage_depths == (1, 3, 15, 15, 7, 7)
    assert plan.factors.delta_stages == 1
    assert plan.resulting_spec.stages == p6.stages


def test_scale_to_p7():
    p7 = get_preset("yolov4-p7")
    plan = compound_scale_up(get_preset("yolov4-p5"), 1536, Budget(closed_form_cost(p7).flops))
    assert plan.width_multiplier == Fraction(5, 4)
    assert plan.stage_depths == (1, 3, 15, 15, 7, 7, 7)
    assert plan.resulting_spec.stages == p7.stages
    assert plan.cost.flops <= closed_form_cost(p7).flops


def test_scale_identity_plan():
    p5 = get_preset("yolov4-p5")
    plan = compound_scale_up(p5, 896, Budget(10**16))
    assert plan.factors.is_identity
    assert plan.resulting_spec == p5


def test_scale_ratio_budget():
    plan = compound_scale_up(get_preset("yolov4-p5"), 1280, Budget(3, BudgetKind.RATIO))
    assert plan.cost.flops <= 3 * closed_form_cost(get_preset("yolov4-p5")).flops


def test_scale_errors():
    p5 = get_preset("yolov4-p5")
    with pytest.raises(PlanningError, match="smaller"):
        compound_scale_up(p5, 640, Budget(10**15))
    with pytest.raises(PlanningError, match="infeasible"):
        compound_scale_up(p5, 1280, Budget(10))
    with pytest.raises(PlanningError, match="infeasible"):
        compound_scale_up(p5, 1280, Budget(closed_form_cost(p5).flops))


def test_scale_rejects_non_family_base():
    with pytest.raises(ValueError, match="pyramid-family"):
        compound_scale_up(get_preset("darknet53"), 1280, Budget(10**15))


def test_width_grows_with_budget():
    p5 = get_preset("yolov4-p5")
    widths = [
        compound_scale_up(p5, 1280, Budget(budget)).width_multiplier
        for budget in (4 * 10**11, 5 * 10**11, 6 * 10**11, 8 * 10**11, 10**13)
    ]
    assert widths == sorted(widths)
    assert widths[-1] == Fraction(3, 2)


def test_derive_tiny_growth():
    assert derive_tiny_growth(64, 2) == (32, 3)
    assert derive_tiny_growth(128, 2) == (64, 3)
    with pytest.raises(PlanningError, match="non-integer"):
        derive_tiny_growth(64, Fraction(7, 4))


def test_tiny_preset_passes_all_principles():
    report = check_tiny_principles(get_preset("yolov4-tiny"), 1)
    assert [p.passed for p in report.principles] == [True, True, True, True]


def test_res_spec_fails_order_principle():
    spec = single_block(BlockKind.RES, 32, 3, 64)
    report = check_tiny_principles(spec, 1)
    assert not report.principles[0].passed
    assert "= 4.0000" in report.principles[0].details[0]


def test_unbalanced_split_fails_balance_principle():
    # pool 160: a 1/3 active path is far from the half split
    spec = single_block(BlockKind.CSP_OSA_PCB, 16, 3, 64, g=32, partition_width=53)
    report = check_tiny_principles(spec, 1)
    assert not report.principles[1].passed


def test_channel_principle_reports_penalty():
    spec = single_block(BlockKind.DARK, 16, 2, 64)
    report = check_tiny_principles(spec, 1)
    channels = report.principles[2]
    assert not channels.passed
    assert any("MAC penalty" in d for d in channels.details)


def test_cio_principle_flags_wrong_variant():
    spec = single_block(BlockKind.OSA, 16, 3, 64, g=32)
    assert not check_tiny_principles(spec, 1).principles[3].passed


def test_check_is_pure():
    spec = get_preset("yolov4-tiny")
    assert check_tiny_principles(spec, 4) == check_tiny_principles(spec, 4)


def test_region_map_flags_half_rule_mismatch():
    points = cio_region_map([64], [16], [3])
    (point,) = points
    # kg = 48 > b/2 = 32 but b = 64 > kg, so PCB is not below CSPOSA here
    assert point.half_rule and not point.pcb_below_csp and not point.half_rule_matches
    assert cio_argmin(64, 32, 3).value == "csp_osa_pcb"
