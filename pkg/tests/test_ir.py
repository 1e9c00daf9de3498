from __future__ import annotations

import pytest

from conftest import single_block
from cspscale.ir import (
    ArchSemanticError,
    ArchSyntaxError,
    Annotation,
    BlockKind,
    BlockSpec,
    ConvPrimitive,
    NetworkSpec,
    Role,
    Stage,
    TensorShape,
    expand,
    parse_spec,
    serialize_spec,
    trace,
)
from cspscale.presets import get_preset, preset_names

MINIMAL = """
name: tiny-dark
input: {width: 32, height: 32, channels: 16}
stages:
  - {kind: Dark, repeats: 1, base_channels: 16, downsample: false, role: backbone}
"""


def pattern(spec):
    return [(p.in_channels, p.out_channels, p.kernel) for p in expand(spec)]


def test_parse_minimal():
    spec = parse_spec(MINIMAL)
    assert spec.name == "tiny-dark"
    assert len(spec.stages) == 1
    assert spec.stages[0].block == BlockSpec(BlockKind.DARK, 1, 16)


def test_cspdarknet53_depths():
    spec = parse_spec(serialize_spec(get_preset("cspdarknet53")))
    blocks = [s.block for s in spec.stages if s.block.kind is not BlockKind.CONV]
    assert len(blocks) == 5
    assert [b.repeats for b in blocks] == [1, 2, 8, 8, 4]
    assert all(s.role is Role.BACKBONE for s in spec.stages)


def test_growth_on_dark_is_semantic_error():
    text = MINIMAL.replace("downsample: false", "growth: 8, downsample: false")
    with pytest.raises(ArchSemanticError, match="growth forbidden for kind Dark"):
        parse_spec(text)


def test_missing_growth_rejected():
    with pytest.raises(ArchSemanticError, match="growth required"):
        BlockSpec(BlockKind.OSA, 3, 64)


def test_resx_width_must_divide_group_channels():
    with pytest.raises(ArchSemanticError, match="divisible by 64"):
        BlockSpec(BlockKind.RESX, 1, 96)


def test_syntax_error_reports_position():
    with pytest.raises(ArchSyntaxError) as err:
        parse_spec("name: x\ninput: {width: 32\nstages: []\n")
    assert err.value.line is not None


def test_unknown_key_is_syntax_error_with_position():
    text = MINIMAL.replace("role: backbone", "role: backbone, colour: red")
    with pytest.raises(ArchSyntaxError, match="unknown key 'colour'") as err:
        parse_spec(text)
    assert err.value.line == 5


def test_missing_key_is_syntax_error():
    with pytest.raises(ArchSyntaxError, match="missing key 'role'"):
        parse_spec(MINIMAL.replace(", role: backbone", ""))


def test_channel_chain_mismatch():
    text = MINIMAL.replace("channels: 16}", "channels: 3}")
    with pytest.raises(ArchSemanticError, match="channel-chain mismatch"):
        parse_spec(text)


def test_empty_stage_list_rejected():
    with pytest.raises(ArchSemanticError, match="non-empty"):
        parse_spec("name: x\ninput: {width: 8, height: 8, channels: 3}\nstages: []\n")


def test_roundtrip_minimal():
    spec = parse_spec(MINIMAL)
    assert parse_spec(serialize_spec(spec)) == spec


@pytest.mark.parametrize("name", preset_names())
def test_roundtrip_presets(name):
    spec = get_preset(name)
    assert parse_spec(serialize_spec(spec)) == spec


def test_roundtrip_keeps_partition_width():
    spec = single_block(BlockKind.CSP_OSA_PCB, 16, 3, 64, g=32, partition_width=96)
    back = parse_spec(serialize_spec(spec))
    assert back.stages[0].block.partition_width == 96


def test_expand_dark():
    spec = single_block(BlockKind.DARK, 16, 1, 64)
    assert pattern(spec) == [(64, 32, 1), (32, 64, 3)]


def test_expand_res_two_layers():
    prims = expand(single_block(BlockKind.RES, 16, 2, 64))
    assert len(prims) == 6
    assert [(p.in_channels, p.out_channels) for p in prims[:3]] == [(64, 16), (16, 16), (16, 64)]


def test_expand_resx_grouped():
    prims = expand(single_block(BlockKind.RESX, 8, 1, 64))
    assert [p.groups for p in prims] == [1, 32, 1]
    assert [(p.in_channels, p.out_channels) for p in prims] == [(64, 32), (32, 32), (32, 64)]


def test_expand_osa():
    prims = expand(single_block(BlockKind.OSA, 8, 3, 64, g=32))
    assert [(p.in_channels, p.out_channels) for p in prims] == [(64, 32), (32, 32), (32, 32), (160, 80)]
    assert prims[-1].role == "transition"


def test_expand_csp_dark_has_split_and_bypass():
    prims = expand(single_block(BlockKind.CSP_DARK, 8, 1, 64))
    assert [(p.in_channels, p.out_channels, p.role) for p in prims] == [
        (64, 32, "csp"),
        (32, 32, "layer"),
        (32, 32, "layer"),
        (32, 32, "csp"),
    ]


def test_downsample_prepends_stride_two_conv():
    stage = Stage(BlockSpec(BlockKind.DARK, 1, 64), downsample=True)
    spec = NetworkSpec("ds", TensorShape(33, 33, 32), (stage,))
    first = expand(spec)[0]
    assert (first.kernel, first.stride, first.in_channels, first.out_channels) == (3, 2, 32, 64)
    # ceiling halving on odd sizes
    assert (first.width, first.height) == (17, 17)


def test_odd_split_rounds_down_remainder_to_last_conv():
    prims = expand(single_block(BlockKind.CSP_DARK, 4, 1, 33))
    assert prims[0].out_channels == 16
    assert prims[-1].out_channels == 17


def test_unsplittable_width_reports_stage():
    with pytest.raises(ArchSemanticError, match="stage 0"):
        single_block(BlockKind.RES, 4, 1, 3)


def test_conv_primitive_invariants():
    with pytest.raises(ArchSemanticError):
        ConvPrimitive(4, 4, 33, 32, 3, groups=32)
    with pytest.raises(ArchSemanticError):
        ConvPrimitive(4, 4, 32, 32, 5)
    with pytest.raises(ArchSemanticError):
        ConvPrimitive(4, 4, 32, 32, 3, stride=3)


def test_trace_marks_glue_as_annotations():
    ops = trace(get_preset("pan-spp-neck"))
    ops_kinds = {op.op for op in ops if isinstance(op, Annotation)}
    assert {"concat", "upsample", "spp"} <= ops_kinds


def test_chaining_within_block_paths():
    for name in ("darknet53", "yolov4-p5"):
        ops = [op for op in trace(get_preset(name)) if isinstance(op, ConvPrimitive) and op.role == "layer"]
        for stage in {p.stage for p in ops}:
            layers = [p for p in ops if p.stage == stage]
            # sequential layers inside Dark/CspDark: each 3x3 feeds the next layer's 1x1
            for a, b in zip(layers, layers[1:]):
                if a.kernel == 1 and b.kernel == 3:
                    assert a.out_channels == b.in_channels


def test_expansion_is_deterministic():
    spec = get_preset("yolov4-p6")
    assert expand(spec) == expand(get_preset("yolov4-p6"))
