"""Receptive field by a block-level stride walk.

Each k x k convolution widens the field by (k - 1) times the current pixel
stride and every stride-2 step doubles the stride.  Pooling inside SPP is not
counted, matching the zero-cost treatment of SPP elsewhere.
"""

from __future__ import annotations

from .ir import BlockKind, BlockSpec, NetworkSpec

_THREE_BY_THREE_PER_LAYER = {
    BlockKind.RES: 1,
    BlockKind.RESX: 1,
    BlockKind.DARK: 1,
    BlockKind.CSP_RES: 1,
    BlockKind.CSP_RESX: 1,
    BlockKind.CSP_DARK: 1,
    # OSA-family layers are modeled as 1x1 convolutions
    BlockKind.DENSE: 0,
    BlockKind.OSA: 0,
    BlockKind.CSP_OSA: 0,
    BlockKind.CSP_OSA_PCB: 0,
}


def block_depth_3x3(block: BlockSpec) -> int:
    """Number of 3x3 convolutions on the longest path through the block."""
    if block.kind is BlockKind.CONV:
        return 1 if block.kernel == 3 else 0
    return _THREE_BY_THREE_PER_LAYER[block.kind] * block.repeats


def receptive_field(spec: NetworkSpec) -> list[int]:
    """Receptive field (input pixels) of every stage output, in stage order."""
    fields: list[int] = []
    for stage, geo in zip(spec.stages, spec.geometry):
        rf = max(1 if j < 0 else fields[j] for j in geo.inputs)
        stride = 2 ** geo.input_level
        convs = block_depth_3x3(stage.block)
        if stage.downsample:
            if stage.block.kind is BlockKind.CONV:
                convs = 0
            rf += 2 * stride
            stride *= 2
        rf += 2 * convs * stride
        fields.append(rf)
    return fields
