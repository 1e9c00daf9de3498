"""Brute-force cost counter over expanded convolutions.

Everything here is computed one ``ConvPrimitive`` at a time with integer
arithmetic, independently of the closed forms in ``costmodel``.  A
multiply-accumulate counts as one FLOP and conv biases are not parameters
(conv + batch-norm).
"""

from __future__ import annotations

from collections import defaultdict

from .ir import ConvPrimitive, NetworkSpec, expand
from .report import CostReport, StageCost


def primitive_flops(p: ConvPrimitive) -> int:
    return p.width * p.height * primitive_params(p)


def primitive_params(p: ConvPrimitive) -> int:
    return p.kernel * p.kernel * p.in_channels * p.out_channels // p.groups


def primitive_mac(p: ConvPrimitive) -> int:
    # feature-map traffic plus weight traffic; the kernel term uses kernel area
    return p.width * p.height * (p.in_channels + p.out_channels) + primitive_params(p)


def primitive_cio(p: ConvPrimitive) -> int:
    # channel-product I/O: in*out per conv, no kernel area and no spatial factor.
    # Summed over an OSA-family block this gives the block-level CIO closed form.
    return p.in_channels * p.out_channels // p.groups


def oracle_cost(spec: NetworkSpec) -> CostReport:
    prims = expand(spec)
    by_stage: dict[int, list[ConvPrimitive]] = defaultdict(list)
    for p in prims:
        by_stage[p.stage].append(p)

    rf = _walk_receptive_field(spec, by_stage)
    stages = []
    for stage, geo in zip(spec.stages, spec.geometry):
        ps = by_stage[geo.index]
        stages.append(
            StageCost(
                name=geo.name,
                role=stage.role.value,
                flops=sum(primitive_flops(p) for p in ps),
                params=sum(primitive_params(p) for p in ps),
                mac=sum(primitive_mac(p) for p in ps),
                cio=sum(primitive_cio(p) for p in ps),
                receptive_field=rf[geo.index],
            )
        )
    return CostReport.from_stages(stages)


def flops_by_role(spec: NetworkSpec) -> dict[str, int]:
    out: dict[str, int] = defaultdict(int)
    for p in expand(spec):
        out[p.role] += primitive_flops(p)
    return dict(out)


def _walk_receptive_field(spec: NetworkSpec, by_stage) -> list[int]:
    rf: list[int] = []
    for geo in spec.geometry:
        field = max(1 if j < 0 else rf[j] for j in geo.inputs)
        jump = 2 ** geo.input_level
        for p in by_stage[geo.index]:
            # parallel branches inside a block are all 1x1, so a running sum
            # over the stage equals the longest path
            field += (p.kernel - 1) * jump
            jump *= p.stride
        rf.append(field)
    return rf
