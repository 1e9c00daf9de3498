"""Closed-form cost formulas.

Every formula is evaluated in exact rational arithmetic.  Per-pixel terms are
kept separate from the spatial factor so the same expressions yield FLOPs
(times w*h), parameters (per pixel), MAC and CIO.  Nothing in this module
looks at expanded convolutions; ``oracle`` is the independent check.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from math import floor
from typing import Optional, Union

from .ir import PLAIN_TO_CSP, RESX_GROUPS, BlockKind, NetworkSpec
from .receptive import receptive_field
from .report import CostReport, StageCost

Number = Union[int, Fraction]


def round_nearest(x: Number) -> int:
    return floor(Fraction(x) + Fraction(1, 2))


@dataclass(frozen=True)
class Terms:
    """Per-pixel sums over a group of convolutions.

    weights: sum of kernel_area * C_in * C_out / groups (parameters, FLOPs per pixel)
    io:      sum of C_in + C_out (feature-map term of MAC, per pixel)
    cio:     sum of C_in * C_out / groups
    """

    weights: Fraction = Fraction(0)
    io: Fraction = Fraction(0)
    cio: Fraction = Fraction(0)

    def __add__(self, other: "Terms") -> "Terms":
        return Terms(self.weights + other.weights, self.io + other.io, self.cio + other.cio)

    def __mul__(self, n: Number) -> "Terms":
        return Terms(self.weights * n, self.io * n, self.cio * n)

    __rmul__ = __mul__


def conv_terms(c_in: Number, c_out: Number, kernel: int = 1, groups: int = 1) -> Terms:
    c_in, c_out = Fraction(c_in), Fraction(c_out)
    product = c_in * c_out / groups
    return Terms(kernel * kernel * product, c_in + c_out, product)


def block_terms(
    kind: BlockKind,
    k: int,
    b: Number,
    g: Optional[Number] = None,
    c_in: Optional[Number] = None,
    partition_width: Optional[Number] = None,
    spp: bool = False,
    kernel: Optional[int] = None,
) -> tuple[Terms, Terms]:
    """(body, transition) terms of one block with input width ``c_in`` (default b).

    ``body`` covers the computational layers and, for CSP kinds, the split,
    bypass and partial-transition convolutions.  ``transition`` is the
    aggregation conv that closes a plain Dense/OSA block; it is zero elsewhere.
    """
    # splits round down like the expansion, so odd widths agree with the oracle
    b = Fraction(b)
    c = b if c_in is None else Fraction(c_in)
    none = Terms()

    if kind is BlockKind.CONV:
        return conv_terms(c, b, kernel or 1), none

    if kind in (BlockKind.DARK, BlockKind.RES, BlockKind.RESX):
        if kind is BlockKind.DARK:
            mid = b // 2
            tail = conv_terms(mid, b, 3)
        elif kind is BlockKind.RES:
            mid = b // 4
            tail = conv_terms(mid, mid, 3) + conv_terms(mid, b)
        else:
            mid = b // 2
            tail = conv_terms(mid, mid, 3, RESX_GROUPS) + conv_terms(mid, b)
        body = conv_terms(c, mid) + (k - 1) * conv_terms(b, mid) + k * tail
        if spp:
            body += conv_terms(4 * mid, mid)
        return body, none

    if kind in (BlockKind.CSP_DARK, BlockKind.CSP_RES, BlockKind.CSP_RESX):
        half = b // 2
        if kind is BlockKind.CSP_DARK:
            inner = conv_terms(half, half) + conv_terms(half, half, 3)
        elif kind is BlockKind.CSP_RES:
            q = half // 2
            inner = conv_terms(half, q) + conv_terms(q, q, 3) + conv_terms(q, half)
        else:
            inner = (
                conv_terms(half, half)
                + conv_terms(half, half, 3, RESX_GROUPS)
                + conv_terms(half, half)
            )
        body = conv_terms(c, half) + k * inner + conv_terms(half, b - half)
        if spp:
            body += conv_terms(4 * half, half)
        return body, none

    if g is None:
        raise ValueError(f"growth required for kind {kind.value}")
    g = Fraction(g)
    pool = c + k * g

    if kind is BlockKind.OSA:
        body = conv_terms(c, g) + (k - 1) * conv_terms(g, g)
        return body, conv_terms(pool, pool // 2)
    if kind is BlockKind.DENSE:
        weights = k * c * g + g * g * k * (k - 1) / 2
        io = k * c + g * k * (k - 1) / 2 + k * g
        return Terms(weights, io, weights), conv_terms(pool, pool // 2)
    if kind is BlockKind.CSP_OSA:
        return k * conv_terms(g, g) + conv_terms(k * g, k * g), none
    if kind is BlockKind.CSP_OSA_PCB:
        pw = Fraction(partition_width) if partition_width is not None else Fraction(-(-pool // 2))
        return k * conv_terms(g, g) + conv_terms(pw, pw), none
    raise ValueError(f"no closed form for kind {kind.value}")


def layer_flops(
    kind: BlockKind,
    w: int,
    h: int,
    k: int,
    b: int,
    g: Optional[int] = None,
    partition_width: Optional[int] = None,
) -> int:
    """FLOPs of k layers of one block family at w x h, input width b.

    Res 17whkb^2/16, ResX 137whkb^2/128, Dark 5whkb^2, their CSP forms
    whb^2(3/4 + 13k/16), whb^2(3/4 + 73k/128), whb^2(3/4 + 5k/2); Dense
    whgbk + whg^2k(k-1)/2 and OSA whbg + whg^2(k-1) (the closing transition is
    not part of the Dense/OSA layer count).  CspOSA and CspOSA_PCB follow their
    channel plans: whkg^2 + wh(kg)^2 and whkg^2 + wh*pw^2.
    """
    if kind is BlockKind.CONV:
        raise ValueError("layer_flops is defined for block families, not plain Conv")
    if kind.needs_growth and g is None:
        raise ValueError(f"growth g required for kind {kind.value}")
    body, _ = block_terms(kind, k, b, g, partition_width=partition_width)
    return round_nearest(w * h * body.weights)


def block_flops(kind: BlockKind, w: int, h: int, k: int, b: int, g: Optional[int] = None) -> int:
    """layer_flops plus the closing Dense/OSA transition."""
    body, transition = block_terms(kind, k, b, g)
    return round_nearest(w * h * (body.weights + transition.weights))


# The same closed forms written out term by term, independent of block_terms.
REFERENCE_FORMS = {
    BlockKind.RES: lambda w, h, k, b, g: Fraction(17 * w * h * k * b * b, 16),
    BlockKind.RESX: lambda w, h, k, b, g: Fraction(137 * w * h * k * b * b, 128),
    BlockKind.DARK: lambda w, h, k, b, g: Fraction(5 * w * h * k * b * b),
    BlockKind.CSP_RES: lambda w, h, k, b, g: w * h * b * b * (Fraction(3, 4) + Fraction(13 * k, 16)),
    BlockKind.CSP_RESX: lambda w, h, k, b, g: w * h * b * b * (Fraction(3, 4) + Fraction(73 * k, 128)),
    BlockKind.CSP_DARK: lambda w, h, k, b, g: w * h * b * b * (Fraction(3, 4) + Fraction(5 * k, 2)),
    BlockKind.DENSE: lambda w, h, k, b, g: w * h * g * b * k + Fraction(w * h * g * g * k * (k - 1), 2),
    BlockKind.OSA: lambda w, h, k, b, g: Fraction(w * h * b * g + w * h * g * g * (k - 1)),
}


class ScaleKind(str, Enum):
    SIZE = "size"
    DEPTH = "depth"
    WIDTH = "width"


def apply_scaling(base: Number, kind_of_factor: Union[ScaleKind, str], factor: Number) -> Number:
    """Cost after scaling input size (alpha^2), depth (beta) or width (gamma^2)."""
    kind = ScaleKind(kind_of_factor)
    factor = Fraction(factor)
    if factor <= 0:
        raise ValueError("scaling factor must be positive")
    if base < 0:
        raise ValueError("base cost must be non-negative")
    multiplier = factor if kind is ScaleKind.DEPTH else factor * factor
    out = Fraction(base) * multiplier
    return int(out) if out.denominator == 1 else out


def mac(h: int, w: int, c_in: int, c_out: int, kernel_area: int) -> int:
    """Memory access cost hw(C_in + C_out) + K C_in C_out, K the kernel area."""
    return h * w * (c_in + c_out) + kernel_area * c_in * c_out


class CioVariant(str, Enum):
    OSA = "osa"
    CSP_OSA = "csp_osa"
    CSP_OSA_PCB = "csp_osa_pcb"


def cio_exact(variant: Union[CioVariant, str], b: int, g: int, k: int) -> Fraction:
    variant = CioVariant(variant)
    if min(b, g, k) < 1:
        raise ValueError("b, g, k must be >= 1")
    pool = Fraction(b + k * g)
    if variant is CioVariant.OSA:
        return Fraction(b * g + (k - 1) * g * g) + pool * pool / 2
    if variant is CioVariant.CSP_OSA:
        return Fraction(k * g * g + (k * g) ** 2)
    return Fraction(k * g * g) + pool * pool / 4


def cio(variant: Union[CioVariant, str], b: int, g: int, k: int) -> int:
    return round_nearest(cio_exact(variant, b, g, k))


def csp_stage_flops(w: int, h: int, k: int, b: int) -> int:
    """Whole CSPDarknet stage including its cross-stage downsampling: whb^2(9/4 + 3/4 + 5k/2)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return round_nearest(w * h * b * b * (Fraction(9, 4) + Fraction(3, 4) + Fraction(5 * k, 2)))


_ASYMPTOTIC = {
    "res": (Fraction(13, 16), Fraction(17, 16)),
    "resx": (Fraction(73, 128), Fraction(137, 128)),
    "dark": (Fraction(5, 2), Fraction(5)),
}


def asymptotic_csp_saving(kind: str) -> Fraction:
    """Limit of 1 - csp/original as k grows: ratio of the per-layer coefficients."""
    csp, original = _ASYMPTOTIC[kind.lower()]
    return 1 - csp / original


def finite_csp_saving(kind: str, k: int) -> Fraction:
    """1 - csp/original for a k-layer block, split and bypass overhead included."""
    plain = {"res": BlockKind.RES, "resx": BlockKind.RESX, "dark": BlockKind.DARK}[kind.lower()]
    csp = PLAIN_TO_CSP[plain]
    return 1 - REFERENCE_FORMS[csp](1, 1, k, 1, None) / REFERENCE_FORMS[plain](1, 1, k, 1, None)


# ---------------------------------------------------------------------------
# Whole-network closed form
# ---------------------------------------------------------------------------


def stage_terms(spec: NetworkSpec, index: int) -> Terms:
    stage, geo = spec.stages[index], spec.geometry[index]
    block = stage.block
    table = spec.geometry
    c = Fraction(geo.input_channels + sum(table[j].out_channels for j in geo.inputs[1:]))
    total = Terms()
    if stage.downsample and block.kind is not BlockKind.CONV:
        total += conv_terms(c, block.base_channels, 3)
        c = Fraction(block.base_channels)
    body, transition = block_terms(
        block.kind,
        block.repeats,
        block.base_channels,
        block.growth,
        c_in=c,
        partition_width=block.partition_width,
        spp=block.spp,
        kernel=block.kernel,
    )
    return total + body + transition


def closed_form_cost(spec: NetworkSpec) -> CostReport:
    fields = receptive_field(spec)
    stages = []
    for stage, geo in zip(spec.stages, spec.geometry):
        t = stage_terms(spec, geo.index)
        area = geo.width * geo.height
        stages.append(
            StageCost(
                name=geo.name,
                role=stage.role.value,
                flops=round_nearest(area * t.weights),
                params=round_nearest(t.weights),
                mac=round_nearest(area * t.io + t.weights),
                cio=round_nearest(t.cio),
                receptive_field=fields[geo.index],
            )
        )
    return CostReport.from_stages(stages)
