"""Receptive field, tiny-model design checks and compound scaling."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from math import isqrt, log2
from typing import Iterable, Union

from .costmodel import CioVariant, block_terms, cio_exact, closed_form_cost, mac
from .ir import BlockKind, NetworkSpec, expand
from .presets import DEPTH_SCHEDULE, decompile_large, large_detector
from .receptive import receptive_field
from .report import CostReport
from .rewrite import plan_pcb_partition

__all__ = [
    "Budget",
    "BudgetKind",
    "PlanningError",
    "ScalingFactors",
    "ScalePlan",
    "WIDTH_GRID",
    "check_tiny_principles",
    "cio_region_map",
    "compound_scale_up",
    "derive_tiny_growth",
    "receptive_field",
]

WIDTH_GRID = (Fraction(1), Fraction(9, 8), Fraction(5, 4), Fraction(11, 8), Fraction(3, 2))


class PlanningError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Scaling factors and budgets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingFactors:
    alpha_size: Fraction = Fraction(1)
    beta_depth: Fraction = Fraction(1)
    gamma_width: Fraction = Fraction(1)
    delta_stages: int = 0
    # how each factor was chosen, keyed by field name
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("alpha_size", "beta_depth", "gamma_width"):
            value = Fraction(getattr(self, name))
            if value <= 0:
                raise ValueError(f"{name} must be > 0")
            object.__setattr__(self, name, value)

    @property
    def is_identity(self) -> bool:
        return (self.alpha_size, self.beta_depth, self.gamma_width, self.delta_stages) == (1, 1, 1, 0)

    def to_dict(self) -> dict:
        return {
            "alpha_size": str(self.alpha_size),
            "beta_depth": str(self.beta_depth),
            "gamma_width": str(self.gamma_width),
            "delta_stages": self.delta_stages,
            "provenance": dict(self.provenance),
        }


class BudgetKind(str, Enum):
    FLOPS = "flops"
    RATIO = "ratio-to-base"


@dataclass(frozen=True)
class Budget:
    """FLOP ceiling, absolute or as a multiple of the base network's FLOPs."""

    max_flops: Union[int, Fraction]
    target_kind: BudgetKind = BudgetKind.FLOPS

    def __post_init__(self):
        object.__setattr__(self, "target_kind", BudgetKind(self.target_kind))
        if self.max_flops <= 0:
            raise ValueError("max_flops must be > 0")

    def limit(self, base_flops: int) -> Fraction:
        if self.target_kind is BudgetKind.FLOPS:
            return Fraction(self.max_flops)
        return Fraction(self.max_flops) * base_flops


@dataclass(frozen=True)
class ScalePlan:
    factors: ScalingFactors
    stage_depths: tuple[int, ...]
    width_multiplier: Fraction
    resulting_spec: NetworkSpec
    cost: CostReport
    # FLOPs of every width candidate that was evaluated, in grid order
    candidates: tuple[tuple[Fraction, int], ...] = ()

    def to_dict(self) -> dict:
        return {
            "factors": self.factors.to_dict(),
            "stage_depths": list(self.stage_depths),
            "width_multiplier": str(self.width_multiplier),
            "resulting_spec": self.resulting_spec.name,
            "input": self.resulting_spec.input.width,
            "stages": len(self.resulting_spec.stages),
            "cost": self.cost.to_dict(),
            "candidates": [{"width": str(w), "flops": f} for w, f in self.candidates],
        }


def stage_count_for(base_input: int, target_input: int) -> int:
    """Pyramid levels to add: one per doubling of input area."""
    return round(log2((target_input / base_input) ** 2))


def compound_scale_up(base: NetworkSpec, target_input: int, budget: Budget) -> ScalePlan:
    """Scale a pyramid-family network to a larger input.

    Input size and stage count move together first (one level per doubling of
    input area), depths follow the schedule, then width is the largest grid
    value whose FLOPs fit the budget.
    """
    base_cost = closed_form_cost(base)
    limit = budget.limit(base_cost.flops)
    base_input = base.input.width
    if target_input < base_input:
        raise PlanningError(f"target input {target_input} is smaller than base input {base_input}")
    if base_cost.flops > limit:
        raise PlanningError(f"infeasible budget: base network needs {base_cost.flops} FLOPs, limit {limit}")
    family = decompile_large(base)

    if target_input == base_input:
        factors = ScalingFactors(provenance={"all": "target input equals base input; no scaling"})
        return ScalePlan(factors, family.depths, Fraction(family.width).limit_denominator(), base, base_cost)

    added = stage_count_for(base_input, target_input)
    levels = family.levels + added
    if levels > len(DEPTH_SCHEDULE):
        raise PlanningError(f"depth schedule covers at most {len(DEPTH_SCHEDULE)} levels, need {levels}")
    depths = tuple(DEPTH_SCHEDULE[:levels])
    base_width = Fraction(family.width).limit_denominator()

    candidates = []
    for gamma in WIDTH_GRID:
        fam = replace(family, levels=levels, width=float(base_width * gamma), input_size=target_input, depths=depths)
        spec = large_detector(fam, f"{base.name}-scaled-{target_input}")
        cost = closed_form_cost(spec)
        candidates.append((gamma, spec, cost))
    fitting = [c for c in candidates if c[2].flops <= limit]
    if not fitting:
        raise PlanningError(
            f"infeasible budget: smallest width needs {candidates[0][2].flops} FLOPs, limit {limit}"
        )
    # largest fitting width; equal costs resolve to the smaller width
    best_flops = max(c[2].flops for c in fitting)
    gamma, spec, cost = min((c for c in fitting if c[2].flops == best_flops), key=lambda c: c[0])

    common = min(len(family.depths), len(depths))
    beta = Fraction(sum(depths[:common]), sum(family.depths[:common]))
    factors = ScalingFactors(
        alpha_size=Fraction(target_input, base_input),
        beta_depth=beta,
        gamma_width=gamma,
        delta_stages=added,
        provenance={
            "alpha_size": f"target input {target_input} over base input {base_input}",
            "delta_stages": f"round(log2 of input area ratio) = {added}",
            "beta_depth": f"depth schedule {list(depths)} over base depths {list(family.depths)} on shared levels",
            "gamma_width": f"largest of {[str(w) for w in WIDTH_GRID]} within {limit} FLOPs",
        },
    )
    return ScalePlan(
        factors,
        depths,
        base_width * gamma,
        spec,
        cost,
        tuple((g, c.flops) for g, _, c in candidates),
    )


# ---------------------------------------------------------------------------
# Tiny-model design checks
# ---------------------------------------------------------------------------


def derive_tiny_growth(b: int, target_multiple: Union[int, Fraction, float, str]) -> tuple[int, int]:
    """Growth g = b/2 and the layer count k that grows b/2 + kg to target * b."""
    if b < 2 or b % 2:
        raise PlanningError(f"b must be even, got {b}")
    g = b // 2
    k = (Fraction(target_multiple) * b - g) / g
    if k.denominator != 1:
        raise PlanningError(f"non-integer k = {float(k)} for b={b}, target {target_multiple}")
    if k < 1:
        raise PlanningError(f"target {target_multiple} needs k = {k} < 1")
    return g, int(k)


@dataclass(frozen=True)
class PrincipleResult:
    name: str
    passed: bool
    details: tuple[str, ...] = ()


@dataclass(frozen=True)
class TinyReport:
    spec: str
    tau: int
    principles: tuple[PrincipleResult, ...]

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.principles)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec,
            "tau": self.tau,
            "passed": self.passed,
            "principles": [
                {"name": p.name, "passed": p.passed, "details": list(p.details)} for p in self.principles
            ],
        }


def check_tiny_principles(spec: NetworkSpec, tau: int = 1) -> TinyReport:
    return TinyReport(
        spec.name,
        tau,
        (
            _principle_order(spec),
            _principle_balance(spec, tau),
            _principle_channels(spec),
            _principle_cio(spec),
        ),
    )


def _block_stages(spec: NetworkSpec):
    for stage, geo in zip(spec.stages, spec.geometry):
        if stage.block.kind is not BlockKind.CONV:
            yield stage, geo


def _principle_order(spec: NetworkSpec) -> PrincipleResult:
    details, ok = [], True
    for stage, geo in _block_stages(spec):
        blk = stage.block
        flops = []
        for scale in (1, 2):
            body, transition = block_terms(
                blk.kind, blk.repeats, blk.base_channels * scale, blk.growth,
                c_in=geo.block_input * scale, spp=blk.spp,
            )
            flops.append(body.weights + transition.weights)
        ratio = flops[1] / flops[0]
        ok &= ratio < 4
        details.append(f"{geo.name}: FLOPs(2b)/FLOPs(b) = {float(ratio):.4f}")
    return PrincipleResult("order of computation below O(whkb^2)", ok, tuple(details))


def _principle_balance(spec: NetworkSpec, tau: int) -> PrincipleResult:
    details, ok = [], True
    for stage, geo in _block_stages(spec):
        blk = stage.block
        if blk.kind is not BlockKind.CSP_OSA_PCB:
            continue
        plan = plan_pcb_partition(geo.block_input, blk.repeats, blk.growth, tau)
        pw = blk.partition_width or plan.split_point
        good = plan.split_point <= pw <= plan.rounded_split
        ok &= good
        details.append(
            f"{geo.name}: partition {pw} of {plan.total_channels}, allowed "
            f"[{plan.split_point}, {plan.rounded_split}]"
        )
    if not details:
        details.append("no PCB stages")
    return PrincipleResult("balanced feature-map split", ok, tuple(details))


def _principle_channels(spec: NetworkSpec) -> PrincipleResult:
    block_stages = {geo.index for _, geo in _block_stages(spec)}
    prims = [p for p in expand(spec) if p.stage in block_stages and p.role != "downsample"]
    if not prims:
        return PrincipleResult("same channels in and out", True, ("no block primitives",))
    details = []
    equal = 0
    for p in prims:
        if p.in_channels == p.out_channels:
            equal += 1
            continue
        actual = mac(p.height, p.width, p.in_channels, p.out_channels, p.kernel * p.kernel)
        # the balanced pair with the same channel product reads and writes 2*sqrt(in*out)
        root = isqrt(p.in_channels * p.out_channels)
        balanced = p.width * p.height * 2 * root + p.kernel * p.kernel * p.in_channels * p.out_channels
        details.append(
            f"{spec.geometry[p.stage].name}: {p.in_channels}->{p.out_channels} MAC penalty {actual - balanced}"
        )
    fraction = equal / len(prims)
    details.insert(0, f"{equal}/{len(prims)} primitives with C_in = C_out ({fraction:.1%})")
    return PrincipleResult("same channels in and out", fraction >= 0.5, tuple(details))


_VARIANT_OF = {
    BlockKind.OSA: CioVariant.OSA,
    BlockKind.CSP_OSA: CioVariant.CSP_OSA,
    BlockKind.CSP_OSA_PCB: CioVariant.CSP_OSA_PCB,
}


def cio_argmin(b: int, g: int, k: int) -> CioVariant:
    """Variant with the smallest CIO; ties go to the earlier variant."""
    return min(CioVariant, key=lambda v: cio_exact(v, b, g, k))


def _principle_cio(spec: NetworkSpec) -> PrincipleResult:
    details, ok = [], True
    for stage, geo in _block_stages(spec):
        variant = _VARIANT_OF.get(stage.block.kind)
        if variant is None:
            continue
        blk = stage.block
        best = cio_argmin(geo.block_input, blk.growth, blk.repeats)
        ok &= best is variant
        details.append(f"{geo.name}: uses {variant.value}, CIO argmin {best.value}")
    if not details:
        details.append("no OSA-family stages")
    return PrincipleResult("minimal convolutional input/output", ok, tuple(details))


@dataclass(frozen=True)
class RegionPoint:
    b: int
    g: int
    k: int
    argmin: CioVariant
    pcb_below_csp: bool  # cio(pcb) < cio(csp_osa)
    derived: bool  # b < kg
    half_rule: bool  # kg > b/2, a common rule of thumb

    @property
    def half_rule_matches(self) -> bool:
        return self.pcb_below_csp == self.half_rule


def cio_region_map(bs: Iterable[int], gs: Iterable[int], ks: Iterable[int]) -> list[RegionPoint]:
    out = []
    gs, ks = list(gs), list(ks)
    for b in bs:
        for g in gs:
            for k in ks:
                out.append(
                    RegionPoint(
                        b, g, k,
                        cio_argmin(b, g, k),
                        cio_exact(CioVariant.CSP_OSA_PCB, b, g, k) < cio_exact(CioVariant.CSP_OSA, b, g, k),
                        b < k * g,
                        2 * k * g > b,
                    )
                )
    return out
