"""Architecture-to-architecture transforms.

All transforms return new specs; inputs are never modified.  Cost deltas in
the reports come from the closed-form model.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional

from .costmodel import closed_form_cost
from .ir import (
    CSP_TO_PLAIN,
    PLAIN_TO_CSP,
    ArchSemanticError,
    BlockKind,
    NetworkSpec,
    Role,
    Stage,
)
from .report import CostReport, ratio_delta


class RewriteError(ArchSemanticError):
    """A transform's precondition does not hold for the given spec."""


class Scope(str, Enum):
    BACKBONE = "backbone"
    NECK = "neck"
    ALL = "all"

    def covers(self, role: Role) -> bool:
        if self is Scope.ALL:
            return True
        if self is Scope.BACKBONE:
            return role is Role.BACKBONE
        return role.is_neck


@dataclass(frozen=True)
class RewriteReport:
    before: CostReport
    after: CostReport
    flops_delta: float
    params_delta: float
    transform_log: tuple[str, ...]
    # cost of the stages a pruning removed; None for other transforms
    removed: Optional[CostReport] = None
    warnings: tuple[str, ...] = field(default=())

    @classmethod
    def build(cls, before: NetworkSpec, after: NetworkSpec, log, removed=None, warnings=()) -> "RewriteReport":
        b, a = closed_form_cost(before), closed_form_cost(after)
        return cls(
            before=b,
            after=a,
            flops_delta=ratio_delta(b.flops, a.flops),
            params_delta=ratio_delta(b.params, a.params),
            transform_log=tuple(log),
            removed=removed,
            warnings=tuple(warnings),
        )

    def to_dict(self) -> dict:
        return {
            "before": self.before.to_dict(),
            "after": self.after.to_dict(),
            "flops_delta": self.flops_delta,
            "params_delta": self.params_delta,
            "transform_log": list(self.transform_log),
            "removed": self.removed.to_dict() if self.removed else None,
            "warnings": list(self.warnings),
        }


# ---------------------------------------------------------------------------
# CSP-ization
# ---------------------------------------------------------------------------


def cspize(spec: NetworkSpec, scope: Scope | str = Scope.ALL) -> tuple[NetworkSpec, RewriteReport]:
    """Swap every plain block in scope for its CSP counterpart.

    Repeats, widths and wiring are kept; only the block kind changes.
    """
    scope = Scope(scope)
    stages, log = [], []
    for geo, stage in zip(spec.geometry, spec.stages):
        kind = stage.block.kind
        if scope.covers(stage.role) and kind in PLAIN_TO_CSP:
            new_kind = PLAIN_TO_CSP[kind]
            stage = replace(stage, block=replace(stage.block, kind=new_kind))
            log.append(f"{geo.name}: {kind.value} -> {new_kind.value}")
        stages.append(stage)
    warnings = [] if log else [f"no rewritable stage in scope {scope.value}"]
    out = spec.with_stages(stages)
    return out, RewriteReport.build(spec, out, log, warnings=warnings)


def first_backbone_block(spec: NetworkSpec) -> int:
    """Index of the first backbone stage that holds a block (stem convs skipped)."""
    for i, stage in enumerate(spec.stages):
        if stage.role is Role.BACKBONE and stage.block.kind is not BlockKind.CONV:
            return i
    raise RewriteError("spec has no backbone block stage")


def revert_first_stage(spec: NetworkSpec, name: Optional[str] = None) -> NetworkSpec:
    """Turn the first backbone block stage back into its plain counterpart."""
    i = first_backbone_block(spec)
    stage = spec.stages[i]
    kind = stage.block.kind
    if kind not in CSP_TO_PLAIN:
        raise RewriteError("first stage not CSP")
    new_block = replace(stage.block, kind=CSP_TO_PLAIN[kind], partition_width=None)
    stages = list(spec.stages)
    stages[i] = replace(stage, block=new_block)
    return spec.with_stages(stages, name)


# ---------------------------------------------------------------------------
# PCB partitioning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PartitionPlan:
    total_channels: int
    split_point: int
    bandwidth: int
    rounded_split: int

    @property
    def bypass(self) -> int:
        # rounding moves channels onto the active path; the bypass keeps the rest
        return self.total_channels - self.rounded_split


def partition_for(total: int, tau: int) -> PartitionPlan:
    if tau < 1:
        raise ValueError("bandwidth tau must be >= 1")
    if total < 1:
        raise ValueError("channel total must be >= 1")
    split = -(-total // 2)
    rounded = -(-total // (2 * tau)) * tau
    return PartitionPlan(total, split, tau, min(rounded, total))


def plan_pcb_partition(b: int, k: int, g: int, tau: int) -> PartitionPlan:
    """Split b + kg channels in half, rounded up to a multiple of tau."""
    return partition_for(b + k * g, tau)


def apply_partition(spec: NetworkSpec, tau: int, overwrite: bool = False) -> NetworkSpec:
    """Set the partition width of PCB stages from the bandwidth-rounded plan.

    Stages with an explicit partition width are left alone unless ``overwrite``.
    """
    stages = []
    for geo, stage in zip(spec.geometry, spec.stages):
        blk = stage.block
        if blk.kind is BlockKind.CSP_OSA_PCB and (overwrite or blk.partition_width is None):
            plan = plan_pcb_partition(geo.block_input, blk.repeats, blk.growth, tau)
            stage = replace(stage, block=replace(blk, partition_width=plan.rounded_split))
        stages.append(stage)
    return spec.with_stages(stages)


# ---------------------------------------------------------------------------
# Pruning
# ---------------------------------------------------------------------------

_LEVEL = re.compile(r"^P(\d+)\.")
_PRUNED_ROLES = (Role.NECK_BOTTOMUP, Role.HEAD)


def stage_level(name: str) -> Optional[int]:
    m = _LEVEL.match(name)
    return int(m.group(1)) if m else None


def detection_levels(spec: NetworkSpec) -> list[int]:
    levels = {
        stage_level(geo.name)
        for geo, stage in zip(spec.geometry, spec.stages)
        if stage.role is Role.HEAD
    }
    return sorted(level for level in levels if level is not None)


def pyramid_levels(spec: NetworkSpec) -> int:
    """Coarsest pyramid level that still has a detection branch."""
    levels = detection_levels(spec)
    return max(levels) if levels else 0


def prune_heads(spec: NetworkSpec, remove: Iterable[str]) -> tuple[NetworkSpec, RewriteReport]:
    """Drop the bottom-up path and detection branch of the top pyramid levels.

    ``remove`` lists level names (``P7``) and must be the coarsest levels,
    removed from the top down.
    """
    names = list(remove)
    if not names:
        raise RewriteError("nothing to remove")
    present = detection_levels(spec)
    wanted = []
    for name in names:
        m = re.fullmatch(r"P(\d+)", name)
        if not m or int(m.group(1)) not in present:
            raise RewriteError(f"unknown stage {name!r}")
        wanted.append(int(m.group(1)))
    if len(set(wanted)) != len(wanted):
        raise RewriteError("duplicate level in removal list")
    if sorted(wanted, reverse=True) != present[::-1][: len(wanted)]:
        raise RewriteError("non-contiguous removal")
    if len(wanted) >= len(present):
        raise RewriteError("cannot remove every detection level")

    drop = {
        geo.index
        for geo, stage in zip(spec.geometry, spec.stages)
        if stage_level(geo.name) in wanted and stage.role in _PRUNED_ROLES
    }
    kept = [i for i in range(len(spec.stages)) if i not in drop]
    for i in kept:
        if any(j in drop for j in spec.geometry[i].inputs):
            raise RewriteError(
                f"non-contiguous removal: {spec.geometry[i].name} consumes a removed stage"
            )

    suffix = "".join(f"\\P{level}" for level in sorted(wanted, reverse=True))
    stages = [_rewire(spec, i) for i in kept]
    out = spec.with_stages(stages, spec.name + suffix)
    full = closed_form_cost(spec)
    removed = CostReport.from_stages(full.per_stage[i] for i in sorted(drop))
    log = [f"removed {spec.geometry[i].name}" for i in sorted(drop)]
    return out, RewriteReport.build(spec, out, log, removed=removed)


def _rewire(spec: NetworkSpec, i: int) -> Stage:
    # implicit names and "previous stage" inputs shift once stages are dropped,
    # so both are pinned to their original values
    stage, geo = spec.stages[i], spec.geometry[i]
    source = stage.source
    if source is None and i > 0:
        source = spec.geometry[geo.inputs[0]].name
    return replace(stage, name=geo.name, source=source)
