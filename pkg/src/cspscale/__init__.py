"""Block-level CNN cost modeling, CSP rewrites and compound scaling."""

from .costmodel import (
    apply_scaling,
    asymptotic_csp_saving,
    cio,
    closed_form_cost,
    csp_stage_flops,
    layer_flops,
    mac,
)
from .ir import (
    ArchError,
    ArchSemanticError,
    ArchSyntaxError,
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
)
from .oracle import oracle_cost, primitive_flops
from .planner import (
    Budget,
    ScalePlan,
    ScalingFactors,
    check_tiny_principles,
    compound_scale_up,
    derive_tiny_growth,
    receptive_field,
)
from .presets import get_preset, preset_names
from .report import CostReport, StageCost
from .rewrite import PartitionPlan, RewriteReport, cspize, plan_pcb_partition, prune_heads, revert_first_stage

__version__ = "0.1.0"
