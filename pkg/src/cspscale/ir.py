"""Block-level architecture IR.

A network is an ordered list of stages.  Each stage holds one computational
block (a family such as Dark or CspOSA, repeated ``k`` times at base width
``b``) plus the glue that feeds it: an optional input ``source``, nearest
upsampling, concatenation of earlier stage outputs and a stride-2 3x3
downsampling convolution.  That is enough to describe Darknet backbones and
FPN/PAN necks without a general graph.

``expand`` unrolls a spec into ``ConvPrimitive`` objects; ``trace`` returns the
same list interleaved with the zero-cost glue (slices, concats, SPP pooling).
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Optional, Sequence, Union

import yaml

RESX_GROUPS = 32


class ArchError(Exception):
    """Base class for architecture file problems."""


class ArchSyntaxError(ArchError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class ArchSemanticError(ArchError):
    pass


class BlockKind(str, Enum):
    RES = "Res"
    RESX = "ResX"
    DARK = "Dark"
    DENSE = "Dense"
    OSA = "OSA"
    CSP_RES = "CspRes"
    CSP_RESX = "CspResX"
    CSP_DARK = "CspDark"
    CSP_OSA = "CspOSA"
    CSP_OSA_PCB = "CspOSA_PCB"
    # single plain convolution; stems, lateral/reduce convs and detection heads
    CONV = "Conv"

    @property
    def needs_growth(self) -> bool:
        return self in GROWTH_KINDS

    @property
    def is_csp(self) -> bool:
        return self in CSP_TO_PLAIN


class Role(str, Enum):
    BACKBONE = "backbone"
    NECK_TOPDOWN = "neck_topdown"
    NECK_BOTTOMUP = "neck_bottomup"
    HEAD = "head"

    @property
    def is_neck(self) -> bool:
        return self in (Role.NECK_TOPDOWN, Role.NECK_BOTTOMUP)


GROWTH_KINDS = frozenset({BlockKind.DENSE, BlockKind.OSA, BlockKind.CSP_OSA, BlockKind.CSP_OSA_PCB})
PLAIN_TO_CSP = {
    BlockKind.RES: BlockKind.CSP_RES,
    BlockKind.RESX: BlockKind.CSP_RESX,
    BlockKind.DARK: BlockKind.CSP_DARK,
    BlockKind.OSA: BlockKind.CSP_OSA,
}
CSP_TO_PLAIN = {v: k for k, v in PLAIN_TO_CSP.items()}
CSP_TO_PLAIN[BlockKind.CSP_OSA_PCB] = BlockKind.OSA
SPP_KINDS = frozenset({BlockKind.DARK, BlockKind.CSP_DARK})
# plain residual families whose shortcut forces input width == base width
RESIDUAL_KINDS = frozenset({BlockKind.RES, BlockKind.RESX, BlockKind.DARK})


@dataclass(frozen=True)
class TensorShape:
    width: int
    height: int
    channels: int

    def __post_init__(self):
        for name in ("width", "height", "channels"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ArchSemanticError(f"input {name} must be an integer >= 1, got {value!r}")


@dataclass(frozen=True)
class BlockSpec:
    kind: BlockKind
    repeats: int
    base_channels: int
    growth: Optional[int] = None
    partition_width: Optional[int] = None
    kernel: Optional[int] = None  # Conv only
    spp: bool = False  # SPP pooling inside the last layer (Dark kinds)

    def __post_init__(self):
        kind = self.kind
        if not isinstance(kind, BlockKind):
            raise ArchSemanticError(f"unknown block kind {kind!r}")
        if not _is_count(self.repeats):
            raise ArchSemanticError(f"repeats must be an integer >= 1, got {self.repeats!r}")
        if not _is_count(self.base_channels):
            raise ArchSemanticError(f"base_channels must be an integer >= 1, got {self.base_channels!r}")
        if kind.needs_growth:
            if self.growth is None:
                raise ArchSemanticError(f"growth required for kind {kind.value}")
            if not _is_count(self.growth):
                raise ArchSemanticError(f"growth must be an integer >= 1, got {self.growth!r}")
        elif self.growth is not None:
            raise ArchSemanticError(f"growth forbidden for kind {kind.value}")
        if self.partition_width is not None:
            if kind is not BlockKind.CSP_OSA_PCB:
                raise ArchSemanticError(f"partition_width forbidden for kind {kind.value}")
            if not _is_count(self.partition_width):
                raise ArchSemanticError(f"partition_width must be an integer >= 1, got {self.partition_width!r}")
        if kind is BlockKind.CONV:
            if self.kernel not in (1, 3):
                raise ArchSemanticError(f"Conv kernel must be 1 or 3, got {self.kernel!r}")
            if self.repeats != 1:
                raise ArchSemanticError("Conv blocks take repeats = 1")
        elif self.kernel is not None:
            raise ArchSemanticError(f"kernel forbidden for kind {kind.value}")
        if self.spp and kind not in SPP_KINDS:
            raise ArchSemanticError(f"spp only allowed on Dark/CspDark, not {kind.value}")
        if kind in (BlockKind.RESX, BlockKind.CSP_RESX) and self.base_channels % (2 * RESX_GROUPS):
            raise ArchSemanticError(
                f"{kind.value} base_channels must be divisible by {2 * RESX_GROUPS}, got {self.base_channels}"
            )

    @property
    def group_width(self) -> Optional[int]:
        return RESX_GROUPS if self.kind in (BlockKind.RESX, BlockKind.CSP_RESX) else None


@dataclass(frozen=True)
class Stage:
    block: BlockSpec
    downsample: bool = False
    role: Role = Role.BACKBONE
    name: Optional[str] = None
    upsample: bool = False
    source: Optional[str] = None
    concat: tuple[str, ...] = ()

    def label(self, index: int) -> str:
        return self.name if self.name is not None else f"s{index}"


@dataclass(frozen=True)
class StageGeometry:
    """Resolved wiring of one stage: where its input comes from and its output shape."""

    index: int
    name: str
    input_channels: int  # channels entering the stage (after upsample, before concat)
    block_input: int  # channels entering the block (after concat and downsampling conv)
    out_channels: int
    input_level: int
    level: int  # number of stride-2 reductions relative to the network input
    width: int
    height: int
    inputs: tuple[int, ...]  # indices of producing stages; -1 is the network input


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    input: TensorShape
    stages: tuple[Stage, ...]

    def __post_init__(self):
        if not isinstance(self.stages, tuple):
            object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise ArchSemanticError("stage list must be non-empty")
        # resolving checks names, wiring and channel chaining
        object.__setattr__(self, "_geometry", _resolve(self))

    @property
    def geometry(self) -> tuple[StageGeometry, ...]:
        return self._geometry  # type: ignore[attr-defined]

    def index_of(self, name: str) -> int:
        for geo in self.geometry:
            if geo.name == name:
                return geo.index
        raise KeyError(name)

    def with_stages(self, stages: Iterable[Stage], name: Optional[str] = None) -> "NetworkSpec":
        return NetworkSpec(name or self.name, self.input, tuple(stages))

    @property
    def output_channels(self) -> int:
        return self.geometry[-1].out_channels


def _is_count(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value >= 1


def level_size(size: int, level: int) -> int:
    for _ in range(level):
        size = -(-size // 2)
    return size


def block_output_channels(block: BlockSpec, c_in: int) -> int:
    kind = block.kind
    b, k, g = block.base_channels, block.repeats, block.growth
    if kind in (BlockKind.OSA, BlockKind.DENSE):
        return (c_in + k * g) // 2
    if kind in (BlockKind.CSP_OSA, BlockKind.CSP_OSA_PCB):
        return c_in + k * g
    return b


def default_partition(c_in: int, block: BlockSpec) -> int:
    """Half of the PCB channel pool, rounded up (no bandwidth rounding)."""
    total = c_in + block.repeats * block.growth
    return -(-total // 2)


def _check_splits(block: BlockSpec, c_in: int, where: str) -> None:
    kind, b = block.kind, block.base_channels
    half, quarter = b // 2, b // 4
    if kind in (BlockKind.DARK, BlockKind.RESX, BlockKind.CSP_DARK, BlockKind.CSP_RESX) and half < 1:
        raise ArchSemanticError(f"{where}: base_channels {b} cannot be split in half")
    if kind is BlockKind.RES and quarter < 1:
        raise ArchSemanticError(f"{where}: base_channels {b} cannot be split in quarters")
    if kind is BlockKind.CSP_RES and half // 2 < 1:
        raise ArchSemanticError(f"{where}: base_channels {b} cannot be split in quarters")
    if kind in (BlockKind.CSP_OSA, BlockKind.CSP_OSA_PCB) and block.growth > c_in:
        raise ArchSemanticError(f"{where}: growth {block.growth} exceeds block input {c_in}")
    if kind is BlockKind.CSP_OSA_PCB and block.partition_width is not None:
        total = c_in + block.repeats * block.growth
        if block.partition_width > total:
            raise ArchSemanticError(
                f"{where}: partition_width {block.partition_width} exceeds channel pool {total}"
            )


def _resolve(spec: NetworkSpec) -> tuple[StageGeometry, ...]:
    by_name: dict[str, int] = {}
    geos: list[StageGeometry] = []
    for i, stage in enumerate(spec.stages):
        if not isinstance(stage, Stage):
            raise ArchSemanticError(f"stage {i} is not a Stage")
        if not isinstance(stage.role, Role):
            raise ArchSemanticError(f"stage {i}: unknown role {stage.role!r}")
        label = stage.label(i)
        where = f"stage {i} ({label})"
        if label in by_name:
            raise ArchSemanticError(f"{where}: duplicate stage name {label!r}")
        if stage.upsample and stage.downsample:
            raise ArchSemanticError(f"{where}: cannot both upsample and downsample")

        if stage.source is not None:
            if stage.source not in by_name:
                raise ArchSemanticError(f"{where}: unknown source stage {stage.source!r}")
            src = by_name[stage.source]
            channels, level = geos[src].out_channels, geos[src].level
        elif i == 0:
            src, channels, level = -1, spec.input.channels, 0
        else:
            src = i - 1
            channels, level = geos[-1].out_channels, geos[-1].level
        inputs = [src]
        if stage.upsample:
            if level == 0:
                raise ArchSemanticError(f"{where}: cannot upsample above input resolution")
            level -= 1
        input_channels = channels
        input_level = level
        for other in stage.concat:
            if other not in by_name:
                raise ArchSemanticError(f"{where}: unknown concat stage {other!r}")
            j = by_name[other]
            if geos[j].level < level:
                raise ArchSemanticError(
                    f"{where}: concat source {other!r} is at a finer resolution than the stage input"
                )
            channels += geos[j].out_channels
            inputs.append(j)

        block = stage.block
        if stage.downsample:
            if block.kind is BlockKind.CONV and block.kernel != 3:
                raise ArchSemanticError(f"{where}: a downsampling Conv needs kernel 3")
            level += 1
            if block.kind is not BlockKind.CONV:
                channels = block.base_channels
        elif (
            stage.role is Role.BACKBONE
            and block.kind in RESIDUAL_KINDS
            and channels != block.base_channels
        ):
            raise ArchSemanticError(
                f"{where}: channel-chain mismatch, input has {channels} channels but "
                f"residual block expects base_channels {block.base_channels}"
            )
        _check_splits(block, channels, where)
        out = block_output_channels(block, channels)
        by_name[label] = i
        geos.append(
            StageGeometry(
                index=i,
                name=label,
                input_channels=input_channels,
                block_input=channels,
                out_channels=out,
                input_level=input_level,
                level=level,
                width=level_size(spec.input.width, level),
                height=level_size(spec.input.height, level),
                inputs=tuple(inputs),
            )
        )
    return tuple(geos)


# ---------------------------------------------------------------------------
# Expansion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvPrimitive:
    """One convolution. ``width``/``height`` are the output spatial dims."""

    width: int
    height: int
    in_channels: int
    out_channels: int
    kernel: int
    groups: int = 1
    stride: int = 1
    stage: int = 0
    # layer | csp | transition | downsample | spp
    role: str = "layer"

    def __post_init__(self):
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ArchSemanticError(
                f"stage {self.stage}: {self.in_channels}->{self.out_channels} channels not divisible "
                f"by {self.groups} groups"
            )
        if self.kernel not in (1, 3):
            raise ArchSemanticError(f"kernel must be 1 or 3, got {self.kernel}")
        if self.stride not in (1, 2):
            raise ArchSemanticError(f"stride must be 1 or 2, got {self.stride}")


@dataclass(frozen=True)
class Annotation:
    """Zero-cost glue between convolutions (concat, slice, pooling, resampling)."""

    op: str
    in_channels: int
    out_channels: int
    stage: int = 0


Op = Union[ConvPrimitive, Annotation]


def trace(spec: NetworkSpec) -> list[Op]:
    """All ops of the network in execution order, including zero-cost glue."""
    ops: list[Op] = []
    for stage, geo in zip(spec.stages, spec.geometry):
        ops.extend(_stage_ops(stage, geo, spec.geometry))
    return ops


def expand(spec: NetworkSpec) -> list[ConvPrimitive]:
    return [op for op in trace(spec) if isinstance(op, ConvPrimitive)]


def stage_trace(spec: NetworkSpec, index: int) -> list[Op]:
    return list(_stage_ops(spec.stages[index], spec.geometry[index], spec.geometry))


def _stage_ops(
    stage: Stage, geo: StageGeometry, table: Sequence[StageGeometry]
) -> Iterator[Op]:
    i, w, h = geo.index, geo.width, geo.height
    block = stage.block
    c = geo.input_channels

    def conv(cin, cout, kernel, role="layer", groups=1, stride=1):
        return ConvPrimitive(w, h, cin, cout, kernel, groups, stride, i, role)

    if stage.upsample:
        yield Annotation("upsample", c, c, i)
    if stage.concat:
        extra = sum(table[j].out_channels for j in geo.inputs[1:])
        yield Annotation("concat", c, c + extra, i)
        c += extra
    if block.kind is BlockKind.CONV:
        yield conv(c, block.base_channels, block.kernel, stride=2 if stage.downsample else 1)
        return
    if stage.downsample:
        yield conv(c, block.base_channels, 3, "downsample", stride=2)
        c = block.base_channels
    yield from _block_ops(block, c, conv, i)


def _block_ops(block: BlockSpec, c: int, conv, i: int) -> Iterator[Op]:
    kind, k, b, g = block.kind, block.repeats, block.base_channels, block.growth

    if kind in (BlockKind.DARK, BlockKind.RES, BlockKind.RESX):
        cin = c
        for layer in range(k):
            spp = block.spp and layer == k - 1
            if kind is BlockKind.DARK:
                mid = b // 2
                yield conv(cin, mid, 1)
                if spp:
                    yield from _spp_ops(mid, conv, i)
                yield conv(mid, b, 3)
            elif kind is BlockKind.RES:
                mid = b // 4
                yield conv(cin, mid, 1)
                yield conv(mid, mid, 3)
                yield conv(mid, b, 1)
            else:
                mid = b // 2
                yield conv(cin, mid, 1)
                yield conv(mid, mid, 3, groups=RESX_GROUPS)
                yield conv(mid, b, 1)
            cin = b
        return

    if kind in (BlockKind.CSP_DARK, BlockKind.CSP_RES, BlockKind.CSP_RESX):
        half = b // 2
        yield conv(c, half, 1, "csp")
        for layer in range(k):
            spp = block.spp and layer == k - 1
            if kind is BlockKind.CSP_DARK:
                yield conv(half, half, 1)
                if spp:
                    yield from _spp_ops(half, conv, i)
                yield conv(half, half, 3)
            elif kind is BlockKind.CSP_RES:
                q = half // 2
                yield conv(half, q, 1)
                yield conv(q, q, 3)
                yield conv(q, half, 1)
            else:
                yield conv(half, half, 1)
                yield conv(half, half, 3, groups=RESX_GROUPS)
                yield conv(half, half, 1)
        # bypass branch leaves the split; its width absorbs an odd remainder
        yield conv(half, b - half, 1, "csp")
        yield Annotation("concat", b - half, b, i)
        return

    if kind in (BlockKind.OSA, BlockKind.DENSE):
        total = c + k * g
        for layer in range(k):
            if kind is BlockKind.OSA:
                cin = c if layer == 0 else g
            else:
                cin = c + layer * g
                if layer:
                    yield Annotation("concat", g, cin, i)
            yield conv(cin, g, 1)
        yield Annotation("concat", g, total, i)
        yield conv(total, total // 2, 1, "transition")
        return

    if kind in (BlockKind.CSP_OSA, BlockKind.CSP_OSA_PCB):
        total = c + k * g
        yield Annotation("slice", c, g, i)
        for _ in range(k):
            yield conv(g, g, 1)
        if kind is BlockKind.CSP_OSA:
            yield Annotation("concat", g, k * g, i)
            yield conv(k * g, k * g, 1, "csp")
            yield Annotation("concat", k * g, total, i)
        else:
            pw = block.partition_width or -(-total // 2)
            yield Annotation("concat", g, total, i)
            yield Annotation("slice", total, pw, i)
            yield conv(pw, pw, 1, "csp")
            yield Annotation("concat", pw, total, i)
        return

    raise ArchSemanticError(f"stage {i}: cannot expand kind {kind.value}")


def _spp_ops(width: int, conv, i: int) -> Iterator[Op]:
    # three max-pools concatenated with the identity, then a 1x1 fuse
    yield Annotation("spp", width, 4 * width, i)
    yield conv(4 * width, width, 1, "spp")


# ---------------------------------------------------------------------------
# Architecture files
# ---------------------------------------------------------------------------

TOP_KEYS = ("name", "input", "stages")
INPUT_KEYS = ("width", "height", "channels")
STAGE_REQUIRED = ("kind", "repeats", "base_channels", "downsample", "role")
STAGE_OPTIONAL = ("growth", "partition_width", "kernel", "spp", "name", "upsample", "source", "concat")


def parse_spec(text: str) -> NetworkSpec:
    """Parse an architecture file (YAML; JSON is accepted as a subset).

    Raises ArchSyntaxError for malformed text or a document that does not
    follow the key layout, and ArchSemanticError when the fields are well
    formed but violate an IR invariant.
    """
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark else None
        col = mark.column + 1 if mark else None
        raise ArchSyntaxError(f"malformed architecture file: {exc.problem}", line, col) from None
    except yaml.YAMLError as exc:
        raise ArchSyntaxError(f"malformed architecture file: {exc}") from None

    def fail(message: str, *path) -> ArchSyntaxError:
        node = _node_at(root, path)
        if node is None:
            return ArchSyntaxError(message)
        return ArchSyntaxError(message, node.start_mark.line + 1, node.start_mark.column + 1)

    if not isinstance(data, dict):
        raise fail("architecture file must be a mapping")
    _check_keys(data, TOP_KEYS, (), fail, ())
    if not isinstance(data["name"], str):
        raise fail("name must be text", "name")
    shape = data["input"]
    if not isinstance(shape, dict):
        raise fail("input must be a mapping", "input")
    _check_keys(shape, INPUT_KEYS, (), fail, ("input",))
    stages_data = data["stages"]
    if not isinstance(stages_data, list):
        raise fail("stages must be a list", "stages")

    stages = []
    for i, entry in enumerate(stages_data):
        path = ("stages", i)
        if not isinstance(entry, dict):
            raise fail(f"stage {i} must be a mapping", *path)
        _check_keys(entry, STAGE_REQUIRED, STAGE_OPTIONAL, fail, path)
        try:
            stages.append(_stage_from_dict(entry, i))
        except ArchSemanticError as exc:
            raise ArchSemanticError(f"stage {i}: {exc}") from None
        except (TypeError, ValueError) as exc:
            raise fail(f"stage {i}: {exc}", *path) from None
    return NetworkSpec(
        data["name"],
        TensorShape(shape["width"], shape["height"], shape["channels"]),
        tuple(stages),
    )


def load_spec(path) -> NetworkSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_spec(fh.read())


def _check_keys(data: dict, required, optional, fail, path) -> None:
    allowed = set(required) | set(optional)
    for key in data:
        if key not in allowed:
            raise fail(f"unknown key {key!r}", *path, key)
    for key in required:
        if key not in data:
            raise fail(f"missing key {key!r}", *path)


def _node_at(node, path):
    for step in path:
        if isinstance(node, yaml.MappingNode):
            found = None
            for key_node, value_node in node.value:
                if key_node.value == step:
                    found = key_node if step == path[-1] and isinstance(step, str) else value_node
                    break
            if found is None:
                return node
            node = found
        elif isinstance(node, yaml.SequenceNode) and isinstance(step, int) and step < len(node.value):
            node = node.value[step]
        else:
            return node
    return node


def _stage_from_dict(entry: dict, index: int) -> Stage:
    try:
        kind = BlockKind(entry["kind"])
    except ValueError:
        raise ArchSemanticError(f"unknown block kind {entry['kind']!r}") from None
    try:
        role = Role(entry["role"])
    except ValueError:
        raise ArchSemanticError(f"unknown role {entry['role']!r}") from None
    for flag in ("downsample", "upsample", "spp"):
        if flag in entry and not isinstance(entry[flag], bool):
            raise ArchSemanticError(f"{flag} must be true or false")
    concat = entry.get("concat", [])
    if not isinstance(concat, list) or not all(isinstance(c, str) for c in concat):
        raise ArchSemanticError("concat must be a list of stage names")
    for key in ("name", "source"):
        if entry.get(key) is not None and not isinstance(entry[key], str):
            raise ArchSemanticError(f"{key} must be text")
    block = BlockSpec(
        kind=kind,
        repeats=entry["repeats"],
        base_channels=entry["base_channels"],
        growth=entry.get("growth"),
        partition_width=entry.get("partition_width"),
        kernel=entry.get("kernel"),
        spp=entry.get("spp", False),
    )
    return Stage(
        block=block,
        downsample=entry["downsample"],
        role=role,
        name=entry.get("name"),
        upsample=entry.get("upsample", False),
        source=entry.get("source"),
        concat=tuple(concat),
    )


def spec_to_dict(spec: NetworkSpec) -> dict:
    stages = []
    for stage in spec.stages:
        block = stage.block
        entry: dict = {}
        if stage.name is not None:
            entry["name"] = stage.name
        entry["kind"] = block.kind.value
        entry["repeats"] = block.repeats
        entry["base_channels"] = block.base_channels
        if block.growth is not None:
            entry["growth"] = block.growth
        if block.partition_width is not None:
            entry["partition_width"] = block.partition_width
        if block.kernel is not None:
            entry["kernel"] = block.kernel
        if block.spp:
            entry["spp"] = True
        entry["downsample"] = stage.downsample
        if stage.upsample:
            entry["upsample"] = True
        if stage.source is not None:
            entry["source"] = stage.source
        if stage.concat:
            entry["concat"] = list(stage.concat)
        entry["role"] = stage.role.value
        stages.append(entry)
    return {
        "name": spec.name,
        "input": {
            "width": spec.input.width,
            "height": spec.input.height,
            "channels": spec.input.channels,
        },
        "stages": stages,
    }


def serialize_spec(spec: NetworkSpec) -> str:
    buf = io.StringIO()
    yaml.safe_dump(spec_to_dict(spec), buf, sort_keys=False, default_flow_style=None, allow_unicode=True)
    return buf.getvalue()
