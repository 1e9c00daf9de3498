"""Built-in architectures.

Backbones, necks and detectors are assembled from a handful of builders so
that structural choices live in one place.  Each preset carries a short note
explaining where its numbers come from.

Naming follows a small convention that the rewrite and planner modules rely
on: backbone stages are ``B1``..``BL`` (one per stride-2 level), neck and head
stages for pyramid level n start with ``P{n}.``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .ir import BlockKind, BlockSpec, NetworkSpec, Role, Stage, TensorShape

COCO_OUTPUTS = 3 * (4 + 1 + 80)
DEPTH_SCHEDULE = (1, 3, 15, 15, 7, 7, 7)
DARKNET53_DEPTHS = (1, 2, 8, 8, 4)
LARGE_INPUTS = {5: 896, 6: 1280, 7: 1536}


class PresetError(KeyError):
    pass


def conv(name: str, channels: int, kernel: int = 1, role: Role = Role.BACKBONE, **wiring) -> Stage:
    return Stage(BlockSpec(BlockKind.CONV, 1, channels, kernel=kernel), role=role, name=name, **wiring)


def block(name: str, kind: BlockKind, k: int, b: int, role: Role = Role.BACKBONE, **kw) -> Stage:
    spec_keys = {key: kw.pop(key) for key in ("growth", "partition_width", "spp") if key in kw}
    return Stage(BlockSpec(kind, k, b, **spec_keys), role=role, name=name, **kw)


# ---------------------------------------------------------------------------
# Backbones
# ---------------------------------------------------------------------------


def darknet_backbone(
    kinds: Sequence[BlockKind],
    depths: Sequence[int] = DARKNET53_DEPTHS,
    width: float = 1.0,
    stem: int = 32,
) -> list[Stage]:
    """Stem 3x3 conv then one downsampling block stage per level, channels doubling from 64."""
    stages = [conv("stem", _scaled(stem, width), 3)]
    for level, (kind, depth) in enumerate(zip(kinds, depths), start=1):
        stages.append(block(f"B{level}", kind, depth, _scaled(64 * 2 ** (level - 1), width), downsample=True))
    return stages


def _scaled(channels: int, width: float) -> int:
    return int(round(channels * width))


# ---------------------------------------------------------------------------
# Necks
# ---------------------------------------------------------------------------


def _head(level: int, neck_width: int, source: str) -> list[Stage]:
    return [
        conv(f"P{level}.head", 2 * neck_width, 3, Role.HEAD, source=source),
        conv(f"P{level}.det", COCO_OUTPUTS, 1, Role.HEAD),
    ]


def fpn_neck(kind: BlockKind, widths: dict[int, int], depth: int = 2) -> list[Stage]:
    """Top-down feature pyramid with SPP on the coarsest level.

    Each level runs a ``kind`` block at twice the level width followed by a
    1x1 conv down to the level width.  Finer levels reduce the coarser output
    with a 1x1 conv, upsample it and concatenate the backbone feature.
    """
    top = max(widths)
    td = Role.NECK_TOPDOWN
    stages = [
        block(f"P{top}.spp", kind, depth, 2 * widths[top], td, source=f"B{top}", spp=True),
        conv(f"P{top}.out", widths[top], 1, td),
        *_head(top, widths[top], f"P{top}.out"),
    ]
    prev = f"P{top}.out"
    for level in range(top - 1, min(widths) - 1, -1):
        n = widths[level]
        stages += [
            conv(f"P{level}.reduce", n, 1, td, source=prev),
            block(f"P{level}.td", kind, depth, 2 * n, td, upsample=True, concat=(f"B{level}",)),
            conv(f"P{level}.tdout", n, 1, td),
            *_head(level, n, f"P{level}.tdout"),
        ]
        prev = f"P{level}.tdout"
    return stages


def pan_neck(
    kind: BlockKind,
    widths: dict[int, int],
    depth: int = 2,
    spp_depth: int = 2,
) -> list[Stage]:
    """Top-down pass with lateral 1x1 convs, then a bottom-up aggregation pass.

    Detection heads sit on the finest top-down output and on every bottom-up
    output.
    """
    top, bottom = max(widths), min(widths)
    td, bu = Role.NECK_TOPDOWN, Role.NECK_BOTTOMUP
    stages = [
        block(f"P{top}.spp", kind, spp_depth, 2 * widths[top], td, source=f"B{top}", spp=True),
        conv(f"P{top}.out", widths[top], 1, td),
    ]
    feature = {top: f"P{top}.out"}
    for level in range(top - 1, bottom - 1, -1):
        n = widths[level]
        stages += [
            conv(f"P{level}.reduce", n, 1, td, source=feature[level + 1]),
            conv(f"P{level}.lateral", n, 1, td, source=f"B{level}"),
            block(
                f"P{level}.td", kind, depth, 2 * n, td,
                source=f"P{level}.reduce", upsample=True, concat=(f"P{level}.lateral",),
            ),
            conv(f"P{level}.tdout", n, 1, td),
        ]
        feature[level] = f"P{level}.tdout"
    stages += _head(bottom, widths[bottom], feature[bottom])
    prev = feature[bottom]
    for level in range(bottom + 1, top + 1):
        n = widths[level]
        stages += [
            Stage(
                BlockSpec(BlockKind.CONV, 1, n, kernel=3),
                downsample=True, role=bu, name=f"P{level}.down", source=prev,
            ),
            block(f"P{level}.bu", kind, depth, 2 * n, bu, concat=(feature[level],)),
            conv(f"P{level}.buout", n, 1, bu),
            *_head(level, n, f"P{level}.buout"),
        ]
        prev = f"P{level}.buout"
    return stages


def _yolo_widths(top: int = 5, n_top: int = 512) -> dict[int, int]:
    return {level: n_top >> (top - level) for level in range(3, top + 1)}


# ---------------------------------------------------------------------------
# Named networks
# ---------------------------------------------------------------------------

D53 = [BlockKind.DARK] * 5
CSP53 = [BlockKind.CSP_DARK] * 5
CD53S = [BlockKind.DARK] + [BlockKind.CSP_DARK] * 4

BACKBONES: dict[str, list[BlockKind]] = {
    "darknet53": D53,
    "cspdarknet53": CSP53,
    "cd53s": CD53S,
}

NECKS: dict[str, Callable[[], list[Stage]]] = {
    "fpnspp": lambda: fpn_neck(BlockKind.DARK, _yolo_widths()),
    "cfpnspp": lambda: fpn_neck(BlockKind.CSP_DARK, _yolo_widths()),
    "panspp": lambda: pan_neck(BlockKind.DARK, _yolo_widths()),
    "cpanspp": lambda: pan_neck(BlockKind.CSP_DARK, _yolo_widths()),
}


def detector(backbone: str, neck: str, size: int = 608, name: Optional[str] = None) -> NetworkSpec:
    if backbone not in BACKBONES:
        raise PresetError(f"unknown backbone {backbone!r}")
    if neck not in NECKS:
        raise PresetError(f"unknown neck {neck!r}")
    stages = darknet_backbone(BACKBONES[backbone]) + NECKS[neck]()
    return NetworkSpec(name or f"{backbone}+{neck}", TensorShape(size, size, 3), tuple(stages))


def backbone_only(name: str, size: int = 608) -> NetworkSpec:
    return NetworkSpec(name, TensorShape(size, size, 3), tuple(darknet_backbone(BACKBONES[name])))


@dataclass(frozen=True)
class LargeFamily:
    """Parameters of a fully CSP-ized pyramid detector."""

    levels: int
    width: float
    input_size: int
    depths: tuple[int, ...]
    neck_depth: int = 3
    spp_depth: int = 2


def large_detector(family: LargeFamily, name: Optional[str] = None) -> NetworkSpec:
    """CSP backbone with one stage per level and a CSP PAN over levels 3..L.

    Added levels keep doubling channels; the neck width at a level is half the
    backbone width there.
    """
    if len(family.depths) != family.levels:
        raise ValueError("need one depth per backbone level")
    if family.levels < 3:
        raise ValueError("a pyramid detector needs at least 3 levels")
    stages = darknet_backbone([BlockKind.CSP_DARK] * family.levels, family.depths, family.width)
    widths = {
        level: _scaled(64 * 2 ** (level - 1), family.width) // 2
        for level in range(3, family.levels + 1)
    }
    stages += pan_neck(BlockKind.CSP_DARK, widths, family.neck_depth, family.spp_depth)
    size = family.input_size
    return NetworkSpec(name or f"large-p{family.levels}", TensorShape(size, size, 3), tuple(stages))


def large_family(levels: int, width: float = 1.0, input_size: Optional[int] = None) -> LargeFamily:
    return LargeFamily(
        levels=levels,
        width=width,
        input_size=input_size or LARGE_INPUTS[levels],
        depths=DEPTH_SCHEDULE[:levels],
    )


def decompile_large(spec: NetworkSpec) -> LargeFamily:
    """Recover the family parameters of a spec built by ``large_detector``."""
    names = [geo.name for geo in spec.geometry]
    levels = 0
    while f"B{levels + 1}" in names:
        levels += 1
    if levels < 3 or f"P{levels}.spp" not in names:
        raise ValueError(f"{spec.name!r} is not a pyramid-family network")
    backbone = [spec.stages[spec.index_of(f"B{i}")].block for i in range(1, levels + 1)]
    if any(b.kind is not BlockKind.CSP_DARK for b in backbone):
        raise ValueError(f"{spec.name!r} backbone is not fully CSP")
    family = LargeFamily(
        levels=levels,
        width=backbone[0].base_channels / 64,
        input_size=spec.input.width,
        depths=tuple(b.repeats for b in backbone),
        neck_depth=spec.stages[spec.index_of(f"P{levels - 1}.td")].block.repeats,
        spp_depth=spec.stages[spec.index_of(f"P{levels}.spp")].block.repeats,
    )
    rebuilt = large_detector(family, spec.name)
    if rebuilt.with_stages(rebuilt.stages) != spec.with_stages(spec.stages, rebuilt.name):
        raise ValueError(f"{spec.name!r} deviates from the pyramid-family layout")
    return family


def tiny_detector(size: int = 416, name: str = "yolov4-tiny") -> NetworkSpec:
    """Two stride-2 stem convs, three PCB stages and a two-level head.

    Each PCB stage sees b channels, slices g = b/2, runs k = 3 layers and
    grows to b/2 + kg = 2b channels on the active path.
    """
    stages = [
        conv("stem1", 32, 3, downsample=True),
        conv("stem2", 64, 3, downsample=True),
    ]
    for level, b in ((1, 64), (2, 128), (3, 256)):
        stages.append(
            block(f"C{level}", BlockKind.CSP_OSA_PCB, 3, b, growth=b // 2, downsample=level > 1)
        )
    td, head = Role.NECK_TOPDOWN, Role.HEAD
    stages += [
        Stage(BlockSpec(BlockKind.CONV, 1, 512, kernel=3), downsample=True, name="P5.conv"),
        conv("P5.out", 256, 1, td),
        conv("P5.head", 512, 3, head),
        conv("P5.det", COCO_OUTPUTS, 1, head),
        conv("P4.reduce", 128, 1, td, source="P5.out"),
        conv("P4.head", 256, 3, head, upsample=True, concat=("C3",)),
        conv("P4.det", COCO_OUTPUTS, 1, head),
    ]
    return NetworkSpec(name, TensorShape(size, size, 3), tuple(stages))


@dataclass(frozen=True)
class Preset:
    name: str
    build: Callable[[], NetworkSpec]
    notes: str

    @property
    def spec(self) -> NetworkSpec:
        return self.build()


def _cspdarknet53() -> NetworkSpec:
    return backbone_only("cspdarknet53")


PRESETS: dict[str, Preset] = {
    p.name: p
    for p in (
        Preset(
            "darknet53",
            lambda: backbone_only("darknet53"),
            "Darknet53 backbone at 608: 3x3 stem, Dark stages 1-2-8-8-4 at 64..1024 channels.",
        ),
        Preset(
            "cspdarknet53",
            _cspdarknet53,
            "CSP-ized Darknet53: every stage CspDark, depths 1-2-8-8-4.",
        ),
        Preset(
            "cd53s",
            lambda: backbone_only("cd53s"),
            "CSPDarknet53 with the k=1 first stage reverted to a plain Dark stage.",
        ),
        Preset(
            "yolov4-csp",
            lambda: detector("cd53s", "cpanspp", 640, "yolov4-csp"),
            "CD53s backbone with CSP PAN-SPP neck, three heads, 640 input.",
        ),
        Preset(
            "yolov4-tiny",
            tiny_detector,
            "PCB backbone with g = b/2, k = 3; YOLOv3-tiny channel widths; 416 input.",
        ),
        Preset(
            "yolov4-p5",
            lambda: large_detector(large_family(5), "yolov4-p5"),
            "5 levels, depths 1,3,15,15,7, width 1.0, neck depth 3, 896 input.",
        ),
        Preset(
            "yolov4-p6",
            lambda: large_detector(large_family(6), "yolov4-p6"),
            "6 levels, depths 1,3,15,15,7,7, width 1.0, 1280 input; added level doubles channels.",
        ),
        Preset(
            "yolov4-p7",
            lambda: large_detector(large_family(7, 1.25), "yolov4-p7"),
            "7 levels, depths 1,3,15,15,7,7,7, width 1.25, 1536 input; added levels double channels.",
        ),
        Preset(
            "pan-spp-neck",
            lambda: detector("darknet53", "panspp", 608, "pan-spp-neck"),
            "Darknet53 with PAN-SPP neck (Dark blocks, k=2 per level, widths 512-256-128).",
        ),
        Preset(
            "csppan-spp-neck",
            lambda: detector("darknet53", "cpanspp", 608, "csppan-spp-neck"),
            "Darknet53 with the CSP-ized PAN-SPP neck (CspDark blocks at the same widths).",
        ),
    )
}

ALIASES = {"p5": "yolov4-p5", "p6": "yolov4-p6", "p7": "yolov4-p7"}


def get_preset(name: str) -> NetworkSpec:
    key = ALIASES.get(name, name)
    if key not in PRESETS:
        raise PresetError(f"unknown preset {name!r}")
    return PRESETS[key].spec


def preset_names() -> list[str]:
    return list(PRESETS)
