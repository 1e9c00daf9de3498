"""Cost report containers shared by the closed-form model and the oracle."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable

METRICS = ("flops", "params", "mac", "cio", "receptive_field")
ADDITIVE = ("flops", "params", "mac", "cio")


@dataclass(frozen=True)
class StageCost:
    name: str
    role: str
    flops: int
    params: int
    mac: int
    cio: int
    receptive_field: int


@dataclass(frozen=True)
class CostReport:
    """Network totals plus the per-stage breakdown.

    The additive metrics are sums over ``per_stage``; ``receptive_field`` is
    the largest per-stage value, since receptive fields do not add.
    """

    flops: int
    params: int
    mac: int
    cio: int
    receptive_field: int
    per_stage: tuple[StageCost, ...]

    @classmethod
    def from_stages(cls, stages: Iterable[StageCost]) -> "CostReport":
        stages = tuple(stages)
        return cls(
            flops=sum(s.flops for s in stages),
            params=sum(s.params for s in stages),
            mac=sum(s.mac for s in stages),
            cio=sum(s.cio for s in stages),
            receptive_field=max((s.receptive_field for s in stages), default=0),
            per_stage=stages,
        )

    def subset(self, roles: Iterable[str]) -> "CostReport":
        roles = set(roles)
        return CostReport.from_stages(s for s in self.per_stage if s.role in roles)

    def stage(self, name: str) -> StageCost:
        for s in self.per_stage:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CostReport":
        stages = tuple(StageCost(**s) for s in data["per_stage"])
        return cls(**{k: data[k] for k in METRICS}, per_stage=stages)


def ratio_delta(before: int, after: int) -> float:
    """1 - after/before; zero when both are zero."""
    if before == 0:
        return 0.0
    return 1.0 - after / before
