"""Configuration sweeps and Pareto frontiers over (total memory, FLOPs ratio)."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigurationError
from .graph import ComputationGraph
from .numerics import NumericFormat
from .plan import NONE, CheckpointStrategy
from .profiler import FlopReport, MemoryReport, TrainingConfig, total_report


@dataclass
class SweepSpec:
    densities: list[float] = field(default_factory=lambda: [1.0])
    precisions: list[NumericFormat] = field(default_factory=lambda: [NumericFormat.FP32])
    microbatches: list[int] = field(default_factory=lambda: [100])
    strategies: list[CheckpointStrategy] = field(default_factory=lambda: [NONE])
    optimizers: list[str] = field(default_factory=lambda: ["sgd_nesterov"])
    minibatch: int = 100
    batch_unit: str = "examples"
    density_group: str | None = None

    def __post_init__(self):
        for name in ("densities", "precisions", "microbatches", "strategies", "optimizers"):
            if not getattr(self, name):
                raise ConfigurationError(f"sweep list '{name}' is empty")

    def configs(self, graph: ComputationGraph):
        group = self.density_group or (graph.sparsifiable_groups() or [None])[0]
        for d in self.densities:
            for p in self.precisions:
                for mb in self.microbatches:
                    for st in self.strategies:
                        for opt in self.optimizers:
                            density = {} if d >= 1.0 else {group: d}
                            yield TrainingConfig(
                                density=density,
                                precision=p,
                                minibatch=self.minibatch,
                                microbatch=mb,
                                strategy=st,
                                optimizer_kind=opt,
                                batch_unit=self.batch_unit,
                            )


@dataclass
class ParetoPoint:
    config: TrainingConfig
    memory: MemoryReport
    flops: FlopReport
    on_frontier: bool = False

    @property
    def total_bytes(self) -> int:
        return self.memory.total_bytes

    @property
    def flops_ratio(self) -> float:
        return self.flops.ratio_to_baseline


def _dominates(a: ParetoPoint, b: ParetoPoint) -> bool:
    le = a.total_bytes <= b.total_bytes and a.flops_ratio <= b.flops_ratio
    lt = a.total_bytes < b.total_bytes or a.flops_ratio < b.flops_ratio
    return le and lt


def mark_frontier(points: list[ParetoPoint]) -> list[ParetoPoint]:
    for p in points:
        p.on_frontier = not any(_dominates(q, p) for q in points if q is not p)
    return points


def sweep(graph: ComputationGraph, spec: SweepSpec, warnings: list[str] | None = None) -> list[ParetoPoint]:
    """Evaluate every combination; invalid ones are skipped with a warning.
    Points come back deterministically ordered by (bytes, ratio)."""
    points = []
    for cfg in spec.configs(graph):
        try:
            mem, fl = total_report(graph, cfg)
        except ConfigurationError as e:
            if warnings is not None:
                warnings.append(f"skipped {cfg.strategy}/{cfg.precision.name}: {e}")
            continue
        points.append(ParetoPoint(cfg, mem, fl))
    points.sort(key=lambda p: (p.total_bytes, p.flops_ratio, str(p.config.strategy)))
    return mark_frontier(points)
