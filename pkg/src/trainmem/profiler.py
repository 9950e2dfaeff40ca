"""Static training-cost model: model/optimizer/activation memory and
forward/backward/recompute FLOPs for a (graph, TrainingConfig) pair."""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field

from .errors import ConfigurationError
from .graph import ComputationGraph
from .numerics import NumericFormat, tensor_bytes
from .plan import NONE, CheckpointStrategy, Plan, Sizing, replay
from .sparse import csr_storage_bytes_from_counts

TOKEN_MICROBATCH_FLOOR = 250

OPTIMIZER_VALUE_ARRAYS = {"sgd_nesterov": 2, "adam": 3}


@dataclass
class TrainingConfig:
    """One point in the technique space: sparsity, precision, batching,
    checkpoint strategy, and optimizer kind."""

    density: dict[str, float] = field(default_factory=dict)
    precision: NumericFormat = NumericFormat.FP32
    minibatch: int = 100
    microbatch: int | None = None
    strategy: CheckpointStrategy = NONE
    optimizer_kind: str = "sgd_nesterov"
    batchnorm_params_fp32: bool | None = None
    batch_unit: str = "examples"

    def __post_init__(self):
        if self.microbatch is None:
            self.microbatch = self.minibatch
        if self.batchnorm_params_fp32 is None:
            self.batchnorm_params_fp32 = self.precision is NumericFormat.FP16
        if self.optimizer_kind not in OPTIMIZER_VALUE_ARRAYS:
            raise ConfigurationError(f"unknown optimizer kind '{self.optimizer_kind}'")
        for group, frac in self.density.items():
            if not 0.0 < frac <= 1.0:
                raise ConfigurationError(f"density for group '{group}' must be in (0, 1]")
        if self.microbatch > self.minibatch or self.microbatch < 1:
            raise ConfigurationError("microbatch must be in [1, minibatch]")
        if self.minibatch % self.microbatch != 0:
            raise ConfigurationError("microbatch must divide minibatch")
        if self.batch_unit == "tokens" and self.microbatch < TOKEN_MICROBATCH_FLOOR:
            raise ConfigurationError(
                f"token microbatch must be >= {TOKEN_MICROBATCH_FLOOR} "
                "(the longest-sentence floor)"
            )

    def validate_for(self, graph: ComputationGraph):
        if self.batch_unit != graph.batch_unit:
            raise ConfigurationError(
                f"config batch unit '{self.batch_unit}' does not match "
                f"graph batch unit '{graph.batch_unit}'"
            )
        for group in self.density:
            if group not in graph.sparsifiable_groups():
                raise ConfigurationError(f"graph has no sparsifiable group '{group}'")


@dataclass
class MemoryReport:
    model_bytes: int
    optimizer_bytes: int
    activation_forward_bytes: int
    activation_backward_bytes: int

    @property
    def total_bytes(self) -> int:
        return (
            self.model_bytes
            + self.optimizer_bytes
            + self.activation_forward_bytes
            + self.activation_backward_bytes
        )

    @property
    def total_mb(self) -> float:
        return self.total_bytes / 1e6  # decimal megabytes

    def to_dict(self) -> dict:
        return {
            "model_bytes": self.model_bytes,
            "optimizer_bytes": self.optimizer_bytes,
            "activation_forward_bytes": self.activation_forward_bytes,
            "activation_backward_bytes": self.activation_backward_bytes,
            "total_bytes": self.total_bytes,
            "total_mb": self.total_mb,
        }


@dataclass
class FlopReport:
    forward_flops: int
    backward_flops: int
    recompute_flops: int
    recompute_events: int = 0

    @property
    def ratio_to_baseline(self) -> float:
        base = self.forward_flops + self.backward_flops
        return (base + self.recompute_flops) / base if base else 1.0

    def to_dict(self) -> dict:
        return {
            "forward_flops": self.forward_flops,
            "backward_flops": self.backward_flops,
            "recompute_flops": self.recompute_flops,
            "flops_ratio": self.ratio_to_baseline,
        }


# ---------------------------------------------------------------------------


def param_nnz(graph: ComputationGraph, density: dict[str, float]) -> dict[str, int]:
    """Nonzeros per sparsified tensor: round(density * numel), half-to-even."""
    nnz = {}
    for spec in graph.all_params():
        if spec.sparse and spec.group in density and density[spec.group] < 1.0:
            nnz[spec.name] = int(round(density[spec.group] * spec.numel))
    return nnz


def _param_format(node_op: str, kind: str, config: TrainingConfig) -> NumericFormat:
    if (
        kind == "norm"
        and node_op == "batchnorm"
        and config.precision is NumericFormat.FP16
        and config.batchnorm_params_fp32
    ):
        return NumericFormat.FP32
    return config.precision


def model_memory(graph: ComputationGraph, config: TrainingConfig) -> int:
    """Bytes to store the parameters; sparsified tensors in CSR form (the
    model owns the index arrays)."""
    nnz = param_nnz(graph, config.density)
    total = 0
    for node in graph.nodes:
        for spec in graph.params_of(node):
            fmt = _param_format(node.op, spec.kind, config)
            if spec.name in nnz:
                rows, cols = spec.csr_dims
                total += csr_storage_bytes_from_counts(
                    rows, cols, nnz[spec.name], fmt.element_bytes
                )
            else:
                total += tensor_bytes(spec.shape, fmt)
    return total


def optimizer_memory(graph: ComputationGraph, config: TrainingConfig) -> int:
    """Gradient plus momentum buffers: two value arrays for SGD with
    Nesterov momentum, three for Adam.  Sparse buffers store values only;
    the index arrays are shared with the model."""
    arrays = OPTIMIZER_VALUE_ARRAYS[config.optimizer_kind]
    nnz = param_nnz(graph, config.density)
    total = 0
    for node in graph.nodes:
        for spec in graph.params_of(node):
            fmt = _param_format(node.op, spec.kind, config)
            count = nnz.get(spec.name, spec.numel)
            total += arrays * count * fmt.element_bytes
    return total


_plan_cache: "weakref.WeakKeyDictionary[ComputationGraph, dict]" = weakref.WeakKeyDictionary()


def plan_for(graph: ComputationGraph, strategy: CheckpointStrategy) -> Plan:
    per_graph = _plan_cache.setdefault(graph, {})
    if strategy not in per_graph:
        per_graph[strategy] = Plan(graph, strategy)
    return per_graph[strategy]


def _replay(graph, config: TrainingConfig, strategy: CheckpointStrategy, batch: int):
    sizing = Sizing(graph, batch, config.precision, param_nnz(graph, config.density))
    return replay(graph, strategy, sizing, plan=plan_for(graph, strategy))


def activation_memory(
    graph: ComputationGraph,
    config: TrainingConfig,
    strategy: CheckpointStrategy | None = None,
) -> tuple[int, int]:
    """Peak activation bytes for one microbatch step, split at the peak into
    the stored-forward part and the live-gradient part."""
    config.validate_for(graph)
    strategy = config.strategy if strategy is None else strategy
    result = _replay(graph, config, strategy, config.microbatch)
    return result.peak_forward_bytes, result.peak_backward_bytes


def stored_forward_bytes(
    graph: ComputationGraph,
    config: TrainingConfig,
    strategy: CheckpointStrategy | None = None,
) -> int:
    """Bytes of stored activations at the end of the forward pass."""
    strategy = config.strategy if strategy is None else strategy
    return _replay(graph, config, strategy, config.microbatch).end_forward_bytes


def flops(
    graph: ComputationGraph,
    config: TrainingConfig,
    strategy: CheckpointStrategy | None = None,
) -> FlopReport:
    """FLOPs for one full minibatch step (forward, backward, recompute).

    Microbatching does not change the total; all components scale linearly
    in the batch, so the per-example replay is scaled exactly.
    """
    config.validate_for(graph)
    strategy = config.strategy if strategy is None else strategy
    result = _replay(graph, config, strategy, 1)
    scale = config.minibatch
    return FlopReport(
        forward_flops=result.forward_flops * scale,
        backward_flops=result.backward_flops * scale,
        recompute_flops=result.recompute_flops * scale,
        recompute_events=result.recompute_events,
    )


def total_report(graph: ComputationGraph, config: TrainingConfig) -> tuple[MemoryReport, FlopReport]:
    """Peak training memory for one microbatch step plus the FLOP report.

    The gradient-accumulation buffer for microbatching is the optimizer's
    gradient buffer, already included in optimizer bytes.
    """
    config.validate_for(graph)
    fwd, bwd = activation_memory(graph, config)
    mem = MemoryReport(
        model_bytes=model_memory(graph, config),
        optimizer_bytes=optimizer_memory(graph, config),
        activation_forward_bytes=fwd,
        activation_backward_bytes=bwd,
    )
    return mem, flops(graph, config)


def report_to_csv_row(name: str, config: TrainingConfig, mem: MemoryReport, fl: FlopReport) -> str:
    density = ";".join(f"{g}={v:g}" for g, v in sorted(config.density.items())) or "dense"
    cols = [
        name,
        density,
        config.precision.name.lower(),
        str(config.minibatch),
        str(config.microbatch),
        str(config.strategy),
        config.optimizer_kind,
        str(mem.model_bytes),
        str(mem.optimizer_bytes),
        str(mem.activation_forward_bytes),
        str(mem.activation_backward_bytes),
        str(mem.total_bytes),
        f"{mem.total_mb:.3f}",
        str(fl.forward_flops),
        str(fl.backward_flops),
        str(fl.recompute_flops),
        f"{fl.ratio_to_baseline:.4f}",
    ]
    return ",".join(cols)


CSV_HEADER = (
    "arch,density,precision,minibatch,microbatch,strategy,optimizer,"
    "model_bytes,optimizer_bytes,activation_forward_bytes,activation_backward_bytes,"
    "total_bytes,total_mb,forward_flops,backward_flops,recompute_flops,flops_ratio"
)
