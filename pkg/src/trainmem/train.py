"""Desk-scale training demonstrations on a bundled synthetic task.

The task is a deterministic classification problem: each class has a
random template image and samples are noisy copies.  Runs exercise the
full technique stack (sparsity with rewiring, FP16 with dynamic loss
scaling, microbatching, checkpointing) and emit machine-readable metrics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .engine import EngineConfig, init_params, run_microbatched, run_step
from .errors import ConfigurationError, TrainmemError
from .graph import ComputationGraph
from .kernels import forward_op
from .numerics import NumericFormat, half_round
from .optim import (
    LossScaler,
    SGDState,
    AdamState,
    adam_step,
    fp16_update_path,
    grads_nonfinite,
    loss_scale_update,
    sgd_nesterov_step,
)
from .plan import NONE, CheckpointStrategy
from .rewire import DSRConfig, DSRState, init_sparse_pattern, rewire, rewire_due


class TrainingDiverged(TrainmemError):
    """Loss went non-finite with the loss scaler already at its minimum."""


def make_synthetic_task(
    n: int = 256,
    classes: int = 4,
    input_shape: tuple[int, int, int] = (3, 8, 8),
    noise: float = 0.35,
    seed: int = 1234,
):
    """Noisy class-template images; deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    templates = rng.normal(0.0, 1.0, size=(classes,) + input_shape)
    labels = rng.integers(0, classes, size=n)
    images = templates[labels] + rng.normal(0.0, noise, size=(n,) + input_shape)
    return images, labels


def forward_eval(graph: ComputationGraph, params, batch, config: EngineConfig,
                 mode: str = "eval"):
    """Forward-only pass; returns (logit array, loss).  Eval mode uses the
    running norm statistics kept in the parameter store."""
    ctx = config.ctx()
    values = {}
    logits_src = graph.node(graph.loss_id).inputs[0]
    logits = None
    for node in graph.nodes:
        if node.op == "input":
            arr = np.asarray(batch[node.node_id])
            values[node.node_id] = (
                arr.astype(np.int64) if graph.out_dtype[node.node_id] == "int" else ctx.asarray(arr)
            )
            continue
        stats = None
        if mode == "eval" and node.op in ("batchnorm", "layernorm"):
            rm = params.get(f"{node.node_id}.running_mean")
            rv = params.get(f"{node.node_id}.running_var")
            if rm is not None and rv is not None:
                stats = (np.asarray(rm, dtype=ctx.dtype),
                         1.0 / np.sqrt(np.asarray(rv, dtype=ctx.dtype) + 1e-5))
        ins = [values[i] for i in node.inputs]
        out, _ = forward_op(node, ins, params, ctx, stats=stats)
        values[node.node_id] = out
        if node.node_id == logits_src:
            logits = out
    return logits, float(values[graph.loss_id])


@dataclass
class TrainSettings:
    steps: int = 200
    minibatch: int = 32
    microbatch: int | None = None
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    density: float = 1.0
    precision: NumericFormat = NumericFormat.FP32
    strategy: CheckpointStrategy = NONE
    optimizer: str = "sgd_nesterov"
    exec_mode: str = "sequential"
    accumulator_width: int = 32
    seed: int = 0
    rewire_every: int = 0  # 0 = use the DSR schedule; >0 = fixed period
    dsr: DSRConfig = field(default_factory=DSRConfig)
    log_every: int = 20
    classes: int = 4
    task_size: int = 256
    loss_scaling: bool | None = None  # default: on for FP16

    def __post_init__(self):
        if self.microbatch is None:
            self.microbatch = self.minibatch
        if self.minibatch % self.microbatch:
            raise ConfigurationError("microbatch must divide minibatch")
        if self.loss_scaling is None:
            self.loss_scaling = self.precision is NumericFormat.FP16


@dataclass
class TrainResult:
    metrics: list[dict]
    rewire_log: list[str]
    scale_trace: list[float]
    final_accuracy: float
    peak_activation_bytes: int
    params: dict
    masks: dict
    steps_skipped: int = 0


def _accuracy(graph, params, images, labels, config) -> float:
    logits, _ = forward_eval(graph, params, {"img": images, "labels": labels}, config)
    return float((logits.argmax(axis=1) == labels).mean())


def train_desk(
    graph: ComputationGraph,
    settings: TrainSettings,
    on_after_backward=None,
) -> TrainResult:
    """Train on the synthetic task; deterministic given the seed."""
    input_shape = graph.out_shape["img"]
    images, labels = make_synthetic_task(
        settings.task_size, settings.classes, input_shape, seed=1234 + settings.seed
    )
    rng = np.random.default_rng(settings.seed)
    fp16 = settings.precision is NumericFormat.FP16
    params = init_params(graph, seed=settings.seed, precision=settings.precision)

    masks = None
    dsr_state: DSRState | None = None
    if settings.density < 1.0:
        dsr_state = init_sparse_pattern(graph, settings.density, settings.seed,
                                        config=settings.dsr)
        masks = dsr_state.masks
        for name, mask in masks.items():
            params[name] = params[name] * mask

    if settings.optimizer == "sgd_nesterov":
        state = SGDState.init(params, mu=settings.momentum,
                              weight_decay=settings.weight_decay)
    else:
        state = AdamState.init(params)

    scaler = LossScaler()
    engine_cfg = EngineConfig(
        precision=settings.precision,
        accumulator_width=settings.accumulator_width,
        exec_mode=settings.exec_mode,
        strategy=settings.strategy,
        rng_seed=settings.seed,
    )
    eval_cfg = EngineConfig(precision=settings.precision)

    metrics: list[dict] = []
    rewire_log: list[str] = []
    scale_trace: list[float] = []
    peak_bytes = 0
    skipped = 0

    for step in range(1, settings.steps + 1):
        idx = rng.choice(images.shape[0], size=settings.minibatch, replace=False)
        batch = {"img": images[idx], "labels": labels[idx]}
        engine_cfg.loss_scale = scaler.scale if (fp16 and settings.loss_scaling) else 1.0
        if settings.microbatch == settings.minibatch:
            res = run_step(graph, params, batch, engine_cfg, masks=masks)
            _update_running_stats(graph, params, res.batch_stats)
        else:
            res = run_microbatched(graph, params, batch, settings.microbatch,
                                   engine_cfg, masks=masks)
        peak_bytes = max(peak_bytes, res.peak_bytes)
        grads = res.grads
        if on_after_backward is not None:
            on_after_backward(step, grads)
        skip = False
        if fp16 and settings.loss_scaling:
            overflow = grads_nonfinite(grads)
            scaler, skip = loss_scale_update(scaler, overflow)
            scale_trace.append(scaler.scale)
            if not skip and engine_cfg.loss_scale != 1.0:
                inv = 1.0 / engine_cfg.loss_scale
                grads = {k: half_round(g * inv) for k, g in grads.items()}
        if skip:
            skipped += 1
            if not np.isfinite(res.loss) and scaler.scale <= scaler.min_scale:
                raise TrainingDiverged(
                    f"non-finite loss at step {step} with scale at minimum"
                )
        else:
            if fp16:
                fp16_update_path(params, grads, state, settings.lr,
                                 upcast=True, momentum_rescale=True,
                                 weight_decay=settings.weight_decay
                                 if settings.optimizer == "sgd_nesterov" else None,
                                 masks=masks)
            elif settings.optimizer == "sgd_nesterov":
                sgd_nesterov_step(params, grads, state, settings.lr, masks=masks)
            else:
                adam_step(params, grads, state, settings.lr, masks=masks)

        # rewiring clock advances on skipped steps too
        if dsr_state is not None:
            due = (
                step % settings.rewire_every == 0
                if settings.rewire_every
                else rewire_due(step, settings.dsr)
            )
            if due:
                event = rewire(params, state, dsr_state, settings.dsr,
                               seed=settings.seed * 100003 + step, update_index=step)
                rewire_log.append(event.to_json())
                masks = dsr_state.masks

        if step % settings.log_every == 0 or step == settings.steps:
            acc = _accuracy(graph, params, images, labels, eval_cfg)
            metrics.append({
                "step": step,
                "loss": round(float(res.loss), 10),
                "accuracy": round(acc, 6),
                "nnz": dsr_state.nnz() if dsr_state else None,
                "loss_scale": scaler.scale if fp16 and settings.loss_scaling else None,
            })

    final_acc = _accuracy(graph, params, images, labels, eval_cfg)
    return TrainResult(
        metrics=metrics,
        rewire_log=rewire_log,
        scale_trace=scale_trace,
        final_accuracy=final_acc,
        peak_activation_bytes=peak_bytes,
        params=params,
        masks=masks or {},
        steps_skipped=skipped,
    )


def _update_running_stats(graph, params, batch_stats: dict, momentum: float = 0.1):
    for nid, (mean, inv) in batch_stats.items():
        if graph.node(nid).op != "batchnorm":
            continue
        var = 1.0 / np.square(inv) - 1e-5
        rm = params[f"{nid}.running_mean"]
        rv = params[f"{nid}.running_var"]
        params[f"{nid}.running_mean"] = (1 - momentum) * rm + momentum * mean
        params[f"{nid}.running_var"] = (1 - momentum) * rv + momentum * var


def metrics_to_jsonl(result: TrainResult) -> str:
    lines = [json.dumps(m, sort_keys=True) for m in result.metrics]
    return "\n".join(lines) + "\n"
