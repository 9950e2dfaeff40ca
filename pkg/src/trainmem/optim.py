"""Optimizers, learning-rate schedules, dynamic loss scaling, gradient
accumulation, and the FP16 update path with per-tensor momentum rescaling.

There is never a persistent FP32 master copy of FP16 weights; the optional
upcast path widens tensors transiently inside the update and rounds the
results straight back to the binary16 grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError
from .numerics import half_round

WRN_MOMENTUM = 0.9
WRN_WEIGHT_DECAY = 5e-4
TRANSFORMER_WEIGHT_DECAY = 1e-4


def _check_shapes(params: dict, other: dict, what: str):
    for name, p in params.items():
        buf = other.get(name)
        if buf is not None and buf.shape != p.shape:
            raise ContractError(f"{what} shape mismatch for {name}")


@dataclass
class SGDState:
    momentum: dict[str, np.ndarray]
    mu: float = WRN_MOMENTUM
    weight_decay: float = WRN_WEIGHT_DECAY

    @staticmethod
    def init(params: dict[str, np.ndarray], mu=WRN_MOMENTUM, weight_decay=WRN_WEIGHT_DECAY):
        return SGDState({k: np.zeros_like(v) for k, v in params.items()}, mu, weight_decay)

    def reset_momentum(self):
        for buf in self.momentum.values():
            buf[...] = 0.0

    def value_arrays_per_param(self) -> int:
        return 1  # plus the gradient buffer held by the training loop


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    t: int = 0

    @staticmethod
    def init(params, beta1=0.9, beta2=0.98, eps=1e-8):
        return AdamState(
            {k: np.zeros_like(p) for k, p in params.items()},
            {k: np.zeros_like(p) for k, p in params.items()},
            beta1, beta2, eps,
        )

    def reset_momentum(self):
        for d in (self.m, self.v):
            for buf in d.values():
                buf[...] = 0.0

    def value_arrays_per_param(self) -> int:
        return 2


def sgd_nesterov_step(params, grads, state: SGDState, lr: float,
                      masks: dict[str, np.ndarray] | None = None):
    """In-place Nesterov update: b <- mu*b + g'; w <- w - lr*(g' + mu*b)."""
    _check_shapes(params, grads, "gradient")
    _check_shapes(params, state.momentum, "momentum")
    for name, w in params.items():
        g = grads.get(name)
        if g is None:
            continue
        gp = g + state.weight_decay * w if state.weight_decay else g
        b = state.momentum[name]
        b *= state.mu
        b += gp
        w -= lr * (gp + state.mu * b)
        if masks and name in masks:
            w *= masks[name]
            b *= masks[name]


def adam_step(params, grads, state: AdamState, lr: float,
              weight_decay: float = TRANSFORMER_WEIGHT_DECAY,
              masks: dict[str, np.ndarray] | None = None):
    """Standard Adam with bias correction; weight decay is added to g."""
    _check_shapes(params, grads, "gradient")
    state.t += 1
    t = state.t
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, w in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if weight_decay:
            g = g + weight_decay * w
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        w -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if masks and name in masks:
            w *= masks[name]
            m *= masks[name]
            v *= masks[name]


# ---------------------------------------------------------------------------
# Dynamic loss scaling


@dataclass
class LossScaler:
    scale: float = 2.0 ** 16
    growth_interval: int = 1000
    min_scale: float = 1.0
    max_scale: float = 2.0 ** 24
    clean_streak: int = 0

    def __post_init__(self):
        for s in (self.scale, self.min_scale, self.max_scale):
            if s <= 0 or 2 ** round(math.log2(s)) != s:
                raise ConfigurationError("loss scales must be powers of two")


def loss_scale_update(scaler: LossScaler, grads_have_nonfinite: bool) -> tuple[LossScaler, bool]:
    """Halve and skip on overflow; double after growth_interval clean steps."""
    s = LossScaler(scaler.scale, scaler.growth_interval, scaler.min_scale,
                   scaler.max_scale, scaler.clean_streak)
    if grads_have_nonfinite:
        s.scale = max(s.scale / 2.0, s.min_scale)
        s.clean_streak = 0
        return s, True
    s.clean_streak += 1
    if s.clean_streak >= s.growth_interval:
        s.scale = min(s.scale * 2.0, s.max_scale)
        s.clean_streak = 0
    return s, False


def grads_nonfinite(grads: dict[str, np.ndarray]) -> bool:
    return any(not np.all(np.isfinite(g)) for g in grads.values())


# ---------------------------------------------------------------------------
# Learning-rate schedules


@dataclass(frozen=True)
class StepSchedule:
    """Piecewise-constant rates; boundaries are exclusive upper epoch bounds."""

    boundaries: tuple[int, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        if len(self.rates) != len(self.boundaries) + 1:
            raise ConfigurationError("need one more rate than boundary")


@dataclass(frozen=True)
class InverseSqrtWarmup:
    warmup_updates: int = 4000
    peak: float = 5e-4
    floor: float = 1e-7


# Base image-model schedule (epochs 1-60 / 61-120 / 121-160 / 161-200).
WRN_SCHEDULE = StepSchedule(boundaries=(60, 120, 160), rates=(0.100, 0.020, 0.040, 0.008))
TRANSFORMER_SCHEDULE = InverseSqrtWarmup()


def lr_at(schedule, position: int) -> float:
    """Rate at an epoch (StepSchedule, 1-based) or update (warmup, 1-based)."""
    if position < 0:
        raise ContractError("position must be nonnegative")
    if isinstance(schedule, StepSchedule):
        for bound, rate in zip(schedule.boundaries, schedule.rates):
            if position <= bound:
                return rate
        return schedule.rates[-1]
    n = position
    if n <= schedule.warmup_updates:
        return schedule.floor + (schedule.peak - schedule.floor) * n / schedule.warmup_updates
    return schedule.peak * math.sqrt(schedule.warmup_updates / n)


# ---------------------------------------------------------------------------
# FP16 update path


def _rescale_factor(buf: np.ndarray) -> float:
    """Per-tensor power-of-two scale putting max|m|/s into [2^9, 2^11)."""
    peak = float(np.max(np.abs(buf))) if buf.size else 0.0
    if peak == 0.0 or not math.isfinite(peak):
        return 1.0
    return 2.0 ** (math.floor(math.log2(peak)) - 10)


def fp16_update_path(params, grads, state, lr: float, upcast: bool = True,
                     momentum_rescale: bool = True, weight_decay: float | None = None,
                     masks=None):
    """FP16 parameter update without a persistent FP32 master copy.

    With `upcast`, tensors are transiently widened, updated, and rounded
    back to the binary16 grid.  With `momentum_rescale`, each momentum
    buffer is stored divided by a per-tensor power-of-two scale chosen so
    its magnitude fits comfortably in the FP16 range; the scale is undone
    on the way in and reapplied on the way out.
    """
    scales = getattr(state, "_fp16_scales", None) or {}
    buffers = [state.momentum] if isinstance(state, SGDState) else [state.m, state.v]
    # undo storage scaling to recover true momentum values (exact: powers of two)
    for bi, d in enumerate(buffers):
        for name, buf in d.items():
            s = scales.get((bi, name), 1.0)
            if s != 1.0:
                d[name] = buf * s
    is_sgd = isinstance(state, SGDState)
    if is_sgd:
        wd = state.weight_decay if weight_decay is None else weight_decay
    else:
        wd = TRANSFORMER_WEIGHT_DECAY if weight_decay is None else weight_decay
    if upcast:
        # transient FP32 widening; no persistent wide copies survive the call
        f32 = lambda d: {k: v.astype(np.float32) for k, v in d.items()}
        wp, wg = f32(params), f32(grads)
        if is_sgd:
            wstate = SGDState(f32(state.momentum), state.mu, wd)
            sgd_nesterov_step(wp, wg, wstate, lr)
            buffers = [wstate.momentum]
            state.momentum = wstate.momentum
        else:
            wstate = AdamState(f32(state.m), f32(state.v), state.beta1, state.beta2,
                               state.eps, state.t)
            adam_step(wp, wg, wstate, lr, weight_decay=wd)
            state.m, state.v, state.t = wstate.m, wstate.v, wstate.t
            buffers = [state.m, state.v]
        for name in params:
            params[name] = half_round(wp[name].astype(np.float64))
    elif is_sgd:
        # plain FP16 arithmetic: round after every expression
        for name, w in params.items():
            g = grads.get(name)
            if g is None:
                continue
            gp = half_round(g + half_round(wd * w)) if wd else g
            b = half_round(half_round(state.mu * state.momentum[name]) + gp)
            state.momentum[name] = b
            params[name] = half_round(
                w - half_round(lr * half_round(gp + half_round(state.mu * b)))
            )
    else:
        state.t += 1
        c1 = 1.0 - state.beta1 ** state.t
        c2 = 1.0 - state.beta2 ** state.t
        for name, w in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if wd:
                g = half_round(g + half_round(wd * w))
            m = half_round(half_round(state.beta1 * state.m[name]) + half_round((1 - state.beta1) * g))
            v = half_round(half_round(state.beta2 * state.v[name]) + half_round((1 - state.beta2) * np.square(g)))
            state.m[name], state.v[name] = m, v
            upd = half_round(half_round(m / c1) / half_round(np.sqrt(half_round(v / c2)) + state.eps))
            params[name] = half_round(w - half_round(lr * upd))
    # store momenta back, rescaled and rounded to the FP16 grid
    new_scales = {}
    for bi, d in enumerate(buffers):
        for name, buf in d.items():
            if momentum_rescale:
                s = _rescale_factor(np.asarray(buf, dtype=np.float64))
                new_scales[(bi, name)] = s
                d[name] = half_round(np.asarray(buf, dtype=np.float64) / s)
            else:
                d[name] = half_round(np.asarray(buf, dtype=np.float64))
    state._fp16_scales = new_scales
    if masks:
        for name, mask in masks.items():
            if name in params:
                params[name] = params[name] * mask
            for d in buffers:
                if name in d:
                    d[name] = d[name] * mask


# ---------------------------------------------------------------------------
# Gradient accumulation


@dataclass
class GradAccumulator:
    """Weighted microbatch-gradient buffer flushed into an optimizer step."""

    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    count: int = 0
    fp16: bool = False
    accumulator_width: int = 32

    def add(self, grads: dict[str, np.ndarray], weight: float = 1.0):
        for name, g in grads.items():
            update = g * weight if weight != 1.0 else g
            if self.fp16:
                update = half_round(update)
            if name not in self.buffers:
                self.buffers[name] = np.array(update, copy=True)
            elif self.fp16 and self.accumulator_width == 16:
                self.buffers[name] = half_round(self.buffers[name] + update)
            elif self.fp16:
                self.buffers[name] = half_round(
                    self.buffers[name].astype(np.float32) + update.astype(np.float32)
                )
            else:
                self.buffers[name] += update
        self.count += 1


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g, dtype=np.float64)))
    return math.sqrt(total)


def accumulate_and_flush(acc: GradAccumulator, params, state, lr: float,
                         step_fn=None, clip_norm: float | None = None,
                         masks=None) -> bool:
    """Apply the optimizer step from the accumulated gradients and zero the
    buffer.  Flushing an empty accumulator warns by returning False."""
    if acc.count == 0:
        return False
    grads = acc.buffers
    if clip_norm is not None:
        norm = global_grad_norm(grads)
        if norm > clip_norm:
            factor = clip_norm / norm
            for g in grads.values():
                g *= factor
    if step_fn is not None:
        step_fn(params, grads, state, lr)
    elif isinstance(state, SGDState):
        sgd_nesterov_step(params, grads, state, lr, masks=masks)
    else:
        adam_step(params, grads, state, lr, masks=masks)
    acc.buffers = {}
    acc.count = 0
    return True
