"""Forward and backward math for each executable node kind.

Arrays are batch-first.  FP32 runs natively in float32, FP64 in float64;
FP16 is emulated on a float64 carrier whose values sit on the binary16
grid: every elementwise result is rounded back to the grid, and dot
products honor the configured accumulator width (one rounding after the
full reduction for a 32-bit accumulator, rounding after every addition for
a 16-bit one).  Norm layers are treated as single fused elementwise ops
with statistics kept at full precision.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, UnsupportedOperationError
from .graph import Node
from .numerics import NumericFormat, half_round

NORM_EPS = 1e-5


class QuantCtx:
    """Precision context: carrier dtype and rounding/accumulation rules."""

    def __init__(self, precision: NumericFormat, accumulator_width: int = 32):
        self.precision = precision
        self.accumulator_width = accumulator_width
        self.dtype = np.float32 if precision is NumericFormat.FP32 else np.float64
        self.fp16 = precision is NumericFormat.FP16

    def asarray(self, x) -> np.ndarray:
        a = np.asarray(x, dtype=self.dtype)
        if self.fp16:
            a = half_round(a)
        return a

    def q(self, x: np.ndarray) -> np.ndarray:
        return half_round(x) if self.fp16 else x

    def matmul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """a @ b under the accumulation rule (reduction over a's last axis)."""
        if not self.fp16:
            return a @ b
        if self.accumulator_width == 32:
            wide = a.astype(np.float32) @ b.astype(np.float32)
            return half_round(wide.astype(np.float64))
        acc = np.zeros(a.shape[:-1] + b.shape[1:], dtype=np.float64)
        for k in range(a.shape[-1]):
            prod = half_round(a[..., k, None] * b[k])
            acc = half_round(acc + prod)
        return acc

    def accumulate(self, buf: np.ndarray, update: np.ndarray) -> np.ndarray:
        """buf + update under the accumulation rule (used across microbatches)."""
        if not self.fp16:
            return buf + update
        if self.accumulator_width == 32:
            return half_round(buf.astype(np.float32) + update.astype(np.float32))
        return half_round(buf + update)


# ---------------------------------------------------------------------------
# conv helpers


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(x, k1, k2, stride, pad):
    b, c, h, w = x.shape
    xp = _pad(x, pad)
    h2 = (h + 2 * pad - k1) // stride + 1
    w2 = (w + 2 * pad - k2) // stride + 1
    cols = np.empty((b, c, k1, k2, h2, w2), dtype=x.dtype)
    for a in range(k1):
        for d in range(k2):
            cols[:, :, a, d] = xp[:, :, a : a + h2 * stride : stride, d : d + w2 * stride : stride]
    return cols.reshape(b, c * k1 * k2, h2 * w2), (h2, w2)


def _col2im(cols, x_shape, k1, k2, stride, pad):
    b, c, h, w = x_shape
    h2 = (h + 2 * pad - k1) // stride + 1
    w2 = (w + 2 * pad - k2) // stride + 1
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cols = cols.reshape(b, c, k1, k2, h2, w2)
    for a in range(k1):
        for d in range(k2):
            xp[:, :, a : a + h2 * stride : stride, d : d + w2 * stride : stride] += cols[:, :, a, d]
    if pad == 0:
        return xp
    return xp[:, :, pad : pad + h, pad : pad + w]


# ---------------------------------------------------------------------------
# forward


def forward_op(node: Node, inputs: list[np.ndarray], params: dict, ctx: QuantCtx, stats=None):
    """Returns (output, norm_stats_or_None).

    `stats` supplies cached (mean, inv) for norm re-evaluation so recomputed
    values are bit-identical to the original forward pass.
    """
    op = node.op
    if op == "conv2d":
        x = inputs[0]
        w = params[f"{node.node_id}.weight"]
        cols, (h2, w2) = _im2col(x, node.p("k1"), node.p("k2"), node.p("stride", 1), node.p("pad", 0))
        wmat = w.reshape(node.p("c_out"), -1)
        out = ctx.matmul(cols.transpose(0, 2, 1), wmat.T)  # (b, h2*w2, c_out)
        return out.transpose(0, 2, 1).reshape(x.shape[0], node.p("c_out"), h2, w2), None
    if op == "linear":
        x = inputs[0]
        w = params[f"{node.node_id}.weight"]
        out = ctx.matmul(x, w.T)
        if node.p("bias", 1):
            out = ctx.q(out + params[f"{node.node_id}.bias"])
        return out, None
    if op == "batchnorm":
        x = inputs[0]
        gamma = params[f"{node.node_id}.gamma"]
        beta = params[f"{node.node_id}.beta"]
        if stats is None:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            inv = 1.0 / np.sqrt(var + np.asarray(NORM_EPS, dtype=x.dtype))
        else:
            mean, inv = stats
        m = mean[:, None, None]
        i = inv[:, None, None]
        out = ctx.q(gamma[:, None, None] * ((x - m) * i) + beta[:, None, None])
        return out, (mean, inv)
    if op == "layernorm":
        x = inputs[0]
        gamma = params[f"{node.node_id}.gamma"]
        beta = params[f"{node.node_id}.beta"]
        if stats is None:
            mean = x.mean(axis=-1)
            var = x.var(axis=-1)
            inv = 1.0 / np.sqrt(var + np.asarray(NORM_EPS, dtype=x.dtype))
        else:
            mean, inv = stats
        out = ctx.q(gamma * ((x - mean[..., None]) * inv[..., None]) + beta)
        return out, (mean, inv)
    if op == "relu":
        return np.maximum(inputs[0], 0), None
    if op == "glu":
        x = inputs[0]
        d = x.shape[-1] // 2
        a, b = x[..., :d], x[..., d:]
        sig = 1.0 / (1.0 + np.exp(-b))
        return ctx.q(a * sig), None
    if op == "add":
        return ctx.q(inputs[0] + inputs[1]), None
    if op == "reshape":
        b = inputs[0].shape[0]
        return inputs[0].reshape((b,) + tuple(node.p("shape"))), None
    if op == "transpose":
        perm = (0,) + tuple(p + 1 for p in node.p("perm"))
        return inputs[0].transpose(perm), None
    if op == "avgpool":
        x = inputs[0]
        wdw = node.p("window")
        b, c, h, w = x.shape
        r = x.reshape(b, c, h // wdw, wdw, w // wdw, wdw)
        out = r.sum(axis=(3, 5)) * np.asarray(1.0 / (wdw * wdw), dtype=x.dtype)
        return ctx.q(out), None
    if op == "pad_channels":
        x = inputs[0]
        extra = node.p("extra")
        return np.pad(x, ((0, 0), (0, extra), (0, 0), (0, 0))), None
    if op == "embedding":
        idx = inputs[0].astype(np.int64)
        table = params[f"{node.node_id}.weight"]
        return table[idx], None
    if op == "softmax_xent":
        if node.p("d_in"):
            raise UnsupportedOperationError(
                "fused-projection softmax head is cost-model-only"
            )
        z = inputs[0]
        t = inputs[1].astype(np.int64)
        zmax = z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z - zmax).sum(axis=1)) + zmax[:, 0]
        picked = z[np.arange(z.shape[0]), t]
        return np.asarray((lse - picked).mean(), dtype=z.dtype), None
    raise UnsupportedOperationError(f"kind '{op}' has no executable semantics")


# ---------------------------------------------------------------------------
# backward


def backward_op(
    node: Node,
    g_out,
    values: dict,
    params: dict,
    ctx: QuantCtx,
    loss_scale: float = 1.0,
):
    """Returns (input_gradients, param_gradients).

    `values` carries what the node's storage class promises: 'x' for full
    inputs, 'mask' for ReLU, plus cached ('mean', 'inv') for norms.  A
    missing entry is a contract violation, never silently recomputed here.
    """
    op = node.op
    nid = node.node_id

    def need(key):
        if key not in values:
            raise ContractError(f"backward of '{nid}' ({op}) is missing payload '{key}'")
        return values[key]

    if op == "conv2d":
        x = need("x")
        w = params[f"{nid}.weight"]
        k1, k2, s, p = node.p("k1"), node.p("k2"), node.p("stride", 1), node.p("pad", 0)
        cols, (h2, w2) = _im2col(x, k1, k2, s, p)
        gmat = g_out.reshape(g_out.shape[0], g_out.shape[1], -1)  # (b, c_out, l)
        dw = ctx.matmul(
            gmat.transpose(1, 0, 2).reshape(g_out.shape[1], -1),
            cols.transpose(0, 2, 1).reshape(-1, cols.shape[1]),
        ).reshape(w.shape)
        wmat = w.reshape(g_out.shape[1], -1)
        dcols = ctx.matmul(gmat.transpose(0, 2, 1), wmat).transpose(0, 2, 1)
        dx = ctx.q(_col2im(dcols, x.shape, k1, k2, s, p))
        return [dx], {f"{nid}.weight": dw}
    if op == "linear":
        x = need("x")
        w = params[f"{nid}.weight"]
        dw = ctx.matmul(g_out.T, x)
        dx = ctx.matmul(g_out, w)
        grads = {f"{nid}.weight": dw}
        if node.p("bias", 1):
            grads[f"{nid}.bias"] = ctx.q(g_out.sum(axis=0))
        return [dx], grads
    if op in ("batchnorm", "layernorm"):
        x = need("x")
        mean, inv = need("stats")
        gamma = params[f"{nid}.gamma"]
        if op == "batchnorm":
            axes = (0, 2, 3)
            m = mean[:, None, None]
            i = inv[:, None, None]
            gm = gamma[:, None, None]
            cnt = x.shape[0] * x.shape[2] * x.shape[3]
            xhat = (x - m) * i
            dxhat = g_out * gm
            dx = i * (
                dxhat
                - dxhat.sum(axis=axes, keepdims=True) / cnt
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True) / cnt
            )
            dgamma = (g_out * xhat).sum(axis=axes)
            dbeta = g_out.sum(axis=axes)
        else:
            m = mean[..., None]
            i = inv[..., None]
            cnt = x.shape[-1]
            xhat = (x - m) * i
            dxhat = g_out * gamma
            dx = i * (
                dxhat
                - dxhat.sum(axis=-1, keepdims=True) / cnt
                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True) / cnt
            )
            red = tuple(range(x.ndim - 1))
            dgamma = (g_out * xhat).sum(axis=red)
            dbeta = g_out.sum(axis=red)
        return [ctx.q(dx)], {f"{nid}.gamma": ctx.q(dgamma), f"{nid}.beta": ctx.q(dbeta)}
    if op == "relu":
        mask = need("mask")
        return [ctx.q(g_out * mask)], {}
    if op == "glu":
        x = need("x")
        d = x.shape[-1] // 2
        a, b = x[..., :d], x[..., d:]
        sig = 1.0 / (1.0 + np.exp(-b))
        da = g_out * sig
        db = g_out * a * sig * (1.0 - sig)
        return [ctx.q(np.concatenate([da, db], axis=-1))], {}
    if op == "avgpool":
        wdw = node.p("window")
        b, c, h2, w2 = g_out.shape
        g = g_out * np.asarray(1.0 / (wdw * wdw), dtype=g_out.dtype)
        up = np.broadcast_to(g[:, :, :, None, :, None], (b, c, h2, wdw, w2, wdw))
        return [ctx.q(up.reshape(b, c, h2 * wdw, w2 * wdw))], {}
    if op == "pad_channels":
        extra = node.p("extra")
        return [g_out[:, : g_out.shape[1] - extra]], {}
    if op == "embedding":
        idx = need("x").astype(np.int64)
        table = params[f"{nid}.weight"]
        dw = np.zeros_like(table)
        np.add.at(dw, idx, g_out)
        return [None], {f"{nid}.weight": ctx.q(dw)}
    if op == "softmax_xent":
        z = need("x")
        t = need("targets").astype(np.int64)
        zmax = z.max(axis=1, keepdims=True)
        e = np.exp(z - zmax)
        p = e / e.sum(axis=1, keepdims=True)
        p[np.arange(z.shape[0]), t] -= 1.0
        scale = np.asarray(loss_scale / z.shape[0], dtype=z.dtype)
        return [ctx.q(p * scale)], {}
    raise UnsupportedOperationError(f"kind '{op}' has no backward semantics")
