"""Minimal reverse-mode automatic differentiation.

Tensors hold float64 numpy arrays. Operations executed inside a ``with
Tape():`` block record themselves on the active tape in execution order;
``backward(loss)`` seeds the scalar loss with gradient 1 and sweeps the tape
in reverse, visiting each recorded node exactly once and accumulating
gradients additively across fan-out. Running ops without an active tape (or
on inputs that do not require gradients) is plain numpy evaluation, which is
how inference works.

The op set is exactly what the network and the sharpening objective need:
3x3 replicate-padded convolution, batch normalization, ReLU, 2x2 average
pooling, non-trainable bilinear x2 upsampling, channel concatenation,
elementwise arithmetic, fixed-kernel convolutions, bicubic downscaling, and
Huber / MSE losses. Spatial tensors are NCHW.

A tape is single-threaded during one forward/backward pass; independent tapes
(one per thread) may run in parallel.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import linops
from .errors import DataError

_STACK = threading.local()


def _tape_stack():
    if not hasattr(_STACK, "tapes"):
        _STACK.tapes = []
    return _STACK.tapes


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


@dataclass
class _Node:
    out: Tensor
    inputs: tuple
    backward: callable  # grad_out -> tuple of grads aligned with inputs


class Tape:
    """Ordered record of one forward pass."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False


def _record(out, inputs, backward_fn):
    out.requires_grad = any(isinstance(t, Tensor) and t.requires_grad
                            for t in inputs)
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.nodes.append(_Node(out, tuple(inputs), backward_fn))
    return out


def backward(loss: Tensor, tape: Tape | None = None):
    """Reverse sweep from a scalar loss; accumulates into .grad of leaves.

    The tape's execution order is a topological order, so one reverse pass
    visits each node exactly once with its gradient fully accumulated.
    """
    if loss.data.size != 1:
        raise ValueError("backward expects a scalar loss")
    tape = tape if tape is not None else active_tape()
    if tape is None:
        raise ValueError("no active tape to differentiate")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g_out = grads.pop(id(node.out), None)
        if g_out is None:
            continue
        for t, g in zip(node.inputs, node.backward(g_out)):
            if g is None or not isinstance(t, Tensor) or not t.requires_grad:
                continue
            key = id(t)
            grads[key] = grads[key] + g if key in grads else g
    # Entries left over belong to leaves: tensors that are no node's output
    # (parameters and graph inputs).
    tensors = {id(loss): loss}
    for node in tape.nodes:
        for t in node.inputs:
            if isinstance(t, Tensor):
                tensors[id(t)] = t
    for key, g in grads.items():
        t = tensors.get(key)
        if t is not None:
            t.grad = g if t.grad is None else t.grad + g


# ---------------------------------------------------------------------------
# elementwise and reduction ops

def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    pos = x.data > 0  # subgradient 0 at exactly 0

    def bwd(g):
        return (g * pos,)
    return _record(out, (x,), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def bwd(g):
        return (g, g)
    return _record(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)

    def bwd(g):
        return (g, -g)
    return _record(out, (a, b), bwd)


def scale(x: Tensor, c) -> Tensor:
    c = float(c)
    out = Tensor(x.data * c)

    def bwd(g):
        return (g * c,)
    return _record(out, (x,), bwd)


def tsum(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum())

    def bwd(g):
        return (np.full_like(x.data, float(g)),)
    return _record(out, (x,), bwd)


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(x.data.mean())

    def bwd(g):
        return (np.full_like(x.data, float(g) / n),)
    return _record(out, (x,), bwd)


def weighted_sum(x: Tensor, weights) -> Tensor:
    """Scalar projection sum(x * w) with a constant weight array."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != x.data.shape:
        raise ValueError("weight shape must match input shape")
    out = Tensor(float((x.data * w).sum()))

    def bwd(g):
        return (float(g) * w,)
    return _record(out, (x,), bwd)


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Channel concatenation of NCHW tensors."""
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ValueError("concat expects 4-D tensors")
    ca = a.data.shape[1]
    out = Tensor(np.concatenate([a.data, b.data], axis=1))

    def bwd(g):
        return (g[:, :ca], g[:, ca:])
    return _record(out, (a, b), bwd)


# ---------------------------------------------------------------------------
# spatial ops

def _im2col3(xp):
    # xp: (N, C, H+2, W+2) -> (N, C*9, H*W), copying the windowed view.
    n, c, hp, wp = xp.shape
    h, w = hp - 2, wp - 2
    v = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (N, C, H, W, 3, 3)
    return np.ascontiguousarray(v.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * 9, h * w)


def _fold_pad1(gp):
    # Adjoint of 1-pixel replicate padding on NCHW.
    h, w = gp.shape[2] - 2, gp.shape[3] - 2
    rows = gp[:, :, 1:1 + h, :].copy()
    rows[:, :, 0, :] += gp[:, :, 0, :]
    rows[:, :, -1, :] += gp[:, :, h + 1, :]
    out = rows[:, :, :, 1:1 + w].copy()
    out[:, :, :, 0] += rows[:, :, :, 0]
    out[:, :, :, -1] += rows[:, :, :, w + 1]
    return out


def conv2d(x: Tensor, w: Tensor) -> Tensor:
    """3x3 convolution, stride 1, 1-pixel replicate padding, no bias."""
    if x.data.ndim != 4 or w.data.ndim != 4 or w.data.shape[2:] != (3, 3):
        raise ValueError("conv2d expects x (N,C,H,W) and w (O,C,3,3)")
    n, c, h, wd = x.data.shape
    o = w.data.shape[0]
    if w.data.shape[1] != c:
        raise ValueError("input channels do not match kernel")
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    cols = _im2col3(xp)                         # (N, C*9, H*W)
    wmat = w.data.reshape(o, c * 9)
    out = Tensor(np.matmul(wmat, cols).reshape(n, o, h, wd))

    def bwd(g):
        g2 = g.reshape(n, o, h * wd)
        grad_w = np.einsum("nol,nkl->ok", g2, cols).reshape(w.data.shape)
        gcols = np.matmul(wmat.T, g2).reshape(n, c, 3, 3, h, wd)
        gp = np.zeros_like(xp)
        for di in range(3):
            for dj in range(3):
                gp[:, :, di:di + h, dj:dj + wd] += gcols[:, :, di, dj]
        return (_fold_pad1(gp), grad_w)
    return _record(out, (x, w), bwd)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean,
                running_var, training, momentum=0.1, eps=1e-5) -> Tensor:
    """Per-channel batch normalization on NCHW.

    In training mode statistics come from the batch (which must hold at least
    2 samples) and the running buffers are updated in place with the given
    momentum; in eval mode the running buffers are used and stay untouched.
    """
    if x.data.ndim != 4:
        raise ValueError("batchnorm2d expects a 4-D tensor")
    n, c, h, w = x.data.shape
    if training and n < 2:
        raise ValueError("training-mode batchnorm needs batch >= 2")
    gview = gamma.data.reshape(1, c, 1, 1)
    if training:
        m = n * h * w
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mu
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_var *= (1.0 - momentum)
        running_var += momentum * unbiased
    else:
        mu = running_mean
        var = running_var
        m = None
    ivar = 1.0 / np.sqrt(var + eps)
    xc = x.data - mu.reshape(1, c, 1, 1)
    xhat = xc * ivar.reshape(1, c, 1, 1)
    out = Tensor(gview * xhat + beta.data.reshape(1, c, 1, 1))

    def bwd(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * gview
        iv = ivar.reshape(1, c, 1, 1)
        if training:
            dvar = (dxhat * xc).sum(axis=(0, 2, 3)) * (-0.5) * ivar ** 3
            dmu = -(dxhat * iv).sum(axis=(0, 2, 3)) \
                - dvar * 2.0 * xc.mean(axis=(0, 2, 3))
            dx = dxhat * iv \
                + (dvar.reshape(1, c, 1, 1) * 2.0 * xc
                   + dmu.reshape(1, c, 1, 1)) / m
        else:
            dx = dxhat * iv
        return (dx, dgamma, dbeta)
    return _record(out, (x, gamma, beta), bwd)


def avgpool2(x: Tensor) -> Tensor:
    """2x2 average pooling, stride 2; spatial dims must be even."""
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ValueError("avgpool2 needs even spatial dims")
    v = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    out = Tensor(v)

    def bwd(g):
        gx = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25
        return (gx,)
    return _record(out, (x,), bwd)


@dataclass(frozen=True)
class _UpPair:
    mh: np.ndarray
    mw: np.ndarray


_UP_CACHE: dict[tuple, _UpPair] = {}


def _linear_up_matrix(n):
    # x2 linear interpolation matrix (2n x n), half-pixel centers, edge clamp.
    x = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
    i0 = np.floor(x).astype(int)
    t = x - i0
    m = np.zeros((2 * n, n))
    rows = np.arange(2 * n)
    np.add.at(m, (rows, np.clip(i0, 0, n - 1)), 1.0 - t)
    np.add.at(m, (rows, np.clip(i0 + 1, 0, n - 1)), t)
    return m


def _up_pair(h, w):
    key = (h, w)
    if key not in _UP_CACHE:
        _UP_CACHE[key] = _UpPair(_linear_up_matrix(h), _linear_up_matrix(w))
    return _UP_CACHE[key]


def bilinear_up2(x: Tensor) -> Tensor:
    """Non-trainable bilinear x2 upsampling (half-pixel alignment)."""
    n, c, h, w = x.data.shape
    p = _up_pair(h, w)
    tmp = np.einsum("ai,nciw->ncaw", p.mh, x.data)
    out = Tensor(np.einsum("bj,ncaj->ncab", p.mw, tmp))

    def bwd(g):
        t2 = np.einsum("bj,ncab->ncaj", p.mw, g)
        return (np.einsum("ai,ncaw->nciw", p.mh, t2),)
    return _record(out, (x,), bwd)


def fixed_conv(x: Tensor, kernel) -> Tensor:
    """Channel-wise replicate-padded correlation with a fixed 2-D kernel."""
    w = np.asarray(kernel.weights if hasattr(kernel, "weights") else kernel,
                   dtype=np.float64)
    n, c, h, wd = x.data.shape
    v = np.empty_like(x.data)
    for i in range(n):
        for j in range(c):
            v[i, j] = linops.conv_replicate(x.data[i, j], w)
    out = Tensor(v)

    def bwd(g):
        gx = np.empty_like(g)
        for i in range(n):
            for j in range(c):
                gx[i, j] = linops.conv_replicate_adjoint(g[i, j], w)
        return (gx,)
    return _record(out, (x,), bwd)


def sobel_bank(x: Tensor) -> Tensor:
    """Four directional derivative channels of a single-channel tensor."""
    n, c, h, w = x.data.shape
    if c != 1:
        raise ValueError("sobel_bank expects a single-channel tensor")
    v = np.empty((n, 4, h, w))
    for i in range(n):
        v[i] = linops.sobel_directional(x.data[i, 0])
    out = Tensor(v)

    def bwd(g):
        gx = np.zeros_like(x.data)
        for i in range(n):
            for k in range(4):
                gx[i, 0] += linops.conv_replicate_adjoint(
                    g[i, k], linops.SOBEL_KERNELS[k])
        return (gx,)
    return _record(out, (x,), bwd)


def bicubic_down(x: Tensor, r) -> Tensor:
    """Non-trainable bicubic downscale by an integer factor per channel."""
    r = int(r)
    n, c, h, w = x.data.shape
    if h % r or w % r:
        raise ValueError("dims must be divisible by the scale factor")
    mr = linops._resize_matrix(h, h // r)
    mc = linops._resize_matrix(w, w // r)
    tmp = np.einsum("ai,nciw->ncaw", mr, x.data)
    out = Tensor(np.einsum("bj,ncaj->ncab", mc, tmp))

    def bwd(g):
        t2 = np.einsum("bj,ncab->ncaj", mc, g)
        return (np.einsum("ai,ncaw->nciw", mr, t2),)
    return _record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# losses

def huber_loss(pred: Tensor, target, delta=1.0) -> Tensor:
    """Mean Huber penalty of pred - target (target is a constant array)."""
    t = np.asarray(target, dtype=np.float64)
    if t.shape != pred.data.shape:
        raise ValueError("target shape must match prediction")
    d = pred.data - t
    ad = np.abs(d)
    val = np.where(ad <= delta, 0.5 * d * d, delta * (ad - 0.5 * delta))
    out = Tensor(float(val.mean()))
    n = d.size

    def bwd(g):
        return (float(g) * np.clip(d, -delta, delta) / n,)
    return _record(out, (pred,), bwd)


def mse_loss(pred: Tensor, target) -> Tensor:
    t = np.asarray(target, dtype=np.float64)
    if t.shape != pred.data.shape:
        raise ValueError("target shape must match prediction")
    d = pred.data - t
    out = Tensor(float((d * d).mean()))
    n = d.size

    def bwd(g):
        return (float(g) * 2.0 * d / n,)
    return _record(out, (pred,), bwd)


# ---------------------------------------------------------------------------
# optimizers

@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_init(params, lr) -> AdamState:
    state = AdamState(lr=float(lr))
    for p in params:
        data = p.data if isinstance(p, Tensor) else np.asarray(p)
        state.m.append(np.zeros_like(data))
        state.v.append(np.zeros_like(data))
    return state


def _param_arrays(params):
    return [p.data if isinstance(p, Tensor) else p for p in params]


def adam_step(params, grads, state: AdamState):
    """One Adam update, in place on the parameter arrays."""
    arrays = _param_arrays(params)
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise ValueError("params, grads and state must have equal lengths")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        if g.shape != a.shape:
            raise ValueError("gradient shape mismatch")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        a -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


@dataclass
class SgdState:
    lr: float


def sgd_init(params, lr) -> SgdState:
    return SgdState(lr=float(lr))


def sgd_step(params, grads, state: SgdState):
    arrays = _param_arrays(params)
    if len(arrays) != len(grads):
        raise ValueError("params and grads must have equal lengths")
    for a, g in zip(arrays, grads):
        if g.shape != a.shape:
            raise ValueError("gradient shape mismatch")
        a -= state.lr * g
    return params


# ---------------------------------------------------------------------------
# gradient checking

def grad_check(op, input_shapes, eps=1e-4, seed=0, max_entries=48):
    """Max relative error of tape gradients vs central finite differences.

    op maps a list of Tensors to a Tensor of any shape; the output is
    projected to a scalar with fixed random weights so one backward pass
    yields every gradient.
    """
    rng = np.random.default_rng(seed)
    inputs = [Tensor(rng.standard_normal(s), requires_grad=True)
              for s in input_shapes]

    def scalar_loss():
        out = op(inputs)
        return weighted_sum(out, proj)

    with Tape() as tape:
        probe = op(inputs)
    proj = rng.standard_normal(probe.data.shape)

    for t in inputs:
        t.zero_grad()
    with Tape() as tape:
        loss = scalar_loss()
        backward(loss, tape)

    worst = 0.0
    for t in inputs:
        flat = t.data.reshape(-1)
        gflat = t.grad.reshape(-1) if t.grad is not None else np.zeros_like(flat)
        n = flat.size
        idx = np.arange(n) if n <= max_entries \
            else rng.choice(n, size=max_entries, replace=False)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + eps
            with Tape():
                f_plus = float(scalar_loss().data)
            flat[i] = keep - eps
            with Tape():
                f_minus = float(scalar_loss().data)
            flat[i] = keep
            numeric = (f_plus - f_minus) / (2.0 * eps)
            analytic = gflat[i]
            denom = max(abs(analytic), abs(numeric), 1e-6)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MANIFEST = "checkpoint.json"
CHECKPOINT_PAYLOAD = "checkpoint.f64raw"


def save_checkpoint(dirpath, tensors: dict, meta: dict | None = None):
    """Write named arrays as one little-endian float64 payload + manifest."""
    os.makedirs(dirpath, exist_ok=True)
    entries = []
    offset = 0
    chunks = []
    for name, value in tensors.items():
        src = np.asarray(value.data if isinstance(value, Tensor) else value)
        a = np.ascontiguousarray(src, dtype="<f8")  # promotes 0-d to 1-d
        entries.append({"name": name, "shape": list(src.shape), "offset": offset})
        offset += a.size
        chunks.append(a.reshape(-1))
    manifest = {"format": "checkpoint/1", "dtype": "<f8",
                "tensors": entries, "meta": meta or {}}
    payload = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f8")
    with open(os.path.join(dirpath, CHECKPOINT_PAYLOAD), "wb") as f:
        f.write(payload.tobytes())
    tmp = os.path.join(dirpath, CHECKPOINT_MANIFEST + ".tmp")
    with open(tmp, "w") as f:
        json.dump(manifest, f, indent=1)
        f.write("\n")
    os.replace(tmp, os.path.join(dirpath, CHECKPOINT_MANIFEST))


def load_checkpoint(dirpath):
    """Read back (ordered dict of arrays, meta dict)."""
    try:
        with open(os.path.join(dirpath, CHECKPOINT_MANIFEST)) as f:
            manifest = json.load(f)
        with open(os.path.join(dirpath, CHECKPOINT_PAYLOAD), "rb") as f:
            raw = f.read()
    except FileNotFoundError as e:
        raise DataError(f"missing checkpoint file: {e.filename}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"corrupt checkpoint manifest: {e}") from e
    payload = np.frombuffer(raw, dtype=manifest.get("dtype", "<f8"))
    tensors = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = int(entry["offset"])
        if start + size > payload.size:
            raise DataError("checkpoint payload shorter than manifest claims")
        tensors[entry["name"]] = payload[start:start + size].reshape(shape).astype(np.float64)
    return tensors, manifest.get("meta", {})
