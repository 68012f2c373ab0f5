"""Fixed linear operators and their exact adjoints.

The sharpening pipeline is built from a small set of linear maps: a Gaussian
blur standing in for the coarse sensor's modulation transfer function, bicubic
resampling (Catmull-Rom, a = -0.5, pixel-center alignment, replicate
boundary), four directional Sobel derivative filters, and a high-pass filter
defined as identity minus the Gaussian blur. The coarsening observation
operator is the blur followed by bicubic downscaling.

Convolution here means same-size correlation with edge-replication padding.
Each operator is paired with an adjoint that is exact to machine precision,
including boundary handling, which the direct solver and the gradient checks
rely on.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage, signal

from .raster import Grid2D, block_mean

# Horizontal, vertical, and the two diagonal 3x3 derivative kernels.
SOBEL_KERNELS = np.array([
    [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]],
    [[-1, -2, -1], [0, 0, 0], [1, 2, 1]],
    [[0, 1, 2], [-1, 0, 1], [-2, -1, 0]],
    [[2, 1, 0], [1, 0, -1], [0, -1, -2]],
], dtype=np.float64)
SOBEL_KERNELS.flags.writeable = False

IDENTITY_SIGMA_THRESHOLD = 0.3


@dataclass(frozen=True, eq=False)
class GaussianKernel:
    """Sampled isotropic Gaussian, truncated and renormalized to unit sum."""

    sigma_px: float
    radius: int
    weights: np.ndarray


def gaussian_kernel(sigma_px, radius=None) -> GaussianKernel:
    """Build a normalized Gaussian kernel of side 2*radius + 1.

    radius defaults to ceil(3 sigma). sigma below 0.3 px degenerates to the
    identity kernel (center weight 1), since at that width the sampled
    Gaussian has all its mass in the center pixel anyway.
    """
    sigma_px = float(sigma_px)
    if sigma_px < 0:
        raise ValueError("sigma must be non-negative")
    identity = sigma_px < IDENTITY_SIGMA_THRESHOLD
    if radius is None:
        radius = 0 if identity else int(np.ceil(3.0 * sigma_px))
    radius = int(radius)
    if radius < 0:
        raise ValueError("radius must be non-negative")
    n = 2 * radius + 1
    if identity:
        w = np.zeros((n, n))
        w[radius, radius] = 1.0
    else:
        d = np.arange(-radius, radius + 1, dtype=np.float64)
        g = np.exp(-(d ** 2) / (2.0 * sigma_px ** 2))
        w = np.outer(g, g)
        w /= w.sum()
    w.flags.writeable = False
    return GaussianKernel(sigma_px, radius, w)


def _kernel_weights(kernel):
    w = kernel.weights if isinstance(kernel, GaussianKernel) else np.asarray(kernel, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] % 2 == 0 or w.shape[1] % 2 == 0:
        raise ValueError("kernel must be 2-D with odd dims")
    return w


def conv_replicate(image, kernel, mask=None):
    """Same-size correlation with edge-replication padding.

    With a mask, the result is renormalized over the valid weights so invalid
    pixels contribute nothing; pixels whose whole neighborhood is invalid
    come out 0 (callers keep them masked).
    """
    w = _kernel_weights(kernel)
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("image must be 2-D")
    if mask is None:
        return ndimage.correlate(image, w, mode="nearest")
    m = np.asarray(mask, dtype=np.float64)
    num = ndimage.correlate(image * m, w, mode="nearest")
    den = ndimage.correlate(m, w, mode="nearest")
    ok = den > 1e-12
    return np.divide(num, den, out=np.zeros_like(num), where=ok)


def _pad_edge_adjoint(g, ry, rx):
    """Adjoint of replicate padding: fold the margins back onto edge pixels."""
    h = g.shape[0] - 2 * ry
    rows = g[ry:ry + h, :].copy()
    if ry:
        rows[0, :] += g[:ry, :].sum(axis=0)
        rows[-1, :] += g[ry + h:, :].sum(axis=0)
    w = rows.shape[1] - 2 * rx
    out = rows[:, rx:rx + w].copy()
    if rx:
        out[:, 0] += rows[:, :rx].sum(axis=1)
        out[:, -1] += rows[:, rx + w:].sum(axis=1)
    return out


def conv_replicate_adjoint(grad, kernel):
    """Exact adjoint of conv_replicate (unmasked) on a same-size gradient."""
    w = _kernel_weights(kernel)
    ry, rx = w.shape[0] // 2, w.shape[1] // 2
    full = signal.convolve2d(np.asarray(grad, dtype=np.float64), w, mode="full")
    return _pad_edge_adjoint(full, ry, rx)


def _cubic_weight(t):
    # Catmull-Rom cubic convolution kernel, a = -0.5.
    t = np.abs(t)
    w = np.zeros_like(t)
    near = t <= 1.0
    far = (t > 1.0) & (t < 2.0)
    w[near] = (1.5 * t[near] - 2.5) * t[near] ** 2 + 1.0
    w[far] = ((-0.5 * t[far] + 2.5) * t[far] - 4.0) * t[far] + 2.0
    return w


@lru_cache(maxsize=256)
def _resize_matrix(n_in, n_out):
    """Dense 1-D resampling matrix (n_out x n_in), replicate boundary."""
    scale = n_in / n_out
    x = (np.arange(n_out) + 0.5) * scale - 0.5
    i0 = np.floor(x).astype(int)
    t = x - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for off in (-1, 0, 1, 2):
        idx = np.clip(i0 + off, 0, n_in - 1)
        np.add.at(m, (rows, idx), _cubic_weight(off - t))
    m.flags.writeable = False
    return m


def bicubic_resize(image, out_h, out_w):
    """Separable Catmull-Rom resampling to (out_h, out_w)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("image must be 2-D")
    if out_h < 1 or out_w < 1:
        raise ValueError("output dims must be positive")
    mr = _resize_matrix(image.shape[0], int(out_h))
    mc = _resize_matrix(image.shape[1], int(out_w))
    return mr @ image @ mc.T


def bicubic_resize_adjoint(grad, in_h, in_w):
    grad = np.asarray(grad, dtype=np.float64)
    mr = _resize_matrix(int(in_h), grad.shape[0])
    mc = _resize_matrix(int(in_w), grad.shape[1])
    return mr.T @ grad @ mc


def default_mtf_sigma(r):
    return 0.5 * float(r)


def mtf_degrade(hr, r, sigma_px=None):
    """Observation operator: Gaussian blur then bicubic downscale by r.

    Accepts a Grid2D (pixel size is multiplied by r; invalid pixels are
    excluded by mask-weighted renormalization and a coarse pixel stays valid
    if its footprint holds any valid source pixel) or a bare 2-D array.
    """
    r = int(r)
    if r < 1:
        raise ValueError("scale factor must be >= 1")
    if sigma_px is None:
        sigma_px = default_mtf_sigma(r)
    kernel = gaussian_kernel(sigma_px)
    if isinstance(hr, Grid2D):
        h, w = hr.shape
        if h % r or w % r:
            raise ValueError("grid dims must be divisible by the scale factor")
        if hr.all_valid():
            values = conv_replicate(hr.values, kernel)
            out = bicubic_resize(values, h // r, w // r)
            return Grid2D(out, hr.pixel_size * r, units=hr.units)
        filled = conv_replicate(hr.values, kernel, mask=hr.mask)
        out = bicubic_resize(filled, h // r, w // r)
        out_mask = block_mean(hr.mask.astype(np.float64), r) > 0
        return Grid2D(np.where(out_mask, out, 0.0), hr.pixel_size * r,
                      out_mask, hr.units)
    image = np.asarray(hr, dtype=np.float64)
    h, w = image.shape
    if h % r or w % r:
        raise ValueError("image dims must be divisible by the scale factor")
    return bicubic_resize(conv_replicate(image, kernel), h // r, w // r)


def sobel_directional(image):
    """Apply the four directional derivative kernels; returns (4, H, W)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or min(image.shape) < 3:
        raise ValueError("image must be 2-D and at least 3x3")
    return np.stack([conv_replicate(image, k) for k in SOBEL_KERNELS])


def highpass(image, kernel):
    """Residual detail: image minus its Gaussian-blurred version."""
    image = np.asarray(image, dtype=np.float64)
    return image - conv_replicate(image, kernel)


@dataclass(frozen=True)
class LinearOp:
    """A linear map bundled with its exact adjoint."""

    forward: callable
    adjoint: callable
    descriptor: str


def adjoint_of(descriptor, *, kernel=None, in_shape=None, r=None,
               sobel_index=None) -> LinearOp:
    """Build the named operator with its adjoint.

    Descriptors: gaussian_conv (kernel), bicubic_down (in_shape, r),
    bicubic_up (in_shape, r), sobel_k (sobel_index), highpass (kernel).
    """
    if descriptor == "gaussian_conv":
        w = _kernel_weights(kernel)
        return LinearOp(lambda x: conv_replicate(x, w),
                        lambda g: conv_replicate_adjoint(g, w),
                        descriptor)
    if descriptor == "bicubic_down":
        h, wd = in_shape
        rr = int(r)
        if h % rr or wd % rr:
            raise ValueError("in_shape must be divisible by r")
        return LinearOp(lambda x: bicubic_resize(x, h // rr, wd // rr),
                        lambda g: bicubic_resize_adjoint(g, h, wd),
                        descriptor)
    if descriptor == "bicubic_up":
        h, wd = in_shape
        rr = int(r)
        return LinearOp(lambda x: bicubic_resize(x, h * rr, wd * rr),
                        lambda g: bicubic_resize_adjoint(g, h, wd),
                        descriptor)
    if descriptor == "sobel_k":
        k = SOBEL_KERNELS[int(sobel_index)]
        return LinearOp(lambda x: conv_replicate(x, k),
                        lambda g: conv_replicate_adjoint(g, k),
                        descriptor)
    if descriptor == "highpass":
        w = _kernel_weights(kernel)
        return LinearOp(lambda x: x - conv_replicate(x, w),
                        lambda g: g - conv_replicate_adjoint(g, w),
                        descriptor)
    raise ValueError(f"unknown operator descriptor: {descriptor!r}")


def dot_product_check(op: LinearOp, in_shape, n_pairs=20, seed=0):
    """Max relative error of <Ax, y> vs <x, A'y> over random pairs."""
    rng = np.random.default_rng(seed)
    out_shape = op.forward(np.zeros(in_shape)).shape
    worst = 0.0
    for _ in range(n_pairs):
        x = rng.standard_normal(in_shape)
        y = rng.standard_normal(out_shape)
        lhs = float(np.vdot(op.forward(x), y))
        rhs = float(np.vdot(x, op.adjoint(y)))
        denom = max(abs(lhs), abs(rhs), 1e-30)
        worst = max(worst, abs(lhs - rhs) / denom)
    return worst
