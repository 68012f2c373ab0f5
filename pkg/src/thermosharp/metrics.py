"""Scene evaluation metrics.

Spatial metrics (rmse, rmse_q75, ssim_mean) compare a sharpened grid against
a fine-scale reference over jointly valid pixels. Spectral metrics work on
attenuation spectra: radially averaged Fourier amplitudes in dB relative to
the zero-frequency component. frr quantifies how much of the bicubic-to-
reference spectral gap a method closed, fro how far it overshot the
reference, and rmse_attenuation the overall distance between curves.
"""

from __future__ import annotations

import csv

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .linops import SOBEL_KERNELS, conv_replicate
from .raster import Grid2D, as_values_mask

CSV_FLOAT_FMT = "%.10g"


def _joint(a, b):
    av, am = as_values_mask(a)
    bv, bm = as_values_mask(b)
    if av.shape != bv.shape:
        raise ValueError(f"shape mismatch: {av.shape} vs {bv.shape}")
    m = am & bm
    if not m.any():
        raise ValueError("no jointly valid pixels")
    return av, bv, m


def rmse(a, b) -> float:
    av, bv, m = _joint(a, b)
    d = av[m] - bv[m]
    return float(np.sqrt(np.mean(d * d)))


def rmse_q75(a, ref) -> float:
    """RMSE restricted to the reference's strong-gradient pixels.

    Strong = Sobel gradient magnitude at or above its 75th percentile; ties
    are included, so at least a quarter of the valid pixels qualifies.
    """
    av, rv, m = _joint(a, ref)
    _, rm = as_values_mask(ref)
    gx = conv_replicate(rv, SOBEL_KERNELS[0], None if rm.all() else rm)
    gy = conv_replicate(rv, SOBEL_KERNELS[1], None if rm.all() else rm)
    mag = np.hypot(gx, gy)
    thresh = float(np.percentile(mag[m], 75.0))
    sel = m & (mag >= thresh)
    if not sel.any():
        raise ValueError("gradient selection is empty")
    d = av[sel] - rv[sel]
    return float(np.sqrt(np.mean(d * d)))


def ssim_mean(a, b, window=7, k1=0.01, k2=0.03) -> float:
    """Mean structural similarity over fully valid windows.

    Box windows, biased moments, dynamic range taken jointly from both
    images. Identical inputs score exactly 1.0.
    """
    av, bv, m = _joint(a, b)
    w = int(window)
    if w < 2 or w > min(av.shape):
        raise ValueError(f"window {w} does not fit image {av.shape}")
    lo = min(float(av[m].min()), float(bv[m].min()))
    hi = max(float(av[m].max()), float(bv[m].max()))
    drange = hi - lo
    if drange == 0.0:
        return 1.0
    c1 = (k1 * drange) ** 2
    c2 = (k2 * drange) ** 2
    wa = sliding_window_view(av, (w, w))
    wb = sliding_window_view(bv, (w, w))
    wm = sliding_window_view(m, (w, w)).all(axis=(-2, -1))
    if not wm.any():
        raise ValueError("no fully valid windows")
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    var_a = (wa * wa).mean(axis=(-2, -1)) - mu_a * mu_a
    var_b = (wb * wb).mean(axis=(-2, -1)) - mu_b * mu_b
    cov = (wa * wb).mean(axis=(-2, -1)) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float((num[wm] / den[wm]).mean())


# ---------------------------------------------------------------------------
# spectral metrics

def radial_spectrum(image, hann=False):
    """Radially averaged Fourier amplitude spectrum.

    Returns (freqs, amps): freqs[k] = k/n cycles per pixel for k = 0..n//2,
    amps[k] = mean |FFT| over the ring of radius within half a frequency
    sample of k/n. Non-square inputs are center-cropped to a square; masked
    pixels are rejected. hann=True applies a separable Hann window first
    (reduces periodic-boundary leakage; off by default).
    """
    v, m = as_values_mask(image)
    if not m.all():
        raise ValueError("spectrum requires a fully valid grid")
    h, w = v.shape
    n = min(h, w)
    r0 = (h - n) // 2
    c0 = (w - n) // 2
    v = v[r0:r0 + n, c0:c0 + n]
    if hann:
        win = np.hanning(n)
        v = v * np.outer(win, win)
    amp = np.abs(np.fft.fft2(v))
    fy = np.fft.fftfreq(n)
    rho = np.hypot(fy[:, None], fy[None, :])
    kmax = n // 2
    k = np.rint(rho * n).astype(int)
    k = np.where(k > kmax, -1, k)  # corner radii beyond Nyquist are dropped
    amps = np.zeros(kmax + 1)
    counts = np.zeros(kmax + 1)
    valid = k >= 0
    np.add.at(amps, k[valid], amp[valid])
    np.add.at(counts, k[valid], 1.0)
    freqs = np.arange(kmax + 1, dtype=np.float64) / n
    return freqs, amps / counts


def attenuation_spectrum(image, hann=False):
    """Log amplitude spectrum in dB, exactly 0 dB at zero frequency."""
    freqs, amps = radial_spectrum(image, hann)
    if amps[0] <= 0.0:
        raise ValueError("zero-frequency amplitude vanishes; cannot normalize")
    safe = np.maximum(amps, 1e-300)
    att = 10.0 * (np.log10(safe) - np.log10(amps[0]))
    att[0] = 0.0
    return freqs, att


def _as_curve(x):
    """Accept an attenuation curve or an image to take the spectrum of."""
    if isinstance(x, Grid2D):
        return attenuation_spectrum(x)[1]
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        return a
    if a.ndim == 2:
        return attenuation_spectrum(a)[1]
    raise ValueError("expected a 1-D attenuation curve or a 2-D image")


def _curves(*items):
    curves = [_as_curve(x) for x in items]
    n = curves[0].shape
    if any(c.shape != n for c in curves):
        raise ValueError("attenuation curves must share their ring grid")
    return curves


def rmse_attenuation(a, ref) -> float:
    """RMS distance between attenuation curves, zero frequency excluded."""
    ca, cb = _curves(a, ref)
    d = ca[1:] - cb[1:]
    return float(np.sqrt(np.mean(d * d)))


def frr(sr, ref, bicubic) -> float:
    """Fraction of the reference's attenuation gain over bicubic that the
    sharpened image restored. Per ring the credit is min(gain_sr, gain_ref),
    both floored at 0, so bicubic scores exactly 0, the reference exactly 1,
    and overshoot saturates at 1. Zero frequency is excluded (0 dB for all)."""
    a_sr, a_ref, a_bic = _curves(sr, ref, bicubic)
    gain_sr = np.maximum(a_sr[1:] - a_bic[1:], 0.0)
    gain_ref = np.maximum(a_ref[1:] - a_bic[1:], 0.0)
    denom = float(gain_ref.sum())
    if denom <= 0.0:
        raise ValueError("reference does not exceed bicubic anywhere; "
                         "frequency restoration is undefined")
    return float(np.minimum(gain_sr, gain_ref).sum() / denom)


def fro(sr, ref, bicubic) -> float:
    """Attenuation overshoot beyond the reference, relative to the
    reference's gain over bicubic. Zero when no ring exceeds the reference."""
    a_sr, a_ref, a_bic = _curves(sr, ref, bicubic)
    gain_ref = np.maximum(a_ref[1:] - a_bic[1:], 0.0)
    denom = float(gain_ref.sum())
    if denom <= 0.0:
        raise ValueError("reference does not exceed bicubic anywhere; "
                         "overshoot rate is undefined")
    over = np.maximum(a_sr[1:] - a_ref[1:], 0.0)
    return float(over.sum() / denom)


def evaluate_scene(sr, ref, bicubic) -> dict:
    """All scene metrics for one sharpened raster against the reference."""
    return {
        "rmse_k": rmse(sr, ref),
        "rmse_q75_k": rmse_q75(sr, ref),
        "ssim": ssim_mean(sr, ref),
        "frr": frr(sr, ref, bicubic),
        "fro": fro(sr, ref, bicubic),
        "rmse_attenuation_db": rmse_attenuation(sr, ref),
    }

METRIC_COLUMNS = ("rmse_k", "rmse_q75_k", "ssim", "lpips", "frr", "fro",
                  "rmse_attenuation_db")


def _fmt_cell(row, col):
    v = row.get(col)
    return "" if v is None else CSV_FLOAT_FMT % float(v)


def write_benchmark_csv(path, rows) -> None:
    """rows: dicts with keys scene, method, and METRIC_COLUMNS entries.

    The lpips column stays empty unless supplied externally. Per-scene rows
    come sorted by (scene, method); mean and std rows per method follow.
    Floats use %.10g so identical results reproduce byte for byte.
    """
    rows = sorted(rows, key=lambda r: (str(r["scene"]), str(r["method"])))
    methods = sorted({str(r["method"]) for r in rows})
    with open(path, "w", newline="") as f:
        out = csv.writer(f)
        out.writerow(("scene", "method") + METRIC_COLUMNS)
        for row in rows:
            out.writerow([row["scene"], row["method"]]
                         + [_fmt_cell(row, c) for c in METRIC_COLUMNS])
        for stat, fn in (("mean", np.mean), ("std", np.std)):
            for method in methods:
                got = [r for r in rows if str(r["method"]) == method]
                cells = []
                for c in METRIC_COLUMNS:
                    vals = [float(r[c]) for r in got if r.get(c) is not None]
                    cells.append(CSV_FLOAT_FMT % fn(vals) if vals else "")
                out.writerow([stat, method] + cells)


def write_spectra_csv(path, freqs, curves, pixel_size_m) -> None:
    """curves: {name: attenuation dB array aligned with freqs (cycles/px)}."""
    names = sorted(curves)
    freqs = np.asarray(freqs, dtype=np.float64)
    arrs = [np.asarray(curves[n], dtype=np.float64) for n in names]
    for n, a in zip(names, arrs):
        if a.shape != freqs.shape:
            raise ValueError(f"curve {n!r} length does not match freqs")
    with open(path, "w", newline="") as f:
        out = csv.writer(f)
        out.writerow(["nu_cycles_per_px", "nu_per_m"]
                     + [f"{n}_db" for n in names])
        for i, nu in enumerate(freqs):
            out.writerow([CSV_FLOAT_FMT % nu,
                          CSV_FLOAT_FMT % (nu / pixel_size_m)]
                         + [CSV_FLOAT_FMT % a[i] for a in arrs])
