"""Classical sharpening baselines.

Both statistical methods fit a per-scene linear regression of the coarse
thermal grid on the coarse vegetation index (the index is coarsened with the
same observation operator used everywhere else), predict at fine scale with
the fine index, and add back the coarse regression residuals: either
nearest-neighbor upsampled (tsharp_sharpen) or downscaled by area-to-point
kriging under an exponential variogram (atprk_sharpen). Plain bicubic
interpolation of the thermal grid is the do-nothing reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.distance import pdist

from . import linops
from .errors import DataError, NumericError
from .raster import Grid2D, ScenePair

PSILL_FLOOR = 1e-12


def degrade_ndvi(ndvi_hr: Grid2D, r, sigma_px=None) -> Grid2D:
    """Coarsen the index with the thermal observation operator."""
    return linops.mtf_degrade(ndvi_hr, r, sigma_px)


@dataclass(frozen=True)
class LinearModel:
    slope: float
    intercept: float
    residual_lr: Grid2D


def fit_linear(lst_lr: Grid2D, v_lr: Grid2D) -> LinearModel:
    """Ordinary least squares of coarse temperature on coarse index."""
    if lst_lr.shape != v_lr.shape:
        raise ValueError("grids must share dims")
    m = lst_lr.mask & v_lr.mask
    if int(m.sum()) < 2:
        raise DataError("need at least 2 jointly valid pixels to regress")
    t = lst_lr.values[m]
    v = v_lr.values[m]
    vc = v - v.mean()
    denom = float(vc @ vc)
    if denom <= 1e-12 * max(1.0, float(v @ v)):
        raise NumericError("degenerate regression: coarse index is constant")
    slope = float(vc @ (t - t.mean())) / denom
    intercept = float(t.mean() - slope * v.mean())
    residual = np.where(m, lst_lr.values - (slope * v_lr.values + intercept), 0.0)
    return LinearModel(slope, intercept,
                       Grid2D(residual, lst_lr.pixel_size, m, lst_lr.units))


def _nn_upsample(values, r):
    return np.kron(values, np.ones((r, r)))


def _regression_parts(pair: ScenePair, sigma_px=None):
    v_lr = degrade_ndvi(pair.ndvi_hr, pair.r, sigma_px)
    model = fit_linear(pair.lst_lr, v_lr)
    trend_hr = model.slope * pair.ndvi_hr.values + model.intercept
    return model, trend_hr


def tsharp_sharpen(pair: ScenePair, sigma_px=None) -> Grid2D:
    """Regression prediction plus nearest-neighbor upsampled residuals."""
    model, trend_hr = _regression_parts(pair, sigma_px)
    res_hr = _nn_upsample(model.residual_lr.values, pair.r)
    mask = pair.ndvi_hr.mask & _nn_upsample(model.residual_lr.mask, pair.r).astype(bool)
    return Grid2D(np.where(mask, trend_hr + res_hr, 0.0),
                  pair.ndvi_hr.pixel_size, mask, "K")


# ---------------------------------------------------------------------------
# variogram estimation

@dataclass(frozen=True)
class EmpiricalVariogram:
    lags_m: np.ndarray        # bin centers, meters
    semivariances: np.ndarray
    pair_counts: np.ndarray


def empirical_variogram(residual_lr: Grid2D, max_lag_px=None) -> EmpiricalVariogram:
    """Method-of-moments semivariances binned by rounded pixel distance."""
    m = residual_lr.mask
    n_valid = int(m.sum())
    if n_valid < 30:
        raise DataError(f"too few valid pixels for a variogram: {n_valid} < 30")
    if max_lag_px is None:
        max_lag_px = max(min(residual_lr.shape) // 2, 1)
    max_lag_px = int(max_lag_px)
    rows, cols = np.nonzero(m)
    coords = np.column_stack([rows, cols]).astype(np.float64)
    z = residual_lr.values[m]
    d = pdist(coords)
    sq = 0.5 * pdist(z[:, None], metric="sqeuclidean")
    bins = np.rint(d).astype(int)
    keep = (bins >= 1) & (bins <= max_lag_px)
    bins = bins[keep]
    sq = sq[keep]
    counts = np.bincount(bins, minlength=max_lag_px + 1)[1:]
    sums = np.bincount(bins, weights=sq, minlength=max_lag_px + 1)[1:]
    present = counts > 0
    lags_px = np.arange(1, max_lag_px + 1, dtype=np.float64)[present]
    gamma = sums[present] / counts[present]
    return EmpiricalVariogram(lags_px * residual_lr.pixel_size, gamma,
                              counts[present].astype(np.int64))


@dataclass(frozen=True)
class VariogramModel:
    """Exponential model gamma(h) = nugget + psill * (1 - exp(-3h/range))."""

    nugget: float
    partial_sill: float
    range_m: float
    from_fallback: bool = False

    def semivariance(self, h_m):
        h = np.asarray(h_m, dtype=np.float64)
        g = self.nugget + self.partial_sill * (1.0 - np.exp(-3.0 * h / self.range_m))
        return np.where(h > 0, g, 0.0)

    def covariance(self, h_m):
        h = np.asarray(h_m, dtype=np.float64)
        c = self.partial_sill * np.exp(-3.0 * h / self.range_m)
        return np.where(h > 0, c, self.nugget + self.partial_sill)


def fit_variogram(emp: EmpiricalVariogram) -> VariogramModel:
    """Weighted least squares fit (weights = pair counts); non-negative
    nugget and sill enforced by bounds; falls back to a pure-nugget model
    when the optimizer fails."""
    lags = np.asarray(emp.lags_m, dtype=np.float64)
    gamma = np.asarray(emp.semivariances, dtype=np.float64)
    counts = np.asarray(emp.pair_counts, dtype=np.float64)
    if lags.size < 3:
        raise DataError("need at least 3 variogram bins to fit a model")
    w = np.sqrt(counts / counts.max())
    top = float(gamma.max())
    scale = max(top, 1e-30)
    x0 = np.array([0.5 * float(gamma[0]), max(top - 0.5 * gamma[0], 0.1 * scale),
                   float(lags[len(lags) // 2])])

    def fun(p):
        nugget, psill, rng_m = p
        model = nugget + psill * (1.0 - np.exp(-3.0 * lags / rng_m))
        return w * (model - gamma)

    try:
        res = least_squares(fun, x0, bounds=([0.0, 0.0, lags[0] * 1e-3],
                                             [np.inf, np.inf, np.inf]))
        ok = res.success and np.all(np.isfinite(res.x))
    except Exception:
        ok = False
    if not ok:
        return VariogramModel(float(gamma.mean()), 0.0, float(lags[0]),
                              from_fallback=True)
    nugget, psill, rng_m = (float(v) for v in res.x)
    return VariogramModel(nugget, psill, rng_m)


# ---------------------------------------------------------------------------
# area-to-point kriging

@dataclass
class KrigingPlan:
    """Per-fine-pixel weights over a window of coarse blocks.

    weights[i, j, k] applies to the coarse pixel whose flat index is
    block_index[i, j, k]; rows always sum to 1 (unit-sum constraint).
    """

    neighborhood: int
    weights: np.ndarray      # (Hf, Wf, K)
    block_index: np.ndarray  # (Hf, Wf, K) flat coarse indices
    unit_sum: bool = True


def _point_offsets(r):
    # fine-pixel center offsets inside one coarse block, in fine-pixel units
    g = np.arange(r, dtype=np.float64)
    return np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)


def build_kriging_plan(residual_lr: Grid2D, model: VariogramModel, r,
                       neighborhood=5) -> KrigingPlan:
    r = int(r)
    nb = int(neighborhood)
    if nb < 1 or nb % 2 == 0:
        raise ValueError("neighborhood must be a positive odd window size")
    hc, wc = residual_lr.shape
    nb = min(nb, hc, wc)
    if nb % 2 == 0:
        nb -= 1
    hf, wf = hc * r, wc * r
    fine_ps = residual_lr.pixel_size / r
    k = nb * nb
    weights = np.zeros((hf, wf, k))
    block_index = np.zeros((hf, wf, k), dtype=np.int64)
    offsets = _point_offsets(r)  # (r*r, 2) in fine units
    half = nb // 2
    mask = residual_lr.mask

    # Covariance between two coarse blocks separated by (di, dj) coarse cells:
    # averaged point covariance over both supports. Depends only on offsets.
    span = np.arange(-(nb - 1), nb)
    pair_cov = {}
    for di in span:
        for dj in span:
            dd = (offsets[:, None, :] - offsets[None, :, :]
                  + np.array([di * r, dj * r])[None, None, :])
            h_m = np.sqrt((dd ** 2).sum(-1)) * fine_ps
            pair_cov[(di, dj)] = float(model.covariance(h_m).mean())

    solve_cache = {}

    def solve_weights(rel_blocks, sub_i, sub_j, cache_key):
        if cache_key is not None and cache_key in solve_cache:
            return solve_cache[cache_key]
        nk = len(rel_blocks)
        a = np.empty((nk + 1, nk + 1))
        a[nk, :] = 1.0
        a[:, nk] = 1.0
        a[nk, nk] = 0.0
        for ii, (bi, bj) in enumerate(rel_blocks):
            for jj, (ci, cj) in enumerate(rel_blocks):
                a[ii, jj] = pair_cov[(bi - ci, bj - cj)]
        b = np.empty(nk + 1)
        target = np.array([sub_i, sub_j], dtype=np.float64)
        for ii, (bi, bj) in enumerate(rel_blocks):
            pts = offsets + np.array([bi * r, bj * r])
            h_m = np.sqrt(((pts - target) ** 2).sum(-1)) * fine_ps
            b[ii] = float(model.covariance(h_m).mean())
        b[nk] = 1.0
        try:
            sol = np.linalg.solve(a, b)
        except np.linalg.LinAlgError:
            a2 = a.copy()
            a2[:nk, :nk] += 1e-8 * np.eye(nk)
            try:
                sol = np.linalg.solve(a2, b)
            except np.linalg.LinAlgError:
                sol = None
        if sol is not None and not np.all(np.isfinite(sol)):
            sol = None
        w = sol[:nk] if sol is not None else None
        if cache_key is not None:
            solve_cache[cache_key] = w
        return w

    all_valid = bool(mask.all())
    for fi in range(hf):
        pi = fi // r
        i0 = min(max(pi - half, 0), hc - nb)
        for fj in range(wf):
            pj = fj // r
            j0 = min(max(pj - half, 0), wc - nb)
            cells = [(bi, bj) for bi in range(i0, i0 + nb)
                     for bj in range(j0, j0 + nb)
                     if all_valid or mask[bi, bj]]
            sub_i = fi - i0 * r + 0.0
            sub_j = fj - j0 * r + 0.0
            rel = [(bi - i0, bj - j0) for bi, bj in cells]
            key = (i0 - pi, j0 - pj, fi % r, fj % r) if all_valid else None
            w = solve_weights(rel, sub_i, sub_j, key)
            if w is None:
                # nearest-neighbor fallback on the parent block
                w = np.array([1.0 if (bi, bj) == (pi, pj) else 0.0
                              for bi, bj in cells])
                if w.sum() == 0 and len(cells):
                    w[0] = 1.0
            flat = [bi * wc + bj for bi, bj in cells]
            weights[fi, fj, :len(w)] = w
            block_index[fi, fj, :len(flat)] = flat
    return KrigingPlan(nb, weights, block_index)


def atp_kriging(residual_lr: Grid2D, model: VariogramModel, r,
                neighborhood=5) -> Grid2D:
    """Downscale coarse residuals to the fine grid by area-to-point kriging.

    A flat variogram (partial sill ~ 0) carries no spatial structure, so the
    result degenerates to nearest-neighbor upsampling by rule.
    """
    r = int(r)
    fine_ps = residual_lr.pixel_size / r
    mask_hr = _nn_upsample(residual_lr.mask, r).astype(bool)
    if model.partial_sill <= PSILL_FLOOR * max(model.nugget, 1.0):
        values = _nn_upsample(residual_lr.values, r)
        return Grid2D(np.where(mask_hr, values, 0.0), fine_ps, mask_hr,
                      residual_lr.units)
    plan = build_kriging_plan(residual_lr, model, r, neighborhood)
    flat = residual_lr.values.reshape(-1)
    values = np.zeros(plan.weights.shape[:2])
    for k in range(plan.weights.shape[-1]):
        values += plan.weights[:, :, k] * flat[plan.block_index[:, :, k]]
    return Grid2D(np.where(mask_hr, values, 0.0), fine_ps, mask_hr,
                  residual_lr.units)


def atprk_sharpen(pair: ScenePair, sigma_px=None, neighborhood=5,
                  max_lag_px=None) -> Grid2D:
    """Regression prediction plus kriged residuals."""
    model, trend_hr = _regression_parts(pair, sigma_px)
    emp = empirical_variogram(model.residual_lr, max_lag_px)
    vario = fit_variogram(emp)
    res_hr = atp_kriging(model.residual_lr, vario, pair.r, neighborhood)
    mask = pair.ndvi_hr.mask & res_hr.mask
    return Grid2D(np.where(mask, trend_hr + res_hr.values, 0.0),
                  pair.ndvi_hr.pixel_size, mask, "K")


def bicubic_baseline(pair: ScenePair) -> Grid2D:
    """Bicubic upsampling of the coarse thermal grid, no index guidance."""
    t = pair.lst_lr
    values = t.values
    if not t.all_valid():
        fill = float(t.valid_values().mean()) if t.mask.any() else 0.0
        values = np.where(t.mask, t.values, fill)
    out = linops.bicubic_resize(values, t.height * pair.r, t.width * pair.r)
    mask = _nn_upsample(t.mask, pair.r).astype(bool) & pair.ndvi_hr.mask
    return Grid2D(np.where(mask, out, 0.0), pair.ndvi_hr.pixel_size, mask, "K")
