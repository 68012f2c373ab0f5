"""Multi-residual encoder/decoder network and its two training regimes.

The network maps a two-channel input (fine vegetation index, bicubically
upsampled coarse thermal grid, both standardized) to a fine thermal field.
Layout: two initial conv blocks; three encoder levels, each a 2x2 average
pool followed by three conv blocks where the first two keep the channel
width and are wrapped by an additive residual connection (input of the first
block to output of the second) and the third block expands the width; three
decoder levels, each a non-trainable bilinear x2 upsample, a concatenation
with the matching encoder feature, and two conv blocks; one final 3x3 conv.
Every conv is 3x3, stride 1, replicate padding 1, no bias; every block is
conv -> batchnorm -> ReLU.

Training is either self-supervised against the sharpening objective
(train_sif: no fine-scale thermal truth is ever seen) or supervised one tier
down with an MSE loss (train_sc: the net learns to sharpen a further-degraded
grid back to the observed one, betting that the mapping transfers across
scales).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import linops, objective
from .errors import NumericError
from .raster import Grid2D, NormStats, ScenePair, compute_norm_stats

DEPTH = 3  # encoder/decoder levels; input dims must be divisible by 2**DEPTH


@dataclass(frozen=True)
class UNetConfig:
    """Width plan [stem, level1, level2, level3] and input/output channels."""

    base_channels: tuple = (8, 16, 32, 64)
    in_channels: int = 2
    out_channels: int = 1
    seed: int = 0
    bn_momentum: float = 0.1

    def __post_init__(self):
        bc = tuple(int(c) for c in self.base_channels)
        if len(bc) != DEPTH + 1 or any(c < 1 for c in bc):
            raise ValueError("base_channels must list 4 positive widths")
        object.__setattr__(self, "base_channels", bc)
        if self.in_channels != 2:
            raise ValueError("the network takes exactly 2 input channels "
                             "(vegetation index + upsampled thermal grid)")
        if self.out_channels != 1:
            raise ValueError("the network emits exactly 1 output channel")

    def to_dict(self):
        return {"base_channels": list(self.base_channels),
                "in_channels": self.in_channels,
                "out_channels": self.out_channels,
                "seed": self.seed, "bn_momentum": self.bn_momentum}

    @classmethod
    def from_dict(cls, d):
        return cls(base_channels=tuple(d["base_channels"]),
                   in_channels=int(d.get("in_channels", 2)),
                   out_channels=int(d.get("out_channels", 1)),
                   seed=int(d.get("seed", 0)),
                   bn_momentum=float(d.get("bn_momentum", 0.1)))


def _block_plan(cfg: UNetConfig):
    """Ordered (name, c_in, c_out, has_bn) conv specs of the whole network."""
    c0, c1, c2, c3 = cfg.base_channels
    plan = [
        ("stem.0", cfg.in_channels, c0, True),
        ("stem.1", c0, c0, True),
        ("enc1.0", c0, c0, True), ("enc1.1", c0, c0, True), ("enc1.2", c0, c1, True),
        ("enc2.0", c1, c1, True), ("enc2.1", c1, c1, True), ("enc2.2", c1, c2, True),
        ("enc3.0", c2, c2, True), ("enc3.1", c2, c2, True), ("enc3.2", c2, c3, True),
        ("dec3.0", c3 + c2, c2, True), ("dec3.1", c2, c2, True),
        ("dec2.0", c2 + c1, c1, True), ("dec2.1", c1, c1, True),
        ("dec1.0", c1 + c0, c0, True), ("dec1.1", c0, c0, True),
        ("head", c0, cfg.out_channels, False),
    ]
    return plan


@dataclass
class UNetParams:
    """Parameter tensors and batchnorm buffers of one network instance."""

    cfg: UNetConfig
    weights: dict = field(default_factory=dict)   # name -> Tensor
    bn_scale: dict = field(default_factory=dict)  # name -> Tensor
    bn_shift: dict = field(default_factory=dict)
    bn_mean: dict = field(default_factory=dict)   # name -> ndarray buffer
    bn_var: dict = field(default_factory=dict)

    def trainable(self):
        out = []
        for name, _, _, has_bn in _block_plan(self.cfg):
            out.append(self.weights[name])
            if has_bn:
                out.append(self.bn_scale[name])
                out.append(self.bn_shift[name])
        return out

    def param_count(self):
        return sum(t.data.size for t in self.trainable())

    def snapshot(self):
        return copy.deepcopy(self)

    def named_arrays(self):
        """Flat name -> array view of everything a checkpoint must carry."""
        out = {}
        for name, _, _, has_bn in _block_plan(self.cfg):
            out[name + ".w"] = self.weights[name].data
            if has_bn:
                out[name + ".bn.scale"] = self.bn_scale[name].data
                out[name + ".bn.shift"] = self.bn_shift[name].data
                out[name + ".bn.mean"] = self.bn_mean[name]
                out[name + ".bn.var"] = self.bn_var[name]
        return out


def build_unet(cfg: UNetConfig) -> UNetParams:
    """He-uniform conv weights, unit batchnorm scales, seeded and deterministic."""
    rng = np.random.default_rng(cfg.seed)
    params = UNetParams(cfg)
    for name, c_in, c_out, has_bn in _block_plan(cfg):
        bound = np.sqrt(6.0 / (c_in * 9))
        w = rng.uniform(-bound, bound, size=(c_out, c_in, 3, 3))
        params.weights[name] = ad.Tensor(w, requires_grad=True, name=name)
        if has_bn:
            params.bn_scale[name] = ad.Tensor(np.ones(c_out), requires_grad=True)
            params.bn_shift[name] = ad.Tensor(np.zeros(c_out), requires_grad=True)
            params.bn_mean[name] = np.zeros(c_out)
            params.bn_var[name] = np.ones(c_out)
    return params


def _conv_block(params: UNetParams, name, x, training):
    h = ad.conv2d(x, params.weights[name])
    h = ad.batchnorm2d(h, params.bn_scale[name], params.bn_shift[name],
                       params.bn_mean[name], params.bn_var[name],
                       training, momentum=params.cfg.bn_momentum)
    return ad.relu(h)


def forward(params: UNetParams, x: ad.Tensor, training=False) -> ad.Tensor:
    """Run the network on an NCHW input tensor."""
    n, c, h, w = x.data.shape
    if c != params.cfg.in_channels:
        raise ValueError("wrong input channel count")
    if h % (2 ** DEPTH) or w % (2 ** DEPTH):
        raise ValueError(f"input dims must be divisible by {2 ** DEPTH}")

    def enc_level(tag, inp):
        u = ad.avgpool2(inp)
        t = _conv_block(params, f"{tag}.0", u, training)
        t = _conv_block(params, f"{tag}.1", t, training)
        t = ad.add(t, u)
        return _conv_block(params, f"{tag}.2", t, training)

    def dec_level(tag, inp, skip):
        t = ad.bilinear_up2(inp)
        t = ad.concat(t, skip)
        t = _conv_block(params, f"{tag}.0", t, training)
        return _conv_block(params, f"{tag}.1", t, training)

    e0 = _conv_block(params, "stem.1", _conv_block(params, "stem.0", x, training), training)
    e1 = enc_level("enc1", e0)
    e2 = enc_level("enc2", e1)
    e3 = enc_level("enc3", e2)
    d = dec_level("dec3", e3, e2)
    d = dec_level("dec2", d, e1)
    d = dec_level("dec1", d, e0)
    return ad.conv2d(d, params.weights["head"])


def unet_forward(params: UNetParams, ndvi_hr, lst_up, mode="eval"):
    """Single-pair forward on two equal-size 2-D fields; returns a 2-D array.

    Inputs are expected standardized; train mode is rejected here because a
    single sample cannot feed batch statistics.
    """
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    if mode == "train":
        raise ValueError("single-pair forward runs in eval mode only")
    v = np.asarray(ndvi_hr, dtype=np.float64)
    t = np.asarray(lst_up, dtype=np.float64)
    if v.shape != t.shape:
        raise ValueError("the two input fields must share dims")
    x = ad.Tensor(np.stack([v, t])[None])  # (1, 2, H, W)
    out = forward(params, x, training=False)
    return out.data[0, 0]


# ---------------------------------------------------------------------------
# training

def _batches(n_items, batch_size, rng):
    """Seeded shuffle, no replacement; a trailing singleton joins the
    previous batch so batchnorm always sees at least 2 samples."""
    order = rng.permutation(n_items)
    out = [order[i:i + batch_size] for i in range(0, n_items, batch_size)]
    if len(out) > 1 and len(out[-1]) < 2:
        out[-2] = np.concatenate([out[-2], out[-1]])
        out.pop()
    return out


def _standardized_fields(pair: ScenePair, stats: NormStats):
    t_std = objective.standardize(pair.lst_lr, stats.lst_mean, stats.lst_std)
    v_std = objective.standardize(pair.ndvi_hr, stats.ndvi_mean, stats.ndvi_std)
    h, w = v_std.shape
    t_up = linops.bicubic_resize(t_std.values, h, w)
    return v_std.values, t_std.values, t_up


def train_sif(dataset, sif_cfg: objective.SifConfig, unet_cfg: UNetConfig,
              epochs, batch_size, lr, stats: NormStats | None = None, seed=0):
    """Self-supervised training against the sharpening objective.

    Returns (params, history, stats) where history is one LossBreakdown per
    epoch (mean over batches, weighted by batch size) and params is the
    best-epoch snapshot.
    """
    if len(dataset) < 2:
        raise ValueError("training needs at least 2 scene pairs")
    if epochs < 1 or batch_size < 2:
        raise ValueError("epochs must be >= 1 and batch_size >= 2")
    if stats is None:
        stats = compute_norm_stats(dataset)
    r = dataset[0].r
    if sif_cfg.scale_factor != r:
        raise ValueError("objective scale_factor must match the dataset")

    kernel = sif_cfg.mtf_kernel()
    inputs, targets_lr, targets_tex = [], [], []
    for pair in dataset:
        v, t_lr, t_up = _standardized_fields(pair, stats)
        inputs.append(np.stack([v, t_up]))
        targets_lr.append(t_lr[None])
        targets_tex.append(sif_cfg.gamma * objective.texture_channels(v, sif_cfg))
    inputs = np.stack(inputs)            # (S, 2, H, W)
    targets_lr = np.stack(targets_lr)    # (S, 1, h, w)
    targets_tex = np.stack(targets_tex)  # (S, C, H, W)

    params = build_unet(unet_cfg)
    opt = ad.adam_init(params.trainable(), lr)
    rng = np.random.default_rng(seed)
    history = []
    best = (np.inf, None)

    for _epoch in range(epochs):
        sums = np.zeros(3)
        count = 0
        for idx in _batches(len(dataset), batch_size, rng):
            x = ad.Tensor(inputs[idx])
            with ad.Tape() as tape:
                out = forward(params, x, training=True)
                blurred = ad.fixed_conv(out, kernel)
                degraded = ad.bicubic_down(blurred, r)
                rec = ad.huber_loss(degraded, targets_lr[idx], sif_cfg.huber_delta)
                if sif_cfg.texture_op == objective.TEXTURE_SOBEL:
                    detail = ad.sobel_bank(out)
                else:
                    detail = ad.sub(out, ad.fixed_conv(out, kernel))
                tex = ad.huber_loss(detail, targets_tex[idx], sif_cfg.huber_delta)
                loss = ad.add(ad.scale(tex, sif_cfg.alpha),
                              ad.scale(rec, 1.0 - sif_cfg.alpha))
                total = float(loss.data)
                if not np.isfinite(total):
                    if best[1] is not None:
                        return best[1], history, stats
                    raise NumericError("training loss became non-finite")
                trainable = params.trainable()
                for p in trainable:
                    p.zero_grad()
                ad.backward(loss, tape)
            grads = [p.grad for p in trainable]
            ad.adam_step(trainable, grads, opt)
            sums += len(idx) * np.array([total, float(rec.data), float(tex.data)])
            count += len(idx)
        epoch_mean = sums / count
        history.append(objective.LossBreakdown(*epoch_mean))
        if epoch_mean[0] < best[0]:
            best = (epoch_mean[0], params.snapshot())
    return best[1], history, stats


def train_sc(dataset, unet_cfg: UNetConfig, epochs, batch_size, lr,
             stats: NormStats | None = None, seed=0, mtf_sigma_px=None):
    """Reduced-scale supervised training (MSE).

    Inputs are built one tier down from each pair: the vegetation index
    degraded to the coarse grid and the coarse grid degraded once more, with
    the observed coarse grid as target. At inference the learned mapping is
    applied one tier up.
    """
    if len(dataset) < 2:
        raise ValueError("training needs at least 2 scene pairs")
    if epochs < 1 or batch_size < 2:
        raise ValueError("epochs must be >= 1 and batch_size >= 2")
    if stats is None:
        stats = compute_norm_stats(dataset)
    r = dataset[0].r

    inputs, targets = [], []
    for pair in dataset:
        h, w = pair.lst_lr.shape
        if h % r or w % r:
            raise ValueError("coarse dims must be divisible by r for "
                             "reduced-scale training")
        v_lr = linops.mtf_degrade(pair.ndvi_hr, r, mtf_sigma_px)
        t_llr = linops.mtf_degrade(pair.lst_lr, r, mtf_sigma_px)
        v = objective.standardize(v_lr, stats.ndvi_mean, stats.ndvi_std).values
        t_in = objective.standardize(t_llr, stats.lst_mean, stats.lst_std).values
        t_out = objective.standardize(pair.lst_lr, stats.lst_mean, stats.lst_std).values
        inputs.append(np.stack([v, linops.bicubic_resize(t_in, h, w)]))
        targets.append(t_out[None])
    inputs = np.stack(inputs)
    targets = np.stack(targets)

    params = build_unet(unet_cfg)
    opt = ad.adam_init(params.trainable(), lr)
    rng = np.random.default_rng(seed)
    history = []
    best = (np.inf, None)

    for _epoch in range(epochs):
        total_sum = 0.0
        count = 0
        for idx in _batches(len(dataset), batch_size, rng):
            x = ad.Tensor(inputs[idx])
            with ad.Tape() as tape:
                out = forward(params, x, training=True)
                loss = ad.mse_loss(out, targets[idx])
                total = float(loss.data)
                if not np.isfinite(total):
                    if best[1] is not None:
                        return best[1], history, stats
                    raise NumericError("training loss became non-finite")
                trainable = params.trainable()
                for p in trainable:
                    p.zero_grad()
                ad.backward(loss, tape)
            ad.adam_step(trainable, [p.grad for p in trainable], opt)
            total_sum += len(idx) * total
            count += len(idx)
        epoch_mean = total_sum / count
        history.append(epoch_mean)
        if epoch_mean < best[0]:
            best = (epoch_mean, params.snapshot())
    return best[1], history, stats


def infer(params: UNetParams, pair: ScenePair, stats: NormStats) -> Grid2D:
    """Sharpen one scene pair; deterministic, eval-mode statistics."""
    if stats is None:
        raise ValueError("inference needs the training standardization stats")
    v, _t_lr, t_up = _standardized_fields(pair, stats)
    out = unet_forward(params, v, t_up, mode="eval")
    grid = Grid2D(out, pair.ndvi_hr.pixel_size, units="K")
    return objective.destandardize(grid, stats.lst_mean, stats.lst_std)


def sif_loss_of(params: UNetParams, pair: ScenePair, sif_cfg, stats) -> objective.LossBreakdown:
    """Objective value of the network's output on one scene (standardized)."""
    sr = infer(params, pair, stats)
    sr_std = objective.standardize(sr, stats.lst_mean, stats.lst_std)
    return objective.sif_loss(sr_std, objective.standardize_pair(pair, stats), sif_cfg)


# ---------------------------------------------------------------------------
# checkpoints

def save_unet(dirpath, params: UNetParams, stats: NormStats, extra_meta=None):
    meta = {"unet_config": params.cfg.to_dict(), "norm_stats": stats.to_dict()}
    meta.update(extra_meta or {})
    ad.save_checkpoint(dirpath, params.named_arrays(), meta)


def load_unet(dirpath):
    """Returns (params, stats, meta)."""
    tensors, meta = ad.load_checkpoint(dirpath)
    cfg = UNetConfig.from_dict(meta["unet_config"])
    params = build_unet(cfg)
    for name, _, _, has_bn in _block_plan(cfg):
        params.weights[name].data[...] = tensors[name + ".w"]
        if has_bn:
            params.bn_scale[name].data[...] = tensors[name + ".bn.scale"]
            params.bn_shift[name].data[...] = tensors[name + ".bn.shift"]
            params.bn_mean[name][...] = tensors[name + ".bn.mean"]
            params.bn_var[name][...] = tensors[name + ".bn.var"]
    stats = NormStats.from_dict(meta["norm_stats"])
    return params, stats, meta
