"""Command-line front end.

Subcommands: synth, train, sharpen, evaluate, benchmark, spectra. Every
command takes --config JSON plus long-form flag overrides (flags win), and
writes a run manifest next to its outputs recording the resolved
configuration; `thermosharp --from-manifest PATH` re-runs a recorded command
and reproduces its outputs byte for byte.

Exit codes: 0 ok, 2 bad configuration, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, baselines, datagen, linops, metrics, objective
from . import unet as unet_mod
from . import varsolver
from .errors import ConfigError, DataError, NumericError
from .raster import Grid2D, load_raster, save_raster

ALL_METHODS = ("bicubic", "tsharp", "atprk", "sif-var", "sif-net", "sc-net")
DEBUG_METHODS = ("reference",)


# ---------------------------------------------------------------------------
# config plumbing

def _load_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise DataError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e}") from e


def _resolve(defaults: dict, config_path, flag_values: dict) -> dict:
    cfg = dict(defaults)
    if config_path:
        loaded = _load_json(config_path)
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key, val in flag_values.items():
        if val is not None:
            cfg[key] = val
    return cfg


def _write_manifest(out_dir, command, cfg, paths, inputs, outputs, seed, wall_s):
    """The manifest records the resolved config plus the command's own path
    arguments, so --from-manifest can replay it exactly."""
    manifest = {
        "command": command,
        "config": cfg,
        "paths": {k: str(v) for k, v in paths.items()},
        "inputs": sorted(str(p) for p in inputs),
        "outputs": sorted(str(p) for p in outputs),
        "seed": seed,
        "wall_time_s": round(wall_s, 3),
        "version": __version__,
    }
    path = os.path.join(out_dir, "manifest.json")
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)
    return path


def _int_list(text):
    try:
        return tuple(int(p) for p in str(text).split(","))
    except ValueError as e:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from e


# ---------------------------------------------------------------------------
# synth

SYNTH_DEFAULTS = {
    "count": 1, "start_seed": None,
    **datagen.SynthConfig().to_dict(),
}


def cmd_synth(cfg, out_dir):
    t0 = time.monotonic()
    count = int(cfg["count"])
    start = cfg["start_seed"]
    synth_keys = datagen.SynthConfig().to_dict().keys()
    scfg = datagen.SynthConfig(**{k: cfg[k] for k in synth_keys})
    scene_paths = datagen.make_suite(out_dir, scfg, count, start)
    _write_manifest(out_dir, "synth", cfg, {"out": out_dir}, [], scene_paths,
                    scfg.seed, time.monotonic() - t0)
    print(f"wrote {len(scene_paths)} scene(s) under {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# train

TRAIN_DEFAULTS = {
    "mode": "sif1", "epochs": 50, "batch_size": 8, "lr": 2e-3,
    "lr_patch": 16, "base_channels": "8,16,32,64", "seed": 0,
    "alpha": None, "gamma": None, "mtf_sigma_px": None,
}


def _scene_dirs(data_dir):
    if not os.path.isdir(data_dir):
        raise DataError(f"not a directory: {data_dir}")
    if os.path.isfile(os.path.join(data_dir, "scene.json")):
        return [data_dir]
    subs = sorted(d for d in os.listdir(data_dir)
                  if os.path.isfile(os.path.join(data_dir, d, "scene.json")))
    if not subs:
        raise DataError(f"no scene directories under {data_dir}")
    return [os.path.join(data_dir, d) for d in subs]


def _gather_patches(data_dir, lr_patch):
    patches = []
    for d in _scene_dirs(data_dir):
        patches.extend(datagen.slice_patches(datagen.read_scene(d), lr_patch))
    if not patches:
        raise DataError("no usable training patches (all masked or too small)")
    return patches


def _history_csv(path, history):
    with open(path, "w") as f:
        f.write("epoch,total,rec_term,texture_term\n")
        for i, h in enumerate(history, start=1):
            if isinstance(h, objective.LossBreakdown):
                f.write(f"{i},{h.total:.10g},{h.rec_term:.10g},"
                        f"{h.texture_term:.10g}\n")
            else:
                f.write(f"{i},{float(h):.10g},,\n")


def cmd_train(cfg, data_dir, out_dir):
    t0 = time.monotonic()
    mode = cfg["mode"]
    if mode not in ("sif1", "sif2", "sc"):
        raise ConfigError("mode must be one of sif1, sif2, sc")
    patches = _gather_patches(data_dir, int(cfg["lr_patch"]))
    r = patches[0].r
    ucfg = unet_mod.UNetConfig(base_channels=_int_list(cfg["base_channels"]),
                               seed=int(cfg["seed"]))
    os.makedirs(out_dir, exist_ok=True)
    if mode == "sc":
        params, history, stats = unet_mod.train_sc(
            patches, ucfg, epochs=int(cfg["epochs"]),
            batch_size=int(cfg["batch_size"]), lr=float(cfg["lr"]),
            seed=int(cfg["seed"]), mtf_sigma_px=cfg["mtf_sigma_px"])
        extra = {"mode": "sc"}
    else:
        overrides = {}
        if cfg["alpha"] is not None:
            overrides["alpha"] = float(cfg["alpha"])
        if cfg["gamma"] is not None:
            overrides["gamma"] = float(cfg["gamma"])
        if cfg["mtf_sigma_px"] is not None:
            overrides["mtf_sigma_px"] = float(cfg["mtf_sigma_px"])
        sif_cfg = objective.sif_preset(mode, scale_factor=r, **overrides)
        params, history, stats = unet_mod.train_sif(
            patches, sif_cfg, ucfg, epochs=int(cfg["epochs"]),
            batch_size=int(cfg["batch_size"]), lr=float(cfg["lr"]),
            seed=int(cfg["seed"]))
        extra = {"mode": mode, "sif_config": sif_cfg.to_json()}
    unet_mod.save_unet(out_dir, params, stats, extra)
    hist_path = os.path.join(out_dir, "history.csv")
    _history_csv(hist_path, history)
    _write_manifest(out_dir, "train", cfg, {"data": data_dir, "out": out_dir},
                    [data_dir], [out_dir, hist_path], int(cfg["seed"]),
                    time.monotonic() - t0)
    last = history[-1]
    last_total = last.total if isinstance(last, objective.LossBreakdown) else last
    print(f"trained {mode} on {len(patches)} patches, "
          f"final epoch loss {last_total:.6g}; model in {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# sharpen

SHARPEN_DEFAULTS = {
    "method": "sif-var", "preset": "sif1", "alpha": None, "gamma": None,
    "mtf_sigma_px": None, "max_iters": 2000, "solver_lr": 0.05,
    "model": None, "save_trace": False,
}


def _load_scene_pair(scene_dir):
    return datagen.scene_pair(datagen.read_scene(scene_dir))


def _solve_cfg(cfg):
    return varsolver.SolveConfig(max_iters=int(cfg["max_iters"]),
                                 lr=float(cfg["solver_lr"]))


def _sif_cfg_for(cfg, r):
    overrides = {}
    if cfg["alpha"] is not None:
        overrides["alpha"] = float(cfg["alpha"])
    if cfg["gamma"] is not None:
        overrides["gamma"] = float(cfg["gamma"])
    if cfg["mtf_sigma_px"] is not None:
        overrides["mtf_sigma_px"] = float(cfg["mtf_sigma_px"])
    return objective.sif_preset(cfg["preset"], scale_factor=r, **overrides)


def _sharpen_one(method, pair, cfg, models):
    if method == "bicubic":
        return baselines.bicubic_baseline(pair), None
    if method == "tsharp":
        return baselines.tsharp_sharpen(pair, cfg.get("mtf_sigma_px")), None
    if method == "atprk":
        return baselines.atprk_sharpen(pair, cfg.get("mtf_sigma_px")), None
    if method == "sif-var":
        sr, trace = varsolver.solve_direct(pair, _sif_cfg_for(cfg, pair.r),
                                           _solve_cfg(cfg))
        return sr, trace
    if method in ("sif-net", "sc-net"):
        key = "sif" if method == "sif-net" else "sc"
        if models.get(key) is None:
            raise ConfigError(f"method {method} needs --model "
                              f"(a checkpoint directory)")
        params, stats, _ = models[key]
        return unet_mod.infer(params, pair, stats), None
    raise ConfigError(f"unknown method {method!r}; "
                      f"choose from {', '.join(ALL_METHODS)}")


def cmd_sharpen(cfg, scene_dir, out_path):
    t0 = time.monotonic()
    method = cfg["method"]
    pair = _load_scene_pair(scene_dir)
    models = {}
    if method in ("sif-net", "sc-net"):
        if not cfg["model"]:
            raise ConfigError(f"method {method} requires --model")
        key = "sif" if method == "sif-net" else "sc"
        models[key] = unet_mod.load_unet(cfg["model"])
    sr, trace = _sharpen_one(method, pair, cfg, models)
    out_dir = os.path.dirname(os.path.abspath(out_path)) or "."
    os.makedirs(out_dir, exist_ok=True)
    save_raster(sr, out_path)
    outputs = [out_path]
    if trace is not None and cfg["save_trace"]:
        trace_path = os.path.splitext(out_path)[0] + "_trace.csv"
        varsolver.save_trace_csv(trace, trace_path)
        outputs.append(trace_path)
    _write_manifest(out_dir, "sharpen", cfg,
                    {"scene": scene_dir, "out": out_path},
                    [scene_dir], outputs, None, time.monotonic() - t0)
    print(f"{method}: wrote {out_path}")
    return 0


# ---------------------------------------------------------------------------
# evaluate

EVALUATE_DEFAULTS = {"sr": None, "label": None, "half_width_m": 250.0}


def _reference_and_bicubic(triple, half_width_m):
    ref = datagen.degrade_reference(triple.ref_hr, None, half_width_m)
    bic = baselines.bicubic_baseline(triple.pair)
    return ref, bic


def cmd_evaluate(cfg, scene_dir, out_path):
    t0 = time.monotonic()
    if not cfg["sr"]:
        raise ConfigError("evaluate requires --sr (a sharpened raster path)")
    triple = datagen.read_scene(scene_dir, need_reference=True)
    sr = load_raster(cfg["sr"])
    ref, bic = _reference_and_bicubic(triple, float(cfg["half_width_m"]))
    label = cfg["label"] or os.path.splitext(os.path.basename(cfg["sr"]))[0]
    row = {"scene": os.path.basename(os.path.normpath(scene_dir)),
           "method": label, **metrics.evaluate_scene(sr, ref, bic)}
    out_dir = os.path.dirname(os.path.abspath(out_path)) or "."
    os.makedirs(out_dir, exist_ok=True)
    metrics.write_benchmark_csv(out_path, [row])
    _write_manifest(out_dir, "evaluate", cfg,
                    {"scene": scene_dir, "out": out_path},
                    [scene_dir, cfg["sr"]], [out_path], None,
                    time.monotonic() - t0)
    print(f"evaluated {label} on {row['scene']}: rmse={row['rmse_k']:.4g} K")
    return 0


# ---------------------------------------------------------------------------
# benchmark

BENCHMARK_DEFAULTS = {
    "methods": ",".join(ALL_METHODS[:3]), "sif_model": None, "sc_model": None,
    "preset": "sif1", "alpha": None, "gamma": None, "mtf_sigma_px": None,
    "max_iters": 2000, "solver_lr": 0.05, "half_width_m": 250.0, "jobs": 1,
}


def _benchmark_scene(scene_dir, methods, cfg, models):
    triple = datagen.read_scene(scene_dir, need_reference=True)
    pair = triple.pair
    ref, bic = _reference_and_bicubic(triple, float(cfg["half_width_m"]))
    scene_id = os.path.basename(os.path.normpath(scene_dir))
    rows, curves = [], {}
    freqs, ref_att = metrics.attenuation_spectrum(ref)
    curves["reference"] = ref_att
    curves["ndvi"] = metrics.attenuation_spectrum(pair.ndvi_hr)[1]
    for method in methods:
        sr = ref if method == "reference" else \
            _sharpen_one(method, pair, cfg, models)[0]
        rows.append({"scene": scene_id, "method": method,
                     **metrics.evaluate_scene(sr, ref, bic)})
        curves[method] = metrics.attenuation_spectrum(sr)[1]
    return scene_id, rows, freqs, curves, pair.ndvi_hr.pixel_size


def run_benchmark(data_dir, methods, out_dir, config=None):
    """Evaluate the given methods on every scene under data_dir.

    Writes benchmark.csv (per-scene rows plus mean/std per method) and
    spectra.csv (mean attenuation curves, including the reference and the
    vegetation index) into out_dir. Returns their paths.
    """
    cfg = dict(BENCHMARK_DEFAULTS)
    cfg.update(config or {})
    methods = list(methods)
    for m in methods:
        if m not in ALL_METHODS + DEBUG_METHODS:
            raise ConfigError(f"unknown method {m!r}")
    models = {}
    if "sif-net" in methods:
        if not cfg["sif_model"]:
            raise ConfigError("sif-net in methods requires sif_model")
        models["sif"] = unet_mod.load_unet(cfg["sif_model"])
    if "sc-net" in methods:
        if not cfg["sc_model"]:
            raise ConfigError("sc-net in methods requires sc_model")
        models["sc"] = unet_mod.load_unet(cfg["sc_model"])
    dirs = _scene_dirs(data_dir)
    jobs = max(1, int(cfg["jobs"]))
    results = {}
    if jobs == 1:
        for d in dirs:
            results[d] = _benchmark_scene(d, methods, cfg, models)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {d: pool.submit(_benchmark_scene, d, methods, cfg, models)
                       for d in dirs}
            for d, fut in futures.items():
                results[d] = fut.result()

    rows, sum_curves, freqs, pixel_size = [], {}, None, None
    for d in dirs:   # deterministic order regardless of completion order
        _, scene_rows, f, curves, ps = results[d]
        rows.extend(scene_rows)
        if freqs is None:
            freqs, pixel_size = f, ps
        elif f.shape != freqs.shape:
            raise DataError("scenes have mixed sizes; spectra cannot be averaged")
        for name, c in curves.items():
            sum_curves.setdefault(name, np.zeros_like(c))
            sum_curves[name] += c
    mean_curves = {n: c / len(dirs) for n, c in sum_curves.items()}
    os.makedirs(out_dir, exist_ok=True)
    bench_path = os.path.join(out_dir, "benchmark.csv")
    spectra_path = os.path.join(out_dir, "spectra.csv")
    metrics.write_benchmark_csv(bench_path, rows)
    metrics.write_spectra_csv(spectra_path, freqs, mean_curves, pixel_size)
    return bench_path, spectra_path


def cmd_benchmark(cfg, data_dir, out_dir):
    t0 = time.monotonic()
    methods = [m.strip() for m in str(cfg["methods"]).split(",") if m.strip()]
    if not methods:
        raise ConfigError("no methods given")
    bench_path, spectra_path = run_benchmark(data_dir, methods, out_dir, cfg)
    _write_manifest(out_dir, "benchmark", cfg,
                    {"data": data_dir, "out": out_dir}, [data_dir],
                    [bench_path, spectra_path], None, time.monotonic() - t0)
    print(f"benchmarked {len(methods)} method(s); results in {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# spectra

SPECTRA_DEFAULTS = {"sr": [], "half_width_m": 250.0, "hann": False}


def cmd_spectra(cfg, scene_dir, out_path):
    t0 = time.monotonic()
    triple = datagen.read_scene(scene_dir, need_reference=True)
    ref, bic = _reference_and_bicubic(triple, float(cfg["half_width_m"]))
    hann = bool(cfg["hann"])
    freqs, ref_att = metrics.attenuation_spectrum(ref, hann)
    curves = {"reference": ref_att,
              "ndvi": metrics.attenuation_spectrum(triple.pair.ndvi_hr, hann)[1],
              "bicubic": metrics.attenuation_spectrum(bic, hann)[1]}
    inputs = [scene_dir]
    for item in cfg["sr"]:
        if "=" in item:
            name, path = item.split("=", 1)
        else:
            path = item
            name = os.path.splitext(os.path.basename(path))[0]
        if name in curves:
            raise ConfigError(f"duplicate curve name {name!r}")
        grid = load_raster(path)
        if grid.shape != ref.shape:
            raise DataError(f"{path}: dims {grid.shape} do not match "
                            f"the reference {ref.shape}")
        curves[name] = metrics.attenuation_spectrum(grid, hann)[1]
        inputs.append(path)
    out_dir = os.path.dirname(os.path.abspath(out_path)) or "."
    os.makedirs(out_dir, exist_ok=True)
    metrics.write_spectra_csv(out_path, freqs, curves,
                              triple.pair.ndvi_hr.pixel_size)
    _write_manifest(out_dir, "spectra", cfg,
                    {"scene": scene_dir, "out": out_path},
                    inputs, [out_path], None, time.monotonic() - t0)
    print(f"wrote {len(curves)} attenuation curves to {out_path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch

def _add_config_flags(p, defaults, listish=()):
    p.add_argument("--config", help="JSON file with config keys")
    for key, val in defaults.items():
        flag = "--" + key.replace("_", "-")
        if key in listish:
            p.add_argument(flag, action="append", default=None)
        elif isinstance(val, bool):
            p.add_argument(flag, action="store_const", const=True, default=None)
        else:
            p.add_argument(flag, default=None)
    return p


_NUMERIC_KEYS = {
    "count": int, "start_seed": lambda s: int(s), "hr_size": int,
    "scale_factor": int, "pixel_size_m": float, "spectral_slope": float,
    "gamma_true": float, "trend_amplitude_k": float,
    "trend_ndvi_weight": float, "noise_std_k": float,
    "base_temperature_k": float, "seed": int, "epochs": int,
    "batch_size": int, "lr": float, "lr_patch": int, "alpha": float,
    "gamma": float, "mtf_sigma_px": float, "max_iters": int,
    "solver_lr": float, "half_width_m": float, "jobs": int,
}


def _coerce(cfg):
    out = dict(cfg)
    for key, conv in _NUMERIC_KEYS.items():
        if key in out and out[key] is not None and not isinstance(out[key], bool):
            try:
                out[key] = conv(out[key])
            except (TypeError, ValueError) as e:
                raise ConfigError(f"bad value for {key}: {out[key]!r}") from e
    return out


def build_parser():
    p = argparse.ArgumentParser(
        prog="thermosharp",
        description="Guided thermal sharpening: synthetic data, training, "
                    "sharpening, and spectral benchmarks.")
    p.add_argument("--from-manifest", metavar="PATH",
                   help="re-run a recorded command from its manifest")
    p.add_argument("--out", help="output override when using --from-manifest")
    sub = p.add_subparsers(dest="command")

    sp = sub.add_parser("synth", help="generate synthetic scenes")
    sp.add_argument("--out", required=True)
    _add_config_flags(sp, SYNTH_DEFAULTS)

    tp = sub.add_parser("train", help="train a sharpening network")
    tp.add_argument("--data", required=True)
    tp.add_argument("--out", required=True)
    _add_config_flags(tp, TRAIN_DEFAULTS)

    hp = sub.add_parser("sharpen", help="sharpen one scene")
    hp.add_argument("--scene", required=True)
    hp.add_argument("--out", required=True)
    _add_config_flags(hp, SHARPEN_DEFAULTS)

    ep = sub.add_parser("evaluate", help="score a sharpened raster")
    ep.add_argument("--scene", required=True)
    ep.add_argument("--out", required=True)
    _add_config_flags(ep, EVALUATE_DEFAULTS)

    bp = sub.add_parser("benchmark", help="run methods over a scene suite")
    bp.add_argument("--data", required=True)
    bp.add_argument("--out", required=True)
    _add_config_flags(bp, BENCHMARK_DEFAULTS)

    cp = sub.add_parser("spectra", help="attenuation spectra for one scene")
    cp.add_argument("--scene", required=True)
    cp.add_argument("--out", required=True)
    _add_config_flags(cp, SPECTRA_DEFAULTS, listish=("sr",))
    return p


_COMMANDS = {
    "synth": (SYNTH_DEFAULTS, ("out",), cmd_synth),
    "train": (TRAIN_DEFAULTS, ("data", "out"), cmd_train),
    "sharpen": (SHARPEN_DEFAULTS, ("scene", "out"), cmd_sharpen),
    "evaluate": (EVALUATE_DEFAULTS, ("scene", "out"), cmd_evaluate),
    "benchmark": (BENCHMARK_DEFAULTS, ("data", "out"), cmd_benchmark),
    "spectra": (SPECTRA_DEFAULTS, ("scene", "out"), cmd_spectra),
}


def _dispatch(command, cfg, paths):
    defaults, path_names, fn = _COMMANDS[command]
    return fn(_coerce(cfg), *[paths[n] for n in path_names])


def _run_from_manifest(manifest_path, out_override):
    with open(manifest_path) as f:
        try:
            manifest = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid manifest: {e}") from e
    command = manifest.get("command")
    if command not in _COMMANDS:
        raise ConfigError(f"manifest has unknown command {command!r}")
    _, path_names, _ = _COMMANDS[command]
    paths = dict(manifest.get("paths") or {})
    if out_override:
        paths["out"] = out_override
    missing = [n for n in path_names if not paths.get(n)]
    if missing:
        raise ConfigError(f"manifest lacks path(s) {missing}; pass --out")
    return _dispatch(command, manifest["config"], paths)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.from_manifest:
            return _run_from_manifest(args.from_manifest, args.out)
        if not args.command:
            parser.print_help()
            return 2
        defaults, path_names, _ = _COMMANDS[args.command]
        flag_values = {k: getattr(args, k) for k in defaults}
        cfg = _resolve(defaults, args.config, flag_values)
        paths = {n: getattr(args, n) for n in path_names}
        return _dispatch(args.command, cfg, paths)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (NumericError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
