"""Shared fixtures.

The benchmark environment (synthetic suites, two trained networks, one full
benchmark run) is expensive, so it is built once per session through the
command line interface and reused by the acceptance tests. Unit tests use
only small local data and stay fast.
"""

import pathlib

import pytest
from dataclasses import replace

from thermosharp import cli, datagen

# Frozen benchmark recipe. Ten training scenes keep the mean-square network
# out of the memorization regime; half_width_m 100 on the 100 m grid gives
# the evaluation reference a 0.5 px blur.
HR_SIZE = 128
TRAIN_START, TRAIN_COUNT = 100, 10
EVAL_START, EVAL_COUNT = 200, 20
LR_PATCH = 8
EPOCHS, BATCH, LR = 50, 8, 2e-3
HALF_WIDTH_M = 100.0
BENCH_METHODS = "bicubic,tsharp,atprk,sif-net,sc-net,reference"


def run_cli(argv):
    rc = cli.main([str(a) for a in argv])
    assert rc == 0, f"cli exited {rc}: {argv}"


@pytest.fixture(scope="session")
def bench_env(tmp_path_factory):
    """Synthetic suites, trained sif/sc networks, and one benchmark run."""
    root = tmp_path_factory.mktemp("bench_env")
    train_dir = root / "train_data"
    eval_dir = root / "eval_data"
    sif_model = root / "sif_model"
    sc_model = root / "sc_model"
    results = root / "results"
    run_cli(["synth", "--out", train_dir, "--count", TRAIN_COUNT,
             "--start-seed", TRAIN_START, "--hr-size", HR_SIZE])
    run_cli(["synth", "--out", eval_dir, "--count", EVAL_COUNT,
             "--start-seed", EVAL_START, "--hr-size", HR_SIZE])
    for mode, out in (("sif1", sif_model), ("sc", sc_model)):
        run_cli(["train", "--data", train_dir, "--mode", mode,
                 "--epochs", EPOCHS, "--batch-size", BATCH, "--lr", LR,
                 "--lr-patch", LR_PATCH, "--out", out])
    run_cli(["benchmark", "--data", eval_dir, "--out", results,
             "--methods", BENCH_METHODS, "--sif-model", sif_model,
             "--sc-model", sc_model, "--half-width-m", HALF_WIDTH_M])
    return {"root": root, "train_dir": train_dir, "eval_dir": eval_dir,
            "sif_model": sif_model, "sc_model": sc_model, "results": results}


@pytest.fixture(scope="session")
def golden_dir():
    return pathlib.Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def synth_scene_small():
    """One deterministic 64 px evaluation triple for cheap tests."""
    return datagen.synth_scene(replace(datagen.SynthConfig(hr_size=64), seed=7))


@pytest.fixture(scope="session")
def synth_scene_medium():
    return datagen.synth_scene(replace(datagen.SynthConfig(hr_size=128), seed=11))
