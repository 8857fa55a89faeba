"""Shared fixtures: small synthetic corpora and the acceptance-scale runs."""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import pytest

from spoofkit import cli, model, synthdata
from spoofkit.manifest import load_manifest, split_by_subset


def rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """60 files per class, ~1-2 s each: enough for fast pipeline tests."""
    out = tmp_path_factory.mktemp("small_corpus")
    spec = synthdata.SynthSpec(n_per_class=60, duration_range_s=(1.0, 2.0),
                               separation=1.0, seed=11)
    manifest = synthdata.generate_corpus(spec, out)
    return {"dir": out, "manifest": manifest,
            "path": out / "manifest.jsonl"}


@pytest.fixture(scope="session")
def embedding_corpus(tmp_path_factory):
    """Well-separated Gaussian embedding store for fast training tests."""
    out = tmp_path_factory.mktemp("emb_corpus")
    spec = synthdata.SynthSpec(n_per_class=100, duration_range_s=(1.0, 3.0),
                               separation=3.0, seed=17, embedding_dim=16)
    manifest = synthdata.generate_embedding_store(spec, out)
    return {"dir": out, "manifest": manifest, "path": out / "manifest.jsonl"}


def _experiment_config(weights: dict, hinge_margin: float = 1e5,
                       epochs: int = 20) -> dict:
    return {
        "seed": 5,
        "manifests": {"all": "corpus/manifest.jsonl"},
        "provider": {"kind": "spectral", "n_bands": 80},
        "augmentation": {"awgn_probability": 0.5, "awgn_snr_range_db": [5, 30],
                         "power_scale_range": [1e-5, 1.2]},
        "loss": {"weights": weights, "hinge_margin": hinge_margin},
        "optimizer": {"epochs": epochs, "batch_size": 32,
                      "head": {"lr": 1e-3, "weight_decay": 0.1},
                      "backbone": {"lr": 1e-6, "weight_decay": 0.0}},
        "scoring": {"mode": "windowed", "agg": "mean",
                    "window_s": 3.5, "step_s": 0.5},
        "output_dir": "run",
    }


@pytest.fixture(scope="session")
def toy_experiment(tmp_path_factory):
    """The acceptance-scale experiment: 500 files/class, two 20-epoch runs.

    Trains the focal + smooth-hinged configuration and the plain
    cross-entropy configuration through the CLI, evaluates the focal run
    windowed on the held-out test split, and records wall-clock timings.
    """
    base = tmp_path_factory.mktemp("toy_experiment")
    timings: dict[str, float] = {}

    t0 = time.monotonic()
    rc = cli.main(["synth", "--out", str(base / "corpus"), "--n-per-class", "500",
                   "--duration", "1.0", "3.0", "--separation", "1.0",
                   "--seed", "11"])
    assert rc == 0
    timings["synth"] = time.monotonic() - t0

    runs = {}
    for name, weights in (
            ("focal_hinge", {"focal": 1.0, "smooth_hinged_center": 1.0}),
            ("ce", {"cross_entropy": 1.0})):
        cfg = _experiment_config(weights)
        cfg["output_dir"] = f"run_{name}"
        cfg_path = base / f"exp_{name}.json"
        cfg_path.write_text(json.dumps(cfg, indent=2))
        t0 = time.monotonic()
        rc = cli.main(["train", "--config", str(cfg_path)])
        assert rc == 0
        timings[f"train_{name}"] = time.monotonic() - t0
        runs[name] = {"config": cfg_path, "dir": base / f"run_{name}"}

    t0 = time.monotonic()
    rc = cli.main(["eval", "--config", str(runs["focal_hinge"]["config"]),
                   "--run", str(runs["focal_hinge"]["dir"]),
                   "--mode", "windowed",
                   "--out", str(base / "eval_focal")])
    assert rc == 0
    timings["eval"] = time.monotonic() - t0

    manifest = load_manifest(base / "corpus" / "manifest.jsonl")
    return {"base": base, "runs": runs, "eval_dir": base / "eval_focal",
            "manifest": manifest, "timings": timings}


@pytest.fixture(scope="session")
def toy_best_state(toy_experiment):
    from spoofkit import optim
    records = optim.read_run_log(toy_experiment["runs"]["focal_hinge"]["dir"])
    return optim.select_checkpoint(records, "best_val")
