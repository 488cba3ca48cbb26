"""Benchmark harness: grid shape, determinism, method arms, presets."""

import csv
import json

import numpy as np
import pytest

from cacti.benchmark import (ABLATION_PRESET, BenchmarkConfig, METHOD_ARMS,
                             run_benchmark, split_indices)
from cacti.cli import main
from cacti.context import ContextEmbeddings, save_context
from cacti.errors import ConfigError
from cacti.rng import stream


@pytest.fixture
def tiny_setup(tmp_path):
    rng = stream(1, "bmk-data")
    k = 4
    data = tmp_path / "data.csv"
    with open(data, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"v{j}" for j in range(k)])
        base = rng.normal(size=(40, 1))
        for row in base + 0.2 * rng.normal(size=(40, k)):
            writer.writerow([repr(float(x)) for x in row])
    ctx = tmp_path / "ctx.json"
    save_context(ContextEmbeddings(
        "t", 6, {f"v{j}": rng.normal(size=6) for j in range(k)}), ctx)
    small = {"epochs": 2, "warmup_epochs": 1, "batch_size": 16}
    model = {"embed_dim": 16, "n_enc": 1, "n_dec": 1, "heads": 2}
    return data, ctx, small, model


def test_grid_row_count(tiny_setup):
    data, ctx, small, model = tiny_setup
    cfg = BenchmarkConfig(
        data_path=str(data), context_path=str(ctx),
        mechanisms=["MCAR", "MAR"], p_miss=[0.3], methods=["cacti", "mean"],
        n_seeds=2, root_seed=7, train=small, model=model)
    results = run_benchmark(cfg)
    # 2 mechanisms x 1 rate x 2 methods x 2 seeds x 2 splits
    assert len(results["runs"]) == 16
    assert len(results["aggregates"]) == 8
    splits = {r["split"] for r in results["runs"]}
    assert splits == {"train", "test"}


def test_same_root_seed_identical_json(tiny_setup):
    data, ctx, small, model = tiny_setup
    cfg = dict(data_path=str(data), context_path=str(ctx),
               mechanisms=["MCAR"], p_miss=[0.3], methods=["cmae", "mean"],
               n_seeds=1, root_seed=11, train=small, model=model)
    a = run_benchmark(BenchmarkConfig(**cfg))
    b = run_benchmark(BenchmarkConfig(**cfg))
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_ablation_preset_expands_to_four_arms(tiny_setup):
    data, ctx, small, model = tiny_setup
    cfg = BenchmarkConfig.from_dict({
        "data_path": str(data), "context_path": str(ctx), "preset": "ablation",
        "mechanisms": ["MCAR"], "p_miss": [0.3], "n_seeds": 1,
        "train": small, "model": model})
    assert tuple(cfg.methods) == ABLATION_PRESET
    assert set(ABLATION_PRESET) == {"rmae", "rmae_ctx", "cmae", "cacti"}


def test_method_arm_wiring():
    assert METHOD_ARMS["cacti"] == ("mtcm", True)
    assert METHOD_ARMS["cmae"] == ("mtcm", False)
    assert METHOD_ARMS["rmae"] == ("random", False)
    assert METHOD_ARMS["rmae_ctx"] == ("random", True)
    assert METHOD_ARMS["cmae_naive"] == ("naive_cm", False)


def test_context_method_requires_context_path(tiny_setup):
    data, _, small, model = tiny_setup
    with pytest.raises(ConfigError):
        BenchmarkConfig(data_path=str(data), methods=["cacti"],
                        train=small, model=model)


def test_split_indices_match_dataset_split():
    train_idx, test_idx = split_indices(10, 0.2, seed=123)
    # pinned from the reference stream for seed 123 (see tests/oracles)
    assert np.array_equal(np.concatenate([test_idx, train_idx]),
                          [3, 5, 8, 0, 6, 7, 9, 1, 2, 4])


def test_cli_benchmark_round_trip(tiny_setup, tmp_path, capsys):
    data, ctx, small, model = tiny_setup
    cfg_path = tmp_path / "bmk.json"
    cfg_path.write_text(json.dumps({
        "data_path": str(data), "mechanisms": ["MCAR"], "p_miss": [0.25],
        "methods": ["mean", "cmae"], "n_seeds": 1, "root_seed": 3,
        "train": small, "model": model}))
    out = tmp_path / "results.json"
    assert main(["benchmark", str(cfg_path), "--out", str(out), "--text"]) == 0
    results = json.loads(out.read_text())
    assert {r["method"] for r in results["runs"]} == {"mean", "cmae"}
    text = capsys.readouterr().out
    assert "mechanism" in text and "cmae" in text


def test_parallel_grid_matches_sequential(tiny_setup, monkeypatch):
    data, ctx, small, model = tiny_setup
    cfg = dict(data_path=str(data), mechanisms=["MCAR", "MAR"], p_miss=[0.3],
               methods=["mean"], n_seeds=1, root_seed=5,
               train=small, model=model)
    sequential = run_benchmark(BenchmarkConfig(**cfg))
    monkeypatch.setenv("CACTI_THREADS", "2")
    parallel = run_benchmark(BenchmarkConfig(**cfg))
    assert json.dumps(sequential, sort_keys=True) == \
        json.dumps(parallel, sort_keys=True)


def test_incomplete_ground_truth_rejected(tmp_path, tiny_setup):
    data, _, small, model = tiny_setup
    holey = tmp_path / "holey.csv"
    rows = list(csv.reader(open(data)))
    rows[1][0] = ""
    with open(holey, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    cfg = BenchmarkConfig(data_path=str(holey), methods=["mean"],
                          train=small, model=model)
    with pytest.raises(ConfigError):
        run_benchmark(cfg)
