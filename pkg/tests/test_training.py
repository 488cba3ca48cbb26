import math

import numpy as np
import pytest

from cacti.dataset import fit_scaler, apply_scaler
from cacti.errors import ConfigError
from cacti.model import ModelConfig, init_params, param_decay_flags, positional_table
from cacti.training import (AdamState, TrainConfig, adamw_step,
                            clip_global_norm, lr_at, train, write_trace)
from cacti.rng import stream

from _helpers import random_context, table_from


class TestSchedule:
    CFG = TrainConfig(epochs=300, warmup_epochs=50, lr=1e-3, min_lr=1e-5)

    def test_step_zero_is_zero(self):
        assert lr_at(0, 10, self.CFG) == 0.0

    def test_warmup_end_reaches_base_lr(self):
        assert lr_at(50 * 10, 10, self.CFG) == pytest.approx(1e-3, abs=0)

    def test_final_step_hits_min_lr(self):
        assert lr_at(300 * 10 - 1, 10, self.CFG) == pytest.approx(1e-5, abs=1e-20)

    def test_continuous_at_junction(self):
        before = lr_at(50 * 10 - 1, 10, self.CFG)
        at = lr_at(50 * 10, 10, self.CFG)
        assert before < at == pytest.approx(1e-3)
        assert at - before < 1e-3 / 400

    def test_monotone_decay_after_warmup(self):
        values = [lr_at(s, 10, self.CFG) for s in range(500, 3000, 13)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_no_warmup_config(self):
        cfg = TrainConfig(epochs=10, warmup_epochs=0)
        assert lr_at(0, 5, cfg) == pytest.approx(cfg.lr)


class TestTrainConfig:
    def test_published_defaults(self):
        cfg = TrainConfig()
        assert cfg.epochs == 300
        assert cfg.batch_size == 128
        assert cfg.lr == 1e-3
        assert (cfg.beta1, cfg.beta2) == (0.90, 0.95)
        assert cfg.warmup_epochs == 50
        assert cfg.grad_clip == 5.0
        assert cfg.p_cm == 0.90
        assert cfg.min_lr == 1e-5
        assert cfg.weight_decay == 0.05
        assert cfg.mask_strategy == "mtcm"
        assert cfg.loss_mode == "both"

    def test_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(epochs=10, warmup_epochs=10)
        with pytest.raises(ConfigError):
            TrainConfig(lr=0.0)
        with pytest.raises(ConfigError):
            TrainConfig(grad_clip=0.0)
        with pytest.raises(ConfigError):
            TrainConfig(mask_strategy="nope")
        with pytest.raises(ConfigError):
            TrainConfig(mask_strategy="random", p_cm=0.0)

    def test_round_trip(self):
        cfg = TrainConfig(epochs=7, warmup_epochs=2, seed=3)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg


class TestAdamW:
    def test_one_step_hand_example(self):
        # g=1, lr=0.1, betas (0.9, 0.95), eps 1e-8, wd 0:
        # m=0.1, v=0.05, m_hat=1, v_hat=1 -> update = -0.1/(1+1e-8)
        cfg = TrainConfig(lr=0.1, beta1=0.9, beta2=0.95, weight_decay=0.0)
        params = {"w": np.array([0.0])}
        grads = {"w": np.array([1.0])}
        state = AdamState.for_params(params)
        adamw_step(params, grads, state, 0.1, cfg, {"w": True})
        expected = -0.1 * 1.0 / (1.0 + 1e-8)
        assert params["w"][0] == pytest.approx(expected, abs=1e-12)

    def test_zero_gradient_zero_decay_is_identity(self):
        cfg = TrainConfig(weight_decay=0.0)
        params = {"w": np.array([1.5, -2.0])}
        state = AdamState.for_params(params)
        adamw_step(params, {"w": np.zeros(2)}, state, 1e-3, cfg, {"w": True})
        np.testing.assert_array_equal(params["w"], [1.5, -2.0])

    def test_pure_decay_shrinks_multiplicatively(self):
        cfg = TrainConfig(weight_decay=0.05)
        lr_t = 0.01
        params = {"w": np.array([2.0])}
        state = AdamState.for_params(params)
        adamw_step(params, {"w": np.zeros(1)}, state, lr_t, cfg, {"w": True})
        assert params["w"][0] == pytest.approx(2.0 * (1 - lr_t * 0.05), rel=1e-12)

    def test_no_decay_flag_respected(self):
        cfg = TrainConfig(weight_decay=0.5)
        params = {"b": np.array([2.0])}
        state = AdamState.for_params(params)
        adamw_step(params, {"b": np.zeros(1)}, state, 0.1, cfg, {"b": False})
        assert params["b"][0] == 2.0


class TestClip:
    def test_norm_bounded_after_clip(self):
        rng = stream(0, "g")
        grads = {f"p{i}": rng.normal(size=50) * 10 for i in range(4)}
        pre = clip_global_norm(grads, 5.0)
        assert pre > 5.0
        post = math.sqrt(sum(float(np.dot(g.ravel(), g.ravel()))
                             for g in grads.values()))
        assert post <= 5.0 + 1e-6

    def test_small_gradients_untouched(self):
        grads = {"p": np.array([0.1, 0.2])}
        before = grads["p"].copy()
        clip_global_norm(grads, 5.0)
        np.testing.assert_array_equal(grads["p"], before)


def _linear_table(seed, n=64, k=4):
    rng = stream(seed, "lin")
    z = rng.normal(size=(n, 1))
    x = z @ np.ones((1, k)) + 0.01 * rng.normal(size=(n, k))
    observed = (rng.random((n, k)) > 0.3).astype(np.uint8)
    observed[observed.sum(axis=1) == 0, 0] = 1
    return table_from(np.where(observed == 1, x, np.nan), observed)


class TestTrainLoop:
    CFG = ModelConfig(n_features=4, embed_dim=16, n_enc=1, n_dec=1, heads=2,
                      ctx_raw_dim=0)

    def test_trace_length_and_format(self, tmp_path):
        t = _linear_table(1)
        scaler = fit_scaler(t)
        cfg = TrainConfig(epochs=5, warmup_epochs=1, batch_size=32, seed=0)
        _, trace = train(apply_scaler(t, scaler), None, self.CFG, cfg)
        assert len(trace) == 5
        assert [row[0] for row in trace] == list(range(5))
        path = tmp_path / "trace.csv"
        write_trace(trace, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,mean_loss,lr"
        assert len(lines) == 6

    def test_tiny_overfit(self):
        t = _linear_table(2)
        scaler = fit_scaler(t)
        cfg = TrainConfig(epochs=200, warmup_epochs=20, batch_size=16,
                          loss_mode="both", seed=1)
        _, trace = train(apply_scaler(t, scaler), None, self.CFG, cfg)
        assert trace[-1][1] < 0.1 * trace[0][1]

    def test_same_seed_identical_traces(self):
        t = _linear_table(3)
        scaler = fit_scaler(t)
        cfg = TrainConfig(epochs=4, warmup_epochs=1, batch_size=32, seed=7)
        _, tr1 = train(apply_scaler(t, scaler), None, self.CFG, cfg)
        _, tr2 = train(apply_scaler(t, scaler), None, self.CFG, cfg)
        assert tr1 == tr2

    @pytest.mark.parametrize("strategy", ["mtcm", "naive_cm", "random"])
    def test_all_strategies_run(self, strategy):
        t = _linear_table(4)
        scaler = fit_scaler(t)
        cfg = TrainConfig(epochs=2, warmup_epochs=1, batch_size=32,
                          mask_strategy=strategy, p_cm=0.5, seed=2)
        params, trace = train(apply_scaler(t, scaler), None, self.CFG, cfg)
        assert len(trace) == 2 and np.isfinite(trace[-1][1])

    def test_context_arm_runs(self):
        t = _linear_table(5)
        scaler = fit_scaler(t)
        ctx = random_context(0, 4, 12)
        mc = ModelConfig(n_features=4, embed_dim=16, n_enc=1, n_dec=1,
                         heads=2, ctx_raw_dim=12)
        cfg = TrainConfig(epochs=2, warmup_epochs=1, batch_size=32, seed=3)
        params, trace = train(apply_scaler(t, scaler), ctx, mc, cfg)
        assert "enc_ctx.w" in params

    def test_positional_table_never_updated(self):
        # the positional table is a pure function of (K, E): recomputed, not
        # a parameter; assert it is absent from params and stable across runs
        t = _linear_table(6)
        scaler = fit_scaler(t)
        cfg = TrainConfig(epochs=2, warmup_epochs=1, batch_size=32, seed=4)
        before = positional_table(4, 16).copy()
        params, _ = train(apply_scaler(t, scaler), None, self.CFG, cfg)
        assert not any("pos" in name for name in params)
        assert np.array_equal(before, positional_table(4, 16))

    def test_observed_only_loss_halves_over_seeds(self):
        # on noiseless linear data the kept-features reconstruction loss
        # must drop by at least half between the first and last epoch
        for seed in range(5):
            rng = stream(seed, "noiseless")
            z = rng.normal(size=(64, 1))
            x = z @ np.array([[1.0, -0.5, 2.0, 0.7]])
            observed = (rng.random((64, 4)) > 0.3).astype(np.uint8)
            observed[observed.sum(axis=1) == 0, 0] = 1
            t = table_from(np.where(observed == 1, x, np.nan), observed)
            scaler = fit_scaler(t)
            cfg = TrainConfig(epochs=60, warmup_epochs=6, batch_size=32,
                              loss_mode="observed", seed=seed)
            _, trace = train(apply_scaler(t, scaler), None, self.CFG, cfg)
            assert trace[-1][1] < 0.5 * trace[0][1], f"seed {seed}"

    def test_rows_without_observed_cells_rejected(self):
        values = np.array([[np.nan, np.nan], [1.0, 2.0]])
        observed = np.array([[0, 0], [1, 1]], np.uint8)
        t = table_from(values, observed)
        with pytest.raises(ConfigError):
            train(t, None, ModelConfig(n_features=2, embed_dim=8, n_enc=1,
                                       n_dec=1, heads=2, ctx_raw_dim=0),
                  TrainConfig(epochs=1, warmup_epochs=0, seed=0))


def test_decay_flags_cover_every_parameter():
    cfg = ModelConfig(n_features=2, embed_dim=8, n_enc=1, n_dec=0, heads=2,
                      ctx_raw_dim=0)
    params = init_params(cfg, 0)
    flags = param_decay_flags(params)
    assert set(flags) == set(params)
