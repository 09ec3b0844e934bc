from __future__ import annotations

import numpy as np
import pytest

from dyname.baselines import (
    AblationSpec,
    recency_lr_predict,
    run_ablation,
    weekly_lr_predict,
)
from dyname.engine import EngineConfig
from dyname.errors import ConfigError, InsufficientHistory

from conftest import store_from


def weekly_stream(total, noise=0.0, seed=0):
    t = np.arange(total)
    base = np.sin(2 * np.pi * t / 168) + 0.4 * np.sin(2 * np.pi * t / 24)
    if noise:
        base = base + np.random.default_rng(seed).normal(scale=noise, size=total)
    return base


CFG = EngineConfig(
    lookback=48, horizon=24, buffer_len=336, n_experts=2, n_max=4,
    feature_dim=16, learning_rate=0.01, pretrain_epochs=2, seed=0,
)


class TestWeeklyLR:
    def test_exact_on_weekly_periodic_stream(self):
        store = store_from(weekly_stream(4000))
        t = 3000
        pred = weekly_lr_predict(store, t, horizon=24, lookback=96)
        truth = store.values[t + 1 : t + 25]
        np.testing.assert_allclose(pred, truth, atol=1e-5)

    def test_insufficient_history(self):
        store = store_from(weekly_stream(800))
        with pytest.raises(InsufficientHistory):
            weekly_lr_predict(store, 700, horizon=24, lookback=96)

    def test_single_sample_copies_target(self):
        store = store_from(weekly_stream(4000))
        t = 3000
        pred = weekly_lr_predict(store, t, n_samples=1, horizon=24, lookback=96)
        target = store.values[t - 168 + 1 : t - 168 + 25]
        np.testing.assert_allclose(pred, target, atol=1e-4)

    def test_period_below_horizon_rejected(self):
        store = store_from(weekly_stream(4000))
        with pytest.raises(ConfigError):
            weekly_lr_predict(store, 3000, period=12, horizon=24)


class TestRecencyLR:
    def test_requires_enough_history(self):
        # deepest anchor t - H - 3*(L+H) = t - 384 must leave room for L
        store = store_from(weekly_stream(500))
        with pytest.raises(InsufficientHistory):
            recency_lr_predict(store, 470, horizon=24, lookback=96)

    def test_anchors_never_leak(self):
        store = store_from(weekly_stream(4000))
        t = 3000
        pred = recency_lr_predict(store, t, horizon=24, lookback=96)
        assert pred.shape == (24, 1)

    def test_exact_on_short_period_stream(self):
        # A period that divides the recency stride makes recent windows
        # phase-aligned, so the recency fit is near-exact too.
        t_axis = np.arange(4000)
        store = store_from(np.sin(2 * np.pi * t_axis / 24))
        pred = recency_lr_predict(store, 3000, horizon=24, lookback=96)
        truth = store.values[3001:3025]
        np.testing.assert_allclose(pred, truth, atol=1e-5)


class TestAblationSpec:
    def test_validation(self):
        with pytest.raises(ConfigError):
            AblationSpec(gate_variant="bogus").validate()
        with pytest.raises(ConfigError):
            AblationSpec(period_mode="bogus").validate()
        with pytest.raises(ConfigError):
            AblationSpec(period_mode="fixed", fixed_periods=()).validate()

    def test_labels(self):
        assert AblationSpec().label() == "dynamic+with_danger+fft"
        assert (
            AblationSpec(gate_variant="learnable", use_danger=False, period_mode="fixed").label()
            == "learnable+no_danger+fixed"
        )

    def test_plan_wiring(self):
        plan = AblationSpec(gate_variant="detached", use_danger=False).to_plan()
        assert plan.gate_variant == "detached"
        assert not plan.use_danger
        assert plan.keep_beta


class TestRunAblation:
    def test_simple_average_outputs_expert_mean(self):
        store = store_from(weekly_stream(2400, noise=0.02))
        cfg = EngineConfig(
            lookback=48, horizon=24, buffer_len=336, n_experts=2, n_max=4,
            feature_dim=16, beta=0.0, seed=0,
        )
        spec = AblationSpec(gate_variant="simple_average", use_danger=False)
        result = run_ablation(store, cfg, spec)
        assert result.summary["ablation"]["gate_variant"] == "simple_average"
        for record in result.records[:50]:
            stack = np.stack([p for _, p in record.per_expert])
            np.testing.assert_allclose(record.y_hat, stack.mean(axis=0), atol=1e-10)

    def test_learnable_gate_is_input_independent(self):
        values = np.column_stack([weekly_stream(2400, noise=0.02, seed=1),
                                  weekly_stream(2400, noise=0.02, seed=2)])
        store = store_from(values)
        spec = AblationSpec(gate_variant="learnable")
        result = run_ablation(store, CFG, spec)
        for record in result.records[::100]:
            np.testing.assert_allclose(record.omega_tilde[0], record.omega_tilde[1], atol=1e-12)

    def test_fixed_periods_used(self):
        store = store_from(weekly_stream(2400))
        spec = AblationSpec(period_mode="fixed", fixed_periods=(168, 24))
        result = run_ablation(store, CFG, spec)
        for record in result.records[::200]:
            assert set(record.periods) <= {168, 24}

    def test_no_danger_pins_gamma_to_beta(self):
        store = store_from(weekly_stream(2400, noise=0.05))
        spec = AblationSpec(use_danger=False)
        result = run_ablation(store, CFG, spec)
        assert all(r.gamma == CFG.beta for r in result.records)
        assert all(r.d == 0.0 for r in result.records)

    def test_no_danger_no_beta_uses_raw_gate(self):
        store = store_from(weekly_stream(2400, noise=0.05))
        spec = AblationSpec(use_danger=False, keep_beta=False)
        result = run_ablation(store, CFG, spec)
        assert all(r.gamma == 0.0 for r in result.records)

    def test_fixed_equals_dynamic_when_spectrum_coincides(self):
        # FFT top-2 of this stream is exactly {168, 24}, so both period
        # modes build identical batches and the trajectories coincide.
        store = store_from(weekly_stream(2400))
        cfg = EngineConfig(
            lookback=48, horizon=24, buffer_len=336, n_experts=2, n_max=4,
            feature_dim=16, learning_rate=0.01, pretrain_epochs=2, seed=0,
        )
        dynamic = run_ablation(store, cfg, AblationSpec(period_mode="dynamic_fft"))
        fixed = run_ablation(
            store, cfg, AblationSpec(period_mode="fixed", fixed_periods=(168, 24))
        )
        assert all(r.periods == (168, 24) for r in dynamic.records)
        assert dynamic.summary["mse"] == fixed.summary["mse"]
        for a, b in zip(dynamic.records, fixed.records):
            np.testing.assert_array_equal(a.y_hat, b.y_hat)
