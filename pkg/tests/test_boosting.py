import warnings

import numpy as np
import pytest

from xgblora import boosting as bb
from xgblora import models as mz
from xgblora.boosting import (
    BoostConfig,
    ConfigError,
    CostModel,
    classic_gb_fit,
    cost_model_estimate,
    full_finetune,
    lora_fit,
    select_layers,
    train_booster,
    xgblora_fit,
)
from xgblora.lora import AdapterError, init_adapter_set, merge_adapters
from xgblora.models import Dataset, build_mlp
from xgblora.tasks import gen_teacher_dataset
from xgblora.tensor import Rng


class TestBoostConfig:
    def test_derives_total_steps(self):
        cfg = BoostConfig(iterations=5, steps_per_booster=8)
        assert cfg.total_steps == 40

    def test_derives_iterations(self):
        cfg = BoostConfig(steps_per_booster=8, total_steps=40)
        assert cfg.iterations == 5

    def test_inconsistent_triple_rejected(self):
        with pytest.raises(ConfigError):
            BoostConfig(iterations=5, steps_per_booster=8, total_steps=99)

    def test_remainder_booster_warns(self):
        with pytest.warns(UserWarning, match="remainder"):
            cfg = BoostConfig(steps_per_booster=8, total_steps=20)
        assert cfg.iterations == 3
        assert [cfg.booster_steps(t) for t in (1, 2, 3)] == [8, 8, 4]

    def test_underdetermined_rejected(self):
        with pytest.raises(ConfigError):
            BoostConfig(iterations=5)

    def test_field_bounds(self):
        with pytest.raises(ConfigError):
            BoostConfig(iterations=1, steps_per_booster=8, rank=0)
        with pytest.raises(ConfigError):
            BoostConfig(iterations=1, steps_per_booster=8, lam=-1)
        with pytest.raises(ConfigError):
            BoostConfig(iterations=1, steps_per_booster=8, eta=-0.1)

    def test_paper_defaults(self):
        cfg = BoostConfig(iterations=4, steps_per_booster=8)
        assert cfg.rank == 1
        assert cfg.steps_per_booster == 8
        assert cfg.sample_layers == 8


class TestSelectLayers:
    def test_exhaustive_when_sample_equals_layers(self):
        for seed in (0, 1, 99):
            assert select_layers(Rng(seed), 6, 6) == [1, 2, 3, 4, 5, 6]

    def test_deterministic_given_seed(self):
        a = select_layers(Rng(1234), 32, 8)
        b = select_layers(Rng(1234), 32, 8)
        assert a == b
        assert len(a) == 8 and len(set(a)) == 8
        assert all(1 <= layer <= 32 for layer in a)

    def test_uniform_frequencies(self):
        rng = Rng(7)
        counts = np.zeros(10)
        n_draws = 10_000
        for _ in range(n_draws):
            for layer in select_layers(rng, 10, 2):
                counts[layer - 1] += 1
        freqs = counts / n_draws
        assert np.all(np.abs(freqs - 0.2) < 0.02)

    def test_bad_sample_count(self):
        with pytest.raises(ConfigError):
            select_layers(Rng(0), 5, 0)

    def test_clamp_with_warning(self):
        with pytest.warns(UserWarning, match="clamp"):
            got = select_layers(Rng(0), 3, 8)
        assert got == [1, 2, 3]


def quadratic_setup(seed=0, dims=(8, 8), n=64):
    data, task = gen_teacher_dataset("teacher-matrix", list(dims), n=n, seed=seed)
    return task.make_student(), data


class TestTrainBooster:
    def test_eta_zero_leaves_adapters_unchanged(self):
        model, data = quadratic_setup()
        adapters = init_adapter_set(model, mz.list_adaptable_weights(model), r=2, rng=Rng(5))
        a_before = {wid: p.a.data.copy() for wid, p in adapters.pairs.items()}
        train_booster(model, adapters, data, kappa=5, lam=0.0, eta=0.0, batch_size=8, rng=Rng(9))
        for wid, pair in adapters.pairs.items():
            assert np.array_equal(pair.a.data, a_before[wid])
            assert np.array_equal(pair.b.data, np.zeros_like(pair.b.data))
            assert np.array_equal(pair.delta(), np.zeros_like(pair.delta()))

    def test_loss_decreases_on_quadratic(self):
        model, data = quadratic_setup(seed=3)
        adapters = init_adapter_set(model, mz.list_adaptable_weights(model), r=4, rng=Rng(5))
        trace = train_booster(model, adapters, data, kappa=50, lam=0.0, eta=0.5, batch_size=32, rng=Rng(9))
        assert trace.step_losses[-1] < trace.step_losses[0]
        assert mz.loss_eval(model, data, adapters) < mz.loss_eval(model, data)

    def test_divergent_step_caught(self):
        model, data = quadratic_setup(seed=3)
        adapters = init_adapter_set(model, mz.list_adaptable_weights(model), r=4, rng=Rng(5))
        with np.errstate(over="ignore", invalid="ignore"), pytest.raises(FloatingPointError):
            train_booster(model, adapters, data, kappa=80, lam=0.0, eta=10.0, batch_size=32, rng=Rng(9))

    def test_update_norm_bound_holds(self):
        """|A - A0|_F <= eta * kappa * G with G the max applied-gradient norm."""
        model, data = quadratic_setup(seed=4)
        adapters = init_adapter_set(model, mz.list_adaptable_weights(model), r=2, rng=Rng(6))
        eta, kappa = 0.05, 12
        trace = train_booster(model, adapters, data, kappa=kappa, lam=0.0, eta=eta, batch_size=16, rng=Rng(7))
        for ps in trace.pair_stats.values():
            bound = eta * kappa * ps.grad_max
            assert ps.a_update_norm <= bound * (1 + 1e-9)
            assert ps.b_update_norm <= bound * (1 + 1e-9)
            assert ps.b_update_norm > 0  # the booster actually moved

    def test_merged_adapters_rejected(self):
        model, data = quadratic_setup()
        adapters = init_adapter_set(model, mz.list_adaptable_weights(model), r=1, rng=Rng(5))
        merge_adapters(model, adapters)
        with pytest.raises(AdapterError):
            train_booster(model, adapters, data, kappa=1, lam=0.0, eta=0.1, batch_size=4, rng=Rng(1))

    def test_base_weights_bitwise_frozen(self):
        model, data = quadratic_setup(seed=8)
        snapshot = {wid: w.data.copy() for wid, w in model.weights.items()}
        adapters = init_adapter_set(model, mz.list_adaptable_weights(model), r=2, rng=Rng(5))
        train_booster(model, adapters, data, kappa=20, lam=0.1, eta=0.1, batch_size=8, rng=Rng(2))
        for wid in snapshot:
            assert np.array_equal(model.weights[wid].data, snapshot[wid])

    def test_resume_merges_into_same_trace(self):
        model, data = quadratic_setup(seed=1)
        adapters = init_adapter_set(model, mz.list_adaptable_weights(model), r=1, rng=Rng(3))
        rng = Rng(11)
        trace = train_booster(model, adapters, data, kappa=10, lam=0.0, eta=0.05, batch_size=8, rng=rng, max_steps=4)
        assert trace.steps == 4
        train_booster(model, adapters, data, kappa=10, lam=0.0, eta=0.05, batch_size=8, rng=rng, trace=trace)
        assert trace.steps == 10


class TestXgbLoraFit:
    def test_step_accounting(self):
        model, data = quadratic_setup(seed=2, dims=(6, 6))
        cfg = BoostConfig(iterations=5, steps_per_booster=7, rank=1, sample_layers=1,
                          eta=0.05, batch_size=8, seed=3)
        _, traces = xgblora_fit(model, data, cfg)
        assert sum(t.steps for t in traces) == cfg.total_steps
        assert len(traces) == 5

    def test_merge_loss_continuity(self):
        model, data = quadratic_setup(seed=5)
        cfg = BoostConfig(iterations=6, steps_per_booster=4, rank=2, sample_layers=1,
                          eta=0.1, batch_size=16, seed=7)
        _, traces = xgblora_fit(model, data, cfg)
        for trace in traces:
            denom = max(abs(trace.pre_merge_loss), 1e-12)
            assert abs(trace.pre_merge_loss - trace.post_merge_loss) / denom <= 1e-12

    def test_reduces_to_lora_bit_exactly(self):
        """T=1, kappa=K, all layers: weight trajectory identical to lora_fit."""
        k = 60
        model_a, data = quadratic_setup(seed=9, dims=(6, 4))
        model_b = model_a.copy()
        cfg = BoostConfig(iterations=1, steps_per_booster=k, rank=3,
                          sample_layers=model_a.layers, eta=0.05, batch_size=8, seed=21)
        xgblora_fit(model_a, data, cfg)
        lora_fit(model_b, data, rank=3, total_steps=k, eta=0.05, batch_size=8, seed=21)
        for wid in model_a.weights:
            assert np.array_equal(model_a.weights[wid].data, model_b.weights[wid].data)

    def test_fixed_seed_reproducible(self):
        def run():
            model, data = quadratic_setup(seed=4, dims=(5, 5))
            cfg = BoostConfig(iterations=3, steps_per_booster=6, rank=1, sample_layers=1,
                              eta=0.05, batch_size=8, seed=77)
            m, _ = xgblora_fit(model, data, cfg)
            return np.concatenate([m.weights[w].data.ravel() for w in sorted(m.weights, key=mz.sort_key)])

        assert np.array_equal(run(), run())

    def test_interrupt_and_resume_bitwise(self):
        model_a, data = quadratic_setup(seed=6, dims=(6, 6))
        model_b = model_a.copy()
        cfg = BoostConfig(iterations=4, steps_per_booster=5, rank=2, sample_layers=1,
                          eta=0.05, batch_size=8, seed=13)
        xgblora_fit(model_a, data, cfg)

        run = bb.BoostRun(model=model_b, data=data, cfg=cfg, rng=Rng(cfg.seed))
        xgblora_fit(model_b, data, cfg, stop_after_step=7, run=run)  # mid-booster
        assert run.global_step == 7
        xgblora_fit(model_b, data, cfg, run=run)
        for wid in model_a.weights:
            assert np.array_equal(model_a.weights[wid].data, model_b.weights[wid].data)

    def test_fresh_subset_each_iteration(self):
        model, data = quadratic_setup(seed=2, dims=(8, 8))
        # an MLP with one layer only has one choice; use a deeper one
        data2, task2 = gen_teacher_dataset("teacher-mlp", [6, 6, 6, 6, 6], n=32, seed=1)
        student = task2.make_student()
        cfg = BoostConfig(iterations=12, steps_per_booster=2, rank=1, sample_layers=2,
                          eta=0.01, batch_size=8, seed=5, record_merge_loss=False)
        _, traces = xgblora_fit(student, data2, cfg)
        subsets = {tuple(t.selected_layers) for t in traces}
        assert len(subsets) > 1


class TestMomentum:
    def test_zero_momentum_matches_plain_sgd(self):
        data, task = gen_teacher_dataset("teacher-matrix", [5, 5], n=32, seed=1)
        a = task.make_student()
        b = task.make_student()
        full_finetune(a, data, total_steps=20, eta=0.1, batch_size=8, seed=4)
        full_finetune(b, data, total_steps=20, eta=0.1, batch_size=8, seed=4, momentum=0.0)
        for wid in a.weights:
            assert np.array_equal(a.weights[wid].data, b.weights[wid].data)

    def test_momentum_changes_trajectory(self):
        data, task = gen_teacher_dataset("teacher-matrix", [5, 5], n=32, seed=1)
        a = task.make_student()
        b = task.make_student()
        full_finetune(a, data, total_steps=20, eta=0.1, batch_size=8, seed=4)
        full_finetune(b, data, total_steps=20, eta=0.1, batch_size=8, seed=4, momentum=0.9)
        wid = next(iter(a.weights))
        assert not np.array_equal(a.weights[wid].data, b.weights[wid].data)

    def test_momentum_velocity_math(self):
        from xgblora.tensor import MomentumSgd, Tensor

        p = Tensor([0.0], requires_grad=True)
        opt = MomentumSgd(0.5)
        p.grad = np.array([1.0])
        opt.step([p], eta=1.0)  # v=1, p=-1
        p.grad = np.array([1.0])
        opt.step([p], eta=1.0)  # v=1.5, p=-2.5
        assert np.allclose(p.data, [-2.5])

    def test_boost_config_momentum_flag(self):
        data, task = gen_teacher_dataset("teacher-matrix", [5, 5], n=32, seed=2)
        model = task.make_student()
        cfg = BoostConfig(iterations=2, steps_per_booster=6, rank=1, sample_layers=1,
                          eta=0.3, batch_size=8, seed=3, momentum=0.8)
        _, traces = xgblora_fit(model, data, cfg)
        assert sum(t.steps for t in traces) == 12
        with pytest.raises(ConfigError):
            BoostConfig(iterations=1, steps_per_booster=2, momentum=1.5)


class TestFullFinetune:
    def test_eta_zero_keeps_weights(self):
        model, data = quadratic_setup(seed=1)
        before = {wid: w.data.copy() for wid, w in model.weights.items()}
        full_finetune(model, data, total_steps=5, eta=0.0, seed=2)
        for wid in before:
            assert np.array_equal(model.weights[wid].data, before[wid])

    def test_loss_drops_on_teacher_task(self):
        data, task = gen_teacher_dataset("teacher-mlp", [6, 12, 4], n=128, seed=3)
        model = task.make_student()
        initial = mz.loss_eval(model, data)
        full_finetune(model, data, total_steps=500, eta=0.05, batch_size=16, seed=4)
        assert mz.loss_eval(model, data) < initial

    def test_requires_grad_restored(self):
        model, data = quadratic_setup()
        full_finetune(model, data, total_steps=2, eta=0.01, seed=1)
        assert all(not w.requires_grad for w in model.weights.values())


class TestClassicGb:
    def test_single_linear_learner_fits_linear_data(self):
        x = np.linspace(-2, 2, 40)
        y = 3.0 * x - 1.0
        gb = classic_gb_fit(x, y, rounds=1, weak="linear")
        assert np.abs(gb.predict(x) - y).max() < 1e-10
        assert gb.mse_history[-1] < 1e-20

    def test_constant_target_one_round(self):
        x = np.linspace(0, 1, 25)
        y = np.full(25, 4.2)
        gb = classic_gb_fit(x, y, rounds=3, weak="stump")
        assert np.abs(gb.predict(x) - 4.2).max() < 1e-12
        assert gb.mse_history[0] < 1e-24  # first learner already exact

    def test_mse_non_increasing(self):
        rng = Rng(31)
        x = rng.uniform((200,)) * 4 - 2
        y = np.sin(2 * x) + 0.1 * rng.gaussian((200,))
        for weak in ("linear", "stump"):
            gb = classic_gb_fit(x, y, rounds=50, weak=weak)
            h = np.array(gb.mse_history)
            assert np.all(np.diff(h) <= 1e-12)

    def test_stumps_reach_low_error(self):
        rng = Rng(8)
        x = rng.uniform((300,)) * 4 - 2
        y = np.sin(2 * x)
        gb = classic_gb_fit(x, y, rounds=50, weak="stump")
        assert gb.mse_history[-1] < 0.1 * gb.mse_history[0]

    def test_empty_data_rejected(self):
        with pytest.raises(ConfigError):
            classic_gb_fit(np.array([]), np.array([]), rounds=1)

    def test_prediction_is_rate_weighted_sum(self):
        x = np.linspace(0, 1, 30)
        y = x**2
        gb = classic_gb_fit(x, y, rounds=5, weak="stump")
        manual = sum(a * f(x) for a, f in zip(gb.rates, gb.learners))
        assert np.allclose(gb.predict(x), manual)


class TestCostModel:
    def test_lora_row(self):
        cm = CostModel(alpha_cost=1.0, beta_cost=0.0, layers=32, total_steps=1000, full_rank=8)
        got = cost_model_estimate(cm, "lora")
        assert got["total"] == pytest.approx(32 * 1000)
        assert got["iters"] == 1
        assert got["steps_per_iter"] == 1000

    def test_full_rank_third_layers_row(self):
        cm = CostModel(alpha_cost=1.0, beta_cost=0.0, layers=32, total_steps=1000,
                       iterations=10, rank=8, full_rank=8, adapted_layers=32 / 3)
        got = cost_model_estimate(cm, "xgblora")
        assert got["total"] == pytest.approx(32 * 1000 / 3, abs=0.1)

    def test_rank_one_third_layers_row(self):
        cm = CostModel(alpha_cost=1.0, beta_cost=0.0, layers=32, total_steps=1000,
                       iterations=10, rank=1, full_rank=8, adapted_layers=32 / 3)
        got = cost_model_estimate(cm, "xgblora")
        assert got["total"] == pytest.approx(32 * 1000 / (3 * 8), abs=0.1)

    def test_beta_added(self):
        cm = CostModel(alpha_cost=1.0, beta_cost=7.0, layers=4, total_steps=10,
                       iterations=2, rank=1, full_rank=4, adapted_layers=2)
        got = cost_model_estimate(cm, "xgblora")
        assert got["total"] == pytest.approx(2 * 1.0 * (1 / 4) * 10 + 7.0)

    def test_invalid_fields(self):
        cm = CostModel(layers=0)
        with pytest.raises(ConfigError):
            cost_model_estimate(cm, "lora")
        with pytest.raises(ConfigError):
            cost_model_estimate(CostModel(), "nope")
