import numpy as np
import pytest

from xgblora import probes
from xgblora.models import Role, WeightId
from xgblora.probes import (
    GridPoint,
    ProbeReport,
    convergence_sweep,
    expressiveness_sweep,
    gradient_approx_probe,
    lipschitz_probe,
    model_grad_fn,
    pooled_std,
    quadratic_curvature,
    run_booster_corpus,
    update_norm_probe,
)
from xgblora.tasks import gen_teacher_dataset
from xgblora.tensor import Rng


@pytest.fixture(scope="module")
def quad16():
    return gen_teacher_dataset("teacher-matrix", [16, 16], n=256, seed=42)


class TestGradientApproxProbe:
    def test_full_rank_error_near_floor(self, quad16):
        data, task = quad16
        rep = gradient_approx_probe(task, data, r_grid=[16], m_grid=[64], seeds=range(3))
        p = rep.point(r=16, m=64)
        # floor at full rank is zero; the estimate collapses to the
        # minibatch average, which approaches the full gradient
        assert np.mean(p.extras["floor"]) < 1e-12
        assert p.mean < 0.2

    def test_error_nonincreasing_in_rank(self, quad16):
        data, task = quad16
        rep = gradient_approx_probe(task, data, r_grid=[1, 2, 4, 8, 16], m_grid=[32], seeds=range(5))
        assert rep.checks["nonincreasing_in_r"]
        means = [rep.point(r=r, m=32).mean for r in (1, 2, 4, 8, 16)]
        assert means[-1] < means[0]  # the trend is real, not flat

    def test_error_nonincreasing_in_minibatches(self, quad16):
        data, task = quad16
        rep = gradient_approx_probe(task, data, r_grid=[2], m_grid=[4, 16, 64], seeds=range(5))
        assert rep.checks["nonincreasing_in_m"]

    def test_floor_dominates_everywhere(self, quad16):
        data, task = quad16
        rep = gradient_approx_probe(task, data, r_grid=[1, 4], m_grid=[8, 32], seeds=range(3))
        assert rep.checks["floor_dominated"]
        for p in rep.points:
            for v, f in zip(p.values, p.extras["floor"]):
                assert v >= f - 1e-9

    def test_nonnegative_constants(self, quad16):
        data, task = quad16
        rep = gradient_approx_probe(task, data, r_grid=[1, 4], m_grid=[8, 32], seeds=range(3))
        assert rep.constants.fitted["c1"] >= 0
        assert rep.constants.fitted["c2"] >= 0

    def test_rejects_deep_model(self):
        data, task = gen_teacher_dataset("teacher-mlp", [6, 6, 6], n=32, seed=1)
        with pytest.raises(ValueError, match="single-matrix"):
            gradient_approx_probe(task, data, r_grid=[1], m_grid=[4], seeds=range(2))


class TestUpdateNormProbe:
    def test_standard_corpus_zero_violations(self):
        corpus = run_booster_corpus(r_values=(1, 4), kappa_values=(1, 8), boosters_per_config=3)
        rep = update_norm_probe(corpus)
        assert rep.checks["zero_violations"]
        assert all(p.values[0] <= 1.0 + 1e-9 for p in rep.points)

    def test_eta_zero_traces(self):
        corpus = run_booster_corpus(r_values=(2,), kappa_values=(4,), boosters_per_config=2, eta=0.0)
        rep = update_norm_probe(corpus)
        assert rep.checks["zero_violations"]
        for p in rep.points:
            assert p.values[0] == 0.0  # ratio defined as 0 when bound is 0

    def test_single_step_recursion_base(self):
        """kappa=1: B moves by exactly eta*|grad_B| and A stays at init."""
        corpus = run_booster_corpus(r_values=(2,), kappa_values=(1,), boosters_per_config=4, eta=0.3)
        rep = update_norm_probe(corpus)
        assert rep.checks["zero_violations"]
        for (trace, eta) in corpus:
            for ps in trace.pair_stats.values():
                assert ps.a_update_norm == 0.0  # dA = grad @ B0ᵀ = 0 at the only step
                assert ps.b_update_norm == pytest.approx(eta * 1 * ps.grad_max, rel=1e-12)

    def test_g_max_recorded(self):
        corpus = run_booster_corpus(r_values=(1,), kappa_values=(8,), boosters_per_config=2)
        rep = update_norm_probe(corpus)
        assert rep.constants.g_max > 0


class TestLipschitzProbe:
    def test_quadratic_closed_form(self):
        """grad of 0.5*|Wx - y|^2 has Lipschitz constant |x|^2."""
        rng = Rng(99)
        x = rng.gaussian((4,))
        y = rng.gaussian((3,))

        def grad(w):
            return np.outer(w @ x - y, x)

        est = lipschitz_probe(grad, (3, 4), n_pairs=4000, radius=1.0, rng=Rng(7))
        target = float(x @ x)
        assert est.value <= target * (1 + 1e-9)
        assert est.value >= 0.95 * target

    def test_running_max_nondecreasing(self):
        rng = Rng(5)
        x = rng.gaussian((3,))

        def grad(w):
            return np.outer(w @ x, x)

        est = lipschitz_probe(grad, (2, 3), n_pairs=300, radius=0.5, rng=Rng(8))
        assert all(b >= a for a, b in zip(est.running_max, est.running_max[1:]))

    def test_coincident_pairs_skipped(self):
        def grad(w):
            return w

        est = lipschitz_probe(grad, (2, 2), n_pairs=50, radius=1e-30, rng=Rng(1))
        # radius so small every pair is (numerically) coincident: no ratios
        assert est.value == 0.0

    def test_radius_must_be_positive(self):
        with pytest.raises(ValueError):
            lipschitz_probe(lambda w: w, (2, 2), n_pairs=5, radius=0.0, rng=Rng(1))

    def test_model_grad_fn_restores_weights(self):
        data, task = gen_teacher_dataset("teacher-matrix", [4, 4], n=32, seed=3)
        model = task.make_student()
        wid = WeightId(1, Role.MLP_DENSE)
        before = model.weights[wid].data.copy()
        fn = model_grad_fn(model, data, wid)
        g = fn(before + 0.5)
        assert g.shape == before.shape
        assert np.array_equal(model.weights[wid].data, before)
        assert not model.weights[wid].requires_grad


class TestQuadraticCurvature:
    def test_matches_library_eigs(self):
        data, _ = gen_teacher_dataset("teacher-matrix", [6, 3], n=200, seed=8)
        beta, mu = quadratic_curvature(data)
        x = data.inputs
        w = np.linalg.eigvalsh(x.T @ x) * 2.0 / (x.shape[0] * 3)
        assert beta == pytest.approx(w[-1], rel=1e-6)
        assert mu == pytest.approx(w[0], rel=1e-4)
        assert mu > 0


@pytest.fixture(scope="module")
def quad_noisy():
    return gen_teacher_dataset("teacher-matrix", [8, 8], n=128, seed=11, noise=0.2)


@pytest.fixture(scope="module")
def rotation_teacher():
    return gen_teacher_dataset(
        "teacher-matrix", [12, 12], n=96, seed=5, delta_kind="rotation", delta_scale=3.5
    )


class TestConvergenceSweep:

    def test_gap_decreases_in_iterations(self, quad_noisy):
        data, task = quad_noisy
        rep = convergence_sweep(task, data, t_grid=[1, 4, 16], r_grid=[1], kappa=8,
                                seeds=range(3), eta=2.6, batch_size=128)
        assert rep.checks["gap_nonincreasing_in_t_r1"]
        means = [rep.point(r=1, t=t).mean for t in (1, 4, 16)]
        assert means[2] < means[0]

    def test_gap_decreases_in_rank_when_capacity_binds(self, quad_noisy):
        data, task = quad_noisy
        rep = convergence_sweep(task, data, t_grid=[1], r_grid=[1, 4, 8], kappa=64,
                                seeds=range(3), eta=1.0, batch_size=128)
        assert rep.checks["gap_nonincreasing_in_r_t1"]

    def test_curvature_reported(self, quad_noisy):
        data, task = quad_noisy
        rep = convergence_sweep(task, data, t_grid=[1, 4], r_grid=[1], kappa=8,
                                seeds=range(2), eta=2.0, batch_size=128)
        assert rep.constants.beta > rep.constants.mu > 0

    def test_nonconvex_task_rejected(self):
        data, task = gen_teacher_dataset("teacher-mlp", [4, 8, 4], n=32, seed=2)
        with pytest.raises(ValueError, match="convex"):
            convergence_sweep(task, data, t_grid=[1], r_grid=[1], kappa=2, seeds=range(2))

    def test_full_rank_long_training_closes_gap(self):
        # boosters long enough to converge within one; later merges keep it
        data, task = gen_teacher_dataset("teacher-matrix", [4, 4], n=64, seed=3)
        rep = convergence_sweep(task, data, t_grid=[8], r_grid=[4], kappa=512,
                                seeds=range(2), eta=1.0, batch_size=64)
        assert rep.point(r=4, t=8).mean < 1e-6


class TestExpressivenessSweep:
    def test_zero_delta_teacher_zero_error_at_t0(self):
        data, task = gen_teacher_dataset("teacher-matrix", [6, 6], n=32, seed=2, delta_scale=0.0)
        rep = expressiveness_sweep(task, data, total_steps=8, rt_grid=[(1, 0)], seeds=range(2))
        assert rep.point(r=1, t=0).mean == 0.0

    def test_full_rank_single_adapter_reaches_teacher(self, rotation_teacher):
        data, task = rotation_teacher
        rep = expressiveness_sweep(task, data, total_steps=512, rt_grid=[(12, 1)],
                                   seeds=range(2), batch_size=96)
        assert rep.point(r=12, t=1).mean < 1e-3

    def test_boosted_rank1_beats_single_rank1(self, rotation_teacher):
        data, task = rotation_teacher
        rep = expressiveness_sweep(task, data, total_steps=256, rt_grid=[(1, 32), (1, 1)],
                                   seeds=range(3), batch_size=96)
        xgb = rep.point(r=1, t=32)
        single = rep.point(r=1, t=1)
        assert xgb.mean <= single.mean + 2 * pooled_std(xgb.values, single.values)

    def test_indivisible_budget_rejected(self, rotation_teacher):
        data, task = rotation_teacher
        with pytest.raises(ValueError, match="divide"):
            expressiveness_sweep(task, data, total_steps=100, rt_grid=[(1, 3)], seeds=range(2))

    def test_eta_recorded_per_arm(self, rotation_teacher):
        data, task = rotation_teacher
        rep = expressiveness_sweep(task, data, total_steps=64, rt_grid=[(1, 8)],
                                   seeds=range(2), eta=1.0, batch_size=96)
        assert rep.point(r=1, t=8).extras["eta"] == [1.0, 1.0]


class TestProbeReport:
    def _tiny_report(self):
        rep = ProbeReport(probe="demo")
        p = GridPoint(params={"r": 1, "m": 2})
        p.values = [0.5, 0.75]
        p.extras["floor"] = [0.1, 0.2]
        rep.points.append(p)
        rep.checks["ok"] = True
        return rep

    def test_csv_rows_one_per_replicate(self):
        rows = list(self._tiny_report().csv_rows())
        assert rows[0][0] == "schema"
        assert len(rows) == 3  # header + 2 replicates

    def test_write_and_shape(self, tmp_path):
        rep = self._tiny_report()
        rep.write_csv(tmp_path / "p.csv")
        rep.write_json(tmp_path / "p.json")
        lines = (tmp_path / "p.csv").read_text().splitlines()
        assert len(lines) == 3
        import json

        summary = json.loads((tmp_path / "p.json").read_text())
        assert summary["probe"] == "demo"
        assert summary["passed"] is True

    def test_deterministic_given_seed_grid(self, quad16):
        data, task = quad16
        a = gradient_approx_probe(task, data, r_grid=[2], m_grid=[8], seeds=range(2))
        b = gradient_approx_probe(task, data, r_grid=[2], m_grid=[8], seeds=range(2))
        assert a.point(r=2, m=8).values == b.point(r=2, m=8).values

    def test_pooled_std(self):
        a = [1.0, 2.0, 3.0]
        b = [2.0, 4.0, 6.0]
        got = pooled_std(a, b)
        expected = np.sqrt((2 * 1.0 + 2 * 4.0) / 4)
        assert got == pytest.approx(expected)

    def test_missing_point_raises(self):
        with pytest.raises(KeyError):
            self._tiny_report().point(r=9, m=9)
