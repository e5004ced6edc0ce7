"""
Test cases for bias estimators and meta-training
"""

import os
import sys

import numpy as np
import pytest

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.buc_agent import run_task
from src.core_regression import RidgeState
from src.exceptions import EmptyHistory, InvalidDelta, MetaTrainingAborted
from src.linear_mdp import TransitionCore, anchor_chain_mean_core, anchor_chain_skeleton, random_stochastic_core
from src.meta_learner import (
    EstimatorKind,
    GlobalRidgeEstimator,
    LowBiasEstimator,
    distance_to_hull,
    empirical_mean_error,
    estimation_diagnostics,
    global_ridge_w,
    lambda_schedule,
    low_bias_w,
    make_estimator,
    meta_train,
    plugin_variance,
    task_seeds
)
from src.task_family import (
    TaskFamily, default_family, finite_set_from_draws, orthogonal_family, point_mass_family
)
from src.utils import PHASE_TEST, PHASE_TRAIN


def random_cores(count: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    return [random_stochastic_core(4, 4, rng) for _ in range(count)]


class TestLowBiasWeights:
    """Test cases for the low-bias weighted average"""

    def setup_method(self):
        """Setup test fixtures"""
        self.cores = random_cores(3)

    def test_first_task_start(self):
        """Test G = 2 at n = h = 0 returns the previous estimate"""
        w = low_bias_w(self.cores[:1], self.cores[2], 10, 0, 0, 2)
        np.testing.assert_allclose(w.m, self.cores[0].m)

    def test_average_at_task_start(self):
        """Test G = 3 at the start averages the two previous estimates"""
        w = low_bias_w(self.cores[:2], self.cores[2], 10, 0, 0, 2)
        np.testing.assert_allclose(w.m, 0.5 * (self.cores[0].m + self.cores[1].m))

    def test_equal_weight_at_task_end(self):
        """Test a finished current task weighs as much as a previous one"""
        w = low_bias_w(self.cores[:1], self.cores[2], 10, 5, 0, 2)
        np.testing.assert_allclose(w.m, 0.5 * (self.cores[0].m + self.cores[2].m))

    def test_mid_task_weights(self):
        """Test weights T/Z for finished tasks and (nH + h)/Z for the current one"""
        w = low_bias_w(self.cores[:2], self.cores[2], 10, 2, 1, 2)
        expected = 0.4 * self.cores[0].m + 0.4 * self.cores[1].m + 0.2 * self.cores[2].m
        np.testing.assert_allclose(w.m, expected)

    def test_result_in_hull(self):
        """Test the average lies in the convex hull of its inputs"""
        w = low_bias_w(self.cores[:2], self.cores[2], 7, 3, 1, 2)
        assert distance_to_hull(w, self.cores) < 1e-4

    def test_empty_history(self):
        """Test no previous task and no transition raises EmptyHistory"""
        with pytest.raises(EmptyHistory):
            low_bias_w([], self.cores[0], 10, 0, 0, 2)


class TestLowBiasEstimator:
    """Test cases for the within-task low-bias schedule"""

    def setup_method(self):
        """Setup test fixtures"""
        self.family = default_family()
        self.features = self.family.base.features
        self.mdp = self.family.mdp(self.family.mean_core)

    def fill(self, ridge: RidgeState, count: int, seed: int) -> RidgeState:
        rng = np.random.default_rng(seed)
        for _ in range(count):
            state, action = int(rng.integers(4)), int(rng.integers(2))
            next_state = self.mdp.sample_next_state(state, action, rng)
            ridge.update(self.features.phi_of(state, action), self.features.psi[next_state])
        return ridge

    def test_refresh_follows_weighted_average(self):
        """Test a mid-task refresh equals the weighted average with n, h from the transition count"""
        estimator = LowBiasEstimator(4, 4, 2)
        first = self.fill(RidgeState.for_features(self.features, 1.0), 10, seed=0)
        estimator.end_task(first)
        current = self.fill(RidgeState.for_features(self.features, 1.0, estimator.current_w), 3, seed=1)
        expected = low_bias_w([first.solve()], current.solve(), 10, 1, 1, 2)
        np.testing.assert_allclose(estimator.refresh(current).m, expected.m)

    def test_initial_bias_before_any_data(self):
        """Test the initial bias is used before any transition is seen"""
        initial = self.family.mean_core
        estimator = LowBiasEstimator(4, 4, 2, initial=initial)
        assert estimator.refresh(RidgeState.for_features(self.features, 1.0)) is initial

    def test_meta_training_freezes_the_average(self):
        """Test the frozen bias is the equal-weight average of the training estimates"""
        record = meta_train(self.family, 'low_bias', 3, 1, 6, rng=5)
        estimates = [run.final_estimate for run in record.train_records]
        expected = low_bias_w(estimates, estimates[-1], 12, 0, 0, 2)
        np.testing.assert_allclose(record.frozen_bias.m, expected.m, atol=1e-12)

    def test_unequal_task_lengths(self):
        """Test tasks of different lengths cannot share one average"""
        estimator = LowBiasEstimator(4, 4, 2)
        estimator.end_task(self.fill(RidgeState.for_features(self.features, 1.0), 10, seed=2))
        with pytest.raises(ValueError):
            estimator.end_task(self.fill(RidgeState.for_features(self.features, 1.0), 12, seed=3))


class TestGlobalRidge:
    """Test cases for the pooled ridge estimator"""

    def setup_method(self):
        """Setup test fixtures"""
        self.family = default_family()
        self.features = self.family.base.features

    def test_first_task_matches_unbiased_ridge(self):
        """Test with one task the pooled solve equals the within-task ridge with W = 0"""
        mdp = self.family.mdp(self.family.mean_core)
        estimator = GlobalRidgeEstimator(self.features, 1.0)
        ridge = RidgeState.for_features(self.features, 1.0)
        rng = np.random.default_rng(0)
        for _ in range(200):
            state, action = int(rng.integers(4)), int(rng.integers(2))
            next_state = mdp.sample_next_state(state, action, rng)
            phi, psi = self.features.phi_of(state, action), self.features.psi[next_state]
            estimator.observe(phi, psi)
            ridge.update(phi, psi)
        np.testing.assert_allclose(global_ridge_w(estimator, 1.0).m, ridge.solve().m, atol=1e-10)

    def test_point_mass_recovery(self):
        """Test 5000 pooled transitions of a deterministic core recover it"""
        family = orthogonal_family(4)
        mdp = family.mdp(family.cores[1])
        features = family.base.features
        estimator = GlobalRidgeEstimator(features, 1.0)
        rng = np.random.default_rng(1)
        for _ in range(5000):
            state, action = int(rng.integers(4)), int(rng.integers(4))
            next_state = mdp.sample_next_state(state, action, rng)
            estimator.observe(features.phi_of(state, action), features.psi[next_state])
        assert global_ridge_w(estimator, 1.0).distance(family.cores[1]) <= 0.05

    def test_pooled_gram_is_sum_of_task_grams(self):
        """Test the pooled design equals the sum of per-task designs"""
        record = meta_train(self.family, 'global_ridge', 4, 1, 20, rng=3)
        np.testing.assert_allclose(record.pooled_gram, sum(record.task_grams), atol=1e-9)
        assert len(record.task_grams) == 4


class TestLambdaSchedule:
    """Test cases for the variance-driven regularization"""

    def test_value(self):
        """Test lam = 1/(T Var)"""
        assert lambda_schedule(1.0, 100) == pytest.approx(0.01)

    def test_floor(self):
        """Test zero variance is floored"""
        assert lambda_schedule(0.0, 10) == pytest.approx(1.0 / (10 * 1e-6))

    def test_invalid_t(self):
        """Test T = 0 is rejected"""
        with pytest.raises(ValueError):
            lambda_schedule(1.0, 0)

    def test_plugin_variance(self):
        """Test the plug-in variance of two cores is a quarter of their squared distance"""
        a, b = random_cores(2, seed=4)
        assert plugin_variance([a, b]) == pytest.approx(0.25 * a.distance(b) ** 2)

    def test_plugin_tracks_exact(self):
        """Test the plug-in lambda from 10 draws is within a factor 2 of the exact one (median)"""
        family = finite_set_from_draws(default_family(kappa=20.0), 3, np.random.default_rng(5))
        exact = lambda_schedule(family.family_stats(family.mean_core).var_w, 600)
        ratios = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            draws = [family.sample_core(rng) for _ in range(10)]
            ratios.append(lambda_schedule(plugin_variance(draws), 600) / exact)
        assert 0.5 <= np.median(ratios) <= 2.0


class TestMetaTrain:
    """Test cases for the meta-training loop"""

    def setup_method(self):
        """Setup test fixtures"""
        self.family = default_family()

    def test_zero_matches_plain_runs(self):
        """Test the zero estimator reproduces direct unbiased runs with lam = 1"""
        record = meta_train(self.family, 'zero', 0, 3, 15, rng=7)
        for g, run in enumerate(record.test_records):
            core_rng, rollout = task_seeds(7, PHASE_TEST, g)
            core = self.family.sample_core(core_rng)
            direct = run_task(self.family.mdp(core), TransitionCore.zeros(4, 4), 1.0, 15, None, rollout)
            np.testing.assert_array_equal(run.states, direct.states)
            assert run.cumulative_regret == direct.cumulative_regret
        assert record.test_lambdas == [1.0, 1.0, 1.0]

    def test_oracle_on_point_mass(self):
        """Test the oracle estimator on a point mass runs with W = M and the fixed lambda"""
        core = self.family.mean_core
        family = point_mass_family(self.family.base, core)
        record = meta_train(family, 'oracle', 0, 2, 10, rng=8, lambda_mode='fixed', lambda_value=50.0)
        for g, run in enumerate(record.test_records):
            _, rollout = task_seeds(8, PHASE_TEST, g)
            direct = run_task(family.mdp(core), core, 50.0, 10, None, rollout)
            assert run.cumulative_regret == direct.cumulative_regret
            assert run.final_bias.distance(core) == 0.0

    def test_record_shape(self):
        """Test task counts, traces and the transfer regret"""
        record = meta_train(self.family, 'low_bias', 3, 2, 10, rng=9)
        assert record.task_count == 5
        assert len(record.bias_trace) == 4
        assert len(record.epsilon_trace) == 4
        assert len(record.h_m_trace) == 3
        assert len(record.lambdas) == 5
        regrets = [r.cumulative_regret for r in record.test_records]
        assert record.transfer.mean == pytest.approx(np.mean(regrets))
        assert record.status == 'complete'
        assert record.frozen_bias is record.bias_trace[-1]

    def test_seeds_are_per_task(self):
        """Test training cores depend only on the task index"""
        short = meta_train(self.family, 'zero', 2, 1, 5, rng=10)
        long = meta_train(self.family, 'zero', 4, 1, 5, rng=10)
        for a, b in zip(short.train_cores, long.train_cores):
            np.testing.assert_array_equal(a.m, b.m)
        core_rng, _ = task_seeds(10, PHASE_TRAIN, 0)
        np.testing.assert_array_equal(short.train_cores[0].m, self.family.sample_core(core_rng).m)

    def test_explicit_cores(self):
        """Test explicit training and test cores are used as given"""
        family = orthogonal_family(3)
        record = meta_train(family, 'low_bias', 2, 1, 5, rng=0,
                            train_cores=family.cores[:2], test_cores=family.cores[2:])
        assert record.train_cores[0] is family.cores[0]
        assert record.test_cores[0] is family.cores[2]

    def test_continual_updates_on_test_tasks(self):
        """Test continual mode keeps moving the estimator during test tasks"""
        record = meta_train(self.family, 'low_bias', 2, 2, 10, rng=11, continual=True)
        assert len(record.task_grams) == 4
        assert record.frozen_bias.distance(record.bias_trace[-1]) > 0.0

    def test_parallel_test_tasks(self):
        """Test frozen test tasks give the same results with two workers"""
        serial = meta_train(self.family, 'low_bias', 2, 3, 8, rng=12)
        parallel = meta_train(self.family, 'low_bias', 2, 3, 8, rng=12, n_jobs=2)
        for a, b in zip(serial.test_records, parallel.test_records):
            np.testing.assert_array_equal(a.returns, b.returns)

    def test_abort_carries_partial_record(self):
        """Test a failing training task aborts with the finished tasks attached"""
        bad = self.family.mean_core.m.copy()
        bad[0] = [1.5, -0.5, 0.0, 0.0]
        cores = [self.family.mean_core, TransitionCore(bad)]
        with pytest.raises(MetaTrainingAborted) as excinfo:
            meta_train(self.family, 'low_bias', 2, 1, 5, rng=0, train_cores=cores)
        assert excinfo.value.task_index == 1
        assert excinfo.value.stage == 'training'
        partial = excinfo.value.partial_record
        assert partial.status == 'aborted'
        assert len(partial.train_records) == 1

    def test_worker_error_aborts_run(self):
        """Test an error raised inside a test-task worker aborts with its original type"""
        with pytest.raises(MetaTrainingAborted) as excinfo:
            meta_train(self.family, 'zero', 0, 2, 3, delta=2.0, rng=0, n_jobs=2)
        assert excinfo.value.stage == 'test'
        assert isinstance(excinfo.value.original_error, InvalidDelta)
        assert excinfo.value.partial_record.status == 'aborted'

    def test_invalid_arguments(self):
        """Test G_test = 0 and unknown lambda modes are rejected"""
        with pytest.raises(ValueError):
            meta_train(self.family, 'zero', 1, 0, 5)
        with pytest.raises(ValueError):
            meta_train(self.family, 'zero', 1, 1, 5, lambda_mode='adaptive')

    def test_make_estimator(self):
        """Test estimator kinds map to their classes"""
        assert make_estimator('low_bias', self.family).kind == EstimatorKind.LOW_BIAS
        assert make_estimator('oracle', self.family).current_w is self.family.mean_core
        assert isinstance(make_estimator('low_bias', self.family), LowBiasEstimator)
        with pytest.raises(ValueError):
            make_estimator('median', self.family)


class TestEstimationDiagnostics:
    """Test cases for epsilon, H_M and misalignment"""

    def test_oracle_has_zero_epsilon(self):
        """Test W_hat = M_bar gives epsilon = 0 throughout"""
        family = default_family()
        record = meta_train(family, 'oracle', 3, 1, 5, rng=0)
        diagnostics = estimation_diagnostics(record, family)
        assert diagnostics.epsilon == [0.0, 0.0, 0.0, 0.0]

    def test_point_mass_h_m(self):
        """Test H_M is zero on a point mass"""
        family = point_mass_family(anchor_chain_skeleton(), anchor_chain_mean_core())
        record = meta_train(family, 'zero', 4, 1, 2, rng=0)
        assert all(value == 0.0 for value in estimation_diagnostics(record, family).h_m)

    def test_h_m_is_flat_average(self):
        """Test H_M with equal task lengths is the distance to the plain average"""
        family = TaskFamily.finite_set(anchor_chain_skeleton(), random_cores(3, seed=13))
        record = meta_train(family, 'zero', 3, 1, 4, rng=1)
        expected = empirical_mean_error(record.train_cores, family.mean_core)
        assert record.h_m_trace[-1] == pytest.approx(expected, abs=1e-12)

    def test_global_ridge_misalignment(self):
        """Test global ridge reports one misalignment term per training task"""
        family = default_family()
        record = meta_train(family, 'global_ridge', 3, 1, 10, rng=2)
        diagnostics = estimation_diagnostics(record, family)
        assert len(diagnostics.misalignment) == 3
        assert all(value >= 0.0 for value in diagnostics.misalignment)
        assert diagnostics.nu_min >= -1e-12
        assert estimation_diagnostics(meta_train(family, 'zero', 2, 1, 5), family).misalignment is None

    def test_distance_to_hull_outside(self):
        """Test the distance from a point beyond a segment end is its distance to that end"""
        a, b = random_cores(2, seed=14)
        point = TransitionCore(2.0 * a.m - b.m)
        assert distance_to_hull(point, [a, b]) == pytest.approx(a.distance(b), abs=1e-4)

    @pytest.mark.slow
    def test_h_m_shrinks_with_tasks(self):
        """Test H_M at 64 tasks is below H_M at 4 tasks (median over 10 seeds)"""
        family = finite_set_from_draws(default_family(kappa=20.0), 3, np.random.default_rng(15))
        early, late = [], []
        for seed in range(10):
            record = meta_train(family, 'zero', 64, 1, 1, rng=seed)
            early.append(record.h_m_trace[3])
            late.append(record.h_m_trace[63])
        assert np.median(late) < np.median(early)

    @pytest.mark.slow
    def test_low_bias_epsilon_shrinks(self):
        """Test low-bias epsilon after 20 tasks is below epsilon after 2 (median over 10 seeds)"""
        family = default_family(kappa=100.0)
        early, late = [], []
        for seed in range(10):
            record = meta_train(family, 'low_bias', 20, 1, 50, rng=seed, lambda_mode='fixed')
            early.append(record.epsilon_trace[2])
            late.append(record.epsilon_trace[20])
        assert np.median(late) < np.median(early)

    @pytest.mark.slow
    def test_global_ridge_epsilon_shrinks_on_point_mass(self):
        """Test pooled epsilon after 16 tasks is below epsilon after 2 on a point mass"""
        family = point_mass_family(anchor_chain_skeleton(), anchor_chain_mean_core())
        early, late = [], []
        for seed in range(10):
            record = meta_train(family, 'global_ridge', 16, 1, 50, rng=seed, lambda_mode='fixed')
            early.append(record.epsilon_trace[2])
            late.append(record.epsilon_trace[16])
        assert np.median(late) < np.median(early)


if __name__ == "__main__":
    pytest.main([__file__])
