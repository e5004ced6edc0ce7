"""
Test cases for regret accounting, bound calculators and lemma checks
"""

import dataclasses
import math
import os
import sys

import numpy as np
import pytest

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.buc_agent import RunRecord, run_task
from src.evaluation import (
    LemmaCheck,
    bound_report_for_run,
    check_elliptical_potential,
    check_log_det_lemma,
    check_stale_feature_lemma,
    dvar_bound,
    high_bias_epsilon_bound,
    lemma_checks_for_run,
    low_bias_epsilon_bound,
    low_bias_mtr_bound,
    mtr_bound_thm4,
    mtr_oracle_limit,
    regret_bound_thm1,
    regret_bound_thm3,
    transfer_regret
)
from src.exceptions import IncompleteLog
from src.linear_mdp import RegularityConstants, TransitionCore
from src.meta_learner import LowBiasEstimator
from src.task_family import default_family


def make_record(regret: float) -> RunRecord:
    """One-episode record with zero return and V* = regret"""
    zeros = np.zeros(1)
    return RunRecord(
        lam=1.0, delta=0.5, radius_mode='oracle', v_star=regret, horizon=1,
        returns=zeros, expected_returns=zeros, betas=zeros,
        in_ellipsoid=np.ones(1, dtype=bool), in_weighted_ellipsoid=np.ones(1, dtype=bool),
        core_errors=zeros, lambda_mins=np.ones(1), plan_values=zeros, w_distances=zeros,
        states=np.zeros((1, 2), dtype=int), actions=np.zeros((1, 1), dtype=int),
        rewards=np.zeros((1, 1)), features=np.ones((1, 1, 1))
    )


class TestRegretBound:
    """Test cases for the single-task regret bound"""

    def setup_method(self):
        """Setup test fixtures"""
        self.unit = RegularityConstants(c_phi=1.0, c_psi=1.0, c_psi_prime=1.0, c_m=1.0)
        self.constants = RegularityConstants(c_phi=1.0, c_psi=2.0, c_psi_prime=1.0, c_m=1.0)

    def test_golden_value(self):
        """Test all-ones arguments with W = M* give 2 sqrt(5) ln 2"""
        report = regret_bound_thm3(self.unit, 1.0, 1, 1, 1, 1, 0.0)
        assert report.bound == pytest.approx(2.0 * math.sqrt(5.0) * math.log(2.0), rel=1e-12)
        assert report.D == pytest.approx(2.0)

    def test_strong_regularization_at_truth(self):
        """Test lam = 1e12 with W = M* bounds far below lam = 1"""
        strong = regret_bound_thm3(self.constants, 1e12, 400, 2, 4, 4, 0.0)
        weak = regret_bound_thm3(self.constants, 1.0, 400, 2, 4, 4, 0.0)
        assert strong.bound < weak.bound

    def test_sublinear_in_t(self):
        """Test doubling T less than doubles the bound"""
        first = regret_bound_thm3(self.constants, 1.0, 100, 2, 4, 4, 0.5)
        second = regret_bound_thm3(self.constants, 1.0, 200, 2, 4, 4, 0.5)
        assert second.bound / first.bound < 2.0

    def test_unbiased_bound(self):
        """Test the unbiased bound is the biased one at ||M*||"""
        a = regret_bound_thm1(self.constants, 1.0, 100, 2, 4, 4, 1.7)
        b = regret_bound_thm3(self.constants, 1.0, 100, 2, 4, 4, 1.7)
        assert a.bound == b.bound

    def test_components_nonnegative(self):
        """Test every reported component is nonnegative"""
        report = regret_bound_thm3(self.constants, 0.3, 50, 3, 4, 2, 0.2)
        for value in (report.bound, report.log_det, report.confidence_factor, report.growth_factor):
            assert value >= 0.0

    def test_invalid_arguments(self):
        """Test nonpositive sizes and negative distances are rejected"""
        with pytest.raises(ValueError):
            regret_bound_thm3(self.constants, 1.0, 100, 2, 4, 4, -0.1)
        with pytest.raises(ValueError):
            regret_bound_thm3(self.constants, 0.0, 100, 2, 4, 4, 0.1)
        with pytest.raises(ValueError):
            regret_bound_thm3(self.constants, 1.0, 0, 2, 4, 4, 0.1)

    def test_slack_ratio(self):
        """Test slack is the bound over the regret, infinite at zero regret"""
        report = regret_bound_thm3(self.unit, 1.0, 1, 1, 1, 1, 0.0, empirical_regret=0.5)
        assert report.slack_ratio == pytest.approx(report.bound / 0.5)
        assert report.holds
        assert regret_bound_thm3(self.unit, 1.0, 1, 1, 1, 1, 0.0, empirical_regret=0.0).slack_ratio == math.inf
        assert math.isnan(regret_bound_thm3(self.unit, 1.0, 1, 1, 1, 1, 0.0).slack_ratio)


class TestTransferBounds:
    """Test cases for meta transfer regret bounds"""

    def setup_method(self):
        """Setup test fixtures"""
        self.constants = RegularityConstants(c_phi=1.0, c_psi=2.0, c_psi_prime=1.0, c_m=1.0)

    def test_zero_variance(self):
        """Test Var_W = 0 gives DVar = 1"""
        bound = mtr_bound_thm4(self.constants, 1.0, 100, 2, 4, 4, 0.0, 0.0)
        assert bound.dvar == 1.0
        assert bound.mad_form == pytest.approx(bound.common)

    def test_mad_form_tighter(self):
        """Test the Mad form never exceeds the Var form"""
        rng = np.random.default_rng(0)
        for _ in range(100):
            distances = rng.uniform(0.0, 2.0, size=rng.integers(1, 10))
            bound = mtr_bound_thm4(self.constants, rng.uniform(0.1, 10.0), 200, 2, 4, 4,
                                   float(np.mean(distances ** 2)), float(np.mean(distances)))
            assert bound.mad_form <= bound.var_form + 1e-9

    def test_dvar_grows_with_sqrt_log(self):
        """Test 100x variance raises the DVar form by less than 10x"""
        constants = RegularityConstants(c_phi=0.001, c_psi=1.0, c_psi_prime=1.0, c_m=1.0)
        low, _ = dvar_bound(constants, 1000, 1, 1, 1, 0.01)
        high, _ = dvar_bound(constants, 1000, 1, 1, 1, 1.0)
        assert 1.0 < high / low < 10.0

    def test_oracle_limit(self):
        """Test the Var form approaches twice the limit expression as lam grows"""
        bound = mtr_bound_thm4(self.constants, 1e12, 100, 2, 2, 2, 0.5, 0.5)
        limit = mtr_oracle_limit(self.constants, 100, 2, 0.5)
        assert bound.var_form == pytest.approx(2.0 * limit, rel=1e-3)

    def test_low_bias_bound_monotone(self):
        """Test the learned-bias bound grows with epsilon"""
        small = low_bias_mtr_bound(self.constants, 1.0, 200, 2, 4, 4, 0.01, 0.0)
        large = low_bias_mtr_bound(self.constants, 1.0, 200, 2, 4, 4, 0.01, 1.0)
        assert large > small > 0.0

    def test_epsilon_bounds(self):
        """Test the sqrt(epsilon) bounds on hand-computed inputs"""
        assert low_bias_epsilon_bound(0.1, [1.0, 2.0], [4.0, 16.0]) == pytest.approx(0.6)
        assert low_bias_epsilon_bound(0.1, [], []) == pytest.approx(0.1)
        base = high_bias_epsilon_bound(0.1, self.constants, 1.0, 10.0, 4, 5, 100, 2, [0.0])
        worse = high_bias_epsilon_bound(0.1, self.constants, 1.0, 10.0, 4, 5, 100, 2, [0.3])
        assert base > 0.1
        assert worse == pytest.approx(base + 2.0 * 6 * 0.3)


class TestLemmaChecks:
    """Test cases for the numeric lemma checks"""

    def setup_method(self):
        """Setup test fixtures"""
        self.rng = np.random.default_rng(1)

    def test_single_step(self):
        """Test N = H = 1 satisfies all three checks"""
        log = np.array([[[1.0, 0.0]]])
        assert check_log_det_lemma(log, 1.0).holds
        assert check_elliptical_potential(log, 1.0).holds
        assert check_stale_feature_lemma(log, 1.0, H=1).holds

    def test_random_episodes(self):
        """Test random simplex features over 50 episodes"""
        log = self.rng.dirichlet(np.ones(4), size=(50, 3))
        assert check_log_det_lemma(log, 1.0).holds
        assert check_stale_feature_lemma(log, 1.0).holds
        log = self.rng.dirichlet(np.ones(4), size=(100, 5))
        assert check_stale_feature_lemma(log, 1.0, H=5).holds

    def test_repeated_feature(self):
        """Test the same feature at every step"""
        log = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (20, 5, 1))
        check = check_log_det_lemma(log, 1.0)
        assert check.holds
        assert check.lhs > 0.0

    def test_elliptical_potential_long_sequence(self):
        """Test 1e4 random features in d = 8"""
        flat = self.rng.dirichlet(np.ones(8), size=10000)
        assert check_elliptical_potential(flat, 1.0).holds

    def test_elliptical_potential_orthonormal_cycle(self):
        """Test cycling through an orthonormal basis"""
        flat = np.tile(np.eye(4), (25, 1))
        assert check_elliptical_potential(flat, 0.5).holds

    def test_strong_regularization(self):
        """Test lam = 1e6 drives the stale-feature sum to almost zero"""
        log = self.rng.dirichlet(np.ones(3), size=(20, 4))
        check = check_stale_feature_lemma(log, 1e6)
        assert check.holds
        assert check.lhs < 1e-4

    def test_incomplete_logs(self):
        """Test empty, non-finite, flat and mismatched logs raise IncompleteLog"""
        with pytest.raises(IncompleteLog):
            check_log_det_lemma(np.zeros((0, 2, 4)), 1.0)
        bad = np.ones((3, 2, 2))
        bad[1, 0, 0] = np.nan
        with pytest.raises(IncompleteLog):
            check_stale_feature_lemma(bad, 1.0)
        with pytest.raises(IncompleteLog):
            check_log_det_lemma(np.ones((4, 2)), 1.0)
        with pytest.raises(IncompleteLog):
            check_stale_feature_lemma(np.ones((3, 2, 2)), 1.0, H=3)
        with pytest.raises(IncompleteLog):
            check_elliptical_potential([['a', 'b']], 1.0)

    def test_tolerance(self):
        """Test a check holds within 1e-9 and fails beyond"""
        assert LemmaCheck(lhs=1.0 + 5e-10, rhs=1.0, lemma='log_det').holds
        assert not LemmaCheck(lhs=1.0 + 1e-6, rhs=1.0, lemma='log_det').holds


class TestTransferRegret:
    """Test cases for the Monte Carlo transfer regret"""

    def test_single_task(self):
        """Test one test task gives its own regret and zero error"""
        result = transfer_regret([make_record(7.5)])
        assert result.mean == 7.5
        assert result.stderr == 0.0
        assert result.n == 1

    def test_two_tasks(self):
        """Test regrets 10 and 20 average to 15 with standard error 5"""
        result = transfer_regret([make_record(10.0), make_record(20.0)])
        assert result.mean == pytest.approx(15.0)
        assert result.stderr == pytest.approx(5.0)

    def test_many_tasks(self):
        """Test the mean of 50 regrets"""
        values = np.random.default_rng(2).uniform(0.0, 30.0, size=50)
        result = transfer_regret([make_record(v) for v in values])
        assert result.mean == pytest.approx(float(np.mean(values)), abs=1e-12)
        assert result.values == pytest.approx(list(values))

    def test_empty(self):
        """Test no records is an error"""
        with pytest.raises(ValueError):
            transfer_regret([])


class TestRunChecks:
    """Test cases for checks applied to completed runs"""

    def setup_method(self):
        """Setup test fixtures"""
        family = default_family()
        self.mdp = family.mdp(family.sample_core(np.random.default_rng(4)))
        self.record = run_task(self.mdp, TransitionCore.zeros(4, 4), 1.0, 100, rng=4)

    def test_bound_dominates_run(self):
        """Test the bound holds for an unbiased run and is judged on the realized regret"""
        report = bound_report_for_run(self.record, self.mdp)
        assert report.holds
        assert report.expected_holds
        assert report.T == 200
        assert report.empirical_regret == pytest.approx(self.record.cumulative_regret)
        assert report.expected_regret == pytest.approx(self.record.expected_cumulative_regret)
        assert report.w_distance == pytest.approx(self.mdp.core.frobenius_norm)

    def test_holds_follows_realized_regret(self):
        """Test a realized shortfall above the bound fails even when the pseudo-regret is small"""
        bound = bound_report_for_run(self.record, self.mdp).bound
        unlucky = dataclasses.replace(self.record, returns=self.record.returns - bound)
        report = bound_report_for_run(unlucky, self.mdp)
        assert not report.holds
        assert report.expected_holds
        row = report.to_row()
        assert row['holds'] is False
        assert row['expected_holds'] is True

    def test_bound_uses_largest_bias_distance(self):
        """Test a bias that moves during the task is charged its worst distance to M*"""
        estimator = LowBiasEstimator(4, 4, self.mdp.horizon)
        record = run_task(self.mdp, TransitionCore.zeros(4, 4), 1.0, 30, rng=5, estimator=estimator)
        final_distance = record.final_bias.distance(self.mdp.core)
        assert record.bias_errors[0] == pytest.approx(self.mdp.core.frobenius_norm)
        assert final_distance < record.bias_errors[0]

        report = bound_report_for_run(record, self.mdp)
        assert report.w_distance == pytest.approx(float(np.max(record.bias_errors)))
        assert report.w_distance > final_distance

    def test_lemmas_hold_on_run(self):
        """Test all three lemma checks hold on the run's feature log"""
        checks = lemma_checks_for_run(self.record)
        assert [c.lemma for c in checks] == ['log_det', 'elliptical_potential', 'stale_feature']
        assert all(c.holds for c in checks)


if __name__ == "__main__":
    pytest.main([__file__])
