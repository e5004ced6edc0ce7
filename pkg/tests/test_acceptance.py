"""
Desk-scale acceptance experiments

These run hundreds of seeded tasks; deselect with -m "not slow".
"""

import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.buc_agent import run_task
from src.config import PRESETS_DIR, ExperimentConfig
from src.core_regression import RidgeState
from src.evaluation import bound_report_for_run, lemma_checks_for_run
from src.experiment import build_scenario, run_scenario
from src.linear_mdp import TransitionCore
from src.meta_learner import meta_train
from src.task_family import default_family
from src.utils import mean_and_stderr

pytestmark = pytest.mark.slow


def assert_theory_holds(record, mdp):
    """Bound domination and all three lemma checks on one run"""
    report = bound_report_for_run(record, mdp)
    assert report.holds, f"regret {report.empirical_regret} above bound {report.bound}"
    assert report.expected_holds, f"pseudo-regret {report.expected_regret} above bound {report.bound}"
    for check in lemma_checks_for_run(record):
        assert check.holds, f"{check.lemma}: {check.lhs} > {check.rhs}"


class TestWithinTask:
    """Acceptance experiments for a single task"""

    def setup_method(self):
        """Setup test fixtures"""
        self.family = default_family()

    def sampled_mdp(self, seed: int):
        return self.family.mdp(self.family.sample_core(np.random.default_rng(10_000 + seed)))

    def test_ellipsoid_coverage(self):
        """Test M* stays in the confidence set for the whole run in at least 90% of runs"""
        covered = 0
        for seed in range(200):
            mdp = self.sampled_mdp(seed)
            record = run_task(mdp, TransitionCore.zeros(4, 4), 1.0, 200, 0.1, rng=seed)
            covered += record.always_in_ellipsoid
            assert_theory_holds(record, mdp)
        assert covered / 200 >= 0.9

    def test_estimator_consistency(self):
        """Test the core error at t = 2000 is at most half the error at t = 200"""
        early, late = [], []
        for seed in range(20):
            mdp = self.sampled_mdp(seed)
            features = mdp.features
            ridge = RidgeState.for_features(features, 1.0)
            rng = np.random.default_rng(seed)
            for t in range(1, 2001):
                state = int(rng.integers(features.num_states))
                action = int(rng.integers(features.num_actions))
                next_state = mdp.sample_next_state(state, action, rng)
                ridge.update(features.phi_of(state, action), features.psi[next_state])
                if t == 200:
                    early.append(ridge.solve().distance(mdp.core))
            late.append(ridge.solve().distance(mdp.core))
        assert np.median(late) <= 0.5 * np.median(early)

    def test_oracle_bias_collapse(self):
        """Test W = M* with lam = 1e9 cuts regret to a fifth of unbiased learning"""
        oracle_total, itrl_total, increments = 0.0, 0.0, []
        oracle_realized, itrl_realized, realized_increments = 0.0, 0.0, []
        for seed in range(20):
            mdp = self.sampled_mdp(seed)
            oracle = run_task(mdp, mdp.core, 1e9, 50, rng=seed)
            itrl = run_task(mdp, TransitionCore.zeros(4, 4), 1.0, 50, rng=seed)
            oracle_total += oracle.expected_cumulative_regret
            itrl_total += itrl.expected_cumulative_regret
            oracle_realized += oracle.cumulative_regret
            itrl_realized += itrl.cumulative_regret
            increments.append(oracle.expected_regret_increments)
            realized_increments.append(oracle.regret_increments)
            assert_theory_holds(oracle, mdp)
            assert_theory_holds(itrl, mdp)
        assert np.median(np.concatenate(increments)) <= 0.05 * 2
        assert itrl_total > 0.0
        assert oracle_total <= 0.2 * itrl_total
        assert np.median(np.concatenate(realized_increments)) <= 0.05 * 2
        assert itrl_realized > 0.0
        assert oracle_realized <= 0.2 * itrl_realized

    def test_sublinear_regret(self):
        """Test doubling the transition count less than doubles the pseudo-regret"""
        ratios = {250: [], 500: []}
        for seed in range(20):
            record = run_task(self.sampled_mdp(seed), TransitionCore.zeros(4, 4), 1.0, 2000, rng=seed)
            curve = np.cumsum(record.expected_regret_increments)
            for episodes in ratios:
                ratios[episodes].append(curve[2 * episodes - 1] / curve[episodes - 1])
        for episodes, values in ratios.items():
            assert np.median(values) < 2.0, f"ratio at {episodes} episodes"


class TestTransfer:
    """Acceptance experiments across task families"""

    def paired_gains(self, family, estimator, seeds, **kwargs):
        """Per test task ITRL regret minus estimator regret, paired on identical tasks"""
        gains = []
        for seed in seeds:
            zero = meta_train(family, 'zero', rng=seed, **kwargs)
            other = meta_train(family, estimator, rng=seed, **kwargs)
            for base, run in zip(zero.test_records, other.test_records):
                gains.append(base.cumulative_regret - run.cumulative_regret)
        return mean_and_stderr(gains)

    @pytest.mark.parametrize("estimator", ['low_bias', 'global_ridge'])
    def test_meta_transfer_gain(self, estimator):
        """Test meta-learned biases beat ITRL by two paired standard errors on a concentrated family"""
        family = default_family()
        mean, stderr = self.paired_gains(family, estimator, range(3), g_train=20, g_test=20, episodes=300,
                                         delta=0.1, lambda_mode='fixed', lambda_value=1e4)
        assert mean > 2.0 * stderr

    @pytest.mark.parametrize("estimator", ['low_bias', 'global_ridge'])
    def test_no_spurious_transfer(self, estimator):
        """Test training on three orthogonal cores does not help on the held-out fourth"""
        config = ExperimentConfig.from_file(PRESETS_DIR / 'orthogonal.ini')
        scenario = build_scenario(config)
        mean, stderr = self.paired_gains(
            scenario.family, estimator, range(3), g_train=config.run.g_train, g_test=config.run.g_test,
            episodes=config.run.episodes, delta=0.1, lambda_mode='fixed', lambda_value=1e4,
            train_cores=scenario.train_cores, test_cores=scenario.test_cores
        )
        assert mean <= 2.0 * stderr

    def test_meta_runs_satisfy_lemmas(self):
        """Test the lemma checks hold on every task of a meta-training run"""
        record = meta_train(default_family(), 'low_bias', 10, 5, 100, 0.1, rng=0)
        for run in record.records:
            for check in lemma_checks_for_run(run):
                assert check.holds


class TestPresetReproducibility:
    """Acceptance experiment for byte-identical reruns"""

    def setup_method(self):
        """Setup test fixtures"""
        self.tmp = tempfile.mkdtemp()

    def teardown_method(self):
        """Remove the temporary output directory"""
        shutil.rmtree(self.tmp, ignore_errors=True)

    def test_preset_rerun_is_identical(self):
        """Test the itrl-vs-oracle preset reproduces its CSVs and shows the oracle ahead"""
        config = ExperimentConfig.from_file(PRESETS_DIR / 'itrl-vs-oracle.ini')
        config.output.directory = self.tmp
        first = run_scenario(config, workers=2)
        snapshot = {path: path.read_bytes() for path in first.run_dir.rglob('*.csv')}
        run_scenario(config)
        for path, content in snapshot.items():
            assert Path(path).read_bytes() == content

        estimators = first.summary['estimators']
        assert estimators['oracle']['transfer_regret'] < estimators['zero']['transfer_regret']
        assert first.summary['bounds']['violations'] == 0
        assert first.summary['bounds']['expected_violations'] == 0
        assert first.summary['lemmas']['failures'] == 0


if __name__ == "__main__":
    pytest.main([__file__])
