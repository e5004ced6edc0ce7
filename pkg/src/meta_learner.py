"""
Meta-training over a task family with pluggable bias estimators.

Training tasks run sequentially and move the estimator; the estimator is then
frozen and scored on fresh test tasks (transfer regret). With `continual`,
test tasks keep updating the estimator as well.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import linalg, optimize

from .buc_agent import RunRecord, run_task
from .core_regression import RidgeState
from .evaluation import TransferRegret, transfer_regret
from .exceptions import EmptyHistory, LabError, MetaTrainingAborted
from .linear_mdp import Features, TransitionCore
from .logging_config import get_logger
from .task_family import TaskFamily
from .utils import (
    PHASE_CORE, PHASE_ESTIMATE, PHASE_TEST, PHASE_TRAIN, VAR_FLOOR, derive_seed_sequence, frobenius_distance
)

logger = get_logger(__name__)

LAMBDA_MODES = ("schedule", "fixed")


class EstimatorKind(str, Enum):
    ZERO = "zero"
    ORACLE = "oracle"
    LOW_BIAS = "low_bias"
    GLOBAL_RIDGE = "global_ridge"


def lambda_schedule(var_estimate: float, T: int, var_floor: float = VAR_FLOOR) -> float:
    """lam = 1 / (T max(var, floor))"""
    if T < 1:
        raise ValueError(f"T must be at least 1, got {T}")
    return 1.0 / (T * max(var_estimate, var_floor))


def plugin_variance(cores: Sequence[TransitionCore]) -> float:
    """Mean squared Frobenius distance of cores to their average"""
    if not cores:
        raise ValueError("plugin_variance needs at least one core")
    stack = np.stack([c.m for c in cores])
    return float(np.mean(np.sum((stack - stack.mean(axis=0)) ** 2, axis=(1, 2))))


def low_bias_w(prev_cores: Sequence[TransitionCore], current: TransitionCore,
               T: int, n: int, h: int, H: int) -> TransitionCore:
    """
    Weighted average of finished-task estimates and the running estimate.

    Z = T (G-1) + nH + h with G-1 = len(prev_cores); finished tasks get weight
    T / Z and the current estimate (nH + h) / Z.

    Raises:
        EmptyHistory: with no previous task and no transition yet
    """
    count = n * H + h
    z = T * len(prev_cores) + count
    if z <= 0:
        raise EmptyHistory(len(prev_cores), count)
    total = np.zeros_like(current.m)
    for core in prev_cores:
        total += (T / z) * core.m
    total += (count / z) * current.m
    return TransitionCore(total)


def global_ridge_w(pooled: "GlobalRidgeEstimator", lam: float) -> TransitionCore:
    """(V_pooled + lam I)^{-1} times the pooled moment"""
    d = pooled.pooled_gram.shape[0]
    system = pooled.pooled_gram + lam * np.eye(d)
    return TransitionCore(linalg.solve(system, pooled.pooled_moment, assume_a='pos'))


def empirical_mean_error(cores: Sequence[TransitionCore], reference: TransitionCore,
                         weights: Optional[Sequence[float]] = None) -> float:
    """||reference - weighted average of cores||_F"""
    stack = np.stack([c.m for c in cores])
    average = np.average(stack, axis=0, weights=weights)
    return frobenius_distance(reference.m, average)


def distance_to_hull(point: TransitionCore, vertices: Sequence[TransitionCore]) -> float:
    """Frobenius distance from a core to the convex hull of others"""
    stack = np.stack([v.m.ravel() for v in vertices])
    target = point.m.ravel()
    k = stack.shape[0]

    def objective(weights):
        residual = weights @ stack - target
        return float(residual @ residual)

    def gradient(weights):
        return 2.0 * stack @ (weights @ stack - target)

    result = optimize.minimize(
        objective, np.full(k, 1.0 / k), jac=gradient, method='SLSQP',
        bounds=[(0.0, 1.0)] * k,
        constraints=[{'type': 'eq', 'fun': lambda w: np.sum(w) - 1.0, 'jac': lambda w: np.ones_like(w)}],
        options={'ftol': 1e-14, 'maxiter': 500}
    )
    return float(np.sqrt(max(result.fun, 0.0)))


class BiasEstimator:
    """Base estimator: holds the current bias and ignores observations"""
    kind: EstimatorKind = EstimatorKind.ZERO

    def __init__(self, d: int, d_prime: int):
        self.d = d
        self.d_prime = d_prime
        self.current_w = TransitionCore.zeros(d, d_prime)
        self.frozen = False

    def refresh(self, ridge: RidgeState) -> TransitionCore:
        return self.current_w

    def observe(self, phi: np.ndarray, psi_next: np.ndarray) -> None:
        pass

    def end_task(self, ridge: RidgeState) -> None:
        pass

    def freeze(self) -> TransitionCore:
        self.frozen = True
        return self.current_w


class ZeroEstimator(BiasEstimator):
    kind = EstimatorKind.ZERO


class OracleEstimator(BiasEstimator):
    kind = EstimatorKind.ORACLE

    def __init__(self, core: TransitionCore):
        super().__init__(*core.shape)
        self.current_w = core


class LowBiasEstimator(BiasEstimator):
    """Transition-weighted average of per-task estimates, refreshed each episode"""
    kind = EstimatorKind.LOW_BIAS

    def __init__(self, d: int, d_prime: int, horizon: int, initial: Optional[TransitionCore] = None):
        super().__init__(d, d_prime)
        self.horizon = horizon
        self.initial = initial if initial is not None else TransitionCore.zeros(d, d_prime)
        self.current_w = self.initial
        self.task_estimates: List[TransitionCore] = []
        self.task_length = 0

    def refresh(self, ridge: RidgeState) -> TransitionCore:
        if self.frozen:
            return self.current_w
        if not self.task_estimates and ridge.t == 0:
            self.current_w = self.initial
        else:
            n, h = divmod(ridge.t, self.horizon)
            self.current_w = low_bias_w(self.task_estimates, ridge.solve(), self.task_length, n, h, self.horizon)
        return self.current_w

    def end_task(self, ridge: RidgeState) -> None:
        if self.frozen:
            return
        if self.task_estimates and ridge.t != self.task_length:
            raise ValueError(f"tasks must share one length T: got {ridge.t} transitions, expected {self.task_length}")
        self.task_estimates.append(ridge.solve())
        self.task_length = ridge.t
        self.current_w = low_bias_w(self.task_estimates, self.current_w, self.task_length, 0, 0, self.horizon)


class GlobalRidgeEstimator(BiasEstimator):
    """Unbiased ridge regression pooled over every transition seen so far"""
    kind = EstimatorKind.GLOBAL_RIDGE

    def __init__(self, features: Features, ridge_lambda: float = 1.0):
        super().__init__(features.d, features.d_prime)
        self.ridge_lambda = ridge_lambda
        self.kpsi_inv = features.kpsi_inv
        self.pooled_gram = np.zeros((self.d, self.d))
        self.pooled_moment = np.zeros((self.d, self.d_prime))
        self.task_grams: List[np.ndarray] = []
        self.task_estimates: List[TransitionCore] = []
        self.task_lengths: List[int] = []

    def refresh(self, ridge: RidgeState) -> TransitionCore:
        if not self.frozen:
            self.current_w = global_ridge_w(self, self.ridge_lambda)
        return self.current_w

    def observe(self, phi: np.ndarray, psi_next: np.ndarray) -> None:
        if self.frozen:
            return
        self.pooled_gram += np.outer(phi, phi)
        self.pooled_moment += np.outer(phi, self.kpsi_inv @ psi_next)

    def end_task(self, ridge: RidgeState) -> None:
        if self.frozen:
            return
        self.task_grams.append(ridge.gram.copy())
        self.task_estimates.append(ridge.solve())
        self.task_lengths.append(ridge.t)
        self.current_w = global_ridge_w(self, self.ridge_lambda)


def make_estimator(kind: str, family: TaskFamily, pooled_lambda: float = 1.0) -> BiasEstimator:
    kind = EstimatorKind(kind)
    features = family.base.features
    if kind == EstimatorKind.ZERO:
        return ZeroEstimator(features.d, features.d_prime)
    if kind == EstimatorKind.ORACLE:
        return OracleEstimator(family.mean_core)
    if kind == EstimatorKind.LOW_BIAS:
        return LowBiasEstimator(features.d, features.d_prime, family.base.horizon)
    return GlobalRidgeEstimator(features, pooled_lambda)


@dataclass
class MetaRunRecord:
    """Everything produced by one meta-training run"""
    estimator: str
    lambda_mode: str
    train_records: List[RunRecord] = field(default_factory=list)
    test_records: List[RunRecord] = field(default_factory=list)
    train_cores: List[TransitionCore] = field(default_factory=list)
    test_cores: List[TransitionCore] = field(default_factory=list)
    bias_trace: List[TransitionCore] = field(default_factory=list)
    epsilon_trace: List[float] = field(default_factory=list)
    h_m_trace: List[float] = field(default_factory=list)
    train_lambdas: List[float] = field(default_factory=list)
    test_lambdas: List[float] = field(default_factory=list)
    frozen_bias: Optional[TransitionCore] = None
    transfer: Optional[TransferRegret] = None
    expected_transfer: Optional[TransferRegret] = None
    task_grams: List[np.ndarray] = field(default_factory=list)
    pooled_gram: Optional[np.ndarray] = None
    pooled_lambda: float = 1.0
    status: str = "complete"
    error: Optional[str] = None

    @property
    def records(self) -> List[RunRecord]:
        return self.train_records + self.test_records

    @property
    def task_count(self) -> int:
        return len(self.train_records) + len(self.test_records)

    @property
    def lambdas(self) -> List[float]:
        return self.train_lambdas + self.test_lambdas

    def to_summary(self) -> Dict[str, Any]:
        return {
            'estimator': self.estimator,
            'lambda_mode': self.lambda_mode,
            'status': self.status,
            'error': self.error,
            'train_regrets': [r.cumulative_regret for r in self.train_records],
            'test_regrets': [r.cumulative_regret for r in self.test_records],
            'test_expected_regrets': [r.expected_cumulative_regret for r in self.test_records],
            'epsilon': list(self.epsilon_trace),
            'h_m': list(self.h_m_trace),
            'train_lambdas': list(self.train_lambdas),
            'test_lambdas': list(self.test_lambdas),
            'transfer_regret': self.transfer.to_dict() if self.transfer else None,
            'expected_transfer_regret': self.expected_transfer.to_dict() if self.expected_transfer else None
        }


@dataclass
class EstimationDiagnostics:
    """epsilon per finished task, H_M trace and, for global ridge, misalignment terms"""
    epsilon: List[float]
    h_m: List[float]
    misalignment: Optional[List[float]] = None
    nu_min: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'epsilon': self.epsilon,
            'h_m': self.h_m,
            'misalignment': self.misalignment,
            'nu_min': self.nu_min
        }


def _oracle_variance(family: TaskFamily, seed: int) -> float:
    rng = np.random.default_rng(derive_seed_sequence(seed, PHASE_ESTIMATE))
    return family.family_stats(family.mean_core, n_samples=2000, rng=rng).var_w


def task_seeds(seed: int, phase: int, index: int):
    """(core-draw generator, rollout seed sequence) of one task"""
    core_rng = np.random.default_rng(derive_seed_sequence(seed, PHASE_CORE, phase, index))
    rollout = derive_seed_sequence(seed, phase, index)
    return core_rng, rollout


def meta_train(family: TaskFamily, estimator_kind: str, g_train: int, g_test: int, episodes: int,
               delta: Optional[float] = None, rng: int = 0, *,
               lambda_mode: str = "schedule", lambda_value: float = 1.0, train_lambda: float = 1.0,
               pooled_lambda: float = 1.0, radius_mode: str = "oracle", continual: bool = False,
               train_cores: Optional[Sequence[TransitionCore]] = None,
               test_cores: Optional[Sequence[TransitionCore]] = None,
               test_family: Optional[TaskFamily] = None, n_jobs: int = 1) -> MetaRunRecord:
    """
    Train a bias estimator on G_train tasks and score it on G_test tasks

    Args:
        family: Training distribution (and test distribution unless test_family is given)
        estimator_kind: 'zero', 'oracle', 'low_bias' or 'global_ridge'
        g_train: Number of training tasks
        g_test: Number of test tasks
        episodes: Episodes N per task
        delta: Confidence parameter (1/(NH) when omitted)
        rng: Integer seed; task t of phase p uses streams keyed by (p, t)
        lambda_mode: 'schedule' (lam = 1/(T Var)) or 'fixed'
        lambda_value: Test-task lambda in fixed mode (and oracle lambda)
        train_lambda: Training-task lambda in fixed mode, and before two estimates exist
        pooled_lambda: Regularization of the pooled global ridge solve
        radius_mode: Confidence radius mode passed to run_task
        continual: Keep updating the estimator on test tasks
        train_cores: Explicit training cores instead of sampling
        test_cores: Explicit test cores instead of sampling
        test_family: Distribution of test tasks (defaults to family)
        n_jobs: Workers for the frozen test tasks

    Returns:
        MetaRunRecord: Per-task records and diagnostics

    Raises:
        MetaTrainingAborted: if a task fails; carries the partial record
    """
    if g_train < 0 or g_test < 1 or episodes < 1:
        raise ValueError(f"need G_train >= 0, G_test >= 1, N >= 1; got {g_train}, {g_test}, {episodes}")
    if lambda_mode not in LAMBDA_MODES:
        raise ValueError(f"lambda_mode must be one of {LAMBDA_MODES}, got {lambda_mode!r}")
    if train_cores is not None and len(train_cores) != g_train:
        raise ValueError(f"{len(train_cores)} training cores given for G_train={g_train}")
    if test_cores is not None and len(test_cores) != g_test:
        raise ValueError(f"{len(test_cores)} test cores given for G_test={g_test}")

    kind = EstimatorKind(estimator_kind)
    test_family = test_family or family
    horizon = family.base.horizon
    T = episodes * horizon
    estimator = make_estimator(kind, family, pooled_lambda)
    record = MetaRunRecord(estimator=kind.value, lambda_mode=lambda_mode, pooled_lambda=pooled_lambda)
    record.bias_trace.append(estimator.current_w)
    record.epsilon_trace.append(estimator.current_w.distance(family.mean_core) ** 2)

    oracle_var = None
    if kind == EstimatorKind.ORACLE and lambda_mode == "schedule":
        oracle_var = _oracle_variance(family, rng)

    def task_lambda(training: bool) -> float:
        if kind == EstimatorKind.ZERO:
            return 1.0
        if kind == EstimatorKind.ORACLE:
            return lambda_schedule(oracle_var, T) if lambda_mode == "schedule" else lambda_value
        if lambda_mode == "fixed":
            return train_lambda if training else lambda_value
        estimates = getattr(estimator, 'task_estimates', [])
        if len(estimates) < 2:
            return train_lambda
        return lambda_schedule(plugin_variance(estimates), T)

    logger.info(f"Meta-training '{kind.value}' on {family.name}: G_train={g_train}, G_test={g_test}, N={episodes}")

    for g in range(g_train):
        try:
            core_rng, rollout = task_seeds(rng, PHASE_TRAIN, g)
            core = train_cores[g] if train_cores is not None else family.sample_core(core_rng)
            lam = task_lambda(training=True)
            run = run_task(family.mdp(core), estimator.current_w, lam, episodes, delta, rollout,
                           radius_mode=radius_mode, estimator=estimator)
        except LabError as e:
            record.status, record.error = "aborted", str(e)
            raise MetaTrainingAborted("training", g, record, e)
        record.train_cores.append(core)
        record.train_records.append(run)
        record.train_lambdas.append(lam)
        record.task_grams.append(run.gram)
        record.bias_trace.append(estimator.current_w)
        record.epsilon_trace.append(estimator.current_w.distance(family.mean_core) ** 2)
        record.h_m_trace.append(empirical_mean_error(
            record.train_cores, family.mean_core, [r.transitions for r in record.train_records]))
        logger.debug(f"training task {g + 1}/{g_train}: regret {run.cumulative_regret:.3f}, "
                     f"epsilon {record.epsilon_trace[-1]:.5f}, lambda {lam:.4g}")

    if not continual:
        record.frozen_bias = estimator.freeze()
    lam_test = task_lambda(training=False)

    draws = []
    for g in range(g_test):
        core_rng, rollout = task_seeds(rng, PHASE_TEST, g)
        core = test_cores[g] if test_cores is not None else test_family.sample_core(core_rng)
        draws.append((core, rollout))

    if continual:
        for g, (core, rollout) in enumerate(draws):
            lam = task_lambda(training=True)
            try:
                run = run_task(test_family.mdp(core), estimator.current_w, lam, episodes, delta, rollout,
                               radius_mode=radius_mode, estimator=estimator)
            except LabError as e:
                record.status, record.error = "aborted", str(e)
                raise MetaTrainingAborted("test", g, record, e)
            record.test_cores.append(core)
            record.test_records.append(run)
            record.test_lambdas.append(lam)
            record.task_grams.append(run.gram)
        record.frozen_bias = estimator.freeze()
    else:
        frozen = record.frozen_bias
        try:
            runs = Parallel(n_jobs=n_jobs)(
                delayed(run_task)(test_family.mdp(core), frozen, lam_test, episodes, delta, rollout,
                                  radius_mode=radius_mode)
                for core, rollout in draws
            )
        except LabError as e:
            record.status, record.error = "aborted", str(e)
            raise MetaTrainingAborted("test", len(record.test_records), record, e)
        for (core, _), run in zip(draws, runs):
            record.test_cores.append(core)
            record.test_records.append(run)
            record.test_lambdas.append(lam_test)

    if isinstance(estimator, GlobalRidgeEstimator):
        record.pooled_gram = estimator.pooled_gram.copy()

    record.transfer = transfer_regret(record.test_records)
    record.expected_transfer = transfer_regret(record.test_records, expected=True)
    logger.info(f"'{kind.value}' transfer regret {record.transfer.mean:.3f} +/- {record.transfer.stderr:.3f}")
    return record


def estimation_diagnostics(record: MetaRunRecord, family: TaskFamily) -> EstimationDiagnostics:
    """
    epsilon = ||M_bar - W_hat||_F^2 after each finished training task, the
    H_M trace ||M_bar - average of observed cores||_F, and for global ridge
    H~(g) = ||M_g - average of M_1..M_g||_F * sigma_max(V_g (V_pooled + lam I)^{-1})
    together with nu_min = lambda_min(V_pooled).
    """
    epsilon = [core.distance(family.mean_core) ** 2 for core in record.bias_trace]
    lengths = [r.transitions for r in record.train_records]
    h_m = [
        empirical_mean_error(record.train_cores[:g], family.mean_core, lengths[:g])
        for g in range(1, len(record.train_cores) + 1)
    ]
    misalignment = None
    nu_min = None
    if record.estimator == EstimatorKind.GLOBAL_RIDGE.value and record.pooled_gram is not None:
        d = record.pooled_gram.shape[0]
        pooled_inv = linalg.inv(record.pooled_gram + record.pooled_lambda * np.eye(d))
        misalignment = []
        for g, core in enumerate(record.train_cores):
            h_g = empirical_mean_error(record.train_cores[:g + 1], core, lengths[:g + 1])
            sigma = float(linalg.svdvals(record.task_grams[g] @ pooled_inv)[0])
            misalignment.append(h_g * sigma)
        nu_min = float(linalg.eigvalsh(record.pooled_gram)[0])
    return EstimationDiagnostics(epsilon=epsilon, h_m=h_m, misalignment=misalignment, nu_min=nu_min)
