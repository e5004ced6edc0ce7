"""
Within-task optimistic planning and episode loop for biased matrix RL.

Stages are zero-based throughout: stage h in code is step h+1 of an episode,
and value tables carry an extra terminal stage H that is identically zero.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Protocol

import numpy as np

from .core_regression import (
    ConfidenceEllipsoid, RidgeState, assumption_w_distance, ellipsoid_radius
)
from .linear_mdp import LinearMdp, MdpSkeleton, TransitionCore, compute_regularity_constants
from .logging_config import get_logger
from .utils import SeedLike, episode_generator

logger = get_logger(__name__)

RADIUS_MODES = ("oracle", "assumption")
EPISODE_COLUMNS = [
    'episode', 'return', 'v_star', 'regret_increment', 'cum_regret', 'beta',
    'in_ellipsoid', 'core_error', 'lambda_min',
    'expected_return', 'expected_regret_increment', 'in_weighted_ellipsoid',
    'plan_value', 'w_distance'
]


class BiasSchedule(Protocol):
    """Hooks through which a meta-learner steers the bias inside a task"""

    def refresh(self, ridge: RidgeState) -> TransitionCore:
        ...

    def observe(self, phi: np.ndarray, psi_next: np.ndarray) -> None:
        ...

    def end_task(self, ridge: RidgeState) -> None:
        ...


@dataclass
class OptimisticPlan:
    """Clipped optimistic Q and V tables for one episode"""
    q: np.ndarray
    v: np.ndarray
    bonus_scale: float
    clipped: np.ndarray

    @property
    def horizon(self) -> int:
        return self.q.shape[0]

    def greedy_policy(self) -> np.ndarray:
        """(H, |S|) greedy actions, lowest index on ties"""
        return np.argmax(self.q, axis=2)


def build_optimistic_q(m_hat: TransitionCore, beta: float, ridge: RidgeState,
                       skeleton: MdpSkeleton, c_psi: Optional[float] = None) -> OptimisticPlan:
    """
    Backward recursion

        Q_h(s,a) = clip(r + phi^T M_hat Psi^T V_{h+1} + beta ||phi||_{V^-1} C_psi ||V_{h+1}||_inf, 0, H)

    Args:
        m_hat: Centre of the confidence ball
        beta: Ball radius
        ridge: Regression state providing (V_lambda)^{-1}
        skeleton: Features, rewards and horizon
        c_psi: Operator-norm constant of Psi^T (computed from the features if omitted)
    """
    if beta < 0.0:
        raise ValueError(f"beta must be nonnegative, got {beta}")
    features = skeleton.features
    if c_psi is None:
        c_psi = compute_regularity_constants(features, m_hat).c_psi
    horizon, num_states, num_actions = skeleton.horizon, skeleton.num_states, skeleton.num_actions

    model = features.phi @ m_hat.m @ features.psi.T
    widths = np.sqrt(np.maximum(np.einsum('ij,jk,ik->i', features.phi, ridge.v_lambda_inv, features.phi), 0.0))
    bonus_per_row = beta * widths * c_psi

    q = np.zeros((horizon, num_states, num_actions))
    v = np.zeros((horizon + 1, num_states))
    clipped = np.zeros((horizon, num_states, num_actions), dtype=bool)
    for h in range(horizon - 1, -1, -1):
        v_next = v[h + 1]
        raw = skeleton.reward + model @ v_next + bonus_per_row * np.max(np.abs(v_next))
        bounded = np.clip(raw, 0.0, float(horizon))
        clipped[h] = (bounded != raw).reshape(num_states, num_actions)
        q[h] = bounded.reshape(num_states, num_actions)
        v[h] = q[h].max(axis=1)
    return OptimisticPlan(q=q, v=v, bonus_scale=float(beta), clipped=clipped)


def greedy_action(plan: OptimisticPlan, state: int, stage: int) -> int:
    """argmax_a Q_stage(state, a), lowest index on ties"""
    return int(np.argmax(plan.q[stage, state]))


@dataclass
class RunRecord:
    """Per-episode statistics and the full trajectory of one task"""
    lam: float
    delta: float
    radius_mode: str
    v_star: float
    horizon: int
    returns: np.ndarray
    expected_returns: np.ndarray
    betas: np.ndarray
    in_ellipsoid: np.ndarray
    in_weighted_ellipsoid: np.ndarray
    core_errors: np.ndarray
    lambda_mins: np.ndarray
    plan_values: np.ndarray
    w_distances: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    features: np.ndarray
    final_estimate: Optional[TransitionCore] = None
    final_bias: Optional[TransitionCore] = None
    gram: Optional[np.ndarray] = None
    bias_errors: Optional[np.ndarray] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def episodes(self) -> int:
        return int(self.returns.shape[0])

    @property
    def regret_increments(self) -> np.ndarray:
        return self.v_star - self.returns

    @property
    def regret_curve(self) -> np.ndarray:
        return np.cumsum(self.regret_increments)

    @property
    def cumulative_regret(self) -> float:
        """N V*(s0) minus the realized returns"""
        return float(self.episodes * self.v_star - np.sum(self.returns))

    @property
    def expected_regret_increments(self) -> np.ndarray:
        return self.v_star - self.expected_returns

    @property
    def expected_cumulative_regret(self) -> float:
        """Sum of V*(s0) - V^{pi_n}(s0) over episodes"""
        return float(np.sum(self.expected_regret_increments))

    @property
    def always_in_ellipsoid(self) -> bool:
        return bool(np.all(self.in_ellipsoid))

    @property
    def transitions(self) -> int:
        return self.episodes * self.horizon

    def episode_rows(self) -> List[Dict[str, Any]]:
        """One dict per episode, keyed by EPISODE_COLUMNS"""
        curve = self.regret_curve
        increments = self.regret_increments
        expected = self.expected_regret_increments
        rows = []
        for n in range(self.episodes):
            rows.append({
                'episode': n + 1,
                'return': float(self.returns[n]),
                'v_star': float(self.v_star),
                'regret_increment': float(increments[n]),
                'cum_regret': float(curve[n]),
                'beta': float(self.betas[n]),
                'in_ellipsoid': bool(self.in_ellipsoid[n]),
                'core_error': float(self.core_errors[n]),
                'lambda_min': float(self.lambda_mins[n]),
                'expected_return': float(self.expected_returns[n]),
                'expected_regret_increment': float(expected[n]),
                'in_weighted_ellipsoid': bool(self.in_weighted_ellipsoid[n]),
                'plan_value': float(self.plan_values[n]),
                'w_distance': float(self.w_distances[n])
            })
        return rows

    def to_summary(self) -> Dict[str, Any]:
        return {
            'episodes': self.episodes,
            'horizon': self.horizon,
            'lambda': self.lam,
            'delta': self.delta,
            'radius_mode': self.radius_mode,
            'v_star': self.v_star,
            'cumulative_regret': self.cumulative_regret,
            'expected_cumulative_regret': self.expected_cumulative_regret,
            'always_in_ellipsoid': self.always_in_ellipsoid
        }


def default_delta(episodes: int, horizon: int) -> float:
    """1/(NH), or 1/2 for a single transition"""
    transitions = episodes * horizon
    return 1.0 / transitions if transitions > 1 else 0.5


def run_task(mdp: LinearMdp, bias: TransitionCore, lam: float, episodes: int,
             delta: Optional[float] = None, rng: SeedLike = 0, *,
             radius_mode: str = "oracle", estimator: Optional[BiasSchedule] = None) -> RunRecord:
    """
    Run the within-task loop for `episodes` episodes

    Each episode builds the optimistic plan from the current estimate and
    radius, acts greedily for H steps, and feeds every transition to the
    regression. With an estimator, the bias is refreshed at every episode start.

    Args:
        mdp: Task to solve
        bias: Initial bias core W
        lam: Regularization strength
        episodes: Number of episodes N
        delta: Confidence parameter (1/(NH) when omitted)
        rng: Generator, or a seed / SeedSequence split into one stream per episode
        radius_mode: 'oracle' uses ||W - M*||_F, 'assumption' uses ||W||_F + sqrt(C_M d)
        estimator: Optional bias schedule driving W inside the task

    Returns:
        RunRecord: Per-episode statistics and trajectory
    """
    if episodes < 1:
        raise ValueError(f"episodes must be at least 1, got {episodes}")
    if radius_mode not in RADIUS_MODES:
        raise ValueError(f"radius_mode must be one of {RADIUS_MODES}, got {radius_mode!r}")
    delta = default_delta(episodes, mdp.horizon) if delta is None else delta

    features = mdp.features
    skeleton = mdp.skeleton
    horizon, start = mdp.horizon, mdp.start_state
    constants = compute_regularity_constants(features, mdp.core)
    v_star = float(mdp.optimal_values()[0, start])
    ridge = RidgeState.for_features(features, lam, bias)

    returns = np.zeros(episodes)
    expected_returns = np.zeros(episodes)
    betas = np.zeros(episodes)
    in_ellipsoid = np.zeros(episodes, dtype=bool)
    in_weighted = np.zeros(episodes, dtype=bool)
    core_errors = np.zeros(episodes)
    lambda_mins = np.zeros(episodes)
    plan_values = np.zeros(episodes)
    w_distances = np.zeros(episodes)
    bias_errors = np.zeros(episodes)
    states = np.zeros((episodes, horizon + 1), dtype=int)
    actions = np.zeros((episodes, horizon), dtype=int)
    rewards = np.zeros((episodes, horizon))
    phis = np.zeros((episodes, horizon, features.d))

    logger.debug(f"Running {episodes} episodes with lambda={lam:g}, delta={delta:g}, radius={radius_mode}")
    for n in range(episodes):
        episode_rng = episode_generator(rng, n)
        if estimator is not None:
            ridge.set_bias(estimator.refresh(ridge))

        m_hat = ridge.solve()
        if radius_mode == "oracle":
            w_distance = ridge.bias.distance(mdp.core)
        else:
            w_distance = assumption_w_distance(ridge.bias, constants, features.d)
        beta = ellipsoid_radius(ridge, delta, constants, w_distance)
        plan = build_optimistic_q(m_hat, beta, ridge, skeleton, constants.c_psi)
        ellipsoid = ConfidenceEllipsoid(m_hat, beta, delta)

        betas[n] = beta
        w_distances[n] = w_distance
        bias_errors[n] = ridge.bias.distance(mdp.core)
        core_errors[n] = m_hat.distance(mdp.core)
        in_ellipsoid[n] = ellipsoid.contains(mdp.core)
        in_weighted[n] = ellipsoid.contains_weighted(mdp.core, ridge.v_lambda)
        lambda_mins[n] = ridge.lambda_min()
        plan_values[n] = plan.v[0, start]
        expected_returns[n] = mdp.evaluate_policy(plan.greedy_policy())[0, start]

        state = start
        states[n, 0] = state
        for h in range(horizon):
            action = greedy_action(plan, state, h)
            phi = features.phi_of(state, action)
            next_state = mdp.sample_next_state(state, action, episode_rng)
            psi_next = features.psi[next_state]
            ridge.update(phi, psi_next)
            if estimator is not None:
                estimator.observe(phi, psi_next)
            actions[n, h] = action
            rewards[n, h] = mdp.reward[features.row(state, action)]
            phis[n, h] = phi
            state = next_state
            states[n, h + 1] = state
        returns[n] = rewards[n].sum()

        if n % 100 == 0:
            logger.debug(f"episode {n + 1}: beta={beta:.4f}, regret={v_star - returns[n]:.4f}")

    if estimator is not None:
        estimator.end_task(ridge)

    record = RunRecord(
        lam=float(lam), delta=float(delta), radius_mode=radius_mode, v_star=v_star, horizon=horizon,
        returns=returns, expected_returns=expected_returns, betas=betas,
        in_ellipsoid=in_ellipsoid, in_weighted_ellipsoid=in_weighted, core_errors=core_errors,
        lambda_mins=lambda_mins, plan_values=plan_values, w_distances=w_distances,
        states=states, actions=actions, rewards=rewards, features=phis,
        final_estimate=ridge.solve(), final_bias=ridge.bias, gram=ridge.gram.copy(), bias_errors=bias_errors
    )
    logger.debug(f"Task finished: cumulative regret {record.cumulative_regret:.4f}")
    return record
