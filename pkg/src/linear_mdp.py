"""
Finite MDPs whose transition kernel factors through a transition core.

P(s'|s,a) = phi(s,a)^T M psi(s'), with phi stacked row-major over (s, a)
(state-major, action-minor) and psi stacked over next states.
"""
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np
from scipy import linalg

from .exceptions import DimensionMismatch, InvalidModel, OutputError, SingularKPsi
from .logging_config import get_logger
from .utils import sign_vectors

logger = get_logger(__name__)

KPSI_TOLERANCE = 1e-10
NEGATIVE_REJECT = -1e-9
ROW_SUM_REJECT = 1e-6
CORE_NEGATIVE_TOLERANCE = -1e-12
CORE_ROW_SUM_TOLERANCE = 1e-9
EXACT_C_PSI_MAX_STATES = 12


def _frozen(array: Any) -> np.ndarray:
    out = np.array(array, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Features:
    """Feature maps phi ((|S||A|) x d) and psi (|S| x d')"""
    phi: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        phi = _frozen(self.phi)
        psi = _frozen(self.psi)
        if phi.ndim != 2 or psi.ndim != 2:
            raise DimensionMismatch("feature matrices", "2-d arrays", (phi.shape, psi.shape))
        num_states = psi.shape[0]
        if num_states == 0 or phi.shape[0] % num_states != 0:
            raise DimensionMismatch("phi rows", f"a multiple of |S|={num_states}", phi.shape[0])
        object.__setattr__(self, 'phi', phi)
        object.__setattr__(self, 'psi', psi)

    @property
    def d(self) -> int:
        return self.phi.shape[1]

    @property
    def d_prime(self) -> int:
        return self.psi.shape[1]

    @property
    def num_states(self) -> int:
        return self.psi.shape[0]

    @property
    def num_actions(self) -> int:
        return self.phi.shape[0] // self.psi.shape[0]

    def row(self, state: int, action: int) -> int:
        return state * self.num_actions + action

    def phi_of(self, state: int, action: int) -> np.ndarray:
        return self.phi[self.row(state, action)]

    @cached_property
    def kpsi(self) -> np.ndarray:
        return _frozen(self.psi.T @ self.psi)

    @cached_property
    def kpsi_inv(self) -> np.ndarray:
        """K_psi^{-1} from a Cholesky factorization; raises SingularKPsi"""
        singular_values = linalg.svdvals(self.psi)
        smallest = float(singular_values[-1] ** 2) if self.d_prime <= self.num_states else 0.0
        if smallest < KPSI_TOLERANCE:
            raise SingularKPsi(smallest, KPSI_TOLERANCE)
        factor = linalg.cho_factor(self.kpsi)
        inverse = linalg.cho_solve(factor, np.eye(self.d_prime))
        condition = self.kpsi_condition
        if condition > 1e8:
            logger.warning(f"K_psi is badly conditioned (condition number {condition:.3e})")
        return _frozen(0.5 * (inverse + inverse.T))

    @property
    def kpsi_condition(self) -> float:
        return float(np.linalg.cond(self.kpsi))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'd': self.d,
            'd_prime': self.d_prime,
            'phi': self.phi.tolist(),
            'psi': self.psi.tolist()
        }


@dataclass(frozen=True, eq=False)
class TransitionCore:
    """The d x d' matrix identifying a linear-transition MDP"""
    m: np.ndarray

    def __post_init__(self):
        m = _frozen(self.m)
        if m.ndim != 2:
            raise DimensionMismatch("transition core", "a 2-d matrix", m.shape)
        object.__setattr__(self, 'm', m)

    @classmethod
    def zeros(cls, d: int, d_prime: int) -> "TransitionCore":
        return cls(np.zeros((d, d_prime)))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.m.shape

    @property
    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.m, ord='fro'))

    def distance(self, other: "TransitionCore") -> float:
        return float(np.linalg.norm(self.m - other.m, ord='fro'))


@dataclass(frozen=True)
class RegularityConstants:
    """Tight feature-regularity constants of an instance"""
    c_phi: float
    c_psi: float
    c_psi_prime: float
    c_m: float

    def to_dict(self) -> Dict[str, float]:
        return {
            'c_phi': self.c_phi,
            'c_psi': self.c_psi,
            'c_psi_prime': self.c_psi_prime,
            'c_m': self.c_m
        }


def induced_transitions(features: Features, core: TransitionCore) -> np.ndarray:
    """Raw Phi M Psi^T, one row per (s, a)"""
    if core.shape != (features.d, features.d_prime):
        raise DimensionMismatch("transition core", (features.d, features.d_prime), core.shape)
    return features.phi @ core.m @ features.psi.T


def validate_core(features: Features, core: TransitionCore) -> None:
    """
    Check the strict transition-core invariant used by the task generators

    Raises:
        InvalidModel: if an induced entry is below -1e-12 or a row sum is off by more than 1e-9
    """
    raw = induced_transitions(features, core)
    worst_entry = float(raw.min())
    worst_sum = float(np.max(np.abs(raw.sum(axis=1) - 1.0)))
    if worst_entry < CORE_NEGATIVE_TOLERANCE:
        raise InvalidModel(f"induced probability {worst_entry:.3e} is negative")
    if worst_sum > CORE_ROW_SUM_TOLERANCE:
        raise InvalidModel(f"induced row sum deviates from 1 by {worst_sum:.3e}")


@dataclass(frozen=True, eq=False)
class MdpSkeleton:
    """Everything of a linear MDP except its transition core"""
    features: Features
    reward: np.ndarray
    horizon: int
    start_state: int = 0

    def __post_init__(self):
        reward = _frozen(self.reward).reshape(-1)
        if reward.shape[0] != self.features.phi.shape[0]:
            raise DimensionMismatch("reward table", self.features.phi.shape[0], reward.shape[0])
        if np.any(reward < 0.0) or np.any(reward > 1.0):
            raise InvalidModel("rewards must lie in [0, 1]")
        if self.horizon < 1:
            raise InvalidModel(f"horizon must be at least 1, got {self.horizon}")
        if not 0 <= self.start_state < self.features.num_states:
            raise InvalidModel(f"start state {self.start_state} is not a state index")
        object.__setattr__(self, 'reward', reward)

    @property
    def num_states(self) -> int:
        return self.features.num_states

    @property
    def num_actions(self) -> int:
        return self.features.num_actions

    def reward_table(self) -> np.ndarray:
        """Rewards reshaped to (|S|, |A|)"""
        return self.reward.reshape(self.num_states, self.num_actions)

    def with_core(self, core: TransitionCore) -> "LinearMdp":
        return LinearMdp(self.features, core, self.reward, self.horizon, self.start_state)


@dataclass(frozen=True, eq=False)
class LinearMdp:
    """Episodic MDP with P = Phi M Psi^T"""
    features: Features
    core: TransitionCore
    reward: np.ndarray
    horizon: int
    start_state: int = 0

    def __post_init__(self):
        skeleton = MdpSkeleton(self.features, self.reward, self.horizon, self.start_state)
        if self.core.shape != (self.features.d, self.features.d_prime):
            raise DimensionMismatch("transition core", (self.features.d, self.features.d_prime), self.core.shape)
        object.__setattr__(self, 'reward', skeleton.reward)

    @property
    def num_states(self) -> int:
        return self.features.num_states

    @property
    def num_actions(self) -> int:
        return self.features.num_actions

    @property
    def skeleton(self) -> MdpSkeleton:
        return MdpSkeleton(self.features, self.reward, self.horizon, self.start_state)

    def reward_table(self) -> np.ndarray:
        return self.reward.reshape(self.num_states, self.num_actions)

    @cached_property
    def transition_matrix(self) -> np.ndarray:
        """
        Row-stochastic P with one row per (s, a)

        Raises:
            InvalidModel: if some raw entry is below -1e-9 or a raw row sum is off by more than 1e-6
        """
        raw = induced_transitions(self.features, self.core)
        for row_index in range(raw.shape[0]):
            row = raw[row_index]
            state, action = divmod(row_index, self.num_actions)
            if row.min() < NEGATIVE_REJECT:
                raise InvalidModel(f"raw probability {row.min():.3e} is negative", state, action)
            if abs(row.sum() - 1.0) > ROW_SUM_REJECT:
                raise InvalidModel(f"raw row sums to {row.sum():.9f}", state, action)
        clamped = np.where(raw < 0.0, 0.0, raw)
        if np.any(raw < 0.0):
            logger.debug(f"Clamped {int(np.sum(raw < 0.0))} negative probabilities to 0")
        return _frozen(clamped / clamped.sum(axis=1, keepdims=True))

    @cached_property
    def _cumulative(self) -> np.ndarray:
        cumulative = np.cumsum(self.transition_matrix, axis=1)
        cumulative[:, -1] = 1.0
        return cumulative

    def transition_distribution(self, state: int, action: int) -> np.ndarray:
        """Probability vector over next states for (state, action)"""
        self._check_indices(state, action)
        return self.transition_matrix[self.features.row(state, action)]

    def sample_next_state(self, state: int, action: int, rng: np.random.Generator) -> int:
        """Draw a next state with one uniform from rng"""
        self._check_indices(state, action)
        cumulative = self._cumulative[self.features.row(state, action)]
        return int(np.searchsorted(cumulative, rng.random(), side='right'))

    def optimal_q_values(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Exact backward dynamic programming.

        Returns:
            Tuple[np.ndarray, np.ndarray]: Q* of shape (H, |S|, |A|) and V* of
            shape (H+1, |S|); stage index 0 is the first step and V*[H] = 0.
        """
        horizon, num_states, num_actions = self.horizon, self.num_states, self.num_actions
        transitions = self.transition_matrix
        q = np.zeros((horizon, num_states, num_actions))
        v = np.zeros((horizon + 1, num_states))
        for h in range(horizon - 1, -1, -1):
            q[h] = (self.reward + transitions @ v[h + 1]).reshape(num_states, num_actions)
            v[h] = q[h].max(axis=1)
        return q, v

    def optimal_values(self) -> np.ndarray:
        """V*_h(s) for h = 0..H (the last stage is identically zero)"""
        return self.optimal_q_values()[1]

    def evaluate_policy(self, policy: np.ndarray) -> np.ndarray:
        """
        Values of a deterministic stage-dependent policy.

        Args:
            policy: Integer array of shape (H, |S|) holding the action per stage and state

        Returns:
            np.ndarray: V^pi of shape (H+1, |S|)
        """
        policy = np.asarray(policy, dtype=int)
        if policy.shape != (self.horizon, self.num_states):
            raise DimensionMismatch("policy", (self.horizon, self.num_states), policy.shape)
        rows = np.arange(self.num_states) * self.num_actions
        transitions = self.transition_matrix
        v = np.zeros((self.horizon + 1, self.num_states))
        for h in range(self.horizon - 1, -1, -1):
            chosen = rows + policy[h]
            v[h] = self.reward[chosen] + transitions[chosen] @ v[h + 1]
        return v

    def _check_indices(self, state: int, action: int) -> None:
        if not 0 <= state < self.num_states:
            raise DimensionMismatch("state index", f"0..{self.num_states - 1}", state)
        if not 0 <= action < self.num_actions:
            raise DimensionMismatch("action index", f"0..{self.num_actions - 1}", action)

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready description, including the regularity constants"""
        payload = self.features.to_dict()
        payload.update({
            'num_states': self.num_states,
            'num_actions': self.num_actions,
            'core': self.core.m.tolist(),
            'reward': self.reward.tolist(),
            'horizon': self.horizon,
            'start_state': self.start_state,
            'regularity_constants': compute_regularity_constants(self.features, self.core).to_dict()
        })
        return payload

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "LinearMdp":
        features = Features(np.array(payload['phi'], dtype=float), np.array(payload['psi'], dtype=float))
        if (features.d, features.d_prime) != (payload['d'], payload['d_prime']):
            raise DimensionMismatch("instance dimensions", (payload['d'], payload['d_prime']),
                                    (features.d, features.d_prime))
        return cls(
            features=features,
            core=TransitionCore(np.array(payload['core'], dtype=float)),
            reward=np.array(payload['reward'], dtype=float),
            horizon=int(payload['horizon']),
            start_state=int(payload['start_state'])
        )


def compute_regularity_constants(features: Features, core: TransitionCore) -> RegularityConstants:
    """
    Tight constants for the feature-regularity assumption

    c_psi is exact (sign-vector enumeration) for at most 12 states and the
    column-norm-sum upper bound beyond that.

    Raises:
        SingularKPsi: if K_psi is not invertible
    """
    c_phi = float(np.max(np.sum(features.phi ** 2, axis=1)))
    c_psi_prime = float(np.max(np.linalg.norm(features.psi @ features.kpsi_inv, axis=1)))
    if features.num_states <= EXACT_C_PSI_MAX_STATES:
        images = sign_vectors(features.num_states) @ features.psi
        c_psi = float(np.max(np.linalg.norm(images, axis=1)))
    else:
        c_psi = float(np.sum(np.linalg.norm(features.psi, axis=1)))
        logger.info(f"Using the column-norm upper bound for c_psi with {features.num_states} states")
    c_m = float(np.sum(core.m ** 2) / features.d)
    return RegularityConstants(c_phi=c_phi, c_psi=c_psi, c_psi_prime=c_psi_prime, c_m=c_m)


def check_regularity(features: Features, core: TransitionCore,
                     constants: RegularityConstants, tolerance: float = 1e-9) -> bool:
    """Whether the assumption holds for an instance with the given constants"""
    phi_ok = np.max(np.sum(features.phi ** 2, axis=1)) <= constants.c_phi + tolerance
    psi_prime_ok = np.max(np.linalg.norm(features.psi @ features.kpsi_inv, axis=1)) <= constants.c_psi_prime + tolerance
    m_ok = np.sum(core.m ** 2) <= constants.c_m * features.d + tolerance
    if features.num_states <= EXACT_C_PSI_MAX_STATES:
        images = sign_vectors(features.num_states) @ features.psi
        psi_ok = np.max(np.linalg.norm(images, axis=1)) <= constants.c_psi + tolerance
    else:
        psi_ok = True
    return bool(phi_ok and psi_prime_ok and m_ok and psi_ok)


def save_instance(mdp: LinearMdp, path: Union[str, Path]) -> Path:
    """Write an instance as JSON; floats keep full precision"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(mdp.to_dict(), indent=2), encoding='utf-8')
    except OSError as e:
        raise OutputError("instance json", str(path), e)
    logger.info(f"Instance written to {path}")
    return path


def load_instance(path: Union[str, Path]) -> LinearMdp:
    """Read an instance written by save_instance"""
    try:
        payload = json.loads(Path(path).read_text(encoding='utf-8'))
    except (OSError, ValueError) as e:
        raise OutputError("instance json", str(path), e)
    return LinearMdp.from_dict(payload)


# Canonical generators: psi one-hot (Psi = I), phi rows on the simplex,
# core rows probability vectors, so Phi M is row-stochastic by construction.

def identity_psi(num_states: int) -> np.ndarray:
    return np.eye(num_states)


def simplex_features(num_states: int, num_actions: int, d: int,
                     rng: np.random.Generator, concentration: float = 0.5) -> Features:
    """Random phi rows drawn from a symmetric Dirichlet over d anchors"""
    phi = rng.dirichlet(np.full(d, concentration), size=num_states * num_actions)
    return Features(phi, identity_psi(num_states))


def random_stochastic_core(d: int, num_states: int, rng: np.random.Generator,
                           concentration: float = 1.0) -> TransitionCore:
    """Core whose rows are Dirichlet draws over next states"""
    return TransitionCore(rng.dirichlet(np.full(num_states, concentration), size=d))


def random_linear_mdp(num_states: int, num_actions: int, d: int, horizon: int,
                      rng: np.random.Generator, start_state: int = 0) -> LinearMdp:
    """Random instance from the canonical generator with uniform rewards"""
    features = simplex_features(num_states, num_actions, d, rng)
    core = random_stochastic_core(d, num_states, rng)
    reward = rng.uniform(0.0, 1.0, size=num_states * num_actions)
    return LinearMdp(features, core, reward, horizon, start_state)


def anchor_chain_skeleton(num_states: int = 4, horizon: int = 2,
                          advance_mix: float = 0.1, start_state: int = 0) -> MdpSkeleton:
    """
    Two-action chain over anchor behaviours, one anchor per target state.

    Action 0 ("stay") uses anchor s. Action 1 ("advance") mostly uses
    anchor s+1 (cyclic) and keeps `advance_mix` weight on anchor s.
    Rewards climb linearly with the state index and do not depend on the action.
    """
    if num_states < 2:
        raise InvalidModel("an anchor chain needs at least two states")
    phi = np.zeros((num_states * 2, num_states))
    for s in range(num_states):
        phi[2 * s, s] = 1.0
        phi[2 * s + 1, (s + 1) % num_states] = 1.0 - advance_mix
        phi[2 * s + 1, s] += advance_mix
    reward = np.repeat(np.arange(num_states) / (num_states - 1), 2)
    return MdpSkeleton(Features(phi, identity_psi(num_states)), reward, horizon, start_state)


def anchor_chain_mean_core(num_states: int = 4, offset: float = 0.85) -> TransitionCore:
    """Anchor j lands on state j with probability `offset`, elsewhere uniformly"""
    if not 0.0 < offset <= 1.0:
        raise InvalidModel(f"offset must lie in (0, 1], got {offset}")
    spill = (1.0 - offset) / (num_states - 1)
    m = np.full((num_states, num_states), spill)
    np.fill_diagonal(m, offset)
    return TransitionCore(m)


def random_mean_core(d: int, num_states: int, rng: np.random.Generator,
                     offset: float = 0.85) -> TransitionCore:
    """Each anchor concentrates `offset` mass on a random target state"""
    targets = rng.integers(0, num_states, size=d)
    spill = (1.0 - offset) / (num_states - 1)
    m = np.full((d, num_states), spill)
    m[np.arange(d), targets] = offset
    return TransitionCore(m)
