"""
Task distributions over transition cores sharing features, rewards and horizon.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .exceptions import InvalidFamily, InvalidModel
from .linear_mdp import (
    LinearMdp, MdpSkeleton, TransitionCore, anchor_chain_mean_core, anchor_chain_skeleton,
    identity_psi, Features, validate_core
)
from .logging_config import get_logger

logger = get_logger(__name__)

DIRICHLET_FLOOR = 1e-6


class FamilyKind(str, Enum):
    ANCHOR_DIRICHLET = "anchor_dirichlet"
    FINITE_SET = "finite_set"


@dataclass(frozen=True)
class FamilyStats:
    """Var_W and Mad_W of a family around a reference core"""
    var_w: float
    mad_w: float
    reference: TransitionCore
    n_samples: int
    exact: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            'var_w': self.var_w,
            'mad_w': self.mad_w,
            'n_samples': self.n_samples,
            'exact': self.exact
        }


@dataclass(eq=False)
class TaskFamily:
    """
    Distribution over transition cores.

    AnchorDirichlet draws each core row from Dirichlet(kappa * floor(mean_row));
    FiniteSet draws one of `cores` according to `weights`.
    """
    base: MdpSkeleton
    mean_core: TransitionCore
    kind: FamilyKind
    spread: float = 1.0
    cores: List[TransitionCore] = field(default_factory=list)
    weights: Optional[np.ndarray] = None
    name: str = "family"

    def __post_init__(self):
        expected = (self.base.features.d, self.base.features.d_prime)
        if self.kind == FamilyKind.FINITE_SET:
            if not self.cores:
                raise InvalidFamily("a finite set needs at least one core")
            for core in self.cores:
                if core.shape != expected:
                    raise InvalidFamily(f"core of shape {core.shape} does not match features {expected}")
                validate_core(self.base.features, core)
            if self.weights is None:
                self.weights = np.full(len(self.cores), 1.0 / len(self.cores))
            self.weights = np.asarray(self.weights, dtype=float)
            if (self.weights.shape != (len(self.cores),) or np.any(self.weights < 0.0)
                    or abs(self.weights.sum() - 1.0) > 1e-9):
                raise InvalidFamily(f"weights {self.weights.tolist()} are not a probability vector")
        else:
            if self.spread <= 0.0:
                raise InvalidFamily(f"concentration must be positive, got {self.spread}")
            if self.mean_core.shape != expected:
                raise InvalidFamily(f"mean core of shape {self.mean_core.shape} does not match {expected}")
            rows = self.mean_core.m
            if np.any(rows < 0.0) or np.any(np.abs(rows.sum(axis=1) - 1.0) > 1e-9):
                raise InvalidFamily("mean core rows must be probability vectors")
            alphas = self.spread * np.maximum(rows, DIRICHLET_FLOOR)
            if np.any(alphas <= 0.0):
                raise InvalidFamily(f"concentration {self.spread} drives Dirichlet parameters to 0")
            if np.any(rows == 0.0):
                logger.warning(f"Zero entries of the mean core floored at {DIRICHLET_FLOOR}")

    @classmethod
    def anchor_dirichlet(cls, base: MdpSkeleton, mean_core: TransitionCore, kappa: float,
                         name: str = "anchor_dirichlet") -> "TaskFamily":
        return cls(base=base, mean_core=mean_core, kind=FamilyKind.ANCHOR_DIRICHLET, spread=kappa, name=name)

    @classmethod
    def finite_set(cls, base: MdpSkeleton, cores: Sequence[TransitionCore],
                   weights: Optional[Sequence[float]] = None, name: str = "finite_set") -> "TaskFamily":
        cores = list(cores)
        if not cores:
            raise InvalidFamily("a finite set needs at least one core")
        w = np.full(len(cores), 1.0 / len(cores)) if weights is None else np.asarray(weights, dtype=float)
        mean = np.tensordot(w, np.stack([c.m for c in cores]), axes=1) if w.shape == (len(cores),) else cores[0].m
        return cls(base=base, mean_core=TransitionCore(mean), kind=FamilyKind.FINITE_SET,
                   cores=cores, weights=w, name=name)

    @property
    def is_finite(self) -> bool:
        return self.kind == FamilyKind.FINITE_SET

    def mdp(self, core: TransitionCore) -> LinearMdp:
        return self.base.with_core(core)

    def sample_core(self, rng: np.random.Generator) -> TransitionCore:
        """Draw one transition core"""
        if self.is_finite:
            index = int(rng.choice(len(self.cores), p=self.weights))
            return self.cores[index]
        alphas = self.spread * np.maximum(self.mean_core.m, DIRICHLET_FLOOR)
        rows = np.stack([rng.dirichlet(alpha) for alpha in alphas])
        core = TransitionCore(rows)
        try:
            validate_core(self.base.features, core)
        except InvalidModel as e:
            raise InvalidFamily(f"sampled core violates the transition-core invariant: {e.reason}")
        return core

    def family_stats(self, w: TransitionCore, n_samples: int = 2000,
                     rng: Optional[np.random.Generator] = None) -> FamilyStats:
        """
        Var_W = E||M - W||_F^2 and Mad_W = E||M - W||_F

        Exact for finite sets; Monte Carlo with n_samples draws otherwise.
        """
        if self.is_finite:
            distances = np.array([core.distance(w) for core in self.cores])
            return FamilyStats(
                var_w=float(np.dot(self.weights, distances ** 2)),
                mad_w=float(np.dot(self.weights, distances)),
                reference=w,
                n_samples=len(self.cores),
                exact=True
            )
        if n_samples < 1:
            raise ValueError(f"n_samples must be at least 1, got {n_samples}")
        rng = rng if rng is not None else np.random.default_rng(0)
        distances = np.array([self.sample_core(rng).distance(w) for _ in range(n_samples)])
        return FamilyStats(
            var_w=float(np.mean(distances ** 2)),
            mad_w=float(np.mean(distances)),
            reference=w,
            n_samples=n_samples,
            exact=False
        )

    def describe(self) -> Dict[str, Any]:
        features = self.base.features
        return {
            'name': self.name,
            'kind': self.kind.value,
            'num_states': features.num_states,
            'num_actions': features.num_actions,
            'd': features.d,
            'd_prime': features.d_prime,
            'horizon': self.base.horizon,
            'spread': self.spread,
            'num_cores': len(self.cores)
        }


def sample_core(family: TaskFamily, rng: np.random.Generator) -> TransitionCore:
    return family.sample_core(rng)


def family_stats(family: TaskFamily, w: TransitionCore, n_samples: int = 2000,
                 rng: Optional[np.random.Generator] = None) -> FamilyStats:
    return family.family_stats(w, n_samples, rng)


def uniform_core(d: int, num_states: int) -> TransitionCore:
    """Core with uniform rows, the reference origin among stochastic cores"""
    return TransitionCore(np.full((d, num_states), 1.0 / num_states))


def offset_from_uniform(family: TaskFamily) -> float:
    """||M_bar - U||_F, the 'offset' of a family"""
    d, num_states = family.mean_core.shape
    return family.mean_core.distance(uniform_core(d, num_states))


def orthogonal_family(d: int, horizon: int = 2) -> TaskFamily:
    """
    d cyclic-shift cores with pairwise orthogonal columns.

    d states and d actions, Psi = I, phi(s, a) = e_{(s+a) mod d}; core k sends
    anchor i to state (i+k) mod d, so next state = (s + a + k) mod d. Reward 1
    in the last state. The optimal first action differs for every core.
    """
    if d < 2:
        raise InvalidFamily(f"orthogonal family needs d >= 2, got {d}")
    phi = np.zeros((d * d, d))
    for s in range(d):
        for a in range(d):
            phi[s * d + a, (s + a) % d] = 1.0
    reward = np.zeros(d * d)
    reward[(d - 1) * d:] = 1.0
    base = MdpSkeleton(Features(phi, identity_psi(d)), reward, horizon, 0)
    cores = [TransitionCore(np.roll(np.eye(d), k, axis=1)) for k in range(d)]
    return TaskFamily.finite_set(base, cores, name=f"orthogonal_d{d}")


def default_family(kappa: float = 200.0, offset: float = 0.85, num_states: int = 4,
                   horizon: int = 2) -> TaskFamily:
    """High-offset anchor chain with Dirichlet spread kappa"""
    base = anchor_chain_skeleton(num_states=num_states, horizon=horizon)
    return TaskFamily.anchor_dirichlet(base, anchor_chain_mean_core(num_states, offset), kappa,
                                       name=f"anchor_chain_k{kappa:g}")


def point_mass_family(base: MdpSkeleton, core: TransitionCore) -> TaskFamily:
    """The family containing a single core"""
    return TaskFamily.finite_set(base, [core], name="point_mass")


def finite_set_from_draws(family: TaskFamily, num_cores: int, rng: np.random.Generator) -> TaskFamily:
    """Equal-weight finite set of cores drawn from another family"""
    if num_cores < 1:
        raise InvalidFamily(f"need at least one core, got {num_cores}")
    cores = [family.sample_core(rng) for _ in range(num_cores)]
    return TaskFamily.finite_set(family.base, cores, name=f"{family.name}_set{num_cores}")
