"""
Recursive biased matrix ridge regression of the transition core.

The state keeps the bias-independent moments V = sum phi phi^T and
S = sum phi psi^T K_psi^{-1}; the biased estimate

    M_hat = W + (V + lam I)^{-1} (S - V W)

is materialised on demand, so W may change between episodes without replay.
"""
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np
from scipy import linalg

from .exceptions import DimensionMismatch, InvalidDelta
from .linear_mdp import Features, RegularityConstants, TransitionCore
from .logging_config import get_logger

logger = get_logger(__name__)

REFRESH_INTERVAL = 500


class RidgeState:
    """Running design matrix, its inverse and the regression moments for one task"""

    def __init__(self, d: int, d_prime: int, lam: float, kpsi_inv: np.ndarray,
                 bias: Optional[TransitionCore] = None):
        if lam <= 0.0:
            raise ValueError(f"regularization strength must be positive, got {lam}")
        kpsi_inv = np.asarray(kpsi_inv, dtype=float)
        if kpsi_inv.shape != (d_prime, d_prime):
            raise DimensionMismatch("K_psi inverse", (d_prime, d_prime), kpsi_inv.shape)
        self.d = d
        self.d_prime = d_prime
        self.lam = float(lam)
        self.kpsi_inv = kpsi_inv
        self.gram = np.zeros((d, d))
        self.v_lambda = self.lam * np.eye(d)
        self.v_lambda_inv = np.eye(d) / self.lam
        self.moment = np.zeros((d, d_prime))
        self.t = 0
        self.bias_w = np.zeros((d, d_prime))
        if bias is not None:
            self.set_bias(bias)

    @classmethod
    def for_features(cls, features: Features, lam: float,
                     bias: Optional[TransitionCore] = None) -> "RidgeState":
        return cls(features.d, features.d_prime, lam, features.kpsi_inv, bias)

    def set_bias(self, bias: TransitionCore) -> None:
        if bias.shape != (self.d, self.d_prime):
            raise DimensionMismatch("bias core", (self.d, self.d_prime), bias.shape)
        self.bias_w = np.array(bias.m, dtype=float)

    @property
    def bias(self) -> TransitionCore:
        return TransitionCore(self.bias_w)

    @property
    def cross(self) -> np.ndarray:
        """sum phi (psi^T K_psi^{-1} - phi^T W) for the current W"""
        return self.moment - self.gram @ self.bias_w

    def update(self, phi: np.ndarray, psi_next: np.ndarray) -> "RidgeState":
        """Add one observed transition"""
        phi = np.asarray(phi, dtype=float)
        psi_next = np.asarray(psi_next, dtype=float)
        if phi.shape != (self.d,):
            raise DimensionMismatch("phi", (self.d,), phi.shape)
        if psi_next.shape != (self.d_prime,):
            raise DimensionMismatch("psi", (self.d_prime,), psi_next.shape)

        outer = np.outer(phi, phi)
        self.gram += outer
        self.v_lambda += outer
        self.moment += np.outer(phi, self.kpsi_inv @ psi_next)

        # Sherman-Morrison on the symmetric inverse
        v_phi = self.v_lambda_inv @ phi
        self.v_lambda_inv -= np.outer(v_phi, v_phi) / (1.0 + phi @ v_phi)
        self.t += 1

        if self.t % REFRESH_INTERVAL == 0:
            self.refresh_inverse()
        return self

    def refresh_inverse(self) -> None:
        """Replace the rank-one maintained inverse by a fresh SPD inversion"""
        drift = float(np.linalg.norm(self.v_lambda @ self.v_lambda_inv - np.eye(self.d), ord='fro'))
        inverse = linalg.cho_solve(linalg.cho_factor(self.v_lambda), np.eye(self.d))
        self.v_lambda_inv = 0.5 * (inverse + inverse.T)
        logger.debug(f"Refreshed inverse after {self.t} updates (drift {drift:.2e})")

    def solve(self) -> TransitionCore:
        """Biased ridge estimate M_hat = W + V_lambda^{-1} cross"""
        return TransitionCore(self.bias_w + self.v_lambda_inv @ self.cross)

    def weighted_norm(self, phi: np.ndarray) -> float:
        """||phi|| in the V_lambda^{-1} norm"""
        return float(math.sqrt(max(phi @ self.v_lambda_inv @ phi, 0.0)))

    def lambda_min(self) -> float:
        return float(linalg.eigvalsh(self.v_lambda)[0])

    def to_dict(self) -> Dict[str, Any]:
        """Snapshot for checkpointing"""
        return {
            'v_lambda': self.v_lambda.tolist(),
            'cross': self.cross.tolist(),
            'bias_w': self.bias_w.tolist(),
            'lambda': self.lam,
            't': self.t,
            'kpsi_inv': self.kpsi_inv.tolist()
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "RidgeState":
        v_lambda = np.array(payload['v_lambda'], dtype=float)
        bias_w = np.array(payload['bias_w'], dtype=float)
        d, d_prime = bias_w.shape
        state = cls(d, d_prime, float(payload['lambda']), np.array(payload['kpsi_inv'], dtype=float),
                    TransitionCore(bias_w))
        state.v_lambda = v_lambda
        state.gram = v_lambda - state.lam * np.eye(d)
        state.moment = np.array(payload['cross'], dtype=float) + state.gram @ bias_w
        state.t = int(payload['t'])
        state.refresh_inverse()
        return state


@dataclass(frozen=True)
class ConfidenceEllipsoid:
    """Frobenius ball of radius beta around the ridge estimate"""
    center: TransitionCore
    radius: float
    delta: float

    def contains(self, m_star: TransitionCore) -> bool:
        return contains(self, m_star)

    def contains_weighted(self, m_star: TransitionCore, v_lambda: np.ndarray) -> bool:
        return contains_weighted(self, m_star, v_lambda)


def update(state: RidgeState, phi: np.ndarray, psi_next: np.ndarray) -> RidgeState:
    return state.update(phi, psi_next)


def solve(state: RidgeState) -> TransitionCore:
    return state.solve()


def log_det_factor(t: int, lam: float, c_phi: float, d: int) -> float:
    """log D with D = 1 + t C_phi / (lam d)"""
    return math.log1p(t * c_phi / (lam * d))


def assumption_w_distance(bias: TransitionCore, constants: RegularityConstants, d: int) -> float:
    """Observable upper bound ||W||_F + sqrt(C_M d) on ||W - M*||_F"""
    return bias.frobenius_norm + math.sqrt(constants.c_m * d)


def ellipsoid_radius(state: RidgeState, delta: float, constants: RegularityConstants,
                     w_distance: float) -> float:
    """
    Confidence radius beta for the current state

    C_psi' sqrt(2 d' log(1/delta) + d' d log D) + sqrt(lam) w_distance,
    with D = 1 + t C_phi / (lam d) and t the transition count.

    Raises:
        InvalidDelta: unless 0 < delta < 1
    """
    if not 0.0 < delta < 1.0:
        raise InvalidDelta(delta)
    if w_distance < 0.0:
        raise ValueError(f"w_distance must be nonnegative, got {w_distance}")
    d, d_prime = state.d, state.d_prime
    inner = 2.0 * d_prime * math.log(1.0 / delta) + d_prime * d * log_det_factor(state.t, state.lam, constants.c_phi, d)
    return constants.c_psi_prime * math.sqrt(inner) + math.sqrt(state.lam) * w_distance


def confidence_ellipsoid(state: RidgeState, delta: float, constants: RegularityConstants,
                         w_distance: float) -> ConfidenceEllipsoid:
    return ConfidenceEllipsoid(state.solve(), ellipsoid_radius(state, delta, constants, w_distance), delta)


def contains(ellipsoid: ConfidenceEllipsoid, m_star: TransitionCore) -> bool:
    """||M_hat - M*||_F <= beta"""
    if m_star.shape != ellipsoid.center.shape:
        raise DimensionMismatch("core", ellipsoid.center.shape, m_star.shape)
    return ellipsoid.center.distance(m_star) <= ellipsoid.radius


def contains_weighted(ellipsoid: ConfidenceEllipsoid, m_star: TransitionCore, v_lambda: np.ndarray) -> bool:
    """||V_lambda^{1/2} (M_hat - M*)||_F <= beta"""
    if m_star.shape != ellipsoid.center.shape:
        raise DimensionMismatch("core", ellipsoid.center.shape, m_star.shape)
    diff = ellipsoid.center.m - m_star.m
    return math.sqrt(max(float(np.sum(diff * (v_lambda @ diff))), 0.0)) <= ellipsoid.radius


def batch_solve(phis: np.ndarray, psis: np.ndarray, kpsi_inv: np.ndarray, lam: float,
                bias: Optional[TransitionCore] = None) -> TransitionCore:
    """
    Dense minimiser of sum ||psi^T K^{-1} - phi^T M||^2 + lam ||M - W||_F^2

    Args:
        phis: (t, d) observed features
        psis: (t, d') observed next-state features
        kpsi_inv: K_psi^{-1}
        lam: regularization strength
        bias: W (zero if omitted)
    """
    phis = np.atleast_2d(np.asarray(phis, dtype=float))
    psis = np.atleast_2d(np.asarray(psis, dtype=float))
    d = phis.shape[1]
    targets = psis @ kpsi_inv
    w = np.zeros((d, targets.shape[1])) if bias is None else bias.m
    lhs = phis.T @ phis + lam * np.eye(d)
    rhs = phis.T @ targets + lam * w
    return TransitionCore(linalg.solve(lhs, rhs, assume_a='pos'))
