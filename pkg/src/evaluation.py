"""
Regret accounting, theoretical bound calculators and numeric lemma checkers.

Everything here is a pure function of completed records or of constants.
"""
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy import linalg

from .buc_agent import RunRecord
from .core_regression import log_det_factor
from .exceptions import IncompleteLog
from .linear_mdp import LinearMdp, RegularityConstants, compute_regularity_constants
from .logging_config import get_logger
from .utils import VAR_FLOOR, mean_and_stderr

logger = get_logger(__name__)

LEMMA_TOLERANCE = 1e-9
LOG_DET_LEMMA = "log_det"
ELLIPTICAL_POTENTIAL = "elliptical_potential"
STALE_FEATURE_LEMMA = "stale_feature"


@dataclass
class BoundReport:
    """Single-task regret bound and its components"""
    bound: float
    lam: float
    T: int
    H: int
    d: int
    d_prime: int
    w_distance: float
    D: float
    log_det: float
    confidence_factor: float
    growth_factor: float
    constants: RegularityConstants
    empirical_regret: Optional[float] = None
    expected_regret: Optional[float] = None

    @property
    def slack_ratio(self) -> float:
        if self.empirical_regret is None:
            return math.nan
        if self.empirical_regret <= 0.0:
            return math.inf
        return self.bound / self.empirical_regret

    @property
    def holds(self) -> bool:
        return self.empirical_regret is None or self.empirical_regret <= self.bound

    @property
    def expected_holds(self) -> bool:
        return self.expected_regret is None or self.expected_regret <= self.bound

    def to_row(self) -> Dict[str, Any]:
        row = {
            'empirical_regret': self.empirical_regret,
            'expected_regret': self.expected_regret,
            'bound': self.bound,
            'slack_ratio': self.slack_ratio,
            'holds': self.holds,
            'expected_holds': self.expected_holds,
            'lambda': self.lam,
            'T': self.T,
            'H': self.H,
            'd': self.d,
            'd_prime': self.d_prime,
            'w_distance': self.w_distance,
            'D': self.D,
            'log_det': self.log_det,
            'confidence_factor': self.confidence_factor,
            'growth_factor': self.growth_factor
        }
        row.update(self.constants.to_dict())
        return row


@dataclass
class MtrBound:
    """Meta-transfer regret bound in its Mad, Var and (optionally) DVar forms"""
    common: float
    mad_form: float
    var_form: float
    dvar_form: Optional[float] = None
    dvar: Optional[float] = None

    @property
    def bound(self) -> float:
        return min(self.mad_form, self.var_form)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'bound': self.bound,
            'common': self.common,
            'mad_form': self.mad_form,
            'var_form': self.var_form,
            'dvar_form': self.dvar_form,
            'dvar': self.dvar
        }


@dataclass
class LemmaCheck:
    lhs: float
    rhs: float
    lemma: str
    holds: bool = field(init=False)

    def __post_init__(self):
        self.holds = bool(self.lhs <= self.rhs + LEMMA_TOLERANCE)

    def to_row(self) -> Dict[str, Any]:
        return {'lemma': self.lemma, 'lhs': self.lhs, 'rhs': self.rhs, 'holds': self.holds}


@dataclass
class TransferRegret:
    """Monte Carlo estimate of the meta transfer regret"""
    mean: float
    stderr: float
    n: int
    values: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {'mean': self.mean, 'stderr': self.stderr, 'n': self.n}


def _check_positive(**kwargs) -> None:
    for name, value in kwargs.items():
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")


def regret_bound_thm3(constants: RegularityConstants, lam: float, T: int, H: int, d: int, d_prime: int,
                      w_distance: float, empirical_regret: Optional[float] = None) -> BoundReport:
    """
    Regret bound of biased upper-confidence matrix RL after T = NH steps

        (C_psi' sqrt(d' d log(T D)) + sqrt(lam) w) 2 C_psi H sqrt(C_{phi,lam} T d ln D)

    with C_{phi,lam} = 4 + C_phi/lam and D = 1 + T C_phi/(lam d).

    Args:
        constants: Regularity constants of the instance
        lam: Regularization strength
        T: Total steps
        H: Horizon
        d: Feature dimension
        d_prime: Next-state feature dimension
        w_distance: ||W - M*||_F
        empirical_regret: Realized regret R_T to compare against

    Returns:
        BoundReport: Bound value and components
    """
    _check_positive(lam=lam, T=T, H=H, d=d, d_prime=d_prime)
    if w_distance < 0.0:
        raise ValueError(f"w_distance must be nonnegative, got {w_distance}")
    log_d = log_det_factor(T, lam, constants.c_phi, d)
    D = math.exp(log_d)
    c_phi_lambda = 4.0 + constants.c_phi / lam
    confidence = (constants.c_psi_prime * math.sqrt(d_prime * d * math.log(T * D))
                  + math.sqrt(lam) * w_distance)
    growth = 2.0 * constants.c_psi * H * math.sqrt(c_phi_lambda * T * d * log_d)
    return BoundReport(
        bound=confidence * growth, lam=float(lam), T=int(T), H=int(H), d=int(d), d_prime=int(d_prime),
        w_distance=float(w_distance), D=D, log_det=log_d, confidence_factor=confidence,
        growth_factor=growth, constants=constants, empirical_regret=empirical_regret
    )


def regret_bound_thm1(constants: RegularityConstants, lam: float, T: int, H: int, d: int, d_prime: int,
                      core_norm: float) -> BoundReport:
    """Unbiased (W = 0) bound: the biased bound evaluated at ||M*||_F"""
    return regret_bound_thm3(constants, lam, T, H, d, d_prime, core_norm)


def mtr_bound_thm4(constants: RegularityConstants, lam: float, T: int, H: int, d: int, d_prime: int,
                   var_w: float, mad_w: float, C: float = 1.0) -> MtrBound:
    """
    Meta transfer regret bound around a bias W

    Returns the Mad and Var forms; the DVar form is the value reached with
    the schedule lam = 1/(T Var_W) and is reported alongside.
    """
    _check_positive(lam=lam, T=T, H=H, d=d, d_prime=d_prime)
    if var_w < 0.0 or mad_w < 0.0:
        raise ValueError(f"var_w and mad_w must be nonnegative, got {var_w}, {mad_w}")
    log_d = log_det_factor(T, lam, constants.c_phi, d)
    D = math.exp(log_d)
    c_phi_lambda = 4.0 + constants.c_phi / lam
    scale = C * constants.c_psi * H
    common = scale * constants.c_psi_prime * d * math.sqrt(d_prime * T * c_phi_lambda * math.log(T * D) * log_d)
    mad_form = common + scale * mad_w * math.sqrt(lam * T * c_phi_lambda * d * log_d)
    var_form = common + scale * math.sqrt(var_w * lam * T * c_phi_lambda * d * log_d)
    dvar_form, dvar = dvar_bound(constants, T, H, d, d_prime, var_w, C)
    return MtrBound(common=common, mad_form=mad_form, var_form=var_form, dvar_form=dvar_form, dvar=dvar)


def dvar_bound(constants: RegularityConstants, T: int, H: int, d: int, d_prime: int,
               var_w: float, C: float = 1.0) -> tuple:
    """
    (bound, DVar) with DVar = 1 + T^2 Var_W C_phi / d and lam = 1/(T max(Var_W, 1e-6))

        (1 + C_psi' sqrt(d' d T log(T DVar))) C C_psi H sqrt(C_{phi,lam} d ln DVar)
    """
    lam = 1.0 / (T * max(var_w, VAR_FLOOR))
    dvar = 1.0 + T ** 2 * var_w * constants.c_phi / d
    c_phi_lambda = 4.0 + constants.c_phi / lam
    first = 1.0 + constants.c_psi_prime * math.sqrt(d_prime * d * T * math.log(T * dvar))
    second = C * constants.c_psi * H * math.sqrt(c_phi_lambda * d * math.log(dvar))
    return first * second, dvar


def mtr_oracle_limit(constants: RegularityConstants, T: int, H: int, var_w: float, C: float = 1.0) -> float:
    """lam -> infinity limit C C_psi H sqrt(Var_W T^2 C_phi)"""
    return C * constants.c_psi * H * math.sqrt(var_w * T ** 2 * constants.c_phi)


def low_bias_mtr_bound(constants: RegularityConstants, lam: float, T: int, H: int, d: int, d_prime: int,
                       var_mean: float, epsilon: float, C: float = 1.0) -> float:
    """
    Transfer regret with a learned bias whose mean error is epsilon

        C C_psi H d C_psi' sqrt(C_{phi,lam} d' T log(T + T^3 C_phi (Var + eps) / d))

    The same expression bounds both the averaging and the global ridge estimators.
    """
    _check_positive(lam=lam, T=T, H=H, d=d, d_prime=d_prime)
    c_phi_lambda = 4.0 + constants.c_phi / lam
    inner = math.log(T + T ** 3 * constants.c_phi * (var_mean + epsilon) / d)
    return C * constants.c_psi * H * d * constants.c_psi_prime * math.sqrt(c_phi_lambda * d_prime * T * inner)


def low_bias_epsilon_bound(h_m: float, betas: Sequence[float], lambda_mins: Sequence[float]) -> float:
    """Upper bound on sqrt(epsilon): H_M + max_g beta_g / sqrt(lambda_min(V_g))"""
    ratios = [b / math.sqrt(l) for b, l in zip(betas, lambda_mins)]
    return h_m + (max(ratios) if ratios else 0.0)


def high_bias_epsilon_bound(h_m: float, constants: RegularityConstants, lam: float, nu_min: float,
                            d: int, G: int, N: int, H: int, misalignment: Sequence[float]) -> float:
    """
    Upper bound on sqrt(epsilon) for the pooled ridge bias

        H_M + d C_M/(lam + nu) + C_psi' sqrt(2/(lam + nu) log(NH + G N^2 H^2 C_phi/(lam d)))
            + 2 (G + 1) max misalignment
    """
    denominator = lam + nu_min
    variance = (d * constants.c_m / denominator
                + constants.c_psi_prime * math.sqrt(
                    2.0 / denominator * math.log(N * H + G * N ** 2 * H ** 2 * constants.c_phi / (lam * d))))
    bias = 2.0 * (G + 1) * (max(misalignment) if misalignment else 0.0)
    return h_m + variance + bias


def _episode_features(features: Any, lemma: str, allow_flat: bool = False) -> np.ndarray:
    try:
        arr = np.asarray(features, dtype=float)
    except (TypeError, ValueError) as e:
        raise IncompleteLog(lemma, f"features are not numeric: {e}")
    if allow_flat and arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3:
        raise IncompleteLog(lemma, f"expected an (episodes, horizon, d) log, got shape {arr.shape}")
    if 0 in arr.shape:
        raise IncompleteLog(lemma, f"empty feature log of shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise IncompleteLog(lemma, "feature log contains non-finite entries")
    return arr


def _resolve_c_phi(arr: np.ndarray, c_phi: Optional[float]) -> float:
    observed = float(np.max(np.sum(arr ** 2, axis=-1)))
    return observed if c_phi is None else float(c_phi)


def _inverse_norm(v_inv: np.ndarray, phi: np.ndarray) -> float:
    return float(phi @ v_inv @ phi)


def check_log_det_lemma(features: Any, lam: float, c_phi: Optional[float] = None) -> LemmaCheck:
    """
    Sum of ||phi||_{V_n^{-1}} (V frozen at episode start) against
    2 sum ||phi||_{V_{n,h}^{-1}} + (C_phi/lam) d log D, D = 1 + NH C_phi/(lam d)

    Raises:
        IncompleteLog: if the log is not a complete finite (N, H, d) array
    """
    arr = _episode_features(features, LOG_DET_LEMMA)
    _check_positive(lam=lam)
    episodes, horizon, d = arr.shape
    c_phi = _resolve_c_phi(arr, c_phi)

    v = lam * np.eye(d)
    lhs = 0.0
    stepwise = 0.0
    for n in range(episodes):
        frozen_inv = linalg.inv(v)
        for h in range(horizon):
            phi = arr[n, h]
            lhs += math.sqrt(max(_inverse_norm(frozen_inv, phi), 0.0))
            stepwise += math.sqrt(max(_inverse_norm(linalg.inv(v), phi), 0.0))
            v = v + np.outer(phi, phi)
    rhs = 2.0 * stepwise + (c_phi / lam) * d * log_det_factor(episodes * horizon, lam, c_phi, d)
    return LemmaCheck(lhs=lhs, rhs=rhs, lemma=LOG_DET_LEMMA)


def check_elliptical_potential(features: Any, lam: float, c_phi: Optional[float] = None) -> LemmaCheck:
    """
    sum_t min(1, ||phi_t||^2_{V_{t-1}^{-1}}) <= 2 d log(1 + t C_phi/(lam d))

    Accepts an (N, H, d) episode log or a flat (t, d) sequence.

    Raises:
        IncompleteLog: if the log is empty or not finite
    """
    arr = _episode_features(features, ELLIPTICAL_POTENTIAL, allow_flat=True)
    _check_positive(lam=lam)
    flat = arr.reshape(-1, arr.shape[-1])
    steps, d = flat.shape
    c_phi = _resolve_c_phi(flat, c_phi)

    v = lam * np.eye(d)
    lhs = 0.0
    for phi in flat:
        lhs += min(1.0, _inverse_norm(linalg.inv(v), phi))
        v = v + np.outer(phi, phi)
    rhs = 2.0 * d * log_det_factor(steps, lam, c_phi, d)
    return LemmaCheck(lhs=lhs, rhs=rhs, lemma=ELLIPTICAL_POTENTIAL)


def check_stale_feature_lemma(features: Any, lam: float, H: Optional[int] = None,
                              c_phi: Optional[float] = None) -> LemmaCheck:
    """
    sum_{n,h} min(1, ||phi_{n,h}||^2_{V_n^{-1}}) <= 2 H d ln(1 + N H C_phi/(lam d))

    Raises:
        IncompleteLog: if the log is incomplete or H disagrees with it
    """
    arr = _episode_features(features, STALE_FEATURE_LEMMA)
    _check_positive(lam=lam)
    episodes, horizon, d = arr.shape
    if H is not None and H != horizon:
        raise IncompleteLog(STALE_FEATURE_LEMMA, f"log has {horizon} steps per episode, expected H={H}")
    c_phi = _resolve_c_phi(arr, c_phi)

    v = lam * np.eye(d)
    lhs = 0.0
    for n in range(episodes):
        frozen_inv = linalg.inv(v)
        for h in range(horizon):
            lhs += min(1.0, _inverse_norm(frozen_inv, arr[n, h]))
        v = v + arr[n].T @ arr[n]
    rhs = 2.0 * horizon * d * log_det_factor(episodes * horizon, lam, c_phi, d)
    return LemmaCheck(lhs=lhs, rhs=rhs, lemma=STALE_FEATURE_LEMMA)


def transfer_regret(records: Sequence[RunRecord], expected: bool = False) -> TransferRegret:
    """
    Mean cumulative regret over test tasks with its standard error

    Args:
        records: Test-task records (at least one)
        expected: Use the pseudo-regret sum instead of realized returns
    """
    if not records:
        raise ValueError("transfer_regret needs at least one record")
    values = [r.expected_cumulative_regret if expected else r.cumulative_regret for r in records]
    mean, stderr = mean_and_stderr(values)
    return TransferRegret(mean=mean, stderr=stderr, n=len(values), values=values)


def bound_report_for_run(record: RunRecord, mdp: LinearMdp,
                         constants: Optional[RegularityConstants] = None) -> BoundReport:
    """
    Single-task bound compared against the run's realized regret R_T

    The oracle ||W - M*||_F is the largest distance over the biases the run
    planned with; the pseudo-regret is checked as a separate column.
    """
    constants = constants or compute_regularity_constants(mdp.features, mdp.core)
    if record.bias_errors is not None and len(record.bias_errors):
        w_distance = float(np.max(record.bias_errors))
    elif record.final_bias is not None:
        w_distance = record.final_bias.distance(mdp.core)
    else:
        w_distance = mdp.core.frobenius_norm
    report = regret_bound_thm3(constants, record.lam, record.transitions, record.horizon,
                               mdp.features.d, mdp.features.d_prime, w_distance,
                               empirical_regret=record.cumulative_regret)
    report.expected_regret = record.expected_cumulative_regret
    if not report.holds:
        logger.warning(f"Regret {report.empirical_regret:.4f} exceeds the bound {report.bound:.4f}")
    if not report.expected_holds:
        logger.warning(f"Pseudo-regret {report.expected_regret:.4f} exceeds the bound {report.bound:.4f}")
    return report


def lemma_checks_for_run(record: RunRecord, c_phi: Optional[float] = None) -> List[LemmaCheck]:
    """All three lemma checks on the feature log of a run"""
    checks = [
        check_log_det_lemma(record.features, record.lam, c_phi),
        check_elliptical_potential(record.features, record.lam, c_phi),
        check_stale_feature_lemma(record.features, record.lam, record.horizon, c_phi)
    ]
    for check in checks:
        if not check.holds:
            logger.warning(f"Lemma '{check.lemma}' failed: lhs {check.lhs:.6f} > rhs {check.rhs:.6f}")
    return checks
