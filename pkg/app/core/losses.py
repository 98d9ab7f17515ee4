"""
Training objectives for evidential regression and the Gaussian / point baselines.

Every ``*_terms`` function broadcasts over numpy arrays and returns the loss
together with its analytic gradient; the scalar API wraps them for a single
EvidentialParams.
"""
import math
from typing import NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import special

from app.core import nig
from app.core.exceptions import DomainError
from app.models.configs import LossConfig, RegularizerKind
from app.models.evidential import EvidentialParams

# Lower bound on (y - gamma)^2 nu + Omega before the log
LOG_FLOOR = 1e-300
_LOG_PI = math.log(math.pi)
_LOG_2PI = math.log(2.0 * math.pi)


class EvidentialGrad(NamedTuple):
    """Partial derivatives with respect to (gamma, nu, alpha, beta)"""
    gamma: np.ndarray
    nu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __add__(self, other: "EvidentialGrad") -> "EvidentialGrad":
        return EvidentialGrad(*(a + b for a, b in zip(self, other)))

    def scaled(self, factor) -> "EvidentialGrad":
        return EvidentialGrad(*(factor * g for g in self))


class LossTerms(NamedTuple):
    nll: np.ndarray
    regularizer: np.ndarray
    total: np.ndarray
    grad: EvidentialGrad


class LossBreakdown(BaseModel):
    """Evidential loss of one sample with its gradient"""
    model_config = ConfigDict(frozen=True)

    nll: float
    regularizer: float
    total: float
    grad: Tuple[float, float, float, float]  # d/d(gamma, nu, alpha, beta)


# Scalar API ------------------------------------------------------------------

def evidential_nll(y: float, p: EvidentialParams) -> float:
    """Negative log model evidence of y"""
    nig.require_valid(p)
    return float(nll_value(y, p.gamma, p.nu, p.alpha, p.beta))


def evidence_regularizer(y: float, p: EvidentialParams, kind: RegularizerKind = RegularizerKind.ABS_ERROR,
                         epsilon: Optional[float] = None) -> float:
    """
    Evidence penalty of one prediction

    Args:
        y: Observed target
        p: Predicted evidential parameters
        kind: Which penalty to apply
        epsilon: Prior evidence for the soft_kl kind

    Returns:
        Nonnegative penalty (soft_kl ignores y)
    """
    nig.require_valid(p)
    kind = RegularizerKind(kind)
    if kind is RegularizerKind.SOFT_KL:
        return nig.soft_prior_kl(p, epsilon)
    value, _ = regularizer_terms(y, p.gamma, p.nu, p.alpha, p.beta, kind, epsilon)
    return float(value)


def total_loss(y: float, p: EvidentialParams, cfg: LossConfig) -> LossBreakdown:
    """nll + lam * regularizer for one sample, with the analytic gradient"""
    nig.require_valid(p)
    terms = total_terms(y, p.gamma, p.nu, p.alpha, p.beta, cfg)
    return LossBreakdown(
        nll=float(terms.nll),
        regularizer=float(terms.regularizer),
        total=float(terms.total),
        grad=tuple(float(g) for g in terms.grad),
    )


def gaussian_nll(y: float, mu: float, sigma2: float) -> float:
    """-log N(y; mu, sigma2)"""
    if not sigma2 > 0:
        raise DomainError("sigma2 must be positive", [f"sigma2 = {sigma2}"])
    value, _, _ = gaussian_terms(y, mu, sigma2)
    return float(value)


def gaussian_nll_grad(y: float, mu: float, sigma2: float) -> Tuple[float, float]:
    """Gradient of gaussian_nll with respect to (mu, log sigma2)"""
    if not sigma2 > 0:
        raise DomainError("sigma2 must be positive", [f"sigma2 = {sigma2}"])
    _, d_mu, d_log_sigma2 = gaussian_terms(y, mu, sigma2)
    return float(d_mu), float(d_log_sigma2)


# Array API -------------------------------------------------------------------

def nll_value(y, gamma, nu, alpha, beta) -> np.ndarray:
    """Negative log model evidence; the single code path behind every evidential NLL"""
    error = y - gamma
    omega = 2.0 * beta * (1.0 + nu)
    spread = np.maximum(error * error * nu + omega, LOG_FLOOR)
    return (
        0.5 * (_LOG_PI - np.log(nu))
        - alpha * np.log(omega)
        + (alpha + 0.5) * np.log(spread)
        + special.gammaln(alpha)
        - special.gammaln(alpha + 0.5)
    )


def nll_terms(y, gamma, nu, alpha, beta) -> Tuple[np.ndarray, EvidentialGrad]:
    value = nll_value(y, gamma, nu, alpha, beta)
    error = y - gamma
    omega = 2.0 * beta * (1.0 + nu)
    spread = np.maximum(error * error * nu + omega, LOG_FLOOR)
    log_spread = np.log(spread)
    ratio = (alpha + 0.5) / spread
    grad = EvidentialGrad(
        gamma=-2.0 * nu * error * ratio,
        nu=-0.5 / nu - alpha / (1.0 + nu) + ratio * (error * error + 2.0 * beta),
        alpha=log_spread - np.log(omega) + special.digamma(alpha) - special.digamma(alpha + 0.5),
        beta=-alpha / beta + ratio * 2.0 * (1.0 + nu),
    )
    return value, grad


def regularizer_terms(y, gamma, nu, alpha, beta, kind: RegularizerKind,
                      epsilon: Optional[float] = None) -> Tuple[np.ndarray, EvidentialGrad]:
    """Regularizer value and gradient; the derivative of |y - gamma| at 0 is 0"""
    kind = RegularizerKind(kind)
    error = y - gamma
    abs_error = np.abs(error)
    sign = np.sign(error)
    evidence = nig.total_evidence(nu, alpha)
    zeros = np.zeros_like(abs_error * evidence)

    if kind is RegularizerKind.ABS_ERROR:
        value = abs_error * evidence
        grad = EvidentialGrad(
            gamma=-sign * evidence,
            nu=2.0 * abs_error + zeros,
            alpha=abs_error + zeros,
            beta=zeros,
        )
    elif kind is RegularizerKind.STANDARD_SCORE:
        # |error| / sqrt(beta / (alpha - 1))
        inv_scale = np.sqrt((alpha - 1.0) / beta)
        score = abs_error * inv_scale
        value = score * evidence
        grad = EvidentialGrad(
            gamma=-sign * inv_scale * evidence,
            nu=2.0 * score,
            alpha=score * (1.0 + 0.5 * evidence / (alpha - 1.0)),
            beta=-0.5 * value / beta,
        )
    elif kind is RegularizerKind.SOFT_KL:
        if epsilon is None or not epsilon > 0:
            raise DomainError("soft_kl regularizer needs epsilon > 0", [f"epsilon = {epsilon}"])
        value = nig.soft_prior_kl_array(nu, alpha, epsilon) + zeros
        grad = EvidentialGrad(
            gamma=zeros,
            nu=0.5 / nu - 0.5 * epsilon / (nu * nu) + zeros,
            alpha=(alpha - 1.0 - epsilon) * special.polygamma(1, alpha) + zeros,
            beta=zeros,
        )
    else:
        raise DomainError("Unknown regularizer", [str(kind)])
    return value, grad


def total_terms(y, gamma, nu, alpha, beta, cfg: LossConfig) -> LossTerms:
    nll, nll_grad = nll_terms(y, gamma, nu, alpha, beta)
    reg, reg_grad = regularizer_terms(y, gamma, nu, alpha, beta, cfg.regularizer_kind, cfg.epsilon)
    return LossTerms(
        nll=nll,
        regularizer=reg,
        total=nll + cfg.lam * reg,
        grad=nll_grad + reg_grad.scaled(cfg.lam),
    )


def gaussian_terms(y, mu, sigma2):
    """Gaussian NLL with gradients for (mu, log sigma2)"""
    error = y - mu
    scaled = error * error / sigma2
    value = 0.5 * (_LOG_2PI + np.log(sigma2)) + 0.5 * scaled
    return value, -error / sigma2, 0.5 - 0.5 * scaled


def squared_error_terms(y, prediction):
    """Half squared error, used by the point head"""
    error = y - prediction
    return 0.5 * error * error, -error
