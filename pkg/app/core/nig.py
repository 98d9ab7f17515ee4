"""
Closed-form mathematics of the Normal-Inverse-Gamma evidential distribution.

    sigma^2 ~ InverseGamma(alpha, beta)
    mu      ~ Normal(gamma, sigma^2 / nu)

Marginalizing (mu, sigma^2) out of a Normal likelihood gives the Student-t
St(y; gamma, beta(1+nu)/(nu alpha), 2 alpha).

The array helpers at the bottom broadcast and are shared with the batched
network outputs; the EvidentialParams API validates first.
"""
import math
from typing import List, Optional

import numpy as np
from scipy import special

from app.core import student_t
from app.core.exceptions import DomainError
from app.models.evidential import EvidentialParams, PredictiveSummary

_LOG_2PI = math.log(2.0 * math.pi)


def validate(p: EvidentialParams) -> List[str]:
    """
    Check the NIG constraints

    Args:
        p: Parameters to check

    Returns:
        Every violated constraint; an empty list means the parameters are valid
    """
    violations = []
    for name in ("gamma", "nu", "alpha", "beta"):
        if not math.isfinite(getattr(p, name)):
            violations.append(f"{name} not finite")

    if math.isfinite(p.nu) and p.nu <= 0:
        violations.append("nu <= 0")
    if math.isfinite(p.alpha) and p.alpha <= 1:
        violations.append("alpha <= 1")
    if math.isfinite(p.beta) and p.beta <= 0:
        violations.append("beta <= 0")
    return violations


def require_valid(p: EvidentialParams) -> None:
    violations = validate(p)
    if violations:
        raise DomainError("Invalid evidential parameters", violations)


def predictive_summary(p: EvidentialParams) -> PredictiveSummary:
    """Prediction, aleatoric/epistemic variance, total evidence and entropy"""
    require_valid(p)
    return PredictiveSummary(
        prediction=p.gamma,
        aleatoric=float(aleatoric_variance(p.alpha, p.beta)),
        epistemic=float(epistemic_variance(p.nu, p.alpha, p.beta)),
        total_evidence=float(total_evidence(p.nu, p.alpha)),
        entropy=float(entropy_array(p.nu, p.alpha, p.beta)),
    )


def nig_pdf(mu: float, sigma2: float, p: EvidentialParams) -> float:
    """Joint density p(mu, sigma^2 | gamma, nu, alpha, beta)"""
    if not sigma2 > 0:
        raise DomainError("sigma2 must be positive", [f"sigma2 = {sigma2}"])
    require_valid(p)
    return math.exp(nig_logpdf(mu, sigma2, p.gamma, p.nu, p.alpha, p.beta))


def model_evidence(y: float, p: EvidentialParams) -> float:
    """Marginal likelihood p(y | gamma, nu, alpha, beta), a Student-t density"""
    require_valid(p)
    return float(np.exp(evidence_logpdf(y, p.gamma, p.nu, p.alpha, p.beta)))


def predictive_entropy(p: EvidentialParams) -> float:
    """Differential entropy (nats) of the marginal Student-t"""
    require_valid(p)
    return float(entropy_array(p.nu, p.alpha, p.beta))


def nig_kl(p: EvidentialParams, q: EvidentialParams) -> float:
    """
    KL(NIG(p) || NIG(q)) in closed form

    Args:
        p: Parameters of the first distribution
        q: Parameters of the second distribution

    Returns:
        Nonnegative divergence in nats

    Raises:
        DomainError: If either argument is invalid
    """
    require_valid(p)
    require_valid(q)
    precision = p.alpha / p.beta  # E_p[1 / sigma^2]
    kl = (
        0.5 * precision * (p.gamma - q.gamma) ** 2 * q.nu
        + 0.5 * q.nu / p.nu
        - 0.5 * math.log(q.nu / p.nu)
        - 0.5
        + q.alpha * math.log(p.beta / q.beta)
        - (special.gammaln(p.alpha) - special.gammaln(q.alpha))
        + (p.alpha - q.alpha) * special.digamma(p.alpha)
        - (p.beta - q.beta) * precision
    )
    # Rounding can leave a tiny negative value for identical arguments
    return max(float(kl), 0.0)


def soft_prior_kl(p: EvidentialParams, epsilon: Optional[float]) -> float:
    """KL from p to the epsilon-evidence prior NIG(gamma, eps, 1 + eps, beta)"""
    if epsilon is None or not epsilon > 0:
        raise DomainError("epsilon must be positive", [f"epsilon = {epsilon}"])
    require_valid(p)
    return max(float(soft_prior_kl_array(p.nu, p.alpha, epsilon)), 0.0)


# Array helpers ---------------------------------------------------------------

def total_evidence(nu, alpha):
    return 2.0 * nu + alpha


def aleatoric_variance(alpha, beta):
    return beta / (alpha - 1.0)


def epistemic_variance(nu, alpha, beta):
    return aleatoric_variance(alpha, beta) / nu


def evidence_scale2(nu, alpha, beta):
    """Squared scale of the marginal Student-t"""
    return beta * (1.0 + nu) / (nu * alpha)


def evidence_logpdf(y, gamma, nu, alpha, beta):
    return student_t.logpdf(y, gamma, evidence_scale2(nu, alpha, beta), 2.0 * alpha)


def entropy_array(nu, alpha, beta):
    return student_t.entropy(evidence_scale2(nu, alpha, beta), 2.0 * np.asarray(alpha, dtype=np.float64))


def nig_logpdf(mu, sigma2, gamma, nu, alpha, beta):
    return (
        alpha * np.log(beta)
        + 0.5 * np.log(nu)
        - special.gammaln(alpha)
        - 0.5 * _LOG_2PI
        - (alpha + 1.5) * np.log(sigma2)
        - (2.0 * beta + nu * (gamma - mu) ** 2) / (2.0 * sigma2)
    )


def soft_prior_kl_array(nu, alpha, epsilon):
    """Soft-prior KL; independent of gamma and beta since the prior shares them"""
    return (
        0.5 * epsilon / nu
        - 0.5 * np.log(epsilon / nu)
        - 0.5
        - special.gammaln(alpha)
        + special.gammaln(1.0 + epsilon)
        + (alpha - 1.0 - epsilon) * special.digamma(alpha)
    )
