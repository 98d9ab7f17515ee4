"""
Batched predictive distributions.

Evidential and Gaussian methods expose the same surface (prediction,
aleatoric, epistemic, entropy, log density, central intervals) so metrics
treat them uniformly. Arrays are shaped (n, targets).
"""
from abc import ABC, abstractmethod
import math
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from scipy import special

from app.core import losses, nig, student_t
from app.models.dataset import NormalizationStats
from app.models.evidential import EvidentialParams, GaussianPrediction, PredictiveSummary

_LOG_2PI = math.log(2.0 * math.pi)


def _as_array(value):
    if value is None:
        return None
    array = np.asarray(value, dtype=np.float64)
    if array.ndim == 1:
        array = array.reshape(-1, 1)
    return array


class PredictiveBatch(BaseModel, ABC):
    """Per-sample predictive distributions for a batch of inputs"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @property
    @abstractmethod
    def prediction(self) -> np.ndarray:
        ...

    @property
    @abstractmethod
    def aleatoric(self) -> np.ndarray:
        ...

    @property
    @abstractmethod
    def epistemic(self) -> np.ndarray:
        ...

    @property
    @abstractmethod
    def entropy(self) -> np.ndarray:
        ...

    @abstractmethod
    def log_density(self, targets: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def central_interval(self, level: float) -> Tuple[np.ndarray, np.ndarray]:
        ...

    @abstractmethod
    def denormalize(self, stats: NormalizationStats) -> "PredictiveBatch":
        ...

    @property
    def total_variance(self) -> np.ndarray:
        return self.aleatoric + self.epistemic

    def __len__(self) -> int:
        return self.prediction.shape[0]


class EvidentialOutput(PredictiveBatch):
    """NIG parameters for every sample and target"""

    gamma: np.ndarray
    nu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    @field_validator("gamma", "nu", "alpha", "beta", mode="before")
    @classmethod
    def _as_matrix(cls, value):
        return _as_array(value)

    @property
    def prediction(self) -> np.ndarray:
        return self.gamma

    @property
    def aleatoric(self) -> np.ndarray:
        return nig.aleatoric_variance(self.alpha, self.beta)

    @property
    def epistemic(self) -> np.ndarray:
        return nig.epistemic_variance(self.nu, self.alpha, self.beta)

    @property
    def total_evidence(self) -> np.ndarray:
        return nig.total_evidence(self.nu, self.alpha)

    @property
    def entropy(self) -> np.ndarray:
        return nig.entropy_array(self.nu, self.alpha, self.beta)

    def log_density(self, targets: np.ndarray) -> np.ndarray:
        return -losses.nll_value(_as_array(targets), self.gamma, self.nu, self.alpha, self.beta)

    def central_interval(self, level: float) -> Tuple[np.ndarray, np.ndarray]:
        return student_t.central_interval(
            level, self.gamma, nig.evidence_scale2(self.nu, self.alpha, self.beta), 2.0 * self.alpha
        )

    def denormalize(self, stats: NormalizationStats) -> "EvidentialOutput":
        # sigma^2 scales by std^2, so beta does; nu and alpha are counts
        return EvidentialOutput(
            gamma=stats.invert(self.gamma),
            nu=self.nu,
            alpha=self.alpha,
            beta=self.beta * stats.std ** 2,
        )

    def params(self, row: int, target: int = 0) -> EvidentialParams:
        return EvidentialParams(
            gamma=float(self.gamma[row, target]),
            nu=float(self.nu[row, target]),
            alpha=float(self.alpha[row, target]),
            beta=float(self.beta[row, target]),
        )

    def summary(self, row: int, target: int = 0) -> PredictiveSummary:
        return nig.predictive_summary(self.params(row, target))

    def violations(self) -> List[str]:
        """Constraint violations anywhere in the batch"""
        violations = []
        for name in ("gamma", "nu", "alpha", "beta"):
            if not np.all(np.isfinite(getattr(self, name))):
                violations.append(f"{name} not finite")
        if np.any(self.nu <= 0):
            violations.append("nu <= 0")
        if np.any(self.alpha <= 1):
            violations.append("alpha <= 1")
        if np.any(self.beta <= 0):
            violations.append("beta <= 0")
        return violations


class GaussianOutput(PredictiveBatch):
    """
    Gaussian predictive moments.

    Ensembles also keep their members' moments (M x n x t) so the predictive
    density is the uniform mixture rather than the moment-matched Gaussian.
    """

    mu: np.ndarray
    sigma2: np.ndarray
    epistemic_variance: np.ndarray
    member_mu: Optional[np.ndarray] = None
    member_sigma2: Optional[np.ndarray] = None

    @field_validator("mu", "sigma2", "epistemic_variance", mode="before")
    @classmethod
    def _as_matrix(cls, value):
        return _as_array(value)

    @property
    def prediction(self) -> np.ndarray:
        return self.mu

    @property
    def aleatoric(self) -> np.ndarray:
        return self.sigma2

    @property
    def epistemic(self) -> np.ndarray:
        return self.epistemic_variance

    @property
    def entropy(self) -> np.ndarray:
        return 0.5 * (_LOG_2PI + 1.0 + np.log(self.total_variance))

    def log_density(self, targets: np.ndarray) -> np.ndarray:
        targets = _as_array(targets)
        if self.member_mu is None:
            return _normal_logpdf(targets, self.mu, self.total_variance)
        member_logpdf = _normal_logpdf(targets[None], self.member_mu, self.member_sigma2)
        return special.logsumexp(member_logpdf, axis=0) - math.log(self.member_mu.shape[0])

    def central_interval(self, level: float) -> Tuple[np.ndarray, np.ndarray]:
        half_width = special.ndtri(0.5 * (1.0 + level)) * np.sqrt(self.total_variance)
        return self.mu - half_width, self.mu + half_width

    def denormalize(self, stats: NormalizationStats) -> "GaussianOutput":
        scale2 = stats.std ** 2
        return GaussianOutput(
            mu=stats.invert(self.mu),
            sigma2=self.sigma2 * scale2,
            epistemic_variance=self.epistemic_variance * scale2,
            member_mu=None if self.member_mu is None else stats.invert(self.member_mu),
            member_sigma2=None if self.member_sigma2 is None else self.member_sigma2 * scale2,
        )

    def at(self, row: int, target: int = 0) -> GaussianPrediction:
        return GaussianPrediction(
            mu=float(self.mu[row, target]),
            sigma2=float(self.sigma2[row, target]),
            epistemic=float(self.epistemic_variance[row, target]),
            entropy=float(self.entropy[row, target]),
        )


def _normal_logpdf(y, mu, var):
    return -0.5 * (_LOG_2PI + np.log(var) + (y - mu) ** 2 / var)
