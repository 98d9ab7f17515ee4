from concurrent.futures import ThreadPoolExecutor
from typing import List, Sequence
import logging

import numpy as np

from app.core.exceptions import ConfigurationError
from app.core.network import Mlp
from app.models.configs import HeadKind, MlpConfig, TrainConfig
from app.models.dataset import Dataset
from app.models.predictions import GaussianOutput
from app.services.training_service import TrainingService, TrainResult

logger = logging.getLogger(__name__)


def derive_seeds(seed: int, count: int) -> List[int]:
    """Independent child seeds spawned deterministically from ``seed``"""
    return [int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(count)]


class BaselineService:
    """Service for Gaussian MLE, deep-ensemble and MC-dropout baselines"""

    def __init__(self, training_service: TrainingService, max_workers: int = 4):
        self.training_service = training_service
        self.max_workers = max_workers

    def train_gaussian_mle(self, dataset: Dataset, mlp_cfg: MlpConfig, train_cfg: TrainConfig) -> TrainResult:
        """Single network with a (mu, softplus sigma^2) head trained on the Gaussian NLL"""
        return self.training_service.train(dataset, mlp_cfg.model_copy(update={"head": HeadKind.GAUSSIAN}), train_cfg)

    def train_ensemble(
        self,
        dataset: Dataset,
        mlp_cfg: MlpConfig,
        train_cfg: TrainConfig,
        members: int = 5
    ) -> List[TrainResult]:
        """
        Train ``members`` Gaussian networks from independent seeds

        Members run concurrently on a thread pool; each has its own seed
        derived from ``train_cfg.seed``, so the result does not depend on
        scheduling.

        Raises:
            ConfigurationError: If fewer than two members are requested
        """
        if members < 2:
            raise ConfigurationError(f"An ensemble needs at least 2 members, got {members}")

        configs = [train_cfg.model_copy(update={"seed": s}) for s in derive_seeds(train_cfg.seed, members)]
        logger.info(f"Training {members}-member ensemble with max concurrency {self.max_workers}")

        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = [executor.submit(self.train_gaussian_mle, dataset, mlp_cfg, cfg) for cfg in configs]
            return [future.result() for future in futures]

    def train_dropout(self, dataset: Dataset, mlp_cfg: MlpConfig, train_cfg: TrainConfig, p: float) -> TrainResult:
        if not p > 0:
            raise ConfigurationError("MC dropout needs dropout_p > 0")
        return self.train_gaussian_mle(dataset, mlp_cfg.model_copy(update={"dropout_p": p}), train_cfg)

    def ensemble_predict(self, members: Sequence[Mlp], x: np.ndarray) -> GaussianOutput:
        """
        Uniform-mixture moments of the members' Gaussians

        Returns:
            mu = mean of member means, aleatoric = mean member variance,
            epistemic = (population) variance of member means; the member
            moments are kept for the mixture density

        Raises:
            ConfigurationError: If fewer than two members are given
        """
        if len(members) < 2:
            raise ConfigurationError(f"An ensemble needs at least 2 members, got {len(members)}")

        outputs = [member.forward_gaussian(x) for member in members]
        member_mu = np.stack([mu for mu, _ in outputs])
        member_sigma2 = np.stack([sigma2 for _, sigma2 in outputs])
        mu, spread = _mean_and_spread(member_mu)
        return GaussianOutput(
            mu=mu,
            sigma2=member_sigma2.mean(axis=0),
            epistemic_variance=spread / len(members),
            member_mu=member_mu,
            member_sigma2=member_sigma2,
        )

    def dropout_predict(self, net: Mlp, x: np.ndarray, n: int, seed: int) -> GaussianOutput:
        """
        Moments of ``n`` MC-dropout passes; epistemic uses the unbiased sample variance

        Raises:
            ConfigurationError: If n < 2 or the network has no dropout
        """
        if n < 2:
            raise ConfigurationError(f"MC dropout needs at least 2 samples for a variance, got {n}")

        samples = self.training_service.mc_dropout_forward(net, x, n, seed)
        sample_mu = np.stack([mu for mu, _ in samples])
        mu, spread = _mean_and_spread(sample_mu)
        return GaussianOutput(
            mu=mu,
            sigma2=np.stack([sigma2 for _, sigma2 in samples]).mean(axis=0),
            epistemic_variance=spread / (n - 1),
        )


def _mean_and_spread(values: np.ndarray):
    """Mean and sum of squared deviations along axis 0, shifted by the first entry"""
    shifted = values - values[0]
    offset = shifted.mean(axis=0)
    deviations = shifted - offset
    return values[0] + offset, np.sum(deviations * deviations, axis=0)
