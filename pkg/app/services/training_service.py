from typing import List, NamedTuple, Tuple
import logging

import numpy as np

from app.core import losses
from app.core.exceptions import ConfigurationError, DomainError, ShapeError, TrainingDivergedError
from app.core.network import (
    Mlp,
    adam_step,
    evidential_head,
    evidential_head_backward,
    gaussian_head,
    gaussian_head_backward,
)
from app.models.configs import HeadKind, MlpConfig, TrainConfig
from app.models.dataset import Dataset
from app.models.reports import LossTrace

logger = logging.getLogger(__name__)


class TrainResult(NamedTuple):
    net: Mlp
    trace: LossTrace


class BatchLoss(NamedTuple):
    loss: np.ndarray  # per sample, summed over targets
    nll: np.ndarray
    reg: np.ndarray
    grad_raw: np.ndarray  # d(sum of losses)/d(raw outputs)


class TrainingService:
    """Service for fitting networks by minibatch Adam"""

    def train(self, dataset: Dataset, mlp_cfg: MlpConfig, train_cfg: TrainConfig) -> TrainResult:
        """
        Train a freshly initialized network on ``dataset``

        Initialization, shuffling and dropout masks all draw from one generator
        seeded with ``train_cfg.seed``, so a run is reproducible.

        Args:
            dataset: Training data (already normalized if desired)
            mlp_cfg: Architecture and head
            train_cfg: Optimizer, schedule and loss settings

        Returns:
            TrainResult with the trained network and per-iteration loss trace

        Raises:
            ShapeError: If the dataset does not match the architecture
            TrainingDivergedError: If a batch loss becomes NaN or infinite
        """
        if dataset.input_dim != mlp_cfg.input_dim or dataset.target_dim != mlp_cfg.targets:
            raise ShapeError(
                f"Dataset is {dataset.input_dim} -> {dataset.target_dim}, "
                f"network is {mlp_cfg.input_dim} -> {mlp_cfg.targets}"
            )

        rng = np.random.default_rng(train_cfg.seed)
        net = Mlp(mlp_cfg, rng=rng)
        dropout_rng = rng if mlp_cfg.dropout_p > 0 else None
        trace = LossTrace()

        n = dataset.size
        batch_size = min(train_cfg.batch_size, n)
        order = rng.permutation(n)
        position = 0

        logger.info(
            f"Training {mlp_cfg.head.value} network ({net.parameter_count} parameters) "
            f"for {train_cfg.iterations} iterations on {n} rows"
        )

        for iteration in range(train_cfg.iterations):
            if position >= n:
                order = rng.permutation(n)
                position = 0
            indices = order[position:position + batch_size]
            position += batch_size

            raw = net.forward(dataset.features[indices], dropout_rng)
            batch = self.batch_loss(raw, dataset.targets[indices], mlp_cfg, train_cfg)

            mean_loss = float(batch.loss.mean())
            if not np.isfinite(mean_loss) or not np.all(np.isfinite(batch.grad_raw)):
                logger.error(f"Training diverged at iteration {iteration}")
                raise TrainingDivergedError(iteration, indices)

            net.backward(batch.grad_raw / len(indices))
            adam_step(net.store, train_cfg)
            trace.append(iteration, mean_loss, float(batch.nll.mean()), float(batch.reg.mean()))

            if (iteration + 1) % train_cfg.log_every == 0:
                logger.debug(f"Iteration {iteration + 1}: mean loss {mean_loss:.5f}")

        logger.info(f"Training finished: final mean loss {trace.mean_loss[-1]:.5f}")
        return TrainResult(net=net, trace=trace)

    @staticmethod
    def batch_loss(raw: np.ndarray, targets: np.ndarray, mlp_cfg: MlpConfig, train_cfg: TrainConfig) -> BatchLoss:
        """Per-sample loss for the network's head and its gradient at the raw outputs"""
        t = mlp_cfg.targets

        if mlp_cfg.head is HeadKind.EVIDENTIAL:
            out = evidential_head(raw, t)
            terms = losses.total_terms(targets, out.gamma, out.nu, out.alpha, out.beta, train_cfg.loss)
            return BatchLoss(
                loss=terms.total.sum(axis=1),
                nll=terms.nll.sum(axis=1),
                reg=terms.regularizer.sum(axis=1),
                grad_raw=evidential_head_backward(raw, terms.grad, t),
            )

        if mlp_cfg.head is HeadKind.GAUSSIAN:
            mu, sigma2 = gaussian_head(raw, t)
            value, d_mu, d_log_sigma2 = losses.gaussian_terms(targets, mu, sigma2)
            nll = value.sum(axis=1)
            return BatchLoss(
                loss=nll,
                nll=nll,
                reg=np.zeros_like(nll),
                grad_raw=gaussian_head_backward(raw, d_mu, d_log_sigma2 / sigma2, t),
            )

        value, d_prediction = losses.squared_error_terms(targets, raw)
        loss = value.sum(axis=1)
        return BatchLoss(loss=loss, nll=loss, reg=np.zeros_like(loss), grad_raw=d_prediction)

    def mc_dropout_forward(self, net: Mlp, x: np.ndarray, n: int, seed: int) -> List[Tuple[np.ndarray, np.ndarray]]:
        """
        ``n`` stochastic Gaussian-head passes with independent dropout masks

        Raises:
            ConfigurationError: If the network has no dropout or no Gaussian head
        """
        if net.config.dropout_p == 0:
            raise ConfigurationError("MC dropout needs a network trained with dropout_p > 0")
        if net.config.head is not HeadKind.GAUSSIAN:
            raise ConfigurationError("MC dropout needs a Gaussian head")
        if n < 1:
            raise DomainError("Number of dropout samples must be positive", [f"n = {n}"])

        rng = np.random.default_rng(seed)
        return [net.forward_gaussian(x, dropout_rng=rng) for _ in range(n)]
