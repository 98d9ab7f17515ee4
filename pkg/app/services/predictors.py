"""
Trained models behind one interface: raw features in, predictive distributions
in target units out.
"""
from abc import ABC, abstractmethod
from typing import List, Optional

import numpy as np

from app.core.network import Mlp
from app.models.dataset import NormalizationStats
from app.models.predictions import GaussianOutput, PredictiveBatch
from app.services.baseline_service import BaselineService


class Predictor(ABC):
    """Wraps trained networks and the normalization they were trained under"""

    method: str = "model"

    def __init__(self, feature_stats: Optional[NormalizationStats] = None,
                 target_stats: Optional[NormalizationStats] = None):
        self.feature_stats = feature_stats
        self.target_stats = target_stats

    @property
    @abstractmethod
    def passes(self) -> int:
        """Forward passes needed for one prediction"""

    @property
    @abstractmethod
    def networks(self) -> List[Mlp]:
        ...

    @abstractmethod
    def _predict_normalized(self, x: np.ndarray) -> PredictiveBatch:
        ...

    def predict(self, features: np.ndarray) -> PredictiveBatch:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if self.feature_stats is not None:
            x = self.feature_stats.apply(x)
        output = self._predict_normalized(x)
        if self.target_stats is not None:
            output = output.denormalize(self.target_stats)
        return output


class EvidentialPredictor(Predictor):
    method = "evidential"

    def __init__(self, net: Mlp, **stats):
        super().__init__(**stats)
        self.net = net

    @property
    def passes(self) -> int:
        return 1

    @property
    def networks(self) -> List[Mlp]:
        return [self.net]

    def _predict_normalized(self, x: np.ndarray) -> PredictiveBatch:
        return self.net.forward_evidential(x)


class GaussianPredictor(Predictor):
    method = "gaussian"

    def __init__(self, net: Mlp, **stats):
        super().__init__(**stats)
        self.net = net

    @property
    def passes(self) -> int:
        return 1

    @property
    def networks(self) -> List[Mlp]:
        return [self.net]

    def _predict_normalized(self, x: np.ndarray) -> PredictiveBatch:
        mu, sigma2 = self.net.forward_gaussian(x)
        return GaussianOutput(mu=mu, sigma2=sigma2, epistemic_variance=np.zeros_like(mu))


class EnsemblePredictor(Predictor):
    method = "ensemble"

    def __init__(self, members: List[Mlp], baseline_service: BaselineService, **stats):
        super().__init__(**stats)
        self.members = list(members)
        self.baseline_service = baseline_service

    @property
    def passes(self) -> int:
        return len(self.members)

    @property
    def networks(self) -> List[Mlp]:
        return self.members

    def _predict_normalized(self, x: np.ndarray) -> PredictiveBatch:
        return self.baseline_service.ensemble_predict(self.members, x)


class DropoutPredictor(Predictor):
    method = "dropout"

    def __init__(self, net: Mlp, samples: int, seed: int, baseline_service: BaselineService, **stats):
        super().__init__(**stats)
        self.net = net
        self.samples = samples
        self.seed = seed
        self.baseline_service = baseline_service

    @property
    def passes(self) -> int:
        return self.samples

    @property
    def networks(self) -> List[Mlp]:
        return [self.net]

    def _predict_normalized(self, x: np.ndarray) -> PredictiveBatch:
        return self.baseline_service.dropout_predict(self.net, x, self.samples, self.seed)
