from typing import List, Optional, Sequence, Tuple
import logging
import time

import numpy as np
from scipy import stats

from app.core.exceptions import DomainError
from app.models.dataset import Dataset
from app.models.predictions import PredictiveBatch
from app.models.reports import CalibrationCurve, EvalReport, Timing
from app.services.predictors import Predictor

logger = logging.getLogger(__name__)

CUTOFF_PERCENTILES = tuple(range(0, 100, 5))


class EvaluationService:
    """Service for uncertainty-quality metrics"""

    def __init__(self, levels: Sequence[float], timing_repeats: int = 20, schema_version: int = 1):
        self.levels = list(levels)
        self.timing_repeats = timing_repeats
        self.schema_version = schema_version

    # Metrics -----------------------------------------------------------------

    @staticmethod
    def rmse(predictions: np.ndarray, targets: np.ndarray) -> float:
        predictions = np.asarray(predictions, dtype=np.float64).reshape(-1)
        targets = np.asarray(targets, dtype=np.float64).reshape(-1)
        if predictions.size == 0:
            raise DomainError("RMSE of an empty set")
        if predictions.size != targets.size:
            raise DomainError(f"{predictions.size} predictions for {targets.size} targets")
        residual = predictions - targets
        return float(np.sqrt(np.mean(residual * residual)))

    @staticmethod
    def predictive_nll(output: PredictiveBatch, targets: np.ndarray) -> float:
        """Mean negative log predictive density per target entry"""
        targets = np.asarray(targets, dtype=np.float64)
        if targets.size == 0:
            raise DomainError("NLL of an empty set")
        return float(-np.mean(output.log_density(targets)))

    def calibration_curve(self, output: PredictiveBatch, targets: np.ndarray,
                          levels: Optional[Sequence[float]] = None) -> CalibrationCurve:
        """
        Coverage of central predictive intervals

        Args:
            output: Predictive distributions for the samples
            targets: Observed targets, aligned with ``output``
            levels: Strictly increasing confidence levels in (0, 1)

        Returns:
            CalibrationCurve with observed coverage per level and the mean
            absolute deviation from the identity as its error

        Raises:
            DomainError: On empty targets or invalid levels
        """
        levels = list(self.levels if levels is None else levels)
        targets = np.asarray(targets, dtype=np.float64)
        if targets.size == 0:
            raise DomainError("Calibration of an empty set")
        if targets.ndim == 1:
            targets = targets.reshape(-1, 1)
        if not levels or any(not 0.0 < c < 1.0 for c in levels) or any(
                b <= a for a, b in zip(levels, levels[1:])):
            raise DomainError("Confidence levels must be strictly increasing in (0, 1)")

        observed = []
        for level in levels:
            low, high = output.central_interval(level)
            observed.append(float(np.mean((targets >= low) & (targets <= high))))

        error = float(np.mean(np.abs(np.asarray(observed) - np.asarray(levels))))
        return CalibrationCurve(levels=levels, observed=observed, error=error)

    @staticmethod
    def cutoff_curve(uncertainty: np.ndarray, error: np.ndarray) -> List[Tuple[float, float]]:
        """
        RMSE of the most confident samples as the least confident are removed

        Samples tied with the last retained one share the remaining slots
        equally, so constant uncertainty gives a flat curve.

        Returns:
            (percentile removed, rmse) for percentiles 0, 5, ..., 95
        """
        uncertainty = np.asarray(uncertainty, dtype=np.float64).reshape(-1)
        error = np.asarray(error, dtype=np.float64).reshape(-1)
        if uncertainty.size == 0:
            raise DomainError("Cutoff curve of an empty set")
        if uncertainty.size != error.size:
            raise DomainError(f"{uncertainty.size} uncertainties for {error.size} errors")

        n = error.size
        ranked = np.sort(uncertainty)
        squared = error * error
        curve = []
        for percentile in CUTOFF_PERCENTILES:
            keep = max(1, int(np.ceil(n * (100 - percentile) / 100)))
            threshold = ranked[keep - 1]
            below = uncertainty < threshold
            tied = uncertainty == threshold
            n_below = int(below.sum())
            n_tied = int(tied.sum())
            if n_below + n_tied == keep:
                # Boolean masks keep the original order, so percentile 0 is
                # bit-equal to the global RMSE
                kept = error[below | tied]
                rmse = np.sqrt(np.mean(kept * kept))
            else:
                share = (keep - n_below) / n_tied
                rmse = np.sqrt((squared[below].sum() + share * squared[tied].sum()) / keep)
            curve.append((float(percentile), float(rmse)))
        return curve

    @staticmethod
    def ood_auc(id_scores: np.ndarray, ood_scores: np.ndarray) -> float:
        """
        P(ood score > id score) + P(equal) / 2, from the Mann-Whitney rank sum

        Raises:
            DomainError: If either side is empty
        """
        id_scores = np.asarray(id_scores, dtype=np.float64).reshape(-1)
        ood_scores = np.asarray(ood_scores, dtype=np.float64).reshape(-1)
        if id_scores.size == 0 or ood_scores.size == 0:
            raise DomainError("AUC needs in-distribution and out-of-distribution scores")

        ranks = stats.rankdata(np.concatenate([id_scores, ood_scores]))
        n_ood = ood_scores.size
        u_statistic = ranks[id_scores.size:].sum() - n_ood * (n_ood + 1) / 2.0
        return float(u_statistic / (id_scores.size * n_ood))

    @staticmethod
    def entropy_cdf(entropy: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Sorted entropy values and their empirical cumulative fractions"""
        values = np.sort(np.asarray(entropy, dtype=np.float64).reshape(-1))
        return values, np.arange(1, values.size + 1) / values.size

    def time_inference(self, predictor: Predictor, features: np.ndarray, repeats: Optional[int] = None) -> Timing:
        """Median wall-clock of one batched prediction after a warm-up call"""
        repeats = self.timing_repeats if repeats is None else repeats
        predictor.predict(features)
        durations = []
        for _ in range(repeats):
            start = time.perf_counter()
            predictor.predict(features)
            durations.append(time.perf_counter() - start)
        return Timing(
            seconds_per_batch=float(np.median(durations)),
            passes=predictor.passes,
            repeats=repeats,
            batch_rows=int(np.asarray(features).shape[0]),
        )

    # Reports -----------------------------------------------------------------

    @staticmethod
    def sample_entropy(output: PredictiveBatch) -> np.ndarray:
        """Per-sample entropy, averaged over target dimensions"""
        return output.entropy.mean(axis=1)

    def evaluate(self, predictor: Predictor, test: Dataset, ood: Optional[Dataset] = None,
                 timing_repeats: Optional[int] = None) -> EvalReport:
        """
        Full report for ``predictor`` on raw (unnormalized) test data

        Args:
            predictor: Trained model
            test: In-distribution test set in target units
            ood: Optional out-of-distribution set; enables the entropy AUC
            timing_repeats: Overrides the configured number of timing repeats

        Returns:
            EvalReport in target units
        """
        output = predictor.predict(test.features)
        residual = output.prediction - test.targets
        entropy_id = self.sample_entropy(output)

        ood_auc = None
        mean_entropy_ood = None
        if ood is not None:
            entropy_ood = self.sample_entropy(predictor.predict(ood.features))
            ood_auc = self.ood_auc(entropy_id, entropy_ood)
            mean_entropy_ood = float(entropy_ood.mean())

        report = EvalReport(
            schema_version=self.schema_version,
            method=predictor.method,
            rmse=self.rmse(output.prediction, test.targets),
            nll=self.predictive_nll(output, test.targets),
            calibration=self.calibration_curve(output, test.targets),
            cutoff_curve=self.cutoff_curve(output.epistemic, residual),
            ood_auc=ood_auc,
            timing=self.time_inference(predictor, test.features, timing_repeats),
            mean_entropy_id=float(entropy_id.mean()),
            mean_entropy_ood=mean_entropy_ood,
        )
        logger.info(
            f"{predictor.method}: RMSE {report.rmse:.4f}, NLL {report.nll:.4f}, "
            f"calibration error {report.calibration.error:.4f}"
        )
        return report
