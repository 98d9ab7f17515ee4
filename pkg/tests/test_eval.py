import itertools
import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from app.core import losses
from app.core.config import settings
from app.core.exceptions import DomainError
from app.core.network import Mlp
from app.models.configs import HeadKind, MlpConfig
from app.models.dataset import Dataset
from app.models.evidential import EvidentialParams
from app.models.predictions import EvidentialOutput, GaussianOutput
from app.models.reports import EvalReport
from app.services.baseline_service import BaselineService
from app.services.eval_service import CUTOFF_PERCENTILES, EvaluationService
from app.services.predictors import DropoutPredictor, EnsemblePredictor, EvidentialPredictor
from app.services.training_service import TrainingService

from conftest import sample_nig, schema_validator


@pytest.fixture
def evaluation():
    return EvaluationService(settings.calibration_levels_list, timing_repeats=3)


def brute_force_auc(id_scores, ood_scores) -> float:
    score = 0.0
    for a, b in itertools.product(id_scores, ood_scores):
        score += 1.0 if b > a else 0.5 if b == a else 0.0
    return score / (len(id_scores) * len(ood_scores))


class TestRmse:

    def test_hand_computed(self):
        assert EvaluationService.rmse(np.array([0.0, 0.0]), np.array([3.0, 4.0])) == math.sqrt(12.5)

    def test_perfect_predictions(self):
        assert EvaluationService.rmse(np.arange(5.0), np.arange(5.0)) == 0.0

    def test_matches_direct_formula(self, rng):
        predictions, targets = rng.normal(size=(2, 300))
        expected = math.sqrt(sum((p - t) ** 2 for p, t in zip(predictions, targets)) / 300)
        assert EvaluationService.rmse(predictions, targets) == pytest.approx(expected, rel=1e-13)

    def test_empty(self):
        with pytest.raises(DomainError):
            EvaluationService.rmse(np.array([]), np.array([]))

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            EvaluationService.rmse(np.zeros(3), np.zeros(4))


class TestOodAuc:

    def test_overlapping_scores(self):
        # 6 wins and 2 ties over the 9 pairs
        assert EvaluationService.ood_auc([1, 2, 3], [2, 3, 4]) == pytest.approx(7 / 9, rel=1e-15)
        assert brute_force_auc([1, 2, 3], [2, 3, 4]) == pytest.approx(7 / 9, rel=1e-15)

    def test_separated_scores(self):
        assert EvaluationService.ood_auc([0.1, 0.2], [0.3, 5.0, 9.0]) == 1.0
        assert EvaluationService.ood_auc([0.3, 5.0, 9.0], [0.1, 0.2]) == 0.0

    def test_identical_scores(self):
        assert EvaluationService.ood_auc([1.0] * 4, [1.0] * 7) == 0.5

    def test_monotone_transform_invariance(self, rng):
        id_scores, ood_scores = rng.normal(size=40), rng.normal(0.5, 1.0, size=60)
        assert EvaluationService.ood_auc(id_scores, ood_scores) == EvaluationService.ood_auc(
            np.exp(3.0 * id_scores), np.exp(3.0 * ood_scores)
        )

    @given(
        st.lists(st.integers(-5, 5).map(float), min_size=1, max_size=20),
        st.lists(st.integers(-5, 5).map(float), min_size=1, max_size=20),
    )
    def test_equals_pair_count(self, id_scores, ood_scores):
        assert EvaluationService.ood_auc(id_scores, ood_scores) == brute_force_auc(id_scores, ood_scores)

    @pytest.mark.parametrize("id_scores, ood_scores", [([], [1.0]), ([1.0], [])])
    def test_needs_both_sides(self, id_scores, ood_scores):
        with pytest.raises(DomainError):
            EvaluationService.ood_auc(id_scores, ood_scores)


class TestCutoffCurve:

    def test_percentiles(self, rng):
        curve = EvaluationService.cutoff_curve(rng.random(50), rng.normal(size=50))
        assert [p for p, _ in curve] == [float(p) for p in range(0, 100, 5)]

    def test_first_point_is_global_rmse(self, rng):
        error = rng.normal(size=333)
        curve = EvaluationService.cutoff_curve(rng.random(333), error)
        assert curve[0][1] == EvaluationService.rmse(error, np.zeros_like(error))

    def test_constant_uncertainty_is_flat(self, rng):
        error = rng.normal(size=101)
        curve = EvaluationService.cutoff_curve(np.full(101, 0.3), error)
        global_rmse = EvaluationService.rmse(error, np.zeros_like(error))
        np.testing.assert_allclose([rmse for _, rmse in curve], global_rmse, rtol=1e-12)

    def test_uncertainty_equal_to_error(self, rng):
        error = rng.normal(size=500)
        values = [rmse for _, rmse in EvaluationService.cutoff_curve(np.abs(error), error)]
        assert all(later <= earlier * (1 + 1e-12) for earlier, later in zip(values, values[1:]))
        assert values[-1] < values[0]

    def test_matches_sorting_oracle(self, rng):
        n = 137
        uncertainty, error = rng.random(n), rng.normal(size=n)
        by_confidence = error[np.argsort(uncertainty)]
        for percentile, rmse in EvaluationService.cutoff_curve(uncertainty, error):
            keep = max(1, math.ceil(n * (100 - percentile) / 100))
            expected = math.sqrt(np.mean(by_confidence[:keep] ** 2))
            assert rmse == pytest.approx(expected, rel=1e-12)

    def test_single_sample(self):
        assert EvaluationService.cutoff_curve([1.0], [-2.0]) == [(float(p), 2.0) for p in CUTOFF_PERCENTILES]

    def test_invalid_input(self):
        with pytest.raises(DomainError):
            EvaluationService.cutoff_curve([], [])
        with pytest.raises(DomainError):
            EvaluationService.cutoff_curve([1.0, 2.0], [1.0])


class TestCalibration:

    @staticmethod
    def _tolerance(levels, n):
        return max(4.5 * math.sqrt(c * (1.0 - c) / n) for c in levels)

    def _gaussian_check(self, evaluation, rng, n):
        mu = rng.normal(0.0, 5.0, size=n)
        sigma2 = rng.uniform(0.1, 4.0, size=n)
        output = GaussianOutput(mu=mu, sigma2=sigma2, epistemic_variance=np.zeros(n))
        targets = rng.normal(mu, np.sqrt(sigma2))
        curve = evaluation.calibration_curve(output, targets)
        deviations = np.abs(np.asarray(curve.observed) - np.asarray(curve.levels))
        assert deviations.max() < self._tolerance(curve.levels, n)
        return curve

    def _evidential_check(self, evaluation, rng, n):
        p = EvidentialParams(gamma=1.5, nu=0.8, alpha=3.0, beta=2.0)
        mu, sigma2 = sample_nig(rng, p, n)
        targets = rng.normal(mu, np.sqrt(sigma2))
        output = EvidentialOutput(
            gamma=np.full(n, p.gamma), nu=np.full(n, p.nu), alpha=np.full(n, p.alpha), beta=np.full(n, p.beta)
        )
        curve = evaluation.calibration_curve(output, targets)
        deviations = np.abs(np.asarray(curve.observed) - np.asarray(curve.levels))
        assert deviations.max() < self._tolerance(curve.levels, n)
        return curve

    def test_gaussian_is_calibrated(self, evaluation, rng):
        assert self._gaussian_check(evaluation, rng, 20_000).error < 0.01

    def test_evidential_is_calibrated(self, evaluation, rng):
        assert self._evidential_check(evaluation, rng, 20_000).error < 0.01

    @pytest.mark.slow
    def test_large_sample_calibration(self, evaluation, rng):
        assert self._gaussian_check(evaluation, rng, 100_000).error < 0.01
        assert self._evidential_check(evaluation, rng, 100_000).error < 0.01

    def test_infinite_variance_covers_everything(self, evaluation):
        output = GaussianOutput(mu=np.zeros(10), sigma2=np.full(10, np.inf), epistemic_variance=np.zeros(10))
        curve = evaluation.calibration_curve(output, np.linspace(-100.0, 100.0, 10))
        assert curve.observed == [1.0] * len(curve.levels)
        assert curve.error == pytest.approx(np.mean([1.0 - c for c in curve.levels]), rel=1e-12)

    def test_explicit_levels(self, evaluation):
        output = GaussianOutput(mu=np.zeros(4), sigma2=np.ones(4), epistemic_variance=np.zeros(4))
        curve = evaluation.calibration_curve(output, np.array([0.0, 0.1, 3.0, -3.0]), levels=[0.5, 0.9])
        assert curve.observed == [0.5, 0.5]

    @pytest.mark.parametrize("levels", [[0.5, 0.5], [0.9, 0.1], [0.0, 0.5], [0.5, 1.0], []])
    def test_invalid_levels(self, evaluation, levels):
        output = GaussianOutput(mu=np.zeros(2), sigma2=np.ones(2), epistemic_variance=np.zeros(2))
        with pytest.raises(DomainError):
            evaluation.calibration_curve(output, np.zeros(2), levels=levels)

    def test_empty_targets(self, evaluation):
        output = GaussianOutput(mu=np.zeros(1), sigma2=np.ones(1), epistemic_variance=np.zeros(1))
        with pytest.raises(DomainError):
            evaluation.calibration_curve(output, np.array([]))


class TestPredictiveNll:

    def test_evidential_matches_scalar_loss(self, rng):
        n = 64
        gamma = rng.normal(size=n)
        nu = rng.uniform(0.1, 5.0, size=n)
        alpha = rng.uniform(1.1, 10.0, size=n)
        beta = rng.uniform(0.1, 5.0, size=n)
        targets = gamma + rng.normal(size=n)
        output = EvidentialOutput(gamma=gamma, nu=nu, alpha=alpha, beta=beta)

        expected = np.mean([
            losses.evidential_nll(y, EvidentialParams(gamma=g, nu=v, alpha=a, beta=b))
            for y, g, v, a, b in zip(targets, gamma, nu, alpha, beta)
        ])
        assert EvaluationService.predictive_nll(output, targets) == pytest.approx(expected, rel=1e-12)

    def test_gaussian(self):
        output = GaussianOutput(mu=[0.0], sigma2=[1.0], epistemic_variance=[0.0])
        assert EvaluationService.predictive_nll(output, np.array([1.0])) == pytest.approx(
            0.5 * math.log(2 * math.pi) + 0.5, rel=1e-15
        )


class TestReports:

    @pytest.fixture
    def predictor(self):
        return EvidentialPredictor(Mlp(MlpConfig(input_dim=1, hidden_layers=[8]), rng=np.random.default_rng(0)))

    @pytest.fixture
    def test_set(self):
        x = np.linspace(-3.0, 3.0, 40)
        return Dataset(features=x, targets=x ** 3, name="in-range")

    def test_timing_counts_passes(self, evaluation):
        config = MlpConfig(input_dim=1, hidden_layers=[8], head=HeadKind.GAUSSIAN, dropout_p=0.1)
        dropout = DropoutPredictor(
            Mlp(config, rng=np.random.default_rng(0)), samples=5, seed=0,
            baseline_service=BaselineService(TrainingService()),
        )
        evidential = EvidentialPredictor(Mlp(MlpConfig(input_dim=1, hidden_layers=[8]), rng=np.random.default_rng(0)))
        x = np.zeros((16, 1))

        single = evaluation.time_inference(evidential, x)
        sampled = evaluation.time_inference(dropout, x, repeats=2)
        assert (single.passes, single.repeats, single.batch_rows) == (1, 3, 16)
        assert (sampled.passes, sampled.repeats) == (5, 2)
        assert single.seconds_per_batch > 0

    def test_single_pass_against_five_member_ensemble(self, evaluation):
        hidden = [100, 100, 100]
        evidential = EvidentialPredictor(Mlp(MlpConfig(input_dim=1, hidden_layers=hidden), rng=np.random.default_rng(0)))
        gaussian = MlpConfig(input_dim=1, hidden_layers=hidden, head=HeadKind.GAUSSIAN)
        ensemble = EnsemblePredictor(
            [Mlp(gaussian, rng=np.random.default_rng(seed)) for seed in range(5)],
            BaselineService(TrainingService()),
        )
        x = np.random.default_rng(1).uniform(-6.0, 6.0, (10_000, 1))

        single = evaluation.time_inference(evidential, x)
        sampled = evaluation.time_inference(ensemble, x)
        assert (single.passes, sampled.passes) == (1, 5)
        assert single.batch_rows == sampled.batch_rows == 10_000

        # wall clock depends on the machine, so a small ratio only warns
        ratio = sampled.seconds_per_batch / single.seconds_per_batch
        if ratio < 2.0:
            warnings.warn(f"5-member ensemble only {ratio:.2f}x slower than one evidential pass")

    def test_no_auc_without_ood(self, evaluation, predictor, test_set):
        report = evaluation.evaluate(predictor, test_set)
        assert report.ood_auc is None
        assert report.mean_entropy_ood is None
        assert report.method == "evidential"
        assert len(report.cutoff_curve) == 20

    def test_auc_with_ood(self, evaluation, predictor, test_set):
        x = np.linspace(4.5, 6.0, 10)
        report = evaluation.evaluate(predictor, test_set, Dataset(features=x, targets=x ** 3, name="beyond"))
        assert 0.0 <= report.ood_auc <= 1.0
        assert report.mean_entropy_ood is not None

    def test_json_round_trip(self, evaluation, predictor, test_set):
        report = evaluation.evaluate(predictor, test_set)
        assert EvalReport.model_validate_json(report.model_dump_json()) == report

    def test_schema_file_lists_report_fields(self):
        schema = schema_validator("report.schema.json").schema
        generated = EvalReport.model_json_schema()
        assert set(schema["properties"]) == set(generated["properties"])
        assert set(schema["required"]) == set(generated["required"])

    def test_serialized_report_matches_schema(self, evaluation, predictor, test_set):
        x = np.linspace(4.5, 6.0, 10)
        report = evaluation.evaluate(predictor, test_set, Dataset(features=x, targets=x ** 3, name="beyond"))
        validator = schema_validator("report.schema.json")
        document = json.loads(report.model_dump_json())
        validator.validate(document)

        document["rmse"] = -1.0
        document["timing"]["passes"] = 0
        assert len(list(validator.iter_errors(document))) == 2

    def test_entropy_cdf(self):
        values, fractions = EvaluationService.entropy_cdf(np.array([0.3, -1.0, 2.0, 0.3]))
        np.testing.assert_array_equal(values, [-1.0, 0.3, 0.3, 2.0])
        np.testing.assert_array_equal(fractions, [0.25, 0.5, 0.75, 1.0])
