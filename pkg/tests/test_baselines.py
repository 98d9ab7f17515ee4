import math

import numpy as np
import pytest
from scipy import special, stats

from app.core import losses
from app.core.exceptions import ConfigurationError
from app.core.network import Mlp, ParameterStore
from app.models.configs import Activation, HeadKind, MlpConfig, TrainConfig
from app.services.baseline_service import BaselineService, _mean_and_spread, derive_seeds
from app.services.data_service import DataService
from app.services.predictors import GaussianPredictor
from app.services.training_service import TrainingService

CONSTANT = MlpConfig(input_dim=1, hidden_layers=[], head=HeadKind.GAUSSIAN)


def constant_member(mu: float, raw_sigma2: float = 0.0) -> Mlp:
    """Network that ignores its input: weights zero, biases (mu, raw sigma2)"""
    return Mlp(CONSTANT, store=ParameterStore.from_values(np.array([0.0, 0.0, mu, raw_sigma2])))


@pytest.fixture
def baselines():
    return BaselineService(TrainingService(), max_workers=2)


class TestEnsemblePredict:

    def test_two_members(self, baselines):
        output = baselines.ensemble_predict([constant_member(0.0), constant_member(2.0)], np.zeros((3, 1)))
        np.testing.assert_array_equal(output.mu, np.ones((3, 1)))
        np.testing.assert_allclose(output.epistemic, 1.0, rtol=1e-15)
        np.testing.assert_allclose(output.aleatoric, math.log(2.0) + 1e-6, rtol=1e-15)

    def test_identical_members_have_no_spread(self, baselines):
        members = [constant_member(0.1), constant_member(0.1), constant_member(0.1)]
        output = baselines.ensemble_predict(members, np.zeros((4, 1)))
        assert np.all(output.mu == 0.1)
        assert np.all(output.epistemic == 0.0)

    def test_member_order_does_not_matter(self, baselines):
        members = [constant_member(mu, s) for mu, s in ((0.3, -1.0), (-2.0, 0.5), (7.1, 2.0), (1.0, 0.0))]
        x = np.zeros((2, 1))
        forward = baselines.ensemble_predict(members, x)
        backward = baselines.ensemble_predict(members[::-1], x)
        np.testing.assert_allclose(forward.mu, backward.mu, rtol=1e-14)
        np.testing.assert_allclose(forward.epistemic, backward.epistemic, rtol=1e-14)
        np.testing.assert_allclose(forward.aleatoric, backward.aleatoric, rtol=1e-14)

    def test_total_is_aleatoric_plus_epistemic(self, baselines):
        members = [constant_member(mu, s) for mu, s in ((0.3, -1.0), (-2.0, 0.5))]
        output = baselines.ensemble_predict(members, np.zeros((1, 1)))
        assert output.total_variance[0, 0] == output.aleatoric[0, 0] + output.epistemic[0, 0]

    def test_single_input_view(self, baselines):
        members = [constant_member(mu, s) for mu, s in ((0.3, -1.0), (-2.0, 0.5))]
        output = baselines.ensemble_predict(members, np.zeros((2, 1)))
        view = output.at(1)
        assert view.mu == output.mu[1, 0]
        assert view.sigma2 == output.aleatoric[1, 0]
        assert view.epistemic == output.epistemic[1, 0]
        assert view.total_variance == output.total_variance[1, 0]
        assert view.entropy == pytest.approx(0.5 * math.log(2.0 * math.pi * math.e * view.total_variance), rel=1e-14)

    def test_density_is_the_mixture(self, baselines):
        params = ((0.3, -1.0), (-2.0, 0.5), (4.0, 2.0))
        output = baselines.ensemble_predict([constant_member(mu, s) for mu, s in params], np.zeros((5, 1)))
        y = np.array([-3.0, -0.5, 0.0, 2.2, 9.0])

        sigma2 = [float(np.log1p(np.exp(s))) + 1e-6 for _, s in params]
        member_logpdf = np.array([stats.norm.logpdf(y, mu, math.sqrt(s2)) for (mu, _), s2 in zip(params, sigma2)])
        expected = special.logsumexp(member_logpdf, axis=0) - math.log(3)

        np.testing.assert_allclose(output.log_density(y)[:, 0], expected, rtol=1e-10, atol=1e-12)

    def test_identical_members_match_single_gaussian(self, baselines):
        output = baselines.ensemble_predict([constant_member(0.5, 1.0)] * 5, np.zeros((1, 1)))
        sigma2 = float(np.log1p(np.exp(1.0))) + 1e-6
        assert -output.log_density(np.array([1.7]))[0, 0] == pytest.approx(
            losses.gaussian_nll(1.7, 0.5, sigma2), rel=1e-12
        )

    def test_needs_two_members(self, baselines):
        with pytest.raises(ConfigurationError):
            baselines.ensemble_predict([constant_member(0.0)], np.zeros((1, 1)))


class TestMeanAndSpread:

    def test_matches_two_pass(self, rng):
        for _ in range(1000):
            count = int(rng.integers(2, 12))
            values = rng.normal(rng.normal(0.0, 100.0), rng.uniform(0.01, 10.0), size=(count, 3))
            mean, spread = _mean_and_spread(values)
            np.testing.assert_allclose(mean, values.mean(axis=0), rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(spread, ((values - values.mean(axis=0)) ** 2).sum(axis=0), rtol=1e-8, atol=1e-9)

    def test_large_offset(self):
        values = np.array([1e9 + 1.0, 1e9 + 2.0, 1e9 + 3.0])
        mean, spread = _mean_and_spread(values)
        assert mean == 1e9 + 2.0
        assert spread == 2.0


class TestDropoutPredict:

    @pytest.fixture
    def dropout_net(self):
        config = MlpConfig(input_dim=1, hidden_layers=[16], head=HeadKind.GAUSSIAN, dropout_p=0.1)
        return Mlp(config, rng=np.random.default_rng(0))

    def test_needs_two_samples(self, baselines, dropout_net):
        with pytest.raises(ConfigurationError):
            baselines.dropout_predict(dropout_net, np.zeros((1, 1)), 1, seed=0)

    def test_equal_samples_have_no_epistemic(self, baselines, dropout_net, monkeypatch):
        pass_output = (np.full((4, 1), 0.7), np.full((4, 1), 0.2))
        monkeypatch.setattr(
            baselines.training_service, "mc_dropout_forward", lambda net, x, n, seed: [pass_output] * n
        )
        output = baselines.dropout_predict(dropout_net, np.zeros((4, 1)), 5, seed=0)
        assert np.all(output.epistemic == 0.0)
        assert np.all(output.mu == 0.7)
        np.testing.assert_allclose(output.aleatoric, 0.2, rtol=1e-15)

    def test_unbiased_spread(self, baselines, dropout_net, monkeypatch):
        passes = [(np.full((1, 1), mu), np.ones((1, 1))) for mu in (1.0, 2.0, 3.0)]
        monkeypatch.setattr(baselines.training_service, "mc_dropout_forward", lambda net, x, n, seed: passes)
        output = baselines.dropout_predict(dropout_net, np.zeros((1, 1)), 3, seed=0)
        assert output.epistemic[0, 0] == pytest.approx(1.0, rel=1e-15)

    def test_seed_reproducible(self, baselines, dropout_net):
        x = np.linspace(-1.0, 1.0, 7).reshape(-1, 1)
        first = baselines.dropout_predict(dropout_net, x, 5, seed=3)
        second = baselines.dropout_predict(dropout_net, x, 5, seed=3)
        np.testing.assert_array_equal(first.mu, second.mu)
        np.testing.assert_array_equal(first.epistemic, second.epistemic)
        assert first.epistemic.max() > 0


class TestTraining:

    def test_derived_seeds_are_stable_and_distinct(self):
        assert derive_seeds(5, 4) == derive_seeds(5, 4)
        assert len(set(derive_seeds(5, 4))) == 4

    def test_ensemble_is_deterministic(self, baselines, small_cubic):
        config = MlpConfig(input_dim=1, hidden_layers=[8])
        cfg = TrainConfig(iterations=20, batch_size=16, seed=4)
        first = baselines.train_ensemble(small_cubic, config, cfg, members=3)
        second = BaselineService(TrainingService(), max_workers=1).train_ensemble(small_cubic, config, cfg, members=3)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.net.store.values, b.net.store.values)
            assert a.net.config.head is HeadKind.GAUSSIAN
        assert not np.array_equal(first[0].net.store.values, first[1].net.store.values)

    def test_ensemble_needs_two_members(self, baselines, small_cubic):
        with pytest.raises(ConfigurationError):
            baselines.train_ensemble(small_cubic, MlpConfig(input_dim=1), TrainConfig(iterations=1), members=1)

    def test_dropout_needs_positive_rate(self, baselines, small_cubic):
        with pytest.raises(ConfigurationError):
            baselines.train_dropout(small_cubic, MlpConfig(input_dim=1), TrainConfig(iterations=1), p=0.0)

    def test_gaussian_variance_shrinks_on_noiseless_data(self, baselines, linear_data):
        config = MlpConfig(input_dim=1, hidden_layers=[16], activation=Activation.TANH)
        net = baselines.train_gaussian_mle(
            linear_data, config, TrainConfig(learning_rate=1e-2, iterations=2000, seed=0)
        ).net
        output = GaussianPredictor(net).predict(linear_data.features)
        assert float(np.median(output.aleatoric)) < 0.05

    @pytest.mark.slow
    def test_gaussian_tracks_heteroscedastic_noise(self, baselines):
        data_service = DataService()
        raw_train = data_service.gen_heteroscedastic(n=2000, seed=0)
        raw_test = data_service.gen_heteroscedastic(n=500, seed=1)
        train, test = data_service.normalize(raw_train, raw_test)

        config = MlpConfig(input_dim=1, hidden_layers=[50, 50])
        cfg = TrainConfig(learning_rate=5e-3, iterations=5000, batch_size=128, seed=0)
        net = baselines.train_gaussian_mle(train, config, cfg).net
        predicted_sd = np.sqrt(GaussianPredictor(net).predict(test.features).aleatoric[:, 0])

        r, _ = stats.pearsonr(predicted_sd, test.noise_sd[:, 0])
        assert r > 0.8
