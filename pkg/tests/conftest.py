import json
import math
from pathlib import Path

import numpy as np
import pytest
from jsonschema import Draft202012Validator
from scipy import integrate, stats

from app.models.configs import MlpConfig, TrainConfig, LossConfig
from app.models.dataset import Dataset
from app.models.evidential import EvidentialParams

SCHEMAS = Path(__file__).resolve().parents[1] / "schemas"


def schema_validator(name: str) -> Draft202012Validator:
    """Validator for one of the published report schemas"""
    schema = json.loads((SCHEMAS / name).read_text(encoding="utf-8"))
    Draft202012Validator.check_schema(schema)
    return Draft202012Validator(schema)


def sample_nig(rng: np.random.Generator, p: EvidentialParams, size: int):
    """Draw (mu, sigma2): sigma2 ~ InverseGamma(alpha, beta), mu ~ Normal(gamma, sigma2 / nu)"""
    sigma2 = p.beta / rng.gamma(p.alpha, 1.0, size)
    mu = rng.normal(p.gamma, np.sqrt(sigma2 / p.nu))
    return mu, sigma2


def random_params(rng: np.random.Generator, count: int):
    """Valid parameters spanning nu in [0.1, 50], alpha in [1.05, 30], beta in [0.1, 20]"""
    return [
        EvidentialParams(
            gamma=float(rng.normal(0.0, 3.0)),
            nu=float(np.exp(rng.uniform(np.log(0.1), np.log(50.0)))),
            alpha=float(rng.uniform(1.05, 30.0)),
            beta=float(np.exp(rng.uniform(np.log(0.1), np.log(20.0)))),
        )
        for _ in range(count)
    ]


def evidence_by_quadrature(y: float, p: EvidentialParams) -> float:
    """
    p(y) = int N(y; gamma, sigma2 (1 + 1/nu)) InvGamma(sigma2; alpha, beta) dsigma2

    The mean is integrated out analytically; sigma2 is integrated on a log
    scale around the inverse-gamma mode.
    """
    log_mode = math.log(p.beta / p.alpha)
    width = 1.0 / math.sqrt(p.alpha)
    log_norm = p.alpha * math.log(p.beta) - math.lgamma(p.alpha)

    def integrand(s):
        sigma2 = math.exp(s)
        variance = sigma2 * (1.0 + 1.0 / p.nu)
        log_value = (
            -0.5 * math.log(2.0 * math.pi * variance)
            - (y - p.gamma) ** 2 / (2.0 * variance)
            + log_norm
            - p.alpha * s
            - p.beta / sigma2
        )
        return math.exp(log_value)

    points = [log_mode + k * width for k in (-3, -1, 0, 1, 3)]
    value, _ = integrate.quad(
        integrand, log_mode - 40.0 * width - 5.0, log_mode + 60.0,
        points=points, limit=500, epsabs=0.0, epsrel=1e-12,
    )
    return value


def evidence_by_double_quadrature(y: float, p: EvidentialParams) -> float:
    """int int N(y; mu, sigma2) NIG(mu, sigma2) dmu dsigma2 over both variables"""
    def integrand(mu, sigma2):
        return (
            stats.norm.pdf(y, mu, math.sqrt(sigma2))
            * stats.norm.pdf(mu, p.gamma, math.sqrt(sigma2 / p.nu))
            * stats.invgamma.pdf(sigma2, p.alpha, scale=p.beta)
        )

    def lower(sigma2):
        return p.gamma - 40.0 * math.sqrt(sigma2 / p.nu)

    def upper(sigma2):
        return p.gamma + 40.0 * math.sqrt(sigma2 / p.nu)

    total = 0.0
    for a, b in ((0.0, 1.0), (1.0, 100.0), (100.0, np.inf)):
        value, _ = integrate.dblquad(integrand, a, b, lower, upper, epsabs=1e-12, epsrel=1e-10)
        total += value
    return total


@pytest.fixture
def rng():
    return np.random.default_rng(20240617)


@pytest.fixture
def unit_params():
    return EvidentialParams(gamma=0.0, nu=1.0, alpha=2.0, beta=1.0)


@pytest.fixture
def linear_data():
    """Noiseless y = 2x + 1 on [-1, 1]"""
    x = np.random.default_rng(7).uniform(-1.0, 1.0, size=256)
    return Dataset(features=x, targets=2.0 * x + 1.0, name="linear")


@pytest.fixture
def small_cubic():
    x = np.random.default_rng(3).uniform(-4.0, 4.0, size=96)
    return Dataset(features=x, targets=x ** 3 / 10.0, name="small-cubic")


@pytest.fixture
def tiny_mlp():
    return MlpConfig(input_dim=1, hidden_layers=[8], targets=1)


@pytest.fixture
def short_training():
    return TrainConfig(learning_rate=5e-3, iterations=40, batch_size=16, seed=11, loss=LossConfig(lam=0.01))
