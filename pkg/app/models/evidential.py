from pydantic import BaseModel, ConfigDict


class EvidentialParams(BaseModel):
    """Normal-Inverse-Gamma hyperparameters for a single target"""
    model_config = ConfigDict(frozen=True)

    gamma: float  # location, target units
    nu: float  # virtual observations supporting the mean
    alpha: float  # virtual observations supporting the variance
    beta: float  # scaled sum of squared deviations, target units^2


class PredictiveSummary(BaseModel):
    """Point prediction and uncertainty moments of one evidential output"""
    model_config = ConfigDict(frozen=True)

    prediction: float
    aleatoric: float
    epistemic: float
    total_evidence: float
    entropy: float  # nats


class GaussianPrediction(BaseModel):
    """Uncertainty summary of a Gaussian-output baseline at one input"""
    model_config = ConfigDict(frozen=True)

    mu: float
    sigma2: float  # aleatoric variance
    epistemic: float = 0.0
    entropy: float

    @property
    def total_variance(self) -> float:
        return self.sigma2 + self.epistemic
