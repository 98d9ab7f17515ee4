from pydantic import BaseModel, Field, model_validator
from typing import Dict, List, Optional, Tuple


class LossTrace(BaseModel):
    """Per-iteration batch means of the training objective"""
    iteration: List[int] = Field(default_factory=list)
    mean_loss: List[float] = Field(default_factory=list)
    mean_nll: List[float] = Field(default_factory=list)
    mean_reg: List[float] = Field(default_factory=list)

    def append(self, iteration: int, loss: float, nll: float, reg: float) -> None:
        self.iteration.append(iteration)
        self.mean_loss.append(loss)
        self.mean_nll.append(nll)
        self.mean_reg.append(reg)


class CalibrationCurve(BaseModel):
    """Observed coverage of central predictive intervals per confidence level"""
    levels: List[float]
    observed: List[float]
    error: float = Field(..., ge=0.0)

    @model_validator(mode="after")
    def _check(self) -> "CalibrationCurve":
        if len(self.levels) != len(self.observed):
            raise ValueError("levels and observed must have equal length")
        if any(not 0.0 <= value <= 1.0 for value in self.observed):
            raise ValueError("observed coverage must lie in [0, 1]")
        return self


class Timing(BaseModel):
    """Median wall-clock of one batched prediction"""
    seconds_per_batch: float
    passes: int  # forward passes per prediction
    repeats: int
    batch_rows: int


class EvalReport(BaseModel):
    """Uncertainty-quality metrics of one method on one test set (target units)"""
    schema_version: int
    method: str
    rmse: float
    nll: float
    calibration: CalibrationCurve
    cutoff_curve: List[Tuple[float, float]]  # (percentile removed, rmse)
    ood_auc: Optional[float] = Field(None, ge=0.0, le=1.0)
    timing: Timing
    mean_entropy_id: Optional[float] = None
    mean_entropy_ood: Optional[float] = None


class MetricSummary(BaseModel):
    """Mean and standard error across trials"""
    mean: float
    stderr: float


class BenchmarkTrial(BaseModel):
    trial: int
    method: str
    rmse: float
    nll: float
    inference_ms: float


class BenchmarkRow(BaseModel):
    """One row in the RMSE / NLL / speed table"""
    method: str
    trials: int
    rmse: MetricSummary
    nll: MetricSummary
    inference_ms: MetricSummary
    reference: Optional[Dict[str, str]] = None


class BenchmarkReport(BaseModel):
    schema_version: int
    dataset: str
    rows: List[BenchmarkRow]
    trials: List[BenchmarkTrial]


class LambdaRecord(BaseModel):
    """
    Epistemic variance inside and outside the training range for one lambda.

    Summary fields are medians over ``repeats`` independently seeded fits;
    the per-fit values are kept in ``seeds``, ``ood_id_ratios`` and ``ood_aucs``.
    """
    lam: float
    regularizer_kind: str
    repeats: int = 1
    mean_epistemic_id: float
    mean_epistemic_ood: float
    ood_id_ratio: float
    mean_entropy_id: float
    mean_entropy_ood: float
    ood_auc: float
    seeds: List[int] = Field(default_factory=list)
    ood_id_ratios: List[float] = Field(default_factory=list)
    ood_aucs: List[float] = Field(default_factory=list)


class LambdaAblationReport(BaseModel):
    schema_version: int
    records: List[LambdaRecord]


class ComparisonReport(BaseModel):
    schema_version: int
    reports: List[EvalReport]
