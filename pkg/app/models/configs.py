from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class RegularizerKind(str, Enum):
    ABS_ERROR = "abs_error"
    STANDARD_SCORE = "standard_score"
    SOFT_KL = "soft_kl"


class HeadKind(str, Enum):
    EVIDENTIAL = "evidential"
    GAUSSIAN = "gaussian"
    POINT = "point"


class Activation(str, Enum):
    RELU = "relu"
    TANH = "tanh"


# Output neurons per target for each head
HEAD_WIDTH = {HeadKind.EVIDENTIAL: 4, HeadKind.GAUSSIAN: 2, HeadKind.POINT: 1}


class LossConfig(BaseModel):
    """Evidential objective: NLL + lam * regularizer"""
    model_config = ConfigDict(frozen=True)

    lam: float = Field(0.0, ge=0.0)
    regularizer_kind: RegularizerKind = RegularizerKind.ABS_ERROR
    epsilon: Optional[float] = None  # soft_kl only

    @model_validator(mode="after")
    def _check_epsilon(self) -> "LossConfig":
        if self.regularizer_kind is RegularizerKind.SOFT_KL:
            if self.epsilon is None or not self.epsilon > 0:
                raise ValueError("soft_kl regularizer needs epsilon > 0")
        return self


class MlpConfig(BaseModel):
    """Fully connected network with an uncertainty head"""
    model_config = ConfigDict(frozen=True)

    input_dim: int = Field(..., gt=0)
    hidden_layers: List[int] = Field(default_factory=lambda: [50])
    targets: int = Field(1, gt=0)
    head: HeadKind = HeadKind.EVIDENTIAL
    activation: Activation = Activation.RELU
    dropout_p: float = Field(0.0, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check_hidden(self) -> "MlpConfig":
        if any(width <= 0 for width in self.hidden_layers):
            raise ValueError("hidden layer widths must be positive")
        return self

    @property
    def output_dim(self) -> int:
        return self.targets * HEAD_WIDTH[self.head]

    @property
    def layer_sizes(self) -> List[int]:
        return [self.input_dim, *self.hidden_layers, self.output_dim]


class TrainConfig(BaseModel):
    """Optimizer and schedule; defaults follow the cubic toy setup"""
    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(5e-3, gt=0.0)
    iterations: int = Field(5000, gt=0)
    batch_size: int = Field(128, gt=0)
    seed: int = Field(0, ge=0)
    loss: LossConfig = LossConfig(lam=0.01)
    log_every: int = Field(500, gt=0)


class Command(str, Enum):
    GENERATE = "generate"
    TRAIN = "train"
    EVAL = "eval"
    BENCHMARK = "benchmark"
    ABLATE_LAMBDA = "ablate-lambda"
    COMPARE = "compare"


class Method(str, Enum):
    EVIDENTIAL = "evidential"
    GAUSSIAN = "gaussian"
    ENSEMBLE = "ensemble"
    DROPOUT = "dropout"


class Generator(str, Enum):
    CUBIC = "cubic"
    HETEROSCEDASTIC = "heteroscedastic"


class RunConfig(BaseModel):
    """
    One CLI invocation after presets, config file and flags are merged.

    Exactly one dataset source is set: a generator name (``dataset``) or a
    CSV path (``csv``).
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    command: Command
    dataset: Optional[Generator] = None
    csv: Optional[str] = None
    targets: int = Field(1, gt=0)
    n: int = Field(1000, gt=0)
    noise_interpretation: str = "variance"

    head: Method = Method.EVIDENTIAL
    methods: List[Method] = Field(default_factory=lambda: [Method.EVIDENTIAL, Method.ENSEMBLE, Method.DROPOUT])
    hidden: List[int] = Field(default_factory=lambda: [50])
    activation: Activation = Activation.RELU

    lam: float = Field(0.01, ge=0.0)
    reg_kind: RegularizerKind = RegularizerKind.ABS_ERROR
    epsilon: Optional[float] = Field(None, gt=0.0)
    lambdas: List[float] = Field(default_factory=lambda: [0.0, 1e-4, 1e-2, 1e-1, 1.0])
    repeats: int = Field(1, gt=0)

    lr: float = Field(5e-3, gt=0.0)
    iters: int = Field(5000, gt=0)
    batch: int = Field(128, gt=0)
    seed: int = Field(0, ge=0)
    normalize: bool = False

    members: int = Field(5, ge=2)
    samples: int = Field(5, ge=2)
    dropout_p: float = Field(0.1, gt=0.0, lt=1.0)

    trials: int = Field(20, gt=0)
    test_fraction: float = Field(0.1, gt=0.0, lt=1.0)
    jobs: int = Field(1, gt=0)
    out: str = "./runs"
    checkpoint: Optional[str] = None
    checkpoints: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_source(self) -> "RunConfig":
        if (self.dataset is None) == (self.csv is None):
            raise ValueError("exactly one dataset source is required: --dataset or --csv")
        if self.noise_interpretation not in ("variance", "sd"):
            raise ValueError("noise_interpretation must be 'variance' or 'sd'")
        if any(lam < 0 for lam in self.lambdas):
            raise ValueError("lambda values must be nonnegative")
        return self

    def loss_config(self, lam: Optional[float] = None, default_epsilon: float = 0.01) -> LossConfig:
        epsilon = self.epsilon
        if self.reg_kind is RegularizerKind.SOFT_KL and epsilon is None:
            epsilon = default_epsilon
        return LossConfig(lam=self.lam if lam is None else lam, regularizer_kind=self.reg_kind, epsilon=epsilon)

    def mlp_config(self, input_dim: int, targets: int, head: HeadKind = HeadKind.EVIDENTIAL) -> MlpConfig:
        return MlpConfig(
            input_dim=input_dim,
            hidden_layers=self.hidden,
            targets=targets,
            head=head,
            activation=self.activation,
        )

    def train_config(self, loss: LossConfig, seed: Optional[int] = None) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.lr,
            iterations=self.iters,
            batch_size=self.batch,
            seed=self.seed if seed is None else seed,
            loss=loss,
            log_every=max(1, self.iters // 10),
        )
