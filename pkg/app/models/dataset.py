from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator


class NormalizationStats(BaseModel):
    """Per-column affine statistics; zero-variance columns carry std 1"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    mean: np.ndarray
    std: np.ndarray

    @field_validator("mean", "std", mode="before")
    @classmethod
    def _as_vector(cls, value):
        return np.asarray(value, dtype=np.float64).reshape(-1)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


class Dataset(BaseModel):
    """
    Paired regression examples D = {(x_i, y_i)}

    ``truth`` (noiseless targets) and ``noise_sd`` (true per-sample noise) are
    only present for generated data and stay in original units.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    features: np.ndarray  # n x d
    targets: np.ndarray  # n x t
    feature_stats: Optional[NormalizationStats] = None
    target_stats: Optional[NormalizationStats] = None
    normalized: bool = False
    truth: Optional[np.ndarray] = None
    noise_sd: Optional[np.ndarray] = None
    name: str = "dataset"

    @field_validator("features", "targets", "truth", "noise_sd", mode="before")
    @classmethod
    def _as_matrix(cls, value):
        if value is None:
            return None
        array = np.asarray(value, dtype=np.float64)
        if array.ndim == 1:
            array = array.reshape(-1, 1)
        return array

    @model_validator(mode="after")
    def _check(self) -> "Dataset":
        if self.features.ndim != 2 or self.targets.ndim != 2:
            raise ValueError("features and targets must be 2-D")
        if self.features.shape[0] < 1:
            raise ValueError("dataset must hold at least one row")
        if self.features.shape[0] != self.targets.shape[0]:
            raise ValueError(
                f"row mismatch: {self.features.shape[0]} feature rows, {self.targets.shape[0]} target rows"
            )
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.targets))):
            raise ValueError("dataset contains NaN or Inf")
        has_stats = self.feature_stats is not None and self.target_stats is not None
        if has_stats != self.normalized:
            raise ValueError("normalization stats must be present iff the dataset is normalized")
        return self

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    @property
    def target_dim(self) -> int:
        return self.targets.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        """Rows at ``indices``; carries stats and oracle columns along"""
        return self.model_copy(update={
            "features": self.features[indices],
            "targets": self.targets[indices],
            "truth": None if self.truth is None else self.truth[indices],
            "noise_sd": None if self.noise_sd is None else self.noise_sd[indices],
        })
