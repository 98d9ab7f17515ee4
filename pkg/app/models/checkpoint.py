from pydantic import BaseModel
from typing import List, Optional

from app.models.configs import MlpConfig


class StatsPayload(BaseModel):
    mean: List[float]
    std: List[float]


class Checkpoint(BaseModel):
    """Serialized network: architecture, flat parameters, normalization"""
    format_version: int
    method: str
    mlp_config: MlpConfig
    parameters: List[float]
    feature_stats: Optional[StatsPayload] = None
    target_stats: Optional[StatsPayload] = None
    dropout_samples: Optional[int] = None
    dropout_seed: Optional[int] = None


class EnsembleManifest(BaseModel):
    """Ensemble checkpoint: member checkpoint files relative to the manifest"""
    format_version: int
    method: str = "ensemble"
    members: List[str]
