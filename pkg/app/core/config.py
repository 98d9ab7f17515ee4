from pydantic_settings import BaseSettings
from typing import Any, Dict, List
import json


class Settings(BaseSettings):
    """Application configuration settings"""

    # Application
    APP_NAME: str = "Evidential Regression Toolkit"
    VERSION: str = "1.0.0"
    DEBUG: bool = False

    # Runs
    DEFAULT_SEED: int = 0
    MAX_JOBS: int = 4
    OUTPUT_DIR: str = "./runs"

    # File formats
    REPORT_SCHEMA_VERSION: int = 1
    CHECKPOINT_FORMAT_VERSION: int = 1

    # Evaluation
    TIMING_REPEATS: int = 20
    CALIBRATION_LEVELS: str = "[]"  # JSON string, empty = 0.05..0.95 step 0.05

    # Baselines
    ENSEMBLE_MEMBERS: int = 5
    DROPOUT_SAMPLES: int = 5
    DROPOUT_P: float = 0.1

    # Regularizers
    SOFT_KL_EPSILON: float = 0.01

    class Config:
        env_file = ".env"
        case_sensitive = True

    @property
    def calibration_levels_list(self) -> List[float]:
        """Parse CALIBRATION_LEVELS from JSON string"""
        try:
            levels = json.loads(self.CALIBRATION_LEVELS)
        except (json.JSONDecodeError, TypeError):
            levels = []
        if not levels:
            levels = [round(0.05 * k, 2) for k in range(1, 20)]
        return [float(level) for level in levels]


# Named starting points for RunConfig; flags and config files override these.
PRESETS: Dict[str, Dict[str, Any]] = {
    "toy": {
        "dataset": "cubic",
        "n": 1000,
        "hidden": [100, 100, 100],
        "lr": 5e-3,
        "iters": 5000,
        "batch": 128,
        "lam": 0.01,
        "normalize": False,
    },
    "benchmark": {
        "hidden": [50],
        "lr": 1e-3,
        "iters": 3000,
        "batch": 64,
        "lam": 0.01,
        "normalize": True,
    },
}


settings = Settings()
