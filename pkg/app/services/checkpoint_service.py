from pathlib import Path
from typing import Optional, Union
import json
import logging

import numpy as np
from pydantic import ValidationError

from app.core.exceptions import ConfigurationError
from app.core.network import Mlp, ParameterStore
from app.models.checkpoint import Checkpoint, EnsembleManifest, StatsPayload
from app.models.dataset import NormalizationStats
from app.services.baseline_service import BaselineService
from app.services.predictors import (
    DropoutPredictor,
    EnsemblePredictor,
    EvidentialPredictor,
    GaussianPredictor,
    Predictor,
)

logger = logging.getLogger(__name__)


class CheckpointService:
    """Service for saving and restoring trained predictors as versioned JSON"""

    def __init__(self, baseline_service: BaselineService, format_version: int = 1):
        self.baseline_service = baseline_service
        self.format_version = format_version

    def save(self, predictor: Predictor, path: Union[str, Path]) -> Path:
        """
        Write ``predictor`` to ``path``

        Single-network methods produce one checkpoint file. Ensembles produce a
        manifest at ``path`` plus one member checkpoint per network next to it.

        Returns:
            Path of the written checkpoint or manifest
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)

        if isinstance(predictor, EnsemblePredictor):
            names = []
            for index, member in enumerate(predictor.members):
                member_path = path.with_name(f"{path.stem}.member{index}.json")
                self._write(member_path, self._checkpoint(predictor, member, "gaussian"))
                names.append(member_path.name)
            manifest = EnsembleManifest(format_version=self.format_version, members=names)
            self._write(path, manifest)
            logger.info(f"Saved {len(names)}-member ensemble manifest: {path}")
            return path

        checkpoint = self._checkpoint(predictor, predictor.networks[0], predictor.method)
        if isinstance(predictor, DropoutPredictor):
            checkpoint = checkpoint.model_copy(
                update={"dropout_samples": predictor.samples, "dropout_seed": predictor.seed}
            )
        self._write(path, checkpoint)
        logger.info(f"Saved {predictor.method} checkpoint: {path}")
        return path

    def load(self, path: Union[str, Path]) -> Predictor:
        """
        Restore a predictor written by ``save``

        Raises:
            FileNotFoundError: If the checkpoint or a member file is missing
            ConfigurationError: On unknown formats, versions or methods
        """
        path = Path(path)
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)

        try:
            if payload.get("method") == "ensemble":
                manifest = EnsembleManifest.model_validate(payload)
                self._check_version(manifest.format_version, path)
                checkpoints = [self._read_checkpoint(path.parent / name) for name in manifest.members]
                members = [self._network(cp) for cp in checkpoints]
                return EnsemblePredictor(members, self.baseline_service, **self._stats(checkpoints[0]))
            checkpoint = Checkpoint.model_validate(payload)
        except ValidationError as e:
            raise ConfigurationError(f"Malformed checkpoint {path}: {e}")

        self._check_version(checkpoint.format_version, path)
        return self._predictor(checkpoint)

    # Helpers -----------------------------------------------------------------

    def _checkpoint(self, predictor: Predictor, net: Mlp, method: str) -> Checkpoint:
        return Checkpoint(
            format_version=self.format_version,
            method=method,
            mlp_config=net.config,
            parameters=net.store.values.tolist(),
            feature_stats=_payload(predictor.feature_stats),
            target_stats=_payload(predictor.target_stats),
        )

    def _read_checkpoint(self, path: Path) -> Checkpoint:
        with open(path, "r", encoding="utf-8") as f:
            checkpoint = Checkpoint.model_validate_json(f.read())
        self._check_version(checkpoint.format_version, path)
        return checkpoint

    def _check_version(self, version: int, path: Path) -> None:
        if version != self.format_version:
            raise ConfigurationError(
                f"{path} has checkpoint format {version}, expected {self.format_version}"
            )

    @staticmethod
    def _network(checkpoint: Checkpoint) -> Mlp:
        store = ParameterStore.from_values(np.asarray(checkpoint.parameters, dtype=np.float64))
        return Mlp(checkpoint.mlp_config, store=store)

    @staticmethod
    def _stats(checkpoint: Checkpoint) -> dict:
        return {
            "feature_stats": _stats_from(checkpoint.feature_stats),
            "target_stats": _stats_from(checkpoint.target_stats),
        }

    def _predictor(self, checkpoint: Checkpoint) -> Predictor:
        net = self._network(checkpoint)
        stats = self._stats(checkpoint)
        if checkpoint.method == EvidentialPredictor.method:
            return EvidentialPredictor(net, **stats)
        if checkpoint.method == GaussianPredictor.method:
            return GaussianPredictor(net, **stats)
        if checkpoint.method == DropoutPredictor.method:
            return DropoutPredictor(
                net,
                samples=checkpoint.dropout_samples or 5,
                seed=checkpoint.dropout_seed or 0,
                baseline_service=self.baseline_service,
                **stats,
            )
        raise ConfigurationError(f"Unknown checkpoint method: {checkpoint.method}")

    @staticmethod
    def _write(path: Path, model) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(model.model_dump_json(indent=2))
            f.write("\n")


def _payload(stats: Optional[NormalizationStats]) -> Optional[StatsPayload]:
    if stats is None:
        return None
    return StatsPayload(mean=stats.mean.tolist(), std=stats.std.tolist())


def _stats_from(payload: Optional[StatsPayload]) -> Optional[NormalizationStats]:
    if payload is None:
        return None
    return NormalizationStats(mean=payload.mean, std=payload.std)
