from pathlib import Path
from typing import List, Optional, Sequence, Tuple
from enum import Enum
import csv
import math
import logging

import numpy as np

from app.core.exceptions import CsvParseError, DomainError
from app.models.dataset import Dataset, NormalizationStats

logger = logging.getLogger(__name__)


class NoiseInterpretation(str, Enum):
    """How the second argument of N(0, 3) is read"""
    VARIANCE = "variance"
    SD = "sd"


class DataService:
    """Service for generating, loading, normalizing and splitting datasets"""

    # Generators --------------------------------------------------------------

    def gen_cubic(
        self,
        n: int,
        seed: int,
        train_range: Tuple[float, float] = (-4.0, 4.0),
        test_range: Tuple[float, float] = (-6.0, 6.0),
        noise: float = 3.0,
        noise_interpretation: NoiseInterpretation = NoiseInterpretation.VARIANCE,
        n_test: Optional[int] = None
    ) -> Tuple[Dataset, Dataset]:
        """
        Cubic toy problem y = x^3 + eps

        Args:
            n: Number of training points
            seed: Generator seed
            train_range: Interval the training inputs are drawn from
            test_range: Interval the test inputs are drawn from
            noise: Noise level, read according to ``noise_interpretation``
            noise_interpretation: Whether ``noise`` is a variance or a standard deviation
            n_test: Number of test points (defaults to ``n``)

        Returns:
            (train, test); both retain the noiseless targets in ``truth``

        Raises:
            DomainError: If n < 1 or a range is empty
        """
        if n < 1:
            raise DomainError("n must be at least 1", [f"n = {n}"])
        for name, (low, high) in (("train_range", train_range), ("test_range", test_range)):
            if not low < high:
                raise DomainError(f"Invalid {name}", [f"{low} >= {high}"])

        interpretation = NoiseInterpretation(noise_interpretation)
        sd = np.sqrt(noise) if interpretation is NoiseInterpretation.VARIANCE else float(noise)
        rng = np.random.default_rng(seed)

        def draw(count: int, bounds: Tuple[float, float], name: str) -> Dataset:
            x = rng.uniform(bounds[0], bounds[1], size=count)
            truth = x ** 3
            return Dataset(
                features=x,
                targets=truth + rng.normal(0.0, sd, size=count),
                truth=truth,
                noise_sd=np.full(count, sd),
                name=name,
            )

        train = draw(n, train_range, "cubic-train")
        test = draw(n if n_test is None else n_test, test_range, "cubic-test")
        logger.debug(f"Generated cubic data: {n} train points, noise sd {sd:.4f}")
        return train, test

    def gen_heteroscedastic(
        self,
        n: int,
        seed: int,
        x_range: Tuple[float, float] = (-4.0, 4.0),
        sigma_min: float = 1.0,
        sigma_max: float = 9.0,
        width: float = 1.0
    ) -> Dataset:
        """y = x^3 + eps(x) with noise sd peaking at x = 0"""
        if n < 1:
            raise DomainError("n must be at least 1", [f"n = {n}"])
        rng = np.random.default_rng(seed)
        x = rng.uniform(x_range[0], x_range[1], size=n)
        sd = self.heteroscedastic_sd(x, sigma_min, sigma_max, width)
        truth = x ** 3
        return Dataset(
            features=x,
            targets=truth + rng.normal(0.0, 1.0, size=n) * sd,
            truth=truth,
            noise_sd=sd,
            name="heteroscedastic",
        )

    @staticmethod
    def heteroscedastic_sd(x, sigma_min: float = 1.0, sigma_max: float = 9.0, width: float = 1.0):
        return sigma_min + (sigma_max - sigma_min) * np.exp(-np.square(x) / (2.0 * width ** 2))

    # CSV ---------------------------------------------------------------------

    def load_csv(self, path: Path, targets: int = 1) -> Dataset:
        """
        Load a numeric table whose last ``targets`` columns are targets

        Args:
            path: CSV file (comma separated, UTF-8 with or without BOM, LF or CRLF line endings)
            targets: Number of trailing target columns

        Returns:
            Parsed dataset

        Raises:
            CsvParseError: On non-numeric or non-finite cells or ragged rows (1-based row numbers)
            DomainError: If the table has too few columns or no data rows
        """
        path = Path(path)
        rows: List[List[float]] = []
        width = None

        with open(path, "r", encoding="utf-8-sig", newline="") as f:
            for row_number, cells in enumerate(csv.reader(f), start=1):
                if not cells or all(not cell.strip() for cell in cells):
                    continue
                try:
                    values = [float(cell) for cell in cells]
                except ValueError:
                    if row_number == 1:
                        logger.debug(f"Skipping header row in {path.name}: {cells}")
                        continue
                    column = next(i for i, cell in enumerate(cells, start=1) if not _is_number(cell))
                    raise CsvParseError(f"Non-numeric cell {cells[column - 1]!r}", row=row_number, column=column)
                non_finite = [i for i, value in enumerate(values, start=1) if not math.isfinite(value)]
                if non_finite:
                    column = non_finite[0]
                    raise CsvParseError(f"Non-finite cell {cells[column - 1]!r}", row=row_number, column=column)

                if width is None:
                    width = len(values)
                elif len(values) != width:
                    raise CsvParseError(f"Expected {width} cells, found {len(values)}", row=row_number)
                rows.append(values)

        if not rows:
            raise DomainError(f"No data rows in {path}")
        if width <= targets:
            raise DomainError(f"{path.name} has {width} columns; need more than {targets} (targets)")

        table = np.asarray(rows, dtype=np.float64)
        dataset = Dataset(features=table[:, :-targets], targets=table[:, -targets:], name=path.stem)
        logger.info(f"Loaded {path.name}: {dataset.size} rows, {dataset.input_dim} features, {targets} targets")
        return dataset

    def export_csv(self, dataset: Dataset, path: Path) -> Path:
        """Write features then targets, with a header, in the load_csv layout"""
        path = Path(path)
        header = [f"x{i}" for i in range(dataset.input_dim)] + [f"y{j}" for j in range(dataset.target_dim)]
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in np.hstack([dataset.features, dataset.targets]):
                writer.writerow([repr(float(value)) for value in row])
        return path

    # Normalization -----------------------------------------------------------

    @staticmethod
    def column_stats(values: np.ndarray) -> NormalizationStats:
        """Mean and std per column; columns without variance keep std 1"""
        varies = np.ptp(values, axis=0) > 0
        return NormalizationStats(mean=values.mean(axis=0), std=np.where(varies, values.std(axis=0), 1.0))

    def normalize(self, train: Dataset, test: Dataset) -> Tuple[Dataset, Dataset]:
        """
        Standardize features and targets with statistics from ``train`` only

        Returns:
            (train, test) normalized copies carrying the statistics, so
            predictions can be mapped back to target units
        """
        feature_stats = self.column_stats(train.features)
        target_stats = self.column_stats(train.targets)
        return (
            self.transform(train, feature_stats, target_stats),
            self.transform(test, feature_stats, target_stats),
        )

    @staticmethod
    def transform(dataset: Dataset, feature_stats: NormalizationStats, target_stats: NormalizationStats) -> Dataset:
        """Apply existing statistics to a raw dataset"""
        if dataset.normalized:
            raise DomainError(f"{dataset.name} is already normalized")
        return Dataset(
            features=feature_stats.apply(dataset.features),
            targets=target_stats.apply(dataset.targets),
            feature_stats=feature_stats,
            target_stats=target_stats,
            normalized=True,
            truth=dataset.truth,
            noise_sd=dataset.noise_sd,
            name=dataset.name,
        )

    @staticmethod
    def denormalize_targets(values: np.ndarray, dataset: Dataset) -> np.ndarray:
        if not dataset.normalized:
            return values
        return dataset.target_stats.invert(values)

    # Splits ------------------------------------------------------------------

    def benchmark_splits(
        self,
        dataset: Dataset,
        seed: int,
        trials: int = 20,
        test_fraction: float = 0.1
    ) -> List[Tuple[Dataset, Dataset]]:
        """
        Independent random train/test splits

        Each trial shuffles with its own generator spawned from ``seed``.

        Raises:
            DomainError: If a split would leave the train or test side empty
        """
        n = dataset.size
        n_test = int(round(n * test_fraction))
        if not 0 < test_fraction < 1 or n_test < 1 or n_test >= n:
            raise DomainError(
                f"Dataset of {n} rows cannot be split with test_fraction {test_fraction}",
                [f"test rows = {n_test}"],
            )

        splits = []
        for child in np.random.SeedSequence(seed).spawn(trials):
            order = np.random.default_rng(child).permutation(n)
            splits.append((dataset.subset(np.sort(order[n_test:])), dataset.subset(np.sort(order[:n_test]))))
        return splits

    @staticmethod
    def split_by_range(dataset: Dataset, bounds: Sequence[float]) -> Tuple[Dataset, Optional[Dataset]]:
        """Split rows whose first feature lies within ``bounds`` (ID) from the rest (OOD)"""
        x = dataset.features[:, 0]
        inside = (x >= bounds[0]) & (x <= bounds[1])
        id_rows = np.flatnonzero(inside)
        ood_rows = np.flatnonzero(~inside)
        if id_rows.size == 0:
            raise DomainError("No in-distribution rows in the test set")
        return dataset.subset(id_rows), dataset.subset(ood_rows) if ood_rows.size else None


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False
