from pathlib import Path
from typing import Iterable, Sequence, Union
import csv
import logging

from pydantic import BaseModel

from app.models.reports import BenchmarkReport, EvalReport, LossTrace

logger = logging.getLogger(__name__)


class ReportService:
    """Service for writing JSON reports and tidy CSV curves into a run directory"""

    def __init__(self, output_dir: Union[str, Path]):
        self.output_dir = Path(output_dir)

    def ensure_dir(self) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        return self.output_dir

    def write_json(self, model: BaseModel, name: str) -> Path:
        path = self.ensure_dir() / name
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(model.model_dump_json(indent=2))
            f.write("\n")
        logger.info(f"Wrote {path}")
        return path

    def write_table(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
        """One curve or table per file, header first; floats in round-trip form"""
        path = self.ensure_dir() / name
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
        logger.debug(f"Wrote {path}")
        return path

    def write_loss_trace(self, trace: LossTrace, name: str = "loss_trace.csv") -> Path:
        return self.write_table(
            name,
            ("iteration", "mean_loss", "mean_nll", "mean_reg"),
            zip(trace.iteration, trace.mean_loss, trace.mean_nll, trace.mean_reg),
        )

    def write_curves(self, report: EvalReport, prefix: str = "") -> None:
        """Calibration and cutoff curves of ``report`` as 2-column CSVs"""
        self.write_table(
            f"{prefix}calibration.csv",
            ("expected", "observed"),
            zip(report.calibration.levels, report.calibration.observed),
        )
        self.write_table(f"{prefix}cutoff.csv", ("percentile_removed", "rmse"), report.cutoff_curve)

    def write_entropy_cdf(self, name: str, values: Sequence[float], fractions: Sequence[float]) -> Path:
        return self.write_table(name, ("entropy", "cumulative"), zip(map(float, values), map(float, fractions)))

    def write_benchmark(self, report: BenchmarkReport) -> None:
        self.write_json(report, "benchmark.json")
        self.write_table(
            "benchmark_trials.csv",
            ("trial", "method", "rmse", "nll", "inference_ms"),
            ((t.trial, t.method, t.rmse, t.nll, t.inference_ms) for t in report.trials),
        )
        self.write_table(
            "benchmark.csv",
            ("method", "trials", "rmse_mean", "rmse_stderr", "nll_mean", "nll_stderr",
             "inference_ms_mean", "inference_ms_stderr", "reference_rmse", "reference_nll"),
            (
                (row.method, row.trials, row.rmse.mean, row.rmse.stderr, row.nll.mean, row.nll.stderr,
                 row.inference_ms.mean, row.inference_ms.stderr,
                 (row.reference or {}).get("rmse", ""), (row.reference or {}).get("nll", ""))
                for row in report.rows
            ),
        )
