"""
Command handlers behind ``app.main``.

Every handler takes a merged RunConfig, writes its outputs under ``cfg.out``
and returns the main report object. Handlers raise EvidentialError subclasses
for bad input and OSError for file problems; ``app.main`` maps both to exit
codes.
"""
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Tuple
import json
import logging

import numpy as np
from pydantic import ValidationError

from app.core.config import PRESETS, settings
from app.core.exceptions import ConfigurationError, DomainError
from app.models.configs import Command, Generator, HeadKind, Method, RegularizerKind, RunConfig
from app.models.dataset import Dataset
from app.models.reports import (
    BenchmarkReport,
    BenchmarkRow,
    BenchmarkTrial,
    ComparisonReport,
    EvalReport,
    LambdaAblationReport,
    LambdaRecord,
    LossTrace,
    MetricSummary,
)
from app.services.baseline_service import BaselineService, derive_seeds
from app.services.checkpoint_service import CheckpointService
from app.services.data_service import DataService
from app.services.eval_service import EvaluationService
from app.services.predictors import (
    DropoutPredictor,
    EnsemblePredictor,
    EvidentialPredictor,
    GaussianPredictor,
    Predictor,
)
from app.services.report_service import ReportService
from app.services.training_service import TrainingService

logger = logging.getLogger(__name__)

# Published benchmark results (mean +- standard error over 20 splits), keyed by
# lower-case dataset name, then method
REFERENCE_RESULTS: Dict[str, Dict[str, Dict[str, str]]] = {
    "boston": {
        "dropout": {"rmse": "2.97 +- 0.19", "nll": "2.46 +- 0.06", "inference_ms": "3.24"},
        "ensemble": {"rmse": "3.28 +- 1.00", "nll": "2.41 +- 0.25", "inference_ms": "3.35"},
        "evidential": {"rmse": "3.06 +- 0.16", "nll": "2.35 +- 0.06", "inference_ms": "0.85"},
    },
    "concrete": {
        "dropout": {"rmse": "5.23 +- 0.12", "nll": "3.04 +- 0.02", "inference_ms": "2.99"},
        "ensemble": {"rmse": "6.03 +- 0.58", "nll": "3.06 +- 0.18", "inference_ms": "3.43"},
        "evidential": {"rmse": "5.85 +- 0.15", "nll": "3.01 +- 0.02", "inference_ms": "0.94"},
    },
    "energy": {
        "dropout": {"rmse": "1.66 +- 0.04", "nll": "1.99 +- 0.02", "inference_ms": "3.08"},
        "ensemble": {"rmse": "2.09 +- 0.29", "nll": "1.38 +- 0.22", "inference_ms": "3.80"},
        "evidential": {"rmse": "2.06 +- 0.10", "nll": "1.39 +- 0.06", "inference_ms": "0.87"},
    },
    "kin8nm": {
        "dropout": {"rmse": "0.10 +- 0.00", "nll": "-0.95 +- 0.01", "inference_ms": "3.24"},
        "ensemble": {"rmse": "0.09 +- 0.00", "nll": "-1.20 +- 0.02", "inference_ms": "3.79"},
        "evidential": {"rmse": "0.09 +- 0.00", "nll": "-1.24 +- 0.01", "inference_ms": "0.97"},
    },
    "naval": {
        "dropout": {"rmse": "0.01 +- 0.00", "nll": "-3.80 +- 0.01", "inference_ms": "3.31"},
        "ensemble": {"rmse": "0.00 +- 0.00", "nll": "-5.63 +- 0.05", "inference_ms": "3.37"},
        "evidential": {"rmse": "0.00 +- 0.00", "nll": "-5.73 +- 0.07", "inference_ms": "0.84"},
    },
    "power": {
        "dropout": {"rmse": "4.02 +- 0.04", "nll": "2.80 +- 0.01", "inference_ms": "2.93"},
        "ensemble": {"rmse": "4.11 +- 0.17", "nll": "2.79 +- 0.04", "inference_ms": "3.36"},
        "evidential": {"rmse": "4.23 +- 0.09", "nll": "2.81 +- 0.07", "inference_ms": "0.85"},
    },
    "protein": {
        "dropout": {"rmse": "4.36 +- 0.01", "nll": "2.89 +- 0.00", "inference_ms": "3.45"},
        "ensemble": {"rmse": "4.71 +- 0.06", "nll": "2.83 +- 0.02", "inference_ms": "3.68"},
        "evidential": {"rmse": "4.64 +- 0.03", "nll": "2.63 +- 0.00", "inference_ms": "1.18"},
    },
    "wine": {
        "dropout": {"rmse": "0.62 +- 0.01", "nll": "0.93 +- 0.01", "inference_ms": "3.00"},
        "ensemble": {"rmse": "0.64 +- 0.04", "nll": "0.94 +- 0.12", "inference_ms": "3.32"},
        "evidential": {"rmse": "0.61 +- 0.02", "nll": "0.89 +- 0.05", "inference_ms": "0.86"},
    },
    "yacht": {
        "dropout": {"rmse": "1.11 +- 0.09", "nll": "1.55 +- 0.03", "inference_ms": "2.99"},
        "ensemble": {"rmse": "1.58 +- 0.48", "nll": "1.18 +- 0.21", "inference_ms": "3.36"},
        "evidential": {"rmse": "1.57 +- 0.56", "nll": "1.03 +- 0.19", "inference_ms": "0.87"},
    },
}

TRAIN_RANGE = (-4.0, 4.0)
TEST_RANGE = (-6.0, 6.0)
# |x| bands used for epistemic summaries in the lambda sweep
ID_BAND = (0.0, 3.5)
OOD_BAND = (4.5, 6.0)

data_service = DataService()


class Services:
    """Service instances for one run; thread pools use ``--jobs`` workers, capped at MAX_JOBS"""

    def __init__(self, cfg: RunConfig):
        self.data = data_service
        self.training = TrainingService()
        self.workers = min(cfg.jobs, settings.MAX_JOBS)
        self.baselines = BaselineService(self.training, max_workers=self.workers)
        self.evaluation = EvaluationService(
            levels=settings.calibration_levels_list,
            timing_repeats=settings.TIMING_REPEATS,
            schema_version=settings.REPORT_SCHEMA_VERSION,
        )
        self.checkpoints = CheckpointService(self.baselines, format_version=settings.CHECKPOINT_FORMAT_VERSION)
        self.reports = ReportService(cfg.out)


class RunData(NamedTuple):
    train: Dataset
    test: Dataset  # in-distribution test rows
    ood: Optional[Dataset]


class FittedMethod(NamedTuple):
    method: Method
    predictor: Predictor
    rmse: float
    nll: float  # target units


class LambdaFit(NamedTuple):
    lam: float
    seed: int
    epistemic_id: float
    epistemic_ood: float
    entropy_id: np.ndarray
    entropy_ood: np.ndarray
    ood_auc: float

    @property
    def ratio(self) -> float:
        return self.epistemic_ood / self.epistemic_id if self.epistemic_id > 0 else float("inf")


# Configuration -----------------------------------------------------------------

def resolve_config(
    command: str,
    flags: Dict[str, Any],
    config_file: Optional[str] = None,
    preset: Optional[str] = None
) -> RunConfig:
    """
    Merge settings defaults, preset, JSON config file and explicit flags

    Later layers win; flags set to None are treated as absent. Setting a
    dataset source in a layer clears the other source from earlier layers.

    Raises:
        ConfigurationError: On an unknown preset or an invalid merged config
        OSError: If the config file cannot be read
    """
    layers = [{
        "seed": settings.DEFAULT_SEED,
        "out": settings.OUTPUT_DIR,
        "members": settings.ENSEMBLE_MEMBERS,
        "samples": settings.DROPOUT_SAMPLES,
        "dropout_p": settings.DROPOUT_P,
    }]
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigurationError(f"Unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        layers.append(PRESETS[preset])
    if config_file is not None:
        with open(config_file, "r", encoding="utf-8") as f:
            try:
                layers.append(json.load(f))
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"Config file {config_file} is not valid JSON: {e}")
    layers.append({key: value for key, value in flags.items() if value is not None})

    merged: Dict[str, Any] = {}
    for layer in layers:
        if "csv" in layer:
            merged.pop("dataset", None)
        if "dataset" in layer:
            merged.pop("csv", None)
        merged.update(layer)
    merged["command"] = command

    try:
        return RunConfig(**merged)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid run configuration: {e}")


# Shared steps ------------------------------------------------------------------

def load_data(cfg: RunConfig, services: Services) -> RunData:
    """
    Train / test data for train, eval and compare

    Generated data trains on [-4, 4] and tests on [-6, 6]; test rows outside
    the training range form the OOD set. CSV data is split once with
    ``cfg.test_fraction`` and has no OOD set.
    """
    if cfg.csv is not None:
        dataset = services.data.load_csv(Path(cfg.csv), targets=cfg.targets)
        train, test = services.data.benchmark_splits(dataset, cfg.seed, trials=1, test_fraction=cfg.test_fraction)[0]
        return RunData(train=train, test=test, ood=None)

    train, test = generate(cfg, services)
    test_id, ood = services.data.split_by_range(test, TRAIN_RANGE)
    return RunData(train=train, test=test_id, ood=ood)


def generate(cfg: RunConfig, services: Services) -> Tuple[Dataset, Dataset]:
    if cfg.dataset is Generator.CUBIC:
        return services.data.gen_cubic(
            cfg.n, cfg.seed, TRAIN_RANGE, TEST_RANGE, noise_interpretation=cfg.noise_interpretation
        )
    train_seed, test_seed = derive_seeds(cfg.seed, 2)
    train = services.data.gen_heteroscedastic(cfg.n, train_seed, x_range=TRAIN_RANGE)
    test = services.data.gen_heteroscedastic(cfg.n, test_seed, x_range=TEST_RANGE)
    return train, test.model_copy(update={"name": "heteroscedastic-test"})


def fit(
    cfg: RunConfig,
    services: Services,
    method: Method,
    train: Dataset,
    lam: Optional[float] = None,
    seed: Optional[int] = None
) -> Tuple[Predictor, LossTrace]:
    """Train one method on raw ``train`` data; normalizes first when configured"""
    stats: Dict[str, Any] = {}
    if method is Method.EVIDENTIAL and cfg.reg_kind is RegularizerKind.STANDARD_SCORE and not cfg.normalize:
        logger.warning("standard_score scales |y - gamma| by the predicted noise; "
                       "on unnormalized targets training tends to diverge (use --normalize)")
    if cfg.normalize:
        feature_stats = services.data.column_stats(train.features)
        target_stats = services.data.column_stats(train.targets)
        train = services.data.transform(train, feature_stats, target_stats)
        stats = {"feature_stats": feature_stats, "target_stats": target_stats}

    mlp_cfg = cfg.mlp_config(train.input_dim, train.target_dim, HeadKind.EVIDENTIAL)
    train_cfg = cfg.train_config(cfg.loss_config(lam, settings.SOFT_KL_EPSILON), seed)

    if method is Method.EVIDENTIAL:
        result = services.training.train(train, mlp_cfg, train_cfg)
        return EvidentialPredictor(result.net, **stats), result.trace
    if method is Method.GAUSSIAN:
        result = services.baselines.train_gaussian_mle(train, mlp_cfg, train_cfg)
        return GaussianPredictor(result.net, **stats), result.trace
    if method is Method.ENSEMBLE:
        results = services.baselines.train_ensemble(train, mlp_cfg, train_cfg, members=cfg.members)
        predictor = EnsemblePredictor([r.net for r in results], services.baselines, **stats)
        return predictor, results[0].trace
    result = services.baselines.train_dropout(train, mlp_cfg, train_cfg, p=cfg.dropout_p)
    predictor = DropoutPredictor(result.net, cfg.samples, train_cfg.seed, services.baselines, **stats)
    return predictor, result.trace


def write_eval_outputs(services: Services, predictor: Predictor, report: EvalReport,
                       data: RunData, prefix: str = "") -> None:
    services.reports.write_curves(report, prefix)
    entropy_id = services.evaluation.sample_entropy(predictor.predict(data.test.features))
    services.reports.write_entropy_cdf(f"{prefix}entropy_id.csv", *services.evaluation.entropy_cdf(entropy_id))
    if data.ood is not None:
        entropy_ood = services.evaluation.sample_entropy(predictor.predict(data.ood.features))
        services.reports.write_entropy_cdf(f"{prefix}entropy_ood.csv", *services.evaluation.entropy_cdf(entropy_ood))


# Commands ----------------------------------------------------------------------

def cmd_generate(cfg: RunConfig) -> List[Path]:
    """Export generated train / test sets as CSV"""
    if cfg.dataset is None:
        raise ConfigurationError("generate needs a generator (--dataset), not a CSV source")
    services = Services(cfg)
    train, test = generate(cfg, services)
    out = services.reports.ensure_dir()
    paths = [
        services.data.export_csv(train, out / f"{cfg.dataset.value}_train.csv"),
        services.data.export_csv(test, out / f"{cfg.dataset.value}_test.csv"),
    ]
    logger.info(f"Exported {train.size} train and {test.size} test rows to {out}")
    return paths


def cmd_train(cfg: RunConfig) -> EvalReport:
    """Train ``cfg.head``; write checkpoint, loss trace, report and curves"""
    services = Services(cfg)
    services.reports.ensure_dir()
    data = load_data(cfg, services)

    predictor, trace = fit(cfg, services, cfg.head, data.train)
    services.checkpoints.save(predictor, services.reports.output_dir / "checkpoint.json")
    services.reports.write_loss_trace(trace)

    report = services.evaluation.evaluate(predictor, data.test, data.ood)
    services.reports.write_json(report, "report.json")
    write_eval_outputs(services, predictor, report, data)
    return report


def cmd_eval(cfg: RunConfig) -> EvalReport:
    """Evaluate a saved checkpoint on the run's held-out data"""
    if cfg.checkpoint is None:
        raise ConfigurationError("eval needs --checkpoint")
    services = Services(cfg)
    predictor = services.checkpoints.load(cfg.checkpoint)
    data = load_data(cfg, services)

    report = services.evaluation.evaluate(predictor, data.test, data.ood)
    services.reports.write_json(report, "report.json")
    write_eval_outputs(services, predictor, report, data)
    return report


def cmd_benchmark(cfg: RunConfig) -> BenchmarkReport:
    """
    Repeated random-split benchmark of ``cfg.methods`` on a CSV dataset

    Trials are trained and scored on a pool of ``cfg.jobs`` threads; each
    trial trains every method with a seed derived from ``cfg.seed`` and the
    trial index. Inference is timed afterwards on the calling thread, one
    predictor at a time, so timings do not include contention between trials.

    Returns:
        BenchmarkReport with per-trial values and mean +- standard error rows
    """
    if cfg.csv is None:
        raise ConfigurationError("benchmark needs a CSV dataset (--csv)")
    services = Services(cfg)
    services.reports.ensure_dir()
    dataset = services.data.load_csv(Path(cfg.csv), targets=cfg.targets)
    splits = services.data.benchmark_splits(dataset, cfg.seed, cfg.trials, cfg.test_fraction)
    seeds = derive_seeds(cfg.seed, cfg.trials)

    def run_trial(trial: int) -> List[FittedMethod]:
        train, test = splits[trial]
        fitted = []
        for method in cfg.methods:
            predictor, _ = fit(cfg, services, method, train, seed=seeds[trial])
            output = predictor.predict(test.features)
            fitted.append(FittedMethod(
                method=method,
                predictor=predictor,
                rmse=services.evaluation.rmse(output.prediction, test.targets),
                nll=services.evaluation.predictive_nll(output, test.targets),
            ))
        logger.info(f"Benchmark trial {trial + 1}/{cfg.trials} finished")
        return fitted

    logger.info(f"Benchmarking {[m.value for m in cfg.methods]} on {dataset.name}: {cfg.trials} trials")
    with ThreadPoolExecutor(max_workers=services.workers) as executor:
        fitted_trials = list(executor.map(run_trial, range(cfg.trials)))

    trials = []
    for trial, fitted in enumerate(fitted_trials):
        test = splits[trial][1]
        for result in fitted:
            timing = services.evaluation.time_inference(result.predictor, test.features)
            trials.append(BenchmarkTrial(
                trial=trial,
                method=result.method.value,
                rmse=result.rmse,
                nll=result.nll,
                inference_ms=1000.0 * timing.seconds_per_batch,
            ))

    references = REFERENCE_RESULTS.get(dataset.name.lower(), {})
    rows = []
    for method in cfg.methods:
        mine = [t for t in trials if t.method == method.value]
        rows.append(BenchmarkRow(
            method=method.value,
            trials=len(mine),
            rmse=summarize([t.rmse for t in mine]),
            nll=summarize([t.nll for t in mine]),
            inference_ms=summarize([t.inference_ms for t in mine]),
            reference=references.get(method.value),
        ))
        logger.info(f"{method.value}: RMSE {rows[-1].rmse.mean:.3f} +- {rows[-1].rmse.stderr:.3f}, "
                    f"NLL {rows[-1].nll.mean:.3f} +- {rows[-1].nll.stderr:.3f}")

    report = BenchmarkReport(
        schema_version=settings.REPORT_SCHEMA_VERSION, dataset=dataset.name, rows=rows, trials=trials
    )
    services.reports.write_benchmark(report)
    return report


def summarize(values: List[float]) -> MetricSummary:
    """Mean and standard error (sample sd / sqrt(count))"""
    array = np.asarray(values, dtype=np.float64)
    stderr = float(array.std(ddof=1) / np.sqrt(array.size)) if array.size > 1 else 0.0
    return MetricSummary(mean=float(array.mean()), stderr=stderr)


def cmd_ablate_lambda(cfg: RunConfig) -> LambdaAblationReport:
    """
    Train evidential models per lambda and summarize epistemic spread ID vs OOD

    Each lambda is fit ``cfg.repeats`` times. A single repeat uses
    ``cfg.seed``; more repeats use seeds derived from it, shared across
    lambdas. Summary fields are medians over the repeats and the entropy
    CDFs pool the test rows of every repeat.
    """
    if cfg.dataset is None:
        raise ConfigurationError("ablate-lambda needs a generated dataset (--dataset)")
    services = Services(cfg)
    services.reports.ensure_dir()
    train, test = generate(cfg, services)

    distance = np.abs(test.features[:, 0])
    id_rows = np.flatnonzero((distance >= ID_BAND[0]) & (distance <= ID_BAND[1]))
    ood_rows = np.flatnonzero((distance >= OOD_BAND[0]) & (distance <= OOD_BAND[1]))
    if id_rows.size == 0 or ood_rows.size == 0:
        raise DomainError("Test set has no rows in the ID or OOD band", [f"n = {test.size}"])
    test_id, test_ood = test.subset(id_rows), test.subset(ood_rows)

    seeds = [cfg.seed] if cfg.repeats == 1 else derive_seeds(cfg.seed, cfg.repeats)

    def run(job: Tuple[float, int]) -> LambdaFit:
        lam, seed = job
        predictor, _ = fit(cfg, services, Method.EVIDENTIAL, train, lam=lam, seed=seed)
        out_id = predictor.predict(test_id.features)
        out_ood = predictor.predict(test_ood.features)
        entropy_id = services.evaluation.sample_entropy(out_id)
        entropy_ood = services.evaluation.sample_entropy(out_ood)
        result = LambdaFit(
            lam=lam,
            seed=seed,
            epistemic_id=float(out_id.epistemic.mean()),
            epistemic_ood=float(out_ood.epistemic.mean()),
            entropy_id=entropy_id,
            entropy_ood=entropy_ood,
            ood_auc=services.evaluation.ood_auc(entropy_id, entropy_ood),
        )
        logger.info(f"lambda {lam:g} seed {seed}: epistemic ID {result.epistemic_id:.4g}, "
                    f"OOD {result.epistemic_ood:.4g}, entropy AUC {result.ood_auc:.3f}")
        return result

    jobs = [(lam, seed) for lam in cfg.lambdas for seed in seeds]
    with ThreadPoolExecutor(max_workers=services.workers) as executor:
        fits = list(executor.map(run, jobs))

    records = []
    for i, lam in enumerate(cfg.lambdas):
        group = fits[i * len(seeds):(i + 1) * len(seeds)]
        entropy_id = np.concatenate([f.entropy_id for f in group])
        entropy_ood = np.concatenate([f.entropy_ood for f in group])

        tag = f"lambda_{lam:g}"
        services.reports.write_entropy_cdf(f"{tag}_entropy_id.csv", *services.evaluation.entropy_cdf(entropy_id))
        services.reports.write_entropy_cdf(f"{tag}_entropy_ood.csv", *services.evaluation.entropy_cdf(entropy_ood))

        ratios = [f.ratio for f in group]
        aucs = [f.ood_auc for f in group]
        records.append(LambdaRecord(
            lam=lam,
            regularizer_kind=cfg.reg_kind.value,
            repeats=len(group),
            mean_epistemic_id=float(np.median([f.epistemic_id for f in group])),
            mean_epistemic_ood=float(np.median([f.epistemic_ood for f in group])),
            ood_id_ratio=float(np.median(ratios)),
            mean_entropy_id=float(np.median([f.entropy_id.mean() for f in group])),
            mean_entropy_ood=float(np.median([f.entropy_ood.mean() for f in group])),
            ood_auc=float(np.median(aucs)),
            seeds=[f.seed for f in group],
            ood_id_ratios=ratios,
            ood_aucs=aucs,
        ))

    report = LambdaAblationReport(schema_version=settings.REPORT_SCHEMA_VERSION, records=records)
    services.reports.write_json(report, "ablation.json")
    services.reports.write_table(
        "ablation.csv",
        ("lambda", "repeats", "mean_epistemic_id", "mean_epistemic_ood", "ood_id_ratio", "ood_auc"),
        ((r.lam, r.repeats, r.mean_epistemic_id, r.mean_epistemic_ood, r.ood_id_ratio, r.ood_auc) for r in records),
    )
    return report


def cmd_compare(cfg: RunConfig) -> ComparisonReport:
    """
    Side-by-side reports for several methods on the same data

    Uses ``cfg.checkpoints`` when given, otherwise trains every method in
    ``cfg.methods``. Curves and entropy CDFs are written per method.

    Raises:
        ConfigurationError: If fewer than two methods are compared
        FileNotFoundError: If a checkpoint is missing
    """
    services = Services(cfg)
    services.reports.ensure_dir()
    if cfg.checkpoints:
        predictors = [services.checkpoints.load(path) for path in cfg.checkpoints]
    else:
        predictors = None
    count = len(predictors) if predictors is not None else len(cfg.methods)
    if count < 2:
        raise ConfigurationError(f"compare needs at least 2 methods, got {count}")

    data = load_data(cfg, services)
    if predictors is None:
        predictors = [fit(cfg, services, method, data.train)[0] for method in cfg.methods]

    reports = []
    seen: Dict[str, int] = {}
    for predictor in predictors:
        seen[predictor.method] = seen.get(predictor.method, 0) + 1
        suffix = "" if seen[predictor.method] == 1 else str(seen[predictor.method])
        report = services.evaluation.evaluate(predictor, data.test, data.ood)
        write_eval_outputs(services, predictor, report, data, prefix=f"{predictor.method}{suffix}_")
        reports.append(report)

    comparison = ComparisonReport(schema_version=settings.REPORT_SCHEMA_VERSION, reports=reports)
    services.reports.write_json(comparison, "comparison.json")
    return comparison


COMMANDS = {
    Command.GENERATE: cmd_generate,
    Command.TRAIN: cmd_train,
    Command.EVAL: cmd_eval,
    Command.BENCHMARK: cmd_benchmark,
    Command.ABLATE_LAMBDA: cmd_ablate_lambda,
    Command.COMPARE: cmd_compare,
}


def run(cfg: RunConfig):
    return COMMANDS[cfg.command](cfg)
