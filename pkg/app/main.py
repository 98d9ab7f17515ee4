import argparse
import logging
import sys
from typing import List, Optional

from app.cli import commands
from app.core.config import PRESETS, settings
from app.core.exceptions import EvidentialError
from app.models.configs import Activation, Command, Generator, Method, RegularizerKind

# Configure logging
logging.basicConfig(
    level=logging.INFO if not settings.DEBUG else logging.DEBUG,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3


def _int_list(value: str) -> List[int]:
    return [int(part) for part in value.split(",") if part.strip()]


def _float_list(value: str) -> List[float]:
    return [float(part) for part in value.split(",") if part.strip()]


def _str_list(value: str) -> List[str]:
    return [part.strip() for part in value.split(",") if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    """
    Argument parser for every subcommand

    All value flags default to None so that config files and presets can fill
    the gaps; see ``commands.resolve_config`` for the precedence rules.
    """
    parser = argparse.ArgumentParser(
        prog="evidential",
        description=f"{settings.APP_NAME} {settings.VERSION}: train and evaluate evidential regression models",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")

    common = argparse.ArgumentParser(add_help=False)
    source = common.add_argument_group("data")
    source.add_argument("--dataset", choices=[g.value for g in Generator], help="synthetic generator")
    source.add_argument("--csv", help="numeric CSV table; the last --targets columns are targets")
    source.add_argument("--targets", type=int, help="number of trailing target columns (default 1)")
    source.add_argument("--n", type=int, help="number of generated training points")
    source.add_argument("--noise-interpretation", dest="noise_interpretation", choices=["variance", "sd"],
                        help="read the cubic noise level 3 as a variance (default) or a standard deviation")
    source.add_argument("--test-fraction", dest="test_fraction", type=float, help="held-out fraction for CSV data")
    source.add_argument("--normalize", action="store_true", default=None, help="standardize with train statistics")

    model = common.add_argument_group("model")
    model.add_argument("--head", choices=[m.value for m in Method], help="method to train")
    model.add_argument("--methods", type=_str_list, help="comma-separated methods for benchmark / compare")
    model.add_argument("--hidden", type=_int_list, help="hidden layer widths, e.g. 100,100,100")
    model.add_argument("--activation", choices=[a.value for a in Activation])
    model.add_argument("--lambda", dest="lam", type=float, help="evidence regularizer weight")
    model.add_argument("--lambdas", type=_float_list, help="comma-separated lambda values for ablate-lambda")
    model.add_argument("--reg-kind", dest="reg_kind", choices=[k.value for k in RegularizerKind])
    model.add_argument("--epsilon", type=float, help="prior evidence of the soft_kl regularizer")
    model.add_argument("--members", type=int, help="ensemble size")
    model.add_argument("--samples", type=int, help="MC-dropout samples per prediction")
    model.add_argument("--dropout-p", dest="dropout_p", type=float, help="dropout rate of the dropout baseline")

    training = common.add_argument_group("training")
    training.add_argument("--lr", type=float, help="Adam learning rate")
    training.add_argument("--iters", type=int, help="training iterations")
    training.add_argument("--batch", type=int, help="minibatch size")
    training.add_argument("--seed", type=int, help="master seed")

    run = common.add_argument_group("run")
    run.add_argument("--trials", type=int, help="benchmark splits")
    run.add_argument("--repeats", type=int, help="seeds per lambda for ablate-lambda; summaries are medians")
    run.add_argument("--jobs", type=int, help="worker threads for trials and ensemble members")
    run.add_argument("--out", help="output directory")
    run.add_argument("--checkpoint", help="checkpoint to evaluate")
    run.add_argument("--checkpoints", type=_str_list, help="comma-separated checkpoints to compare")
    run.add_argument("--config", dest="config_file", help="JSON file with RunConfig fields")
    run.add_argument("--preset", choices=sorted(PRESETS), help="named starting configuration")

    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in Command:
        subparsers.add_parser(command.value, parents=[common], help=f"{command.value} command")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one command, map failures to exit codes"""
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    flags = vars(args).copy()
    command = flags.pop("command")
    config_file = flags.pop("config_file")
    preset = flags.pop("preset")
    flags.pop("verbose")

    try:
        cfg = commands.resolve_config(command, flags, config_file=config_file, preset=preset)
        logger.info(f"Running {cfg.command.value} (seed {cfg.seed}, output {cfg.out})")
        commands.run(cfg)
    except EvidentialError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_INVALID
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO

    logger.info("Done")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
