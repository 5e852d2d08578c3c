# regularity_lab/app/main.py
import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Union

import joblib
import mpmath
import numpy as np
import pandas as pd
import pydantic
import scipy
import sklearn

from monitoring.metrics_collector import MetricsCollector
from regularity_lab import __version__
from regularity_lab.app.core.config import configure_logging, get_settings
from regularity_lab.app.core.errors import EXIT_OK, ConfigError, LabError, NumericalFailure, VerdictFailure
from regularity_lab.app.experiments import RUNNERS
from regularity_lab.app.experiments.base import plain
from regularity_lab.app.models.schemas import ExperimentConfig, ResultRecord, load_config
from regularity_lab.app.reporting import REPORT_FILE, emit_report, load_records, write_artifacts, write_record

logger = logging.getLogger(__name__)


def package_versions() -> Dict[str, str]:
    return {
        "regularity_lab": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "pydantic": pydantic.VERSION,
        "scikit-learn": sklearn.__version__,
        "joblib": joblib.__version__,
        "mpmath": mpmath.__version__,
    }


def output_directory(config: ExperimentConfig) -> Path:
    if config.output_dir is not None:
        return Path(config.output_dir)
    return get_settings().output_root / f"{config.experiment.value}-{config.config_hash()[:12]}"


def run_experiment(config: ExperimentConfig, output_dir: Optional[Union[str, Path]] = None) -> ResultRecord:
    """
    Dispatch one validated config to its runner and persist the artifacts,
    the record and the run metrics
    """
    directory = Path(output_dir) if output_dir is not None else output_directory(config)
    directory.mkdir(parents=True, exist_ok=True)
    metrics = MetricsCollector(config.experiment.value)
    logger.info(f"Running {config.experiment.value} (config {config.config_hash()[:12]}) into {directory}")

    start = time.perf_counter()
    try:
        output = RUNNERS[config.experiment](config)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"linear algebra failed: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc), "params") from exc
    except (RuntimeError, ArithmeticError) as exc:
        raise NumericalFailure(f"{type(exc).__name__}: {exc}") from exc
    duration = time.perf_counter() - start
    metrics.update_system_metrics()

    constants = {k: float(v) for k, v in plain(output.constants).items() if np.isfinite(v)}
    record = ResultRecord(
        experiment=config.experiment,
        config_hash=config.config_hash(),
        config=config.model_dump(mode="json", exclude={"output_dir"}),
        reports=output.reports,
        profiles=output.profiles,
        verdicts=output.verdicts,
        constants=constants,
        artifacts=write_artifacts(output, directory),
        versions=package_versions(),
        wall_clock=duration,
    )
    record.record_hash = record.compute_hash()
    write_record(record, directory)

    metrics.track_run(duration)
    metrics.track_halvings(output.halvings)
    for verdict in record.verdicts:
        metrics.track_verdict(verdict.claim.value, verdict.passed)
    metrics.write(directory)
    logger.info(f"{config.experiment.value} finished in {duration:.1f}s: "
                f"{len(record.verdicts) - len(record.failures)}/{len(record.verdicts)} verdicts passed")
    return record


def _read_config(path: Path) -> ExperimentConfig:
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError("config file not found", str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}", str(path)) from exc
    return load_config(data)


def cmd_run(args: argparse.Namespace) -> int:
    config = _read_config(Path(args.config))
    record = run_experiment(config, args.output)
    for verdict in record.failures:
        print(f"FAIL [{verdict.claim.value}] {verdict.name}", file=sys.stderr)
    if not record.passed:
        raise VerdictFailure(f"{len(record.failures)} verdict(s) failed", {"record": record.record_hash})
    print(f"{config.experiment.value}: all {len(record.verdicts)} verdicts passed ({record.record_hash[:12]})")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    directory = Path(args.results_dir)
    records = load_records(directory)
    if not records:
        raise ConfigError("no records found", str(directory))
    text = emit_report(records)
    (directory / REPORT_FILE).write_text(text)
    print(text)
    if any(not r.passed for r in records):
        raise VerdictFailure("report contains failed verdicts")
    return EXIT_OK


def cmd_schema(args: argparse.Namespace) -> int:
    print(json.dumps(ExperimentConfig.model_json_schema(), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lab", description="Regularity lab for transport, flows and 2D Euler")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment config")
    run.add_argument("config", help="JSON experiment config")
    run.add_argument("--output", default=None, help="override the output directory")
    run.set_defaults(handler=cmd_run)

    report = sub.add_parser("report", help="summarize every record below a results directory")
    report.add_argument("results_dir")
    report.set_defaults(handler=cmd_report)

    schema = sub.add_parser("schema", help="print the experiment config JSON schema")
    schema.set_defaults(handler=cmd_schema)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    try:
        return args.handler(args)
    except LabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
