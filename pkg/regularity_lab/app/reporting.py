# regularity_lab/app/reporting.py
"""
Artifact persistence for experiment runs and the human-readable summary
over a results directory.
"""
import json
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Sequence, Union

import pandas as pd

from regularity_lab.app.core.errors import ConfigError
from regularity_lab.app.experiments.base import ExperimentOutput, Figure
from regularity_lab.app.models.schemas import ResultRecord, Verdict

logger = logging.getLogger(__name__)

RECORD_FILE = "record.json"
REPORT_FILE = "report.md"
FLOAT_FORMAT = "%.12g"

GNUPLOT_TEMPLATE = """set datafile separator ","
set key autotitle columnhead
set xlabel "{xlabel}"
set ylabel "{ylabel}"
set title "{name}"
plot "{name}.csv" using 1:2 with linespoints
"""


def write_table(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def write_figure(name: str, figure: Figure, directory: Path) -> List[Path]:
    """
    `<name>.csv` two-column series plus a gnuplot script plotting it
    """
    csv_path = write_table(pd.DataFrame({figure.xlabel: figure.x, figure.ylabel: figure.y}), directory / f"{name}.csv")
    gp_path = directory / f"{name}.gp"
    gp_path.write_text(GNUPLOT_TEMPLATE.format(name=name, xlabel=figure.xlabel, ylabel=figure.ylabel))
    return [csv_path, gp_path]


def write_artifacts(output: ExperimentOutput, directory: Union[str, Path]) -> List[str]:
    """
    Tables, norm reports and plot data of one run; returns the file names
    relative to the run directory
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, frame in sorted(output.tables.items()):
        written.append(write_table(frame, directory / f"{name}.csv"))
    if output.reports:
        rows = pd.DataFrame([r.to_row() for r in output.reports])
        written.append(write_table(rows, directory / "norm_reports.csv"))
    for name, figure in sorted(output.figures.items()):
        written.extend(write_figure(name, figure, directory))
    logger.info(f"Wrote {len(written)} artifacts to {directory}")
    return sorted(p.name for p in written)


def write_record(record: ResultRecord, directory: Union[str, Path]) -> Path:
    path = Path(directory) / RECORD_FILE
    path.write_text(json.dumps(record.model_dump(mode="json"), indent=2, sort_keys=True))
    return path


def load_records(directory: Union[str, Path]) -> List[ResultRecord]:
    """
    Every record.json below `directory`, in path order
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"no results directory at {directory}", "results_dir")
    records = []
    for path in sorted(directory.rglob(RECORD_FILE)):
        try:
            records.append(ResultRecord.model_validate_json(path.read_text()))
        except ValueError as exc:
            raise ConfigError(f"unreadable record: {exc}", str(path)) from exc
    return records


def _verdict_line(record: ResultRecord, verdict: Verdict) -> str:
    line = f"- [{record.experiment.value}] {verdict.name}"
    if verdict.measured is not None and verdict.bound is not None:
        line += f" (measured {verdict.measured:.6g}, bound {verdict.bound:.6g})"
    elif verdict.measured is not None:
        line += f" (measured {verdict.measured:.6g})"
    if verdict.detail:
        line += f": {verdict.detail}"
    return line


def _grouped(records: Sequence[ResultRecord], passed: bool) -> Dict[str, List[str]]:
    groups = defaultdict(list)
    for record in records:
        for verdict in record.verdicts:
            if verdict.passed == passed:
                groups[verdict.claim.value].append(_verdict_line(record, verdict))
    return dict(sorted(groups.items()))


def emit_report(records: Sequence[ResultRecord]) -> str:
    """
    Markdown summary: failures first, then passes, both grouped by claim,
    followed by the fitted-constant table
    """
    if not records:
        raise ValueError("emit_report needs at least one record")
    failures = _grouped(records, passed=False)
    passes = _grouped(records, passed=True)
    n_fail = sum(len(v) for v in failures.values())
    n_pass = sum(len(v) for v in passes.values())

    lines = ["# Regularity lab report", "",
             f"{len(records)} record(s), {n_pass} verdict(s) passed, {n_fail} failed", ""]
    for title, groups in (("Failures", failures), ("Passed", passes)):
        if not groups:
            continue
        lines += [f"## {title}", ""]
        for claim, entries in groups.items():
            lines += [f"### {claim}", *entries, ""]

    lines += ["## Fitted constants", "", "| experiment | record | constant | value |", "|---|---|---|---|"]
    for record in records:
        for name, value in sorted(record.constants.items()):
            lines.append(f"| {record.experiment.value} | {record.record_hash[:12]} | {name} | {value:.6g} |")
    return "\n".join(lines) + "\n"
