# monitoring/metrics_collector.py
from pathlib import Path
from typing import Union

import psutil
from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile


class MetricsCollector:
    """
    Prometheus metrics of one experiment run, kept in a private registry
    and written next to the run's artifacts
    """

    def __init__(self, experiment: str):
        self.experiment = experiment
        self.registry = CollectorRegistry()
        self.experiments_run = Counter('lab_experiments_total', 'Experiments run', ['experiment'],
                                       registry=self.registry)
        self.verdicts = Counter('lab_verdicts_total', 'Verdicts by claim and outcome', ['claim', 'outcome'],
                                registry=self.registry)
        self.run_duration = Histogram('lab_run_duration_seconds', 'Wall-clock duration of a run', ['experiment'],
                                      buckets=(1, 5, 10, 30, 60, 300, 900, 3600), registry=self.registry)
        self.flow_halvings = Gauge('lab_flow_halvings', 'Step halvings needed by the flow integrator',
                                   ['experiment'], registry=self.registry)
        self.peak_memory = Gauge('lab_peak_memory_bytes', 'Peak resident memory seen during the run',
                                 registry=self.registry)
        self._peak = 0

    def track_run(self, duration: float):
        self.experiments_run.labels(experiment=self.experiment).inc()
        self.run_duration.labels(experiment=self.experiment).observe(duration)

    def track_verdict(self, claim: str, passed: bool):
        self.verdicts.labels(claim=claim, outcome="pass" if passed else "fail").inc()

    def track_halvings(self, halvings: int):
        self.flow_halvings.labels(experiment=self.experiment).set(halvings)

    def update_system_metrics(self):
        """Update the resident-memory high-water mark"""
        self._peak = max(self._peak, psutil.Process().memory_info().rss)
        self.peak_memory.set(self._peak)

    def write(self, directory: Union[str, Path]) -> Path:
        path = Path(directory) / "metrics.prom"
        write_to_textfile(str(path), self.registry)
        return path
