# sisfactor/metrics.py
from pathlib import Path
from typing import Union

from prometheus_client import CollectorRegistry, Counter, Histogram, write_to_textfile

ITERATION_BUCKETS = (0.0005, 0.001, 0.005, 0.01, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 5.0)


class SamplerMetrics:
    """Per-run collectors on a private registry, dumped in the text exposition format."""

    def __init__(self) -> None:
        self.registry = CollectorRegistry()
        self.iterations = Counter(
            "sis_gibbs_iterations_total", "Gibbs sweeps completed", ["family", "mode"], registry=self.registry,
        )
        self.iteration_seconds = Histogram(
            "sis_gibbs_iteration_seconds", "Wall-clock seconds per Gibbs sweep", ["family", "mode"],
            buckets=ITERATION_BUCKETS, registry=self.registry,
        )
        self.adaptations = Counter(
            "sis_adaptation_events_total", "Truncation adaptation events", ["family", "direction"],
            registry=self.registry,
        )
        self.replicate_failures = Counter(
            "sis_replicate_failures_total", "Simulation replicates that raised", ["family"], registry=self.registry,
        )

    def observe_iteration(self, family: str, mode: str, seconds: float) -> None:
        self.iterations.labels(family, mode).inc()
        self.iteration_seconds.labels(family, mode).observe(seconds)

    def record_adaptation(self, family: str, direction: str) -> None:
        self.adaptations.labels(family, direction).inc()

    def record_failure(self, family: str) -> None:
        self.replicate_failures.labels(family).inc()

    def write(self, path: Union[str, Path]) -> Path:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        write_to_textfile(str(target), self.registry)
        return target
