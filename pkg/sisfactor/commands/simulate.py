# sisfactor/commands/simulate.py
import logging
from pathlib import Path
from typing import Dict, Optional

import pandas as pd

from ..data import write_frame_csv, write_json
from ..metrics import SamplerMetrics
from ..models import RunConfig
from ..services.simulation import run_replicates
from ..settings import Settings

logger = logging.getLogger(__name__)


def run(config: RunConfig, out_dir: Path, settings: Settings,
        metrics: Optional[SamplerMetrics] = None) -> Dict[str, Path]:
    """One metrics CSV (a row per replicate) and one aggregate JSON per family."""
    spec = config.resolved_scenario()
    gaussian = config.model_copy(update={"mode": "gaussian"})
    hyper = gaussian.resolved_hyper()
    chain_cfg = gaussian.resolved_chain()
    threads = config.threads or settings.threads
    artifacts: Dict[str, Path] = {}
    for family in config.families:
        report = run_replicates(spec, family, hyper, chain_cfg, threads, metrics, settings.include_timing)
        rows = []
        for r in report.replicates:
            row = r.model_dump(exclude={"mce_sensitivity"})
            row.update({f"mce@{k}": v for k, v in r.mce_sensitivity.items()})
            if not settings.include_timing:
                row.pop("seconds_per_iteration")
            rows.append(row)
        artifacts[f"metrics_{family}_csv"] = write_frame_csv(out_dir / f"metrics_{family}.csv", pd.DataFrame(rows))
        artifacts[f"metrics_{family}_json"] = write_json(out_dir / f"metrics_{family}.json", report)
        agg = report.aggregates
        logger.info("%s: %d/%d ok, median E(H_a|y)=%s, median LPML=%s", family, report.n_succeeded,
                    spec.n_replicates, agg["e_h_active"].median, agg["lpml"].median)
    return artifacts
