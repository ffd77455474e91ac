# sisfactor/commands/fit.py
import logging
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pandas as pd

from ..data import dataset_from_config, write_frame_csv
from ..metrics import SamplerMetrics
from ..models import RunConfig
from ..repositories import get_chain_store
from ..services.gibbs import run_chain
from ..services.summary import summarize_chain
from ..settings import Settings
from .summarize import write_summary_artifacts

logger = logging.getLogger(__name__)


def run(config: RunConfig, out_dir: Path, settings: Settings,
        metrics: Optional[SamplerMetrics] = None) -> Dict[str, Path]:
    """Fit one chain, checkpoint it, write its traces and its summary."""
    data = dataset_from_config(config)
    hyper = config.resolved_hyper()
    chain_cfg = config.resolved_chain()
    chain = run_chain(data, hyper, chain_cfg, metrics, pi_mode=config.summary.pi_mode, n_mc=config.summary.n_mc)

    store = get_chain_store(out_dir, settings.chain_format, settings.include_timing)
    artifacts = {"chain": store.save(chain)}
    N = chain.h_active_trace.size
    artifacts["trace"] = write_frame_csv(out_dir / "trace.csv", pd.DataFrame({
        "iteration": np.arange(1, N + 1), "H": chain.H_trace, "h_active": chain.h_active_trace,
    }))
    artifacts["log_density"] = write_frame_csv(out_dir / "log_density.csv", pd.DataFrame({
        "draw": np.arange(len(chain.draws)),
        "iteration": [d.iteration for d in chain.draws],
        "log_density": [d.log_density for d in chain.draws],
    }))

    report = summarize_chain(chain, data, hyper, config.summary, settings.include_timing)
    artifacts.update(write_summary_artifacts(report, data, out_dir))
    logger.info("fit done: MAP draw %d, E(H_a | y) = %.2f, LPML = %.4f",
                report.map_index, report.e_h_active, report.lpml)
    return artifacts
