# sisfactor/commands/summarize.py
import logging
from pathlib import Path
from typing import Dict

import numpy as np
import pandas as pd

from ..data import dataset_from_config, write_frame_csv, write_json, write_matrix_csv
from ..errors import ConfigError
from ..models import Hyperparameters, RunConfig, SummaryReport
from ..repositories import open_chain_store
from ..services.model_core import Dataset
from ..services.summary import summarize_chain
from ..settings import Settings

logger = logging.getLogger(__name__)


def write_summary_artifacts(report: SummaryReport, data: Dataset, out_dir: Path) -> Dict[str, Path]:
    names = data.y_names or [f"y{j}" for j in range(data.p)]
    lam = np.asarray(report.lambda_map, dtype=float).reshape(data.p, -1)
    edges = pd.DataFrame(
        [e.model_dump() for e in report.edges], columns=["node_i", "node_j", "partial_correlation"],
    )
    return {
        "summary": write_json(out_dir / "summary.json", report),
        "lambda_map": write_matrix_csv(out_dir / "lambda_map.csv", lam, [f"h{h}" for h in range(lam.shape[1])]),
        "correlation": write_matrix_csv(out_dir / "correlation.csv", report.posterior_mean_correlation, names),
        "partial_correlation": write_matrix_csv(
            out_dir / "partial_correlation.csv", report.posterior_mean_partial_correlation, names,
        ),
        "edges": write_frame_csv(out_dir / "edges.csv", edges),
    }


def run(config: RunConfig, out_dir: Path, settings: Settings, metrics=None) -> Dict[str, Path]:
    """Re-summarize a stored chain against the data it was fitted to."""
    if not config.paths.chain:
        raise ConfigError("paths.chain is required for summarize")
    chain = open_chain_store(config.paths.chain).load()
    if chain.mode != config.mode:
        raise ConfigError("stored chain and config disagree on mode", {"chain": chain.mode, "config": config.mode})
    data = dataset_from_config(config)
    hyper = Hyperparameters(**chain.hyper)
    report = summarize_chain(chain, data, hyper, config.summary, settings.include_timing)
    logger.info("summarized %s chain from %s", chain.family, config.paths.chain)
    return write_summary_artifacts(report, data, out_dir)
