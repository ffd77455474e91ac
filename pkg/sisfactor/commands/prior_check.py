# sisfactor/commands/prior_check.py
import logging
from pathlib import Path
from typing import Dict, Optional

from ..data import write_json
from ..metrics import SamplerMetrics
from ..models import RunConfig
from ..services.priors import build_prior_report
from ..settings import Settings

logger = logging.getLogger(__name__)


def run(config: RunConfig, out_dir: Path, settings: Settings,
        metrics: Optional[SamplerMetrics] = None) -> Dict[str, Path]:
    options = config.resolved_prior_check()
    report = build_prior_report(config.resolved_hyper(), options)
    failed = [s.family for s in report.shrinkage if not s.increasing_shrinkage and not s.inconclusive]
    if failed:
        logger.warning("increasing shrinkage not confirmed for: %s", ", ".join(failed))
    if not report.truncation.dominated:
        logger.warning("truncation bound does not dominate the Monte Carlo estimate")
    return {"prior_check": write_json(out_dir / "prior_check.json", report)}
