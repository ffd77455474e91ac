# sisfactor/repositories/jsonfile.py
import json
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np

from ..errors import ConfigError
from ..models import SCHEMA_VERSION
from ..services.model_core import ChainOutput, Draw
from ..utils import atomic_write_text, dumps
from .base import ChainStore


class JsonChainStore(ChainStore):
    """One schema-versioned JSON document per chain."""

    def __init__(self, path: Union[str, Path], include_timing: bool = False) -> None:
        self.path = Path(path)
        self.include_timing = include_timing

    def exists(self) -> bool:
        return self.path.is_file()

    def save(self, chain: ChainOutput) -> Path:
        doc: Dict[str, Any] = {
            "schema_version": SCHEMA_VERSION,
            "mode": chain.mode,
            "family": chain.family,
            "config": chain.config,
            "hyper": chain.hyper,
            "adaptation_events": chain.adaptation_events,
            "seconds_per_iteration": chain.seconds_per_iteration if self.include_timing else None,
            "h_active_trace": chain.h_active_trace,
            "H_trace": chain.H_trace,
            "log_density_trace": chain.log_density_trace,
            "draws": [d.to_dict() for d in chain.draws],
        }
        return atomic_write_text(self.path, dumps(doc))

    def load(self) -> ChainOutput:
        if not self.exists():
            raise ConfigError("chain file not found", {"path": str(self.path)})
        doc = json.loads(self.path.read_text(encoding="utf-8"))
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(
                "unsupported chain schema version",
                {"path": str(self.path), "found": doc.get("schema_version"), "expected": SCHEMA_VERSION},
            )
        return ChainOutput(
            mode=doc["mode"], family=doc["family"],
            draws=[Draw.from_dict(d) for d in doc["draws"]],
            h_active_trace=np.asarray(doc["h_active_trace"], dtype=int),
            H_trace=np.asarray(doc["H_trace"], dtype=int),
            log_density_trace=np.asarray(doc["log_density_trace"], dtype=float),
            seconds_per_iteration=doc.get("seconds_per_iteration") or 0.0,
            adaptation_events=int(doc.get("adaptation_events", 0)),
            config=doc.get("config", {}), hyper=doc.get("hyper", {}),
        )
