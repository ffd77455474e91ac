# sisfactor/settings.py
from functools import lru_cache
import os


class Settings:
    def __init__(self) -> None:
        # Default artifact directory when neither --output nor paths.output is given
        self.output_dir = os.getenv("SIS_OUTPUT_DIR", "sis-output")
        self.log_level = os.getenv("SIS_LOG_LEVEL", "INFO").upper()
        # Metrics toggle (on by default); written as metrics.prom next to the artifacts
        self.enable_metrics = os.getenv("SIS_ENABLE_METRICS", "1") == "1"
        # Chain checkpoint backend: json or sqlite
        self.chain_format = os.getenv("SIS_CHAIN_FORMAT", "json").lower()
        self.threads = int(os.getenv("SIS_THREADS", "1"))
        # Wall-clock numbers break byte-identical reruns, so they stay out of JSON/CSV unless asked
        self.include_timing = os.getenv("SIS_INCLUDE_TIMING", "0") == "1"


@lru_cache
def get_settings() -> Settings:
    return Settings()
