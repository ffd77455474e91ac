# sisfactor/repositories/base.py
from pathlib import Path
from typing import Protocol

from ..services.model_core import ChainOutput


class ChainStore(Protocol):
    path: Path

    def save(self, chain: ChainOutput) -> Path: ...
    def load(self) -> ChainOutput: ...
    def exists(self) -> bool: ...
