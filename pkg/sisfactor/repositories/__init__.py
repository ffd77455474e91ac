# sisfactor/repositories/__init__.py
from pathlib import Path
from typing import Union

from ..errors import ConfigError
from .base import ChainStore
from .jsonfile import JsonChainStore
from .sqlite import SqliteChainStore

__all__ = ["ChainStore", "JsonChainStore", "SqliteChainStore", "get_chain_store", "open_chain_store"]


def get_chain_store(directory: Union[str, Path], fmt: str = "json", include_timing: bool = False) -> ChainStore:
    """Store for a new chain inside ``directory``."""
    directory = Path(directory)
    if fmt == "json":
        return JsonChainStore(directory / "chain.json", include_timing)
    if fmt == "sqlite":
        return SqliteChainStore(directory / "chain.sqlite", include_timing)
    raise ConfigError(f"unknown chain format '{fmt}'", {"allowed": ["json", "sqlite"]})


def open_chain_store(path: Union[str, Path]) -> ChainStore:
    """Store for an existing chain file, chosen by suffix."""
    path = Path(path)
    if path.suffix.lower() in (".sqlite", ".db"):
        return SqliteChainStore(path)
    return JsonChainStore(path)
