# sisfactor/repositories/sqlite.py
import io
import json
import os
import sqlite3
import tempfile
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from ..errors import ConfigError
from ..models import SCHEMA_VERSION
from ..services.model_core import ChainOutput, Draw
from .base import ChainStore

_ARRAYS = ("lam", "beta", "sigma2", "rho", "phi", "theta", "v", "psi", "mu", "b")


def _to_blob(a: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.asarray(a), allow_pickle=False)
    return buf.getvalue()


def _from_blob(blob: Optional[bytes]) -> Optional[np.ndarray]:
    if blob is None:
        return None
    return np.load(io.BytesIO(blob), allow_pickle=False)


class SqliteChainStore(ChainStore):
    """Chain checkpoint in one SQLite file; arrays are stored as .npy blobs."""

    def __init__(self, db_path: Union[str, Path], include_timing: bool = False) -> None:
        self.path = Path(db_path)
        self.include_timing = include_timing

    def _conn(self, path: Optional[Path] = None) -> sqlite3.Connection:
        return sqlite3.connect(str(path or self.path))

    def exists(self) -> bool:
        return self.path.is_file()

    @staticmethod
    def init_schema(con: sqlite3.Connection) -> None:
        con.executescript("""
        CREATE TABLE IF NOT EXISTS chain (
          id INTEGER PRIMARY KEY CHECK (id = 1),
          schema_version TEXT NOT NULL,
          mode TEXT NOT NULL,
          family TEXT NOT NULL,
          config TEXT NOT NULL,
          hyper TEXT NOT NULL,
          adaptation_events INTEGER NOT NULL,
          seconds_per_iteration REAL NULL,
          h_active_trace BLOB NOT NULL,
          H_trace BLOB NOT NULL,
          log_density_trace BLOB NOT NULL
        );
        CREATE TABLE IF NOT EXISTS draws (
          idx INTEGER PRIMARY KEY,
          iteration INTEGER NOT NULL,
          h_active INTEGER NOT NULL,
          log_density REAL NULL
        );
        CREATE TABLE IF NOT EXISTS draw_arrays (
          idx INTEGER NOT NULL REFERENCES draws(idx),
          name TEXT NOT NULL,
          data BLOB NULL,
          PRIMARY KEY (idx, name)
        );
        """)

    def save(self, chain: ChainOutput) -> Path:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{self.path.name}.", dir=str(self.path.parent))
        os.close(fd)
        try:
            con = self._conn(Path(tmp))
            try:
                with con:
                    self.init_schema(con)
                    con.execute(
                        "INSERT INTO chain VALUES (1,?,?,?,?,?,?,?,?,?,?)",
                        (SCHEMA_VERSION, chain.mode, chain.family,
                         json.dumps(chain.config, sort_keys=True), json.dumps(chain.hyper, sort_keys=True),
                         int(chain.adaptation_events),
                         chain.seconds_per_iteration if self.include_timing else None,
                         _to_blob(chain.h_active_trace), _to_blob(chain.H_trace), _to_blob(chain.log_density_trace)),
                    )
                    for i, d in enumerate(chain.draws):
                        con.execute("INSERT INTO draws VALUES (?,?,?,?)", (i, d.iteration, d.h_active, d.log_density))
                        con.executemany(
                            "INSERT INTO draw_arrays VALUES (?,?,?)",
                            [(i, name, None if getattr(d, name) is None else _to_blob(getattr(d, name)))
                             for name in _ARRAYS],
                        )
            finally:
                con.close()
            os.replace(tmp, self.path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return self.path

    def load(self) -> ChainOutput:
        if not self.exists():
            raise ConfigError("chain file not found", {"path": str(self.path)})
        con = self._conn()
        try:
            head = con.execute("SELECT * FROM chain WHERE id = 1").fetchone()
            if head is None or head[1] != SCHEMA_VERSION:
                raise ConfigError(
                    "unsupported chain schema version",
                    {"path": str(self.path), "found": None if head is None else head[1], "expected": SCHEMA_VERSION},
                )
            arrays: Dict[int, Dict[str, Any]] = {}
            for idx, name, blob in con.execute("SELECT idx, name, data FROM draw_arrays ORDER BY idx, name"):
                arrays.setdefault(idx, {})[name] = _from_blob(blob)
            draws = []
            for idx, iteration, h_active, log_density in con.execute("SELECT * FROM draws ORDER BY idx"):
                a = arrays.get(idx, {})
                draws.append(Draw(iteration=iteration, h_active=h_active, log_density=log_density,
                                  **{name: a.get(name) for name in _ARRAYS}))
        finally:
            con.close()
        return ChainOutput(
            mode=head[2], family=head[3], draws=draws,
            h_active_trace=_from_blob(head[8]), H_trace=_from_blob(head[9]), log_density_trace=_from_blob(head[10]),
            seconds_per_iteration=head[7] or 0.0, adaptation_events=head[6],
            config=json.loads(head[4]), hyper=json.loads(head[5]),
        )
