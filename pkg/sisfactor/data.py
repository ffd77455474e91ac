# sisfactor/data.py
import io
import logging
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import DataValidationError
from .models import DataPaths, RunConfig
from .services.model_core import Dataset
from .utils import atomic_write_text, dumps

logger = logging.getLogger(__name__)

INTERCEPT = "(Intercept)"


# ---------- Reading ----------

def read_csv(path: Union[str, Path], what: str) -> pd.DataFrame:
    """CSV with a header row; missing files and empty tables are validation errors."""
    p = Path(path)
    if not p.is_file():
        raise DataValidationError(f"{what} file not found", {"path": str(p)})
    try:
        frame = pd.read_csv(p, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataValidationError(f"{what} file could not be parsed", {"path": str(p), "reason": str(exc)}) from exc
    if frame.empty:
        raise DataValidationError(f"{what} file has no rows", {"path": str(p)})
    return frame


def _numeric(frame: pd.DataFrame, what: str) -> pd.DataFrame:
    for col in frame.columns:
        if not pd.api.types.is_numeric_dtype(frame[col]):
            raise DataValidationError(f"{what} column is not numeric", {"column": str(col)})
    if frame.isna().to_numpy().any():
        i, j = np.argwhere(frame.isna().to_numpy())[0]
        raise DataValidationError(f"{what} has a missing value", {"row": int(i), "column": str(frame.columns[j])})
    return frame.astype(float)


def design_matrix(frame: pd.DataFrame, categorical: Sequence[str], standardize: bool,
                  intercept: bool, what: str) -> Tuple[np.ndarray, List[str]]:
    """Reference-coded dummies for ``categorical``, standardized continuous columns, optional intercept first."""
    missing = [c for c in categorical if c not in frame.columns]
    if missing:
        raise DataValidationError(f"declared categorical column(s) missing from {what}", {"columns": missing})
    continuous = [c for c in frame.columns if c not in categorical]
    cont = _numeric(frame[continuous], what)
    if standardize:
        sd = cont.std(ddof=0)
        constant = sd[sd == 0].index.tolist()
        if constant:
            logger.warning("%s: constant column(s) left unscaled: %s", what, constant)
        scaled = [c for c in continuous if c not in constant]
        if scaled:
            cont[scaled] = (cont[scaled] - cont[scaled].mean()) / sd[scaled]
    parts = [cont]
    if categorical:
        cats = frame[list(categorical)].astype(str)
        parts.append(pd.get_dummies(cats, columns=list(categorical), drop_first=True, dtype=float))
    design = pd.concat(parts, axis=1)
    if intercept:
        design.insert(0, INTERCEPT, 1.0)
    if design.shape[1] == 0:
        raise DataValidationError(f"{what} has no columns")
    return design.to_numpy(dtype=float), [str(c) for c in design.columns]


def load_dataset(paths: DataPaths, mode: str = "gaussian", x_categorical: Sequence[str] = (),
                 w_categorical: Sequence[str] = (), standardize_x: bool = True, standardize_w: bool = True,
                 add_intercept: bool = True, w_intercept: bool = True) -> Dataset:
    """Responses, meta covariates (one row per response column) and optional environmental covariates."""
    if not paths.y:
        raise DataValidationError("paths.y is required")
    yf = _numeric(read_csv(paths.y, "y"), "y")
    y_names = [str(c) for c in yf.columns]
    p = len(y_names)
    if paths.x:
        xf = read_csv(paths.x, "x")
        if len(xf) != p:
            raise DataValidationError("x must have one row per column of y", {"p": p, "x_rows": len(xf)})
        x, x_names = design_matrix(xf, x_categorical, standardize_x, add_intercept, "x")
    else:
        x, x_names = np.ones((p, 1)), [INTERCEPT]
    w = w_names = None
    if paths.w:
        wf = read_csv(paths.w, "w")
        if len(wf) != len(yf):
            raise DataValidationError("w must have one row per row of y", {"n": len(yf), "w_rows": len(wf)})
        w, w_names = design_matrix(wf, w_categorical, standardize_w, w_intercept, "w")
    data = Dataset(y=yf.to_numpy(), x=x, w=w, mode=mode, y_names=y_names, x_names=x_names, w_names=w_names)
    logger.info("loaded %s data: n=%d p=%d q=%d c=%d", mode, data.n, data.p, data.q, data.c)
    return data


def dataset_from_config(config: RunConfig) -> Dataset:
    return load_dataset(
        config.paths, config.mode, config.x_categorical, config.w_categorical,
        config.standardize_x, config.standardize_w, config.add_intercept, config.w_intercept,
    )


def read_matrix_csv(path: Union[str, Path]) -> np.ndarray:
    return pd.read_csv(path).to_numpy(dtype=float)


# ---------- Writing ----------

def write_json(path: Union[str, Path], obj: Any) -> Path:
    if hasattr(obj, "model_dump"):
        obj = obj.model_dump()
    return atomic_write_text(path, dumps(obj))


def write_frame_csv(path: Union[str, Path], frame: pd.DataFrame) -> Path:
    buf = io.StringIO()
    frame.to_csv(buf, index=False, lineterminator="\n")
    return atomic_write_text(path, buf.getvalue())


def write_matrix_csv(path: Union[str, Path], matrix: np.ndarray, columns: Optional[Sequence[str]] = None) -> Path:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    columns = list(columns) if columns is not None else [f"c{h}" for h in range(matrix.shape[1])]
    return write_frame_csv(path, pd.DataFrame(matrix, columns=columns))
