import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from qblue.config import SAMPLE_COLUMNS, get_settings
from qblue.errors import CodeRangeError, TableFormatError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def float_format(digits: Optional[int] = None) -> str:
    if digits is None:
        digits = get_settings().csv_significant_digits
    return f"%.{digits}g"


def write_table(
    df: pd.DataFrame,
    path: PathLike,
    digits: Optional[int] = None,
    comment: Optional[str] = None,
) -> Path:
    """Write a table as CSV with a fixed number of significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        if comment:
            handle.write(f"# {comment}\n")
        df.to_csv(handle, index=False, float_format=float_format(digits), lineterminator="\n")
    logger.info("Wrote %d rows to %s", len(df), path)
    return path


def read_comment(path: PathLike) -> Optional[str]:
    """Return the leading '# ...' line of a table, if any."""
    with Path(path).open(encoding="utf-8") as handle:
        first = handle.readline().strip()
    return first[1:].strip() if first.startswith("#") else None


def read_table(path: PathLike, columns: list[str]) -> pd.DataFrame:
    """Read a CSV table and check its header and cell types."""
    try:
        df = pd.read_csv(path, comment="#", skip_blank_lines=True, float_precision="round_trip")
    except pd.errors.ParserError as e:
        raise TableFormatError(f"{path}: malformed CSV: {e}") from e
    except pd.errors.EmptyDataError as e:
        raise TableFormatError(f"{path}: empty file") from e

    header = [str(c).strip() for c in df.columns]
    if header != columns:
        raise TableFormatError(
            f"{path}: expected header {','.join(columns)}, got {','.join(header)}"
        )
    df.columns = columns

    for column in columns:
        converted = pd.to_numeric(df[column], errors="coerce")
        bad = converted.isna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0]) + 1
            raise TableFormatError(f"{path}: malformed value in row {row}, column '{column}'")
        df[column] = converted
    return df


def read_samples(path: PathLike, level_count: int) -> np.ndarray:
    """Load a samples file (index,code) and return codes in index order."""
    df = read_table(path, SAMPLE_COLUMNS)
    if df.empty:
        raise TableFormatError(f"{path}: no samples")
    codes = df["code"].to_numpy()
    if np.any(codes != np.round(codes)):
        raise TableFormatError(f"{path}: codes must be integers")
    if df["index"].duplicated().any():
        raise TableFormatError(f"{path}: duplicate sample index")
    df = df.sort_values("index", kind="stable")
    codes = df["code"].to_numpy().astype(np.int64)
    out_of_range = (codes < 0) | (codes >= level_count)
    if out_of_range.any():
        raise CodeRangeError(
            f"{path}: code {int(codes[out_of_range][0])} outside [0, {level_count - 1}]"
        )
    logger.info("Loaded %d samples from %s", codes.size, path)
    return codes


def write_samples(codes: np.ndarray, path: PathLike) -> Path:
    """Write codes as an index,code table."""
    codes = np.asarray(codes, dtype=np.int64)
    df = pd.DataFrame({"index": np.arange(codes.size), "code": codes})
    return write_table(df, path)
