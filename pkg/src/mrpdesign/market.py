import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from attrs import Factory, field, frozen

from .data import PRICE_KINDS
from .errors import DataError
from .validators import (
    frozen_array,
    validate_finite,
    validate_matrix,
    validate_nonzero_rows,
)
from .writers import write_csv_frame

logger = logging.getLogger(__name__)


def _names_converter(value) -> Tuple[str, ...]:
    return tuple(str(v) for v in value)


def _validate_panel_shape(instance, attribute, value) -> None:
    """A price panel needs at least two samples of at least two assets"""
    validate_matrix(instance, attribute, value)
    (T, M) = value.shape
    if T < 2 or M < 2:
        raise DataError(
            f"A log-price panel needs T >= 2 samples and M >= 2 assets, got {T}x{M}"
        )


def _validate_names_match_columns(instance, attribute, value) -> None:
    if len(value) != instance.values.shape[1]:
        raise DataError(
            f"Got {len(value)} asset names for {instance.values.shape[1]} columns"
        )


def _validate_hedge_matches_values(instance, attribute, value) -> None:
    if value.shape[0] != instance.values.shape[1]:
        raise DataError(
            f"Hedge matrix has {value.shape[0]} rows but the spread panel has "
            + f"{instance.values.shape[1]} columns"
        )


@frozen(eq=False)
class LogPriceMatrix:
    """A T×M panel of asset log-prices, rows ascending in time.

    Attributes:
        values: T×M matrix of natural-log prices.
        asset_names: M column labels.
    """

    values: np.ndarray = field(
        converter=frozen_array, validator=[_validate_panel_shape, validate_finite]
    )
    asset_names: Tuple[str, ...] = field(
        converter=_names_converter, validator=_validate_names_match_columns
    )

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def M(self) -> int:
        return self.values.shape[1]

    def rows(self, index: Union[slice, range]) -> "LogPriceMatrix":
        """Sub-panel over a contiguous range of time indices"""
        if isinstance(index, range):
            index = slice(index.start, index.stop)
        return LogPriceMatrix(self.values[index], self.asset_names)

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.values, columns=list(self.asset_names))
        df.index.name = "t"
        return df


def _spread_names_default(instance) -> Tuple[str, ...]:
    return tuple(f"spread_{n + 1}" for n in range(instance.values.shape[1]))


@frozen(eq=False)
class SpreadPanel:
    """A T×N panel of spread log-prices together with its N×M hedge matrix.

    Row `n` of :attr:`hedge` holds the hedge ratios defining spread `n` on the
    underlying assets.

    Attributes:
        values: T×N spread log-prices.
        hedge: N×M hedge matrix with no all-zero rows.
        spread_names: N column labels. Defaults to `spread_1 ... spread_N`.
    """

    values: np.ndarray = field(
        converter=frozen_array, validator=[validate_matrix, validate_finite]
    )
    hedge: np.ndarray = field(
        converter=frozen_array,
        validator=[validate_nonzero_rows, _validate_hedge_matches_values],
    )
    spread_names: Tuple[str, ...] = field(
        converter=_names_converter,
        default=Factory(_spread_names_default, takes_self=True),
    )

    @spread_names.validator
    def _check_spread_names(self, attribute, value):
        if len(value) != self.values.shape[1]:
            raise DataError(
                f"Got {len(value)} spread names for {self.values.shape[1]} columns"
            )

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    def rows(self, index: Union[slice, range]) -> "SpreadPanel":
        """Sub-panel over a contiguous range of time indices, same hedge"""
        if isinstance(index, range):
            index = slice(index.start, index.stop)
        return SpreadPanel(self.values[index], self.hedge, self.spread_names)

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.values, columns=list(self.spread_names))
        df.index.name = "t"
        return df


def _first_invalid_cell(raw: pd.DataFrame) -> Optional[Tuple[int, str, str]]:
    """Finds the first missing or non-numeric cell in row-major order.

    Args:
        raw: DataFrame read with every cell as a string
    Returns:
        `None` if every cell parses as a number, otherwise a tuple of the 1-based
        data row, the column name and a description of the problem.
    """
    missing = raw.isna() | raw.apply(lambda col: col.astype(str).str.strip() == "")
    numeric = raw.apply(pd.to_numeric, errors="coerce")
    bad = missing.to_numpy() | numeric.isna().to_numpy()
    if not bad.any():
        return None
    (i, j) = np.argwhere(bad)[0]
    column = str(raw.columns[j])
    if missing.iat[i, j]:
        problem = "missing value"
    else:
        problem = f"non-numeric value {raw.iat[i, j]!r}"
    return (int(i) + 1, column, problem)


def load_csv(path: Union[str, Path], prices: str = "log") -> LogPriceMatrix:
    """Loads a price panel from a CSV file.

    The file is UTF-8, comma-separated, with one header row of asset names and one
    row per time step in ascending order. Lines starting with `#` are skipped, which
    is where `mrpdesign` writes its reproducibility metadata.

    Args:
        path: Path to the CSV file.
        prices: "log" if the file already holds log-prices, "raw" if it holds prices
            that should be converted to natural-log prices. Never inferred.
    Returns:
        :class:`LogPriceMatrix`
    Raises:
        DataError: If the file is missing or malformed. Errors caused by a cell cite
            its 1-based data row and its column.
    """
    if prices not in PRICE_KINDS:
        raise DataError(f"prices must be one of {PRICE_KINDS}, got {prices!r}")
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Price file {path} does not exist")
    try:
        raw = pd.read_csv(
            path,
            comment="#",
            dtype=str,
            keep_default_na=False,
            skipinitialspace=True,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError:
        raise DataError(f"Price file {path} is empty")
    except pd.errors.ParserError as e:
        raise DataError(f"Could not parse {path}: {e}")
    if len(raw) < 2:
        raise DataError(f"Price file {path} needs at least 2 rows, got {len(raw)}")
    if (invalid := _first_invalid_cell(raw)) is not None:
        (row, column, problem) = invalid
        raise DataError(f"Invalid price file {path}: {problem}", row=row, column=column)
    values = raw.apply(pd.to_numeric).to_numpy(dtype=float)
    if not np.all(np.isfinite(values)):
        (i, j) = np.argwhere(~np.isfinite(values))[0]
        raise DataError(
            f"Invalid price file {path}: non-finite value",
            row=int(i) + 1,
            column=str(raw.columns[j]),
        )
    if prices == "raw":
        if np.any(values <= 0):
            (i, j) = np.argwhere(values <= 0)[0]
            raise DataError(
                "Raw prices must be positive to take logs",
                row=int(i) + 1,
                column=str(raw.columns[j]),
            )
        values = np.log(values)
    logger.info(f"Loaded {values.shape[0]}x{values.shape[1]} {prices} panel from {path}")
    return LogPriceMatrix(values, raw.columns.tolist())


def write_csv(
    prices: LogPriceMatrix,
    path: Union[str, Path],
    metadata: Optional[Dict[str, object]] = None,
) -> Path:
    """Writes a log-price panel in the format read by :func:`load_csv`

    Floats are written with 17 significant digits so that a reload reproduces the
    panel exactly.
    """
    return write_csv_frame(prices.to_frame(), path, metadata=metadata, index=False)


def make_spreads(
    prices: LogPriceMatrix,
    hedge: Union[np.ndarray, List[List[float]]],
    spread_names: Optional[List[str]] = None,
) -> SpreadPanel:
    """Builds spread log-prices from asset log-prices.

    `values[t, n] = sum_m hedge[n, m] * prices[t, m]`.

    Args:
        prices: Asset log-prices.
        hedge: N×M hedge matrix (a single row may be given as a vector).
        spread_names (optional): Labels for the N spreads.
    Returns:
        :class:`SpreadPanel`
    Raises:
        DataError: If `hedge` does not have M columns or has an all-zero row.
    """
    hedge = np.atleast_2d(np.asarray(hedge, dtype=float))
    if hedge.ndim != 2 or hedge.shape[1] != prices.M:
        raise DataError(
            f"Hedge matrix with shape {hedge.shape} does not match {prices.M} assets"
        )
    values = prices.values @ hedge.T
    if spread_names is None:
        return SpreadPanel(values, hedge)
    return SpreadPanel(values, hedge, spread_names)


def load_hedge_csv(
    path: Union[str, Path], prices: LogPriceMatrix
) -> Tuple[np.ndarray, Optional[List[str]]]:
    """Loads an N×M hedge matrix, one row per spread.

    The header names the assets of `prices` (in any order). An optional `spread`
    column labels the rows.

    Returns:
        Tuple of the hedge matrix with columns in the order of `prices` and the
        spread labels, `None` if the file has no `spread` column.
    Raises:
        DataError: If the file is missing or malformed, or its assets differ from
            those of `prices`.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Hedge file {path} does not exist")
    try:
        raw = pd.read_csv(path, comment="#", dtype=str, keep_default_na=False)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise DataError(f"Could not parse hedge file {path}: {e}")
    names = None
    if "spread" in raw.columns:
        names = raw.pop("spread").tolist()
    if set(raw.columns) != set(prices.asset_names):
        raise DataError(
            f"Hedge file {path} names assets {sorted(raw.columns)}, expected "
            + f"{sorted(prices.asset_names)}"
        )
    if len(raw) == 0:
        raise DataError(f"Hedge file {path} has no rows")
    if (invalid := _first_invalid_cell(raw)) is not None:
        (row, column, problem) = invalid
        raise DataError(f"Invalid hedge file {path}: {problem}", row=row, column=column)
    hedge = raw[list(prices.asset_names)].apply(pd.to_numeric).to_numpy(dtype=float)
    return (hedge, names)
