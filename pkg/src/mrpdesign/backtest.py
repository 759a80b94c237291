"""Threshold trading of a mean-reverting spread.

A rule is calibrated on the training segment of a window (mean μ and threshold
`δ = 0.75 * sd`), positions follow a three-state machine over the trading segment,
and the position held at `t - 1` earns `z_t - z_{t-1}`.
"""
import logging
from enum import IntEnum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from attrs import field, frozen

from .data import THRESHOLD_FACTOR
from .errors import ConfigError, DataError, SharpeUndefinedError

logger = logging.getLogger(__name__)


class Position(IntEnum):
    SHORT = -1
    FLAT = 0
    LONG = 1


def _validate_rule(instance, attribute, value) -> None:
    if not instance.sd > 0:
        raise DataError(f"Trading rule needs a positive sd, got {instance.sd!r}")
    expected = THRESHOLD_FACTOR * instance.sd
    if abs(value - expected) > 1e-12 * max(1.0, expected):
        raise DataError(f"delta={value!r} is not {THRESHOLD_FACTOR} * sd={instance.sd!r}")


@frozen
class TradingRule:
    """Threshold rule calibrated on a training segment.

    Attributes:
        mu: Long-run mean of the spread.
        delta: Entry threshold, :data:`mrpdesign.data.THRESHOLD_FACTOR` times `sd`.
        sd: Sample standard deviation of the training segment.
    """

    mu: float = field(converter=float)
    delta: float = field(converter=float, validator=_validate_rule)
    sd: float = field(converter=float)

    @classmethod
    def from_threshold(cls, mu: float, delta: float) -> "TradingRule":
        return cls(mu=mu, delta=delta, sd=delta / THRESHOLD_FACTOR)

    def to_dict(self) -> Dict[str, float]:
        return {"mu": self.mu, "delta": self.delta, "sd": self.sd}


def calibrate_rule(z_train: Sequence[float]) -> TradingRule:
    """Calibrates μ (sample mean) and δ = 0.75 × sample sd (denominator T - 1)

    Raises:
        DataError: If the segment has fewer than 2 samples or zero variance.
    """
    z = np.asarray(z_train, dtype=float)
    if z.size < 2:
        raise DataError(f"Need at least 2 training samples, got {z.size}")
    sd = float(np.std(z, ddof=1))
    if not sd > 0:
        raise DataError("Training spread has zero variance")
    return TradingRule(
        mu=float(np.mean(z)), delta=THRESHOLD_FACTOR * sd, sd=sd
    )


def _transition(state: Position, z: float, rule: TradingRule) -> Position:
    (lower, upper) = (rule.mu - rule.delta, rule.mu + rule.delta)
    if state == Position.FLAT:
        if z <= lower:
            return Position.LONG
        if z >= upper:
            return Position.SHORT
    elif state == Position.LONG:
        if z >= upper:
            return Position.SHORT
        if rule.mu <= z < upper:
            return Position.FLAT
    else:
        if z <= lower:
            return Position.LONG
        if lower < z <= rule.mu:
            return Position.FLAT
    return state


def _change_points(positions: np.ndarray) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
    """Indices where a nonzero position is opened and where one is closed"""
    previous = np.concatenate([[0], positions[:-1]])
    changed = positions != previous
    entries = np.flatnonzero(changed & (positions != 0))
    exits = np.flatnonzero(changed & (previous != 0))
    return (tuple(entries.tolist()), tuple(exits.tolist()))


def _positions_converter(value) -> np.ndarray:
    arr = np.array(value, dtype=int)
    arr.flags.writeable = False
    return arr


def _validate_positions(instance, attribute, value) -> None:
    if value.ndim != 1 or not np.all(np.isin(value, (-1, 0, 1))):
        raise DataError("Positions must be a series of -1, 0 and +1")


@frozen(eq=False)
class PositionSeries:
    """Positions in {-1, 0, +1}. The position at t is held from t to t + 1.

    Attributes:
        positions: Position per period.
        entries: Periods where a position is opened, flips included.
        exits: Periods where a held position is closed or flipped.
    """

    positions: np.ndarray = field(
        converter=_positions_converter, validator=_validate_positions
    )
    entries: Tuple[int, ...] = field(init=False)
    exits: Tuple[int, ...] = field(init=False)

    def __attrs_post_init__(self):
        (entries, exits) = _change_points(self.positions)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "exits", exits)

    def __len__(self) -> int:
        return len(self.positions)

    def forced_flat(self) -> "PositionSeries":
        """Same positions with the final period closed"""
        positions = np.array(self.positions)
        if positions.size:
            positions[-1] = Position.FLAT
        return PositionSeries(positions)


def simulate_positions(z: Sequence[float], rule: TradingRule) -> PositionSeries:
    """Runs the three-state position machine over `z`, starting flat.

    FLAT→LONG if `z <= μ - δ`, FLAT→SHORT if `z >= μ + δ`, LONG→SHORT if
    `z >= μ + δ`, LONG→FLAT if `μ <= z < μ + δ`, SHORT→LONG if `z <= μ - δ`,
    SHORT→FLAT if `μ - δ < z <= μ`, otherwise hold.
    """
    state = Position.FLAT
    positions = []
    for value in np.asarray(z, dtype=float):
        state = _transition(state, value, rule)
        positions.append(int(state))
    return PositionSeries(positions)


def replay_positions(
    z: Sequence[float], positions: PositionSeries, rule: TradingRule
) -> List[int]:
    """Indices where recorded positions disagree with the transition rule.

    An empty list means every transition and every hold is justified.
    """
    z = np.asarray(z, dtype=float)
    if len(z) != len(positions):
        raise DataError(f"Got {len(z)} prices for {len(positions)} positions")
    mismatches = []
    state = Position.FLAT
    for (t, (value, recorded)) in enumerate(zip(z, positions.positions)):
        if _transition(state, value, rule) != recorded:
            mismatches.append(t)
        state = Position(int(recorded))
    return mismatches


def sharpe_ratio(roi: Sequence[float]) -> float:
    """Unannualized Sharpe ratio with zero risk-free rate, sd with denominator n - 1

    Raises:
        SharpeUndefinedError: If there are fewer than 2 returns or their sd is 0.
    """
    roi = np.asarray(roi, dtype=float)
    if roi.size < 2:
        raise SharpeUndefinedError(f"Sharpe ratio needs 2 returns, got {roi.size}")
    sd = float(np.std(roi, ddof=1))
    if not sd > 0:
        raise SharpeUndefinedError("ROI has zero standard deviation")
    return float(np.mean(roi)) / sd


def trade_ledger(z: Sequence[float], positions: PositionSeries) -> pd.DataFrame:
    """Maximal runs of a constant nonzero position.

    A trade opened at `entry` is closed at `exit`, the first period holding a
    different position, or the last period if it stays open. Its P&L is
    `side * (z[exit] - z[entry])`, so trade P&Ls sum to the cumulative P&L.

    Returns:
        DataFrame with columns `entry`, `exit`, `side` and `pnl`
    """
    z = np.asarray(z, dtype=float)
    pos = positions.positions
    rows = []
    start = None
    for t in range(len(pos) + 1):
        current = pos[t] if t < len(pos) else 0
        if start is not None and (t == len(pos) or current != pos[start]):
            end = min(t, len(pos) - 1)
            side = int(pos[start])
            rows.append((start, end, side, side * (z[end] - z[start])))
            start = None
        if start is None and t < len(pos) and current != 0:
            start = t
    return pd.DataFrame(rows, columns=["entry", "exit", "side", "pnl"]).astype(
        {"entry": int, "exit": int, "side": int, "pnl": float}
    )


@frozen(eq=False)
class BacktestReport:
    """Trading results over one window.

    Attributes:
        z: Traded spread, indexed by period.
        positions: :class:`PositionSeries`
        pnl: P&L per period, `positions[t-1] * (z[t] - z[t-1])` for `t >= 1`.
        cum_pnl: Running sum of `pnl`.
        roi: `pnl / ||w_p||_1`.
        sharpe: Sharpe ratio of `roi`, `None` if undefined.
        sharpe_annualized: `sharpe * sqrt(annualization)` when requested.
        gross_exposure: `||w_p||_1`.
        trades: :func:`trade_ledger` of the positions.
        window_id: Window the report belongs to.
        rule: Calibrated rule, if known.
    """

    z: pd.Series
    positions: PositionSeries
    pnl: pd.Series
    cum_pnl: pd.Series
    roi: pd.Series
    sharpe: Optional[float]
    sharpe_annualized: Optional[float]
    gross_exposure: float
    trades: pd.DataFrame
    window_id: int = 0
    rule: Optional[TradingRule] = None

    @property
    def total_pnl(self) -> float:
        return float(self.cum_pnl.iloc[-1]) if len(self.cum_pnl) else 0.0

    def to_frame(self) -> pd.DataFrame:
        """Time series with columns t, z, position, pnl, cum_pnl and roi"""
        df = pd.DataFrame(
            {
                "t": self.z.index,
                "z": self.z.to_numpy(),
                "position": self.positions.positions,
            }
        )
        for column in ("pnl", "cum_pnl", "roi"):
            df[column] = getattr(self, column).reindex(self.z.index).to_numpy()
        return df

    def summary(self) -> Dict[str, Any]:
        doc: Dict[str, Any] = {
            "window_id": self.window_id,
            "sharpe": self.sharpe,
            "sharpe_annualized": self.sharpe_annualized,
            "cum_pnl": self.total_pnl,
            "gross_exposure": self.gross_exposure,
            "n_trades": len(self.trades),
        }
        if self.rule is not None:
            doc.update(self.rule.to_dict())
        return doc


def evaluate(
    z: Sequence[float],
    positions: PositionSeries,
    w_p: Sequence[float],
    annualization: Optional[float] = None,
    strict: bool = False,
    window_id: int = 0,
    rule: Optional[TradingRule] = None,
    index: Optional[Sequence[int]] = None,
) -> BacktestReport:
    """Marks positions to market and computes P&L, ROI and Sharpe.

    Args:
        z: Spread values over the trading segment.
        positions: Positions over the same periods.
        w_p: Asset weights of the traded spread, whose l1 norm is the gross
            exposure.
        annualization (optional): Periods per year, e.g. 252, to also report an
            annualized Sharpe ratio.
        strict: Raise instead of storing `sharpe=None` when it is undefined.
        window_id: Window identifier stored in the report.
        rule (optional): Rule that produced the positions, stored in the report.
        index (optional): Period labels, `0 ... T-1` by default.
    Raises:
        DataError: If lengths differ or the gross exposure is zero.
        SharpeUndefinedError: If `strict` and the ROI has zero variance.
    """
    z = np.asarray(z, dtype=float)
    if len(z) != len(positions):
        raise DataError(f"Got {len(z)} spread values for {len(positions)} positions")
    gross = float(np.sum(np.abs(np.asarray(w_p, dtype=float))))
    if not gross > 0:
        raise DataError("Gross exposure ||w_p||_1 must be positive")
    labels = pd.RangeIndex(len(z), name="t") if index is None else pd.Index(index, name="t")
    pnl = pd.Series(positions.positions[:-1] * np.diff(z), index=labels[1:], name="pnl")
    cum_pnl = pnl.cumsum().rename("cum_pnl")
    roi = (pnl / gross).rename("roi")
    try:
        sharpe: Optional[float] = sharpe_ratio(roi.to_numpy())
    except SharpeUndefinedError as e:
        if strict:
            raise
        logger.warning(f"Sharpe ratio undefined for window {window_id}: {e}")
        sharpe = None
    annualized = None
    if sharpe is not None and annualization is not None:
        annualized = sharpe * float(np.sqrt(annualization))
    return BacktestReport(
        z=pd.Series(z, index=labels, name="z"),
        positions=positions,
        pnl=pnl,
        cum_pnl=cum_pnl,
        roi=roi,
        sharpe=sharpe,
        sharpe_annualized=annualized,
        gross_exposure=gross,
        trades=trade_ledger(z, positions),
        window_id=window_id,
        rule=rule,
    )


@frozen
class Window:
    """One rolling window: a training range followed by a trading range"""

    window_id: int
    train: range
    trade: range

    def to_dict(self) -> Dict[str, Any]:
        return {
            "window_id": self.window_id,
            "train": [self.train.start, self.train.stop],
            "trade": [self.trade.start, self.trade.stop],
        }


def rolling_windows(T: int, T_in: int, T_out: int, count: int) -> List[Window]:
    """Windows with stride `T_out`.

    Window j trains on `[j*T_out, j*T_out + T_in)` and trades on
    `[j*T_out + T_in, j*T_out + T_in + T_out)`.

    Raises:
        ConfigError: If a length is not positive or `T < T_in + count * T_out`.
    """
    for (name, value) in (("T_in", T_in), ("T_out", T_out), ("count", count)):
        if value < 1:
            raise ConfigError(f"{name} must be >= 1, got {value}")
    needed = T_in + count * T_out
    if T < needed:
        raise ConfigError(
            f"{count} windows of {T_in} in-sample and {T_out} out-of-sample periods "
            + f"need T >= {needed}, got T={T}"
        )
    return [
        Window(
            window_id=j,
            train=range(j * T_out, j * T_out + T_in),
            trade=range(j * T_out + T_in, j * T_out + T_in + T_out),
        )
        for j in range(count)
    ]


def backtest_window(
    z: Sequence[float],
    window: Window,
    w_p: Sequence[float],
    annualization: Optional[float] = None,
) -> BacktestReport:
    """Calibrates on the training range and trades the trading range of `z`.

    Positions are forced flat at the last trading period.
    """
    z = np.asarray(z, dtype=float)
    if len(z) < window.trade.stop:
        raise DataError(f"Series of length {len(z)} ends before window {window}")
    rule = calibrate_rule(z[window.train.start : window.train.stop])
    z_trade = z[window.trade.start : window.trade.stop]
    positions = simulate_positions(z_trade, rule).forced_flat()
    return evaluate(
        z_trade,
        positions,
        w_p,
        annualization=annualization,
        window_id=window.window_id,
        rule=rule,
        index=window.trade,
    )
