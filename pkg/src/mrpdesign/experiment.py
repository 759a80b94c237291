"""Pipelines behind the command line: synthetic data generation, portfolio design,
backtests over rolling windows, full experiments and multi-seed studies.

Every function takes an :class:`ExperimentConfig`. Files are written with the
reproducibility metadata of the configuration, see :mod:`mrpdesign.writers`.
"""
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd
from attrs import converters, evolve, field, fields, frozen
from joblib import Parallel, delayed  # type: ignore
from tqdm import tqdm  # type: ignore

from .backtest import BacktestReport, Window, backtest_window, rolling_windows
from .data import (
    COMPARISON_SETS,
    DEFAULT_ASSETS,
    DEFAULT_GTRS_TOL,
    DEFAULT_LAG_ORDER,
    DEFAULT_LENGTH,
    DEFAULT_MAX_ITER,
    DEFAULT_N_STARTS,
    DEFAULT_NU_SCALE,
    DEFAULT_RANK,
    DEFAULT_SEED,
    DEFAULT_T_IN,
    DEFAULT_T_OUT,
    DEFAULT_TOL_OBJ,
    DEFAULT_TOL_W,
    DEFAULT_WINDOWS,
    HARD_CASE_MODES,
    PRICE_KINDS,
    PSI_MODES,
    SOLVER_SPACES,
    SPREAD_MODES,
)
from .datagen import (
    CointSpec,
    SyntheticMarket,
    asset_weights,
    build_spreads,
    generate_market,
    write_market,
)
from .errors import (
    ConfigError,
    DataError,
    InfeasibleVarianceError,
    MrpError,
    NonConvergenceError,
)
from .irgtrs import MrpConfig, MrpResult, solve_mrp
from .market import (
    LogPriceMatrix,
    SpreadPanel,
    load_csv,
    load_hedge_csv,
    make_spreads,
)
from .moments import LagMoments, estimate_moments, nu_min, portmanteau
from .validators import validate_at_least_one, validate_one_of, validate_positive
from .writers import (
    build_metadata,
    read_json,
    write_csv_frame,
    write_json,
    write_parquet,
)

logger = logging.getLogger(__name__)

#: Settings that do not change any result and are left out of the config hash
_UNHASHED = ("out", "parallel_windows", "parquet")


def _validate_existing_file(instance, attribute, value) -> None:
    if value is not None and not Path(value).is_file():
        raise ConfigError(f"{attribute.name} file {value} does not exist")


def _validate_optional_positive(instance, attribute, value) -> None:
    if value is not None:
        validate_positive(instance, attribute, value)


@frozen
class ExperimentConfig:
    """Resolved configuration of a command.

    Construct it with :meth:`ExperimentConfig.from_mapping`, which rejects unknown
    keys. Data come from :attr:`data` (a price CSV, with an optional :attr:`hedge`
    CSV) or, when it is not given, from a synthetic market described by
    :attr:`assets`, :attr:`rank`, :attr:`length` and :attr:`seed`.

    Attributes:
        data: Price CSV. Synthetic data are generated when `None`.
        hedge: Hedge matrix CSV for :attr:`data`. Identity (assets as spreads) when
            `None`.
        prices: "log" or "raw", the interpretation of :attr:`data`.
        assets: Synthetic asset count M.
        rank: Synthetic cointegration rank r.
        length: Synthetic sample count T.
        spread_mode: "true_beta" or "perturbed" hedge for synthetic spreads.
        spread_sd: Hedge perturbation sd for "perturbed".
        seed: Seed of the synthetic market and of random starting directions.
        p: Lag order.
        nu: Variance level. Each window uses `nu_scale * nu_min` when `None`.
        nu_scale: Multiple of the window's `nu_min` used when `nu` is `None`.
        psi: Majorization constant mode.
        space: Coordinates of the MM loop.
        n_starts: Starting points of the MM loop.
        tol_obj: Relative objective decrease stopping threshold.
        tol_w: Iterate change stopping threshold.
        max_iter: MM iteration cap.
        gtrs_tol: GTRS tolerance.
        hard_case: GTRS hard case handling.
        tin: In-sample window length.
        tout: Out-of-sample window length.
        windows: Number of rolling windows.
        compare: "all" to also trade each single spread, "mrp" for the designed
            portfolio only.
        annualization: Periods per year for annualized Sharpe ratios.
        weights: Weights JSON written by `design`, traded by `backtest`.
        out: Output directory.
        parallel_windows: Evaluate windows concurrently.
        parquet: Also write plot-ready series as parquet.
    """

    data: Optional[str] = field(default=None, validator=_validate_existing_file)
    hedge: Optional[str] = field(default=None, validator=_validate_existing_file)
    prices: str = field(default="log", validator=validate_one_of(PRICE_KINDS))
    assets: int = field(default=DEFAULT_ASSETS, converter=int)
    rank: int = field(default=DEFAULT_RANK, converter=int)
    length: int = field(default=DEFAULT_LENGTH, converter=int)
    spread_mode: str = field(default="true_beta", validator=validate_one_of(SPREAD_MODES))
    spread_sd: float = field(default=0.0, converter=float)
    seed: int = field(default=DEFAULT_SEED, converter=int)
    p: int = field(default=DEFAULT_LAG_ORDER, converter=int, validator=validate_at_least_one)
    nu: Optional[float] = field(
        default=None,
        converter=converters.optional(float),
        validator=_validate_optional_positive,
    )
    nu_scale: float = field(
        default=DEFAULT_NU_SCALE, converter=float, validator=validate_positive
    )
    psi: str = field(default="spectral", validator=validate_one_of(PSI_MODES))
    space: str = field(default="original", validator=validate_one_of(SOLVER_SPACES))
    n_starts: int = field(
        default=DEFAULT_N_STARTS, converter=int, validator=validate_at_least_one
    )
    tol_obj: float = field(default=DEFAULT_TOL_OBJ, converter=float)
    tol_w: float = field(default=DEFAULT_TOL_W, converter=float)
    max_iter: int = field(default=DEFAULT_MAX_ITER, converter=int)
    gtrs_tol: float = field(default=DEFAULT_GTRS_TOL, converter=float)
    hard_case: str = field(default="complete", validator=validate_one_of(HARD_CASE_MODES))
    tin: int = field(default=DEFAULT_T_IN, converter=int, validator=validate_at_least_one)
    tout: int = field(default=DEFAULT_T_OUT, converter=int, validator=validate_at_least_one)
    windows: int = field(
        default=DEFAULT_WINDOWS, converter=int, validator=validate_at_least_one
    )
    compare: str = field(default="all", validator=validate_one_of(COMPARISON_SETS))
    annualization: Optional[float] = field(
        default=None,
        converter=converters.optional(float),
        validator=_validate_optional_positive,
    )
    weights: Optional[str] = field(default=None, validator=_validate_existing_file)
    out: str = field(default="mrpdesign_out", converter=str)
    parallel_windows: bool = field(default=False, converter=bool)
    parquet: bool = field(default=False, converter=bool)

    @classmethod
    def from_mapping(cls, mapping: Dict[str, Any]) -> "ExperimentConfig":
        """Builds a config from a flat mapping of field names to values.

        Raises:
            ConfigError: On unknown keys or invalid values.
        """
        unknown = sorted(set(mapping) - set(DEFAULT_CONFIG))
        if unknown:
            raise ConfigError(f"Unknown configuration keys {unknown}")
        try:
            return cls(**mapping)
        except (TypeError, ValueError) as e:
            if isinstance(e, MrpError):
                raise
            raise ConfigError(f"Invalid configuration: {e}")

    def to_dict(self) -> Dict[str, Any]:
        return {a.name: getattr(self, a.name) for a in fields(type(self))}

    @property
    def metadata(self) -> Dict[str, Any]:
        """{version, seed, config_hash} embedded in every output file"""
        hashed = {k: v for (k, v) in self.to_dict().items() if k not in _UNHASHED}
        return build_metadata(self.seed, hashed)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def coint_spec(self) -> CointSpec:
        return CointSpec(M=self.assets, r=self.rank, T=self.length, seed=self.seed)

    def mrp_config(self, nu: float) -> MrpConfig:
        return MrpConfig(
            nu=nu,
            p=self.p,
            psi_mode=self.psi,
            tol_obj=self.tol_obj,
            tol_w=self.tol_w,
            max_iter=self.max_iter,
            gtrs_tol=self.gtrs_tol,
            space=self.space,
            n_starts=self.n_starts,
            hard_case=self.hard_case,
            seed=self.seed,
        )


#: Built-in defaults, the lowest layer of configuration resolution
DEFAULT_CONFIG: Dict[str, Any] = {
    a.name: a.default for a in fields(ExperimentConfig)
}


def load_spreads(
    cfg: ExperimentConfig,
) -> Tuple[LogPriceMatrix, SpreadPanel, Optional[SyntheticMarket]]:
    """Loads (or simulates) log-prices and forms the spread panel"""
    if cfg.data is None:
        market = generate_market(cfg.coint_spec())
        spreads = build_spreads(
            market, mode=cfg.spread_mode, sd=cfg.spread_sd, seed=cfg.seed
        )
        return (market.prices, spreads, market)
    prices = load_csv(cfg.data, prices=cfg.prices)
    if cfg.hedge is None:
        spreads = make_spreads(prices, np.eye(prices.M), list(prices.asset_names))
    else:
        (hedge, names) = load_hedge_csv(cfg.hedge, prices)
        spreads = make_spreads(prices, hedge, names)
    return (prices, spreads, None)


def resolve_nu(
    nu: Optional[float], nu_scale: float, moments: LagMoments
) -> Tuple[float, float]:
    """Variance level for a window and the window's `nu_min`

    Raises:
        InfeasibleVarianceError: If an explicit `nu` is below `nu_min`.
    """
    level = nu_min(moments)
    if nu is None:
        return (nu_scale * level, level)
    if nu < level * (1 - 1e-12):
        raise InfeasibleVarianceError(nu, level)
    return (nu, level)


@frozen(eq=False)
class WindowDesign:
    """Portfolio designed on the training range of a window"""

    window: Window
    result: MrpResult
    nu: float
    nu_min: float
    w_p: np.ndarray
    single_portmanteau: Tuple[float, ...]

    @property
    def dominates(self) -> bool:
        """Whether the design's portmanteau is at most every single spread's"""
        best_single = min(self.single_portmanteau)
        return self.result.portmanteau <= best_single * (1 + 1e-12)

    def to_dict(self) -> Dict[str, Any]:
        doc = self.result.to_dict()
        doc.update(
            {
                "window": self.window.to_dict(),
                "nu_min": self.nu_min,
                "w_p": self.w_p,
                "single_portmanteau": list(self.single_portmanteau),
                "dominates_single_spreads": self.dominates,
            }
        )
        return doc


def design_window(
    spreads: SpreadPanel, window: Window, cfg: ExperimentConfig
) -> WindowDesign:
    """Estimates moments on the training range and solves for the portfolio"""
    moments = estimate_moments(spreads.rows(window.train), cfg.p)
    (nu, level) = resolve_nu(cfg.nu, cfg.nu_scale, moments)
    logger.info(
        f"Window {window.window_id}: designing with nu={nu:.6g} (nu_min={level:.6g})"
    )
    result = solve_mrp(moments, cfg.mrp_config(nu))
    singles = tuple(portmanteau(e, moments) for e in np.eye(spreads.N))
    return WindowDesign(
        window=window,
        result=result,
        nu=nu,
        nu_min=level,
        w_p=asset_weights(spreads.hedge, result.w),
        single_portmanteau=singles,
    )


@frozen(eq=False)
class WindowResult:
    """Design and per-strategy reports of one window"""

    design: WindowDesign
    reports: Dict[str, BacktestReport]


def run_window(
    spreads: SpreadPanel, window: Window, cfg: ExperimentConfig
) -> WindowResult:
    """Designs on the training range, then trades the portfolio and, when
    comparing against all, every single spread with its own calibrated rule."""
    design = design_window(spreads, window, cfg)
    z = spreads.values @ design.result.w
    reports = {"mrp": backtest_window(z, window, design.w_p, cfg.annualization)}
    if cfg.compare == "all":
        for (n, name) in enumerate(spreads.spread_names):
            reports[name] = backtest_window(
                spreads.values[:, n], window, spreads.hedge[n], cfg.annualization
            )
    return WindowResult(design=design, reports=reports)


def _map_windows(function, windows: List[Window], parallel: bool) -> list:
    if parallel and len(windows) > 1:
        return Parallel(n_jobs=len(windows), prefer="threads")(
            delayed(function)(window) for window in windows
        )
    return [function(window) for window in windows]


@frozen(eq=False)
class ExperimentResult:
    config: ExperimentConfig
    prices: LogPriceMatrix
    spreads: SpreadPanel
    windows: List[WindowResult]

    @property
    def strategies(self) -> List[str]:
        return list(self.windows[0].reports)

    def summary(self) -> Dict[str, Any]:
        """Summary table with one row per strategy, and the per-window designs"""
        table = []
        for strategy in self.strategies:
            reports = [w.reports[strategy] for w in self.windows]
            table.append(
                {
                    "strategy": strategy,
                    "cum_pnl": float(sum(r.total_pnl for r in reports)),
                    "cum_pnl_by_window": [r.total_pnl for r in reports],
                    "sharpe_by_window": [r.sharpe for r in reports],
                    "n_trades": int(sum(len(r.trades) for r in reports)),
                }
            )
        return {
            "strategies": table,
            "designs": [w.design.to_dict() for w in self.windows],
            "asset_names": list(self.prices.asset_names),
            "spread_names": list(self.spreads.spread_names),
            "benchmark_sdr": "unavailable",
        }


def compute_experiment(
    cfg: ExperimentConfig, spreads: Optional[SpreadPanel] = None
) -> ExperimentResult:
    """Runs every window of an experiment in memory"""
    (prices, loaded, _) = load_spreads(cfg)
    spreads = loaded if spreads is None else spreads
    windows = rolling_windows(spreads.T, cfg.tin, cfg.tout, cfg.windows)
    results = _map_windows(
        lambda window: run_window(spreads, window, cfg), windows, cfg.parallel_windows
    )
    for result in results:
        if not result.design.result.converged:
            logger.warning(
                f"Window {result.design.window.window_id}: MM loop did not converge"
            )
    return ExperimentResult(config=cfg, prices=prices, spreads=spreads, windows=results)


def _long(
    kind: str, strategy: str, window_id: int, frame: pd.DataFrame
) -> pd.DataFrame:
    """Melts a frame indexed by t with one column per label"""
    df = frame.rename_axis("t").reset_index().melt(
        id_vars="t", var_name="label", value_name="value"
    )
    df.insert(0, "window_id", window_id)
    df.insert(0, "strategy", strategy)
    df.insert(0, "kind", kind)
    return df[["kind", "strategy", "window_id", "label", "t", "value"]]


def plot_series(result: ExperimentResult) -> pd.DataFrame:
    """Long-format series for external plotting.

    Kinds: `log_price`, `spread`, `mrp_spread`, `asset_weight`, `position`, `roi`
    and `cum_pnl`. Rows that do not belong to a window have `window_id` -1.
    """
    parts = [
        _long("log_price", "", -1, result.prices.to_frame()),
        _long("spread", "", -1, result.spreads.to_frame()),
    ]
    for window_result in result.windows:
        design = window_result.design
        window = design.window
        j = window.window_id
        span = range(window.train.start, window.trade.stop)
        z = result.spreads.values[span.start : span.stop] @ design.result.w
        parts.append(_long("mrp_spread", "mrp", j, pd.DataFrame({"mrp": z}, index=span)))
        weights = pd.DataFrame(
            [design.w_p], columns=list(result.prices.asset_names), index=[window.trade.start]
        )
        parts.append(_long("asset_weight", "mrp", j, weights))
        for (strategy, report) in window_result.reports.items():
            positions = pd.Series(
                report.positions.positions, index=report.z.index, name=strategy
            ).astype(float)
            parts.append(_long("position", strategy, j, positions.to_frame()))
            parts.append(_long("roi", strategy, j, report.roi.to_frame(strategy)))
            parts.append(_long("cum_pnl", strategy, j, report.cum_pnl.to_frame(strategy)))
    return pd.concat(parts, ignore_index=True)


def _report_document(
    strategy: str, report: BacktestReport, weights: Optional[np.ndarray] = None
) -> Dict[str, Any]:
    doc = report.summary()
    doc["strategy"] = strategy
    doc["trades"] = report.trades.to_dict(orient="records")
    if weights is not None:
        doc["w"] = weights
    return doc


def _write_reports(
    reports: Iterable[Tuple[str, BacktestReport, Optional[np.ndarray]]],
    out_dir: Path,
    metadata: Dict[str, Any],
) -> None:
    for (strategy, report, weights) in reports:
        stem = out_dir / "reports" / f"{strategy}_window{report.window_id}"
        doc = _report_document(strategy, report, weights)
        write_json(doc, stem.with_suffix(".json"), metadata)
        write_csv_frame(report.to_frame(), stem.with_suffix(".csv"), metadata)


def write_experiment(result: ExperimentResult) -> Path:
    """Writes the summary, per-strategy reports and plot-ready series"""
    cfg = result.config
    metadata = cfg.metadata
    out_dir = cfg.out_dir
    _write_reports(
        (
            (
                strategy,
                report,
                w.design.result.w if strategy == "mrp" else None,
            )
            for w in result.windows
            for (strategy, report) in w.reports.items()
        ),
        out_dir,
        metadata,
    )
    series = plot_series(result)
    write_csv_frame(series, out_dir / "plot_series.csv", metadata)
    if cfg.parquet:
        write_parquet(series, out_dir / "plot_series.parquet", metadata)
    return write_json(result.summary(), out_dir / "summary.json", metadata)


def run_experiment(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Full pipeline over all windows. Returns the summary document."""
    result = compute_experiment(cfg)
    path = write_experiment(result)
    logger.info(f"Wrote experiment summary to {path}")
    return result.summary()


def run_generate(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Simulates a market, writes `prices.csv` and `market.json` and reports the
    `nu_min` of the implied spread moments over the first training range."""
    market = generate_market(cfg.coint_spec())
    (prices_path, sidecar_path) = write_market(market, cfg.out_dir, cfg.metadata)
    doc: Dict[str, Any] = {
        "prices": str(prices_path),
        "market": str(sidecar_path),
        "nu_min": None,
    }
    if market.r == 0:
        logger.info("Market has no cointegration relation, no spreads to design on")
        return doc
    spreads = build_spreads(market, mode=cfg.spread_mode, sd=cfg.spread_sd, seed=cfg.seed)
    try:
        moments = estimate_moments(spreads.rows(range(0, min(cfg.tin, spreads.T))), cfg.p)
    except DataError as e:
        logger.warning(f"Cannot estimate spread moments: {e}")
        return doc
    doc["nu_min"] = nu_min(moments)
    logger.info(
        f"nu_min of the spread moments over the first {min(cfg.tin, spreads.T)} "
        + f"samples is {doc['nu_min']:.6g}. Choose nu >= nu_min."
    )
    return doc


def run_design(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Designs a portfolio on the first `tin` samples and writes `weights.json`.

    Raises:
        NonConvergenceError: After writing the weights, if the MM loop stopped
            without meeting a stopping test.
    """
    (prices, spreads, _) = load_spreads(cfg)
    train = range(0, min(cfg.tin, spreads.T))
    window = Window(window_id=0, train=train, trade=range(train.stop, train.stop))
    design = design_window(spreads, window, cfg)
    doc = design.to_dict()
    doc.update(
        {
            "hedge": spreads.hedge,
            "asset_names": list(prices.asset_names),
            "spread_names": list(spreads.spread_names),
        }
    )
    path = write_json(doc, cfg.out_dir / "weights.json", cfg.metadata)
    logger.info(f"Wrote weights to {path}")
    if not design.result.converged:
        raise NonConvergenceError(
            f"MM loop stopped after {design.result.iterations} iterations without "
            + f"converging (kkt_residual={design.result.kkt_residual:.3e}). "
            + f"Diagnostics in {path}"
        )
    return doc


def run_backtest(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Trades fixed spread weights from :attr:`ExperimentConfig.weights` over
    rolling windows, calibrating the rule on each training range."""
    if cfg.weights is None:
        raise ConfigError("backtest needs a weights file")
    w = np.asarray(read_json(cfg.weights)["w"], dtype=float)
    (prices, spreads, _) = load_spreads(cfg)
    if w.shape != (spreads.N,):
        raise DataError(f"Weights have {w.size} entries for {spreads.N} spreads")
    w_p = asset_weights(spreads.hedge, w)
    z = spreads.values @ w
    windows = rolling_windows(spreads.T, cfg.tin, cfg.tout, cfg.windows)
    reports = _map_windows(
        lambda window: backtest_window(z, window, w_p, cfg.annualization),
        windows,
        cfg.parallel_windows,
    )
    _write_reports(((("mrp", r, w) for r in reports)), cfg.out_dir, cfg.metadata)
    doc = {
        "w": w,
        "w_p": w_p,
        "windows": [r.summary() for r in reports],
        "cum_pnl": float(sum(r.total_pnl for r in reports)),
    }
    write_json(doc, cfg.out_dir / "backtest.json", cfg.metadata)
    return doc


def _median(values: List[float]) -> Optional[float]:
    return float(np.median(values)) if values else None


def run_seed_study(
    cfg: ExperimentConfig, seeds: Iterable[int], progress: bool = True
) -> Dict[str, Any]:
    """Runs the experiment over several seeds.

    Reports the median out-of-sample Sharpe ratio of the designed portfolio against
    the median over single spreads, and the number of seeds for which the design's
    in-sample portmanteau is at most every single spread's in every window.
    """
    seeds = list(seeds)
    per_seed = []
    (mrp_sharpes, single_sharpes) = ([], [])
    for seed in tqdm(seeds, desc="Seeds", disable=not progress):
        result = compute_experiment(evolve(cfg, seed=seed))
        mrp = [w.reports["mrp"].sharpe for w in result.windows]
        singles = [
            r.sharpe
            for w in result.windows
            for (name, r) in w.reports.items()
            if name != "mrp"
        ]
        mrp_sharpes.extend(s for s in mrp if s is not None)
        single_sharpes.extend(s for s in singles if s is not None)
        per_seed.append(
            {
                "seed": seed,
                "mrp_sharpe_by_window": mrp,
                "dominates_single_spreads": all(w.design.dominates for w in result.windows),
            }
        )
    doc = {
        "seeds": seeds,
        "median_sharpe_mrp": _median(mrp_sharpes),
        "median_sharpe_single": _median(single_sharpes),
        "dominance_count": sum(s["dominates_single_spreads"] for s in per_seed),
        "per_seed": per_seed,
    }
    path = write_json(doc, cfg.out_dir / "study.json", cfg.metadata)
    logger.info(
        f"Seed study over {len(seeds)} seeds: median Sharpe {doc['median_sharpe_mrp']} "
        + f"(designed) vs {doc['median_sharpe_single']} (single spreads), in-sample "
        + f"dominance in {doc['dominance_count']} seeds. Wrote {path}"
    )
    return doc
