# read version from installed package
import logging
import sys
import warnings
from importlib.metadata import version

from .backtest import backtest_window, evaluate, rolling_windows, simulate_positions
from .datagen import CointSpec, build_spreads, generate_market
from .irgtrs import MrpConfig, solve_mrp
from .market import load_csv, make_spreads
from .moments import estimate_moments, portmanteau

__version__ = version("mrpdesign")

logging.getLogger(__name__).addHandler(logging.NullHandler())
logging.basicConfig(
    stream=sys.stdout, level=logging.INFO, format="%(levelname)s: %(message)s"
)

warnings.simplefilter(action="ignore", category=FutureWarning)

__all__ = [
    "CointSpec",
    "MrpConfig",
    "backtest_window",
    "build_spreads",
    "estimate_moments",
    "evaluate",
    "generate_market",
    "load_csv",
    "make_spreads",
    "portmanteau",
    "rolling_windows",
    "simulate_positions",
    "solve_mrp",
]
