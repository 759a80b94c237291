import numpy as np
import pytest

from mrpdesign.datagen import CointSpec, build_spreads, generate_market
from mrpdesign.market import LogPriceMatrix, write_csv
from mrpdesign.moments import LagMoments


def _random_spd(rng: np.random.Generator, n: int, floor: float = 0.5) -> np.ndarray:
    A = rng.standard_normal((n, n))
    return A @ A.T + floor * np.eye(n)


def _random_symmetric(rng: np.random.Generator, n: int) -> np.ndarray:
    A = rng.standard_normal((n, n))
    return 0.5 * (A + A.T)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def random_spd():
    return _random_spd


@pytest.fixture
def random_symmetric():
    return _random_symmetric


@pytest.fixture
def random_moments():
    def _method(rng: np.random.Generator, n: int, p: int) -> LagMoments:
        """Random lag moments with a positive definite M0"""
        mats = [_random_spd(rng, n)]
        mats.extend(0.3 * _random_symmetric(rng, n) for _ in range(p))
        return LagMoments.from_matrices(mats, T_est=100)

    return _method


@pytest.fixture(scope="session")
def small_market():
    """Four assets with three cointegration relations, long enough for two
    small windows"""
    return generate_market(CointSpec(M=4, r=3, T=160, seed=11))


@pytest.fixture(scope="session")
def small_spreads(small_market):
    return build_spreads(small_market)


@pytest.fixture
def small_config():
    """Flat configuration mapping for fast end-to-end runs"""
    return {
        "assets": 4,
        "rank": 3,
        "length": 160,
        "seed": 11,
        "p": 2,
        "tin": 80,
        "tout": 40,
        "windows": 2,
        "n_starts": 2,
        "max_iter": 200,
    }


@pytest.fixture
def price_csv(tmp_path):
    """Writes a log-price panel to CSV and returns its path"""

    def _method(values, names=None, name="prices.csv"):
        values = np.asarray(values, dtype=float)
        names = names or [f"asset_{m + 1}" for m in range(values.shape[1])]
        return write_csv(LogPriceMatrix(values, names), tmp_path / name)

    return _method
