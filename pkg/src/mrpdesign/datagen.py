"""Synthetic cointegrated log-price systems with a known cointegration matrix.

Latent series `z_t = (q_t; u_t)` stack r stationary AR(1) processes and `M - r`
random walks. Log-prices are `y_t = A z_t` for a nonsingular mixing matrix A, so the
first r rows of `A⁻¹` are exact cointegration vectors: `beta y_t = q_t`.
"""
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import scipy.signal  # type: ignore
import scipy.stats  # type: ignore
from attrs import Factory, asdict, field, frozen

from .data import (
    DEFAULT_ASSETS,
    DEFAULT_LENGTH,
    DEFAULT_RANK,
    DEFAULT_RW_NOISE_SD,
    DEFAULT_SEED,
    DEFAULT_SPREAD_NOISE_SD,
    RNG_NAME,
    SPREAD_MODES,
)
from .errors import ConfigError, DataError
from .market import LogPriceMatrix, SpreadPanel, make_spreads, write_csv
from .writers import write_json

logger = logging.getLogger(__name__)

#: Condition number above which a mixing matrix counts as singular
_MAX_CONDITION = 1e12


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent PCG64 stream for `seed`, identified by an integer spawn key.

    Latent series j uses key `(j,)`, the mixing matrix `(M, 0)` and hedge
    perturbations `(M, 1)`.
    """
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=key))
    )


def _default_ar_coeffs(instance) -> Tuple[float, ...]:
    return tuple(np.linspace(0.2, 0.8, instance.r).tolist())


def _default_spread_noise(instance) -> Tuple[float, ...]:
    return (DEFAULT_SPREAD_NOISE_SD,) * instance.r


def _default_rw_noise(instance) -> Tuple[float, ...]:
    return (DEFAULT_RW_NOISE_SD,) * (instance.M - instance.r)


def _float_tuple(value) -> Tuple[float, ...]:
    return tuple(float(v) for v in np.ravel(value))


def _mix_converter(value):
    if isinstance(value, str):
        return value
    return np.array(value, dtype=float)


def _validate_M(instance, attribute, value) -> None:
    if value < 2:
        raise ConfigError(f"Need at least 2 assets, got M={value}")


def _validate_r(instance, attribute, value) -> None:
    if not 0 <= value <= instance.M:
        raise ConfigError(
            f"Cointegration rank must satisfy 0 <= r <= M={instance.M}, got r={value}"
        )


def _validate_T(instance, attribute, value) -> None:
    if value < 2:
        raise ConfigError(f"Need at least 2 samples, got T={value}")


def _validate_ar_coeffs(instance, attribute, value) -> None:
    if len(value) != instance.r:
        raise ConfigError(f"Need {instance.r} AR coefficients, got {len(value)}")
    if any(abs(a) >= 1 for a in value):
        raise ConfigError(f"AR coefficients must lie in (-1, 1), got {value}")


def _validate_noise(expected: str):
    def _validate(instance, attribute, value) -> None:
        size = instance.r if expected == "r" else instance.M - instance.r
        if len(value) != size:
            raise ConfigError(f"{attribute.name} needs {size} values, got {len(value)}")
        if any(not sd > 0 for sd in value):
            raise ConfigError(f"{attribute.name} must be positive, got {value}")

    return _validate


def _validate_mix(instance, attribute, value) -> None:
    if isinstance(value, str):
        if value != "random-orthogonal":
            raise ConfigError(f"Unknown mixing {value!r}, use 'random-orthogonal'")
        return
    if value.shape != (instance.M, instance.M):
        raise ConfigError(f"Mixing matrix must be {instance.M}x{instance.M}")
    if not np.all(np.isfinite(value)) or np.linalg.cond(value) > _MAX_CONDITION:
        raise ConfigError("Mixing matrix is singular")


@frozen(eq=False)
class CointSpec:
    """Parameters of a synthetic cointegrated system.

    Attributes:
        M: Number of assets.
        r: Cointegration rank, `0 <= r <= M`.
        T: Number of samples.
        ar_coeffs: r AR(1) coefficients in (-1, 1). Defaults to evenly spaced
            values from 0.2 to 0.8.
        spread_noise_sd: r innovation standard deviations of the stationary block.
        rw_noise_sd: `M - r` innovation standard deviations of the random walks.
        mix: M×M nonsingular mixing matrix or "random-orthogonal".
        seed: Seed of every random stream.
    """

    M: int = field(default=DEFAULT_ASSETS, converter=int, validator=_validate_M)
    r: int = field(default=DEFAULT_RANK, converter=int, validator=_validate_r)
    T: int = field(default=DEFAULT_LENGTH, converter=int, validator=_validate_T)
    ar_coeffs: Tuple[float, ...] = field(
        default=Factory(_default_ar_coeffs, takes_self=True),
        converter=_float_tuple,
        validator=_validate_ar_coeffs,
    )
    spread_noise_sd: Tuple[float, ...] = field(
        default=Factory(_default_spread_noise, takes_self=True),
        converter=_float_tuple,
        validator=_validate_noise("r"),
    )
    rw_noise_sd: Tuple[float, ...] = field(
        default=Factory(_default_rw_noise, takes_self=True),
        converter=_float_tuple,
        validator=_validate_noise("M - r"),
    )
    mix: Union[str, np.ndarray] = field(
        default="random-orthogonal", converter=_mix_converter, validator=_validate_mix
    )
    seed: int = field(default=DEFAULT_SEED, converter=int)

    def to_dict(self) -> Dict[str, Any]:
        doc = asdict(self)
        if not isinstance(self.mix, str):
            doc["mix"] = self.mix.tolist()
        return doc


@frozen(eq=False)
class SyntheticMarket:
    """A simulated cointegrated system.

    Attributes:
        prices: Simulated log-prices.
        beta: r×M true cointegration matrix.
        seed_used: Seed the system was simulated from.
        latent: T×M latent series `(q; u)`, stationary block first.
        mix: The mixing matrix A.
        spec: The generating :class:`CointSpec`.
    """

    prices: LogPriceMatrix
    beta: np.ndarray
    seed_used: int
    latent: np.ndarray
    mix: np.ndarray
    spec: CointSpec

    @property
    def r(self) -> int:
        return self.beta.shape[0]


def _ar1(coeff: float, sd: float, T: int, rng: np.random.Generator) -> np.ndarray:
    """Stationary AR(1) path, first draw from the stationary distribution"""
    shocks = rng.normal(0.0, sd, T)
    shocks[0] /= np.sqrt(1 - coeff**2)
    return scipy.signal.lfilter([1.0], [1.0, -coeff], shocks)


def _mixing_matrix(spec: CointSpec) -> np.ndarray:
    if isinstance(spec.mix, str):
        return scipy.stats.ortho_group.rvs(
            dim=spec.M, random_state=rng_stream(spec.seed, spec.M, 0)
        )
    return spec.mix


def generate_market(spec: Optional[CointSpec] = None) -> SyntheticMarket:
    """Simulates a cointegrated log-price system.

    Each latent series draws from its own PCG64 stream, keyed by its index under
    `spec.seed`, so the result is a pure function of `spec`.

    Args:
        spec (optional): :class:`CointSpec`, defaults to `CointSpec()`.
    Returns:
        :class:`SyntheticMarket`
    """
    spec = CointSpec() if spec is None else spec
    columns = []
    for j in range(spec.r):
        rng = rng_stream(spec.seed, j)
        columns.append(_ar1(spec.ar_coeffs[j], spec.spread_noise_sd[j], spec.T, rng))
    for k in range(spec.M - spec.r):
        rng = rng_stream(spec.seed, spec.r + k)
        columns.append(np.cumsum(rng.normal(0.0, spec.rw_noise_sd[k], spec.T)))
    latent = np.column_stack(columns)
    A = _mixing_matrix(spec)
    prices = latent @ A.T
    beta = np.linalg.inv(A)[: spec.r]
    names = [f"asset_{m + 1}" for m in range(spec.M)]
    logger.info(
        f"Generated {spec.T} samples of {spec.M} assets with cointegration rank "
        + f"{spec.r} (seed {spec.seed})"
    )
    return SyntheticMarket(
        prices=LogPriceMatrix(prices, names),
        beta=beta,
        seed_used=spec.seed,
        latent=latent,
        mix=A,
        spec=spec,
    )


def build_spreads(
    market: SyntheticMarket,
    mode: str = "true_beta",
    sd: float = 0.0,
    seed: Optional[int] = None,
) -> SpreadPanel:
    """Spread panel of a synthetic market, one spread per cointegration vector.

    Args:
        market: :class:`SyntheticMarket`
        mode: "true_beta" uses `beta` as the hedge matrix. "perturbed" adds
            independent N(0, sd²) noise to each hedge entry.
        sd: Perturbation standard deviation, used by "perturbed".
        seed (optional): Seed of the perturbation, the market's seed by default.
    Raises:
        ConfigError: If the market has no cointegration relation or the mode is
            unknown.
    """
    if market.r == 0:
        raise ConfigError("Cannot build spreads for a market with rank r = 0")
    if mode not in SPREAD_MODES:
        raise ConfigError(f"Spread mode must be one of {SPREAD_MODES}, got {mode!r}")
    hedge = np.array(market.beta)
    if mode == "perturbed":
        if sd < 0:
            raise ConfigError(f"Perturbation sd must be >= 0, got {sd}")
        rng = rng_stream(market.seed_used if seed is None else seed, market.spec.M, 1)
        hedge = hedge + sd * rng.standard_normal(hedge.shape)
    return make_spreads(market.prices, hedge)


def asset_weights(hedge: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-asset exposure `w_p = hedgeᵀ w` implied by spread weights `w`

    Raises:
        DataError: If `w` does not have one entry per hedge row.
    """
    hedge = np.atleast_2d(np.asarray(hedge, dtype=float))
    w = np.asarray(w, dtype=float)
    if w.shape != (hedge.shape[0],):
        raise DataError(
            f"Weights with shape {w.shape} do not match {hedge.shape[0]} spreads"
        )
    return hedge.T @ w


def write_market(
    market: SyntheticMarket,
    out_dir: Union[str, Path],
    metadata: Optional[Dict[str, Any]] = None,
) -> Tuple[Path, Path]:
    """Writes `prices.csv` and the `market.json` sidecar {spec, beta, seed, rng}"""
    out_dir = Path(out_dir)
    prices_path = write_csv(market.prices, out_dir / "prices.csv", metadata=metadata)
    sidecar = {
        "spec": market.spec.to_dict(),
        "beta": market.beta,
        "seed": market.seed_used,
        "rng": RNG_NAME,
    }
    sidecar_path = write_json(sidecar, out_dir / "market.json", metadata=metadata)
    return (prices_path, sidecar_path)
