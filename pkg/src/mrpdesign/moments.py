"""Lag moments of a centered spread panel, their whitening by the Cholesky factor of
M0, the majorization constant ψ and the portmanteau statistic."""
import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg  # type: ignore
from attrs import field, frozen

from .data import DEGENERACY_RATIO, PSI_MODES
from .errors import (
    ConfigError,
    DataError,
    DegenerateMomentsError,
    NotPositiveDefiniteError,
    ZeroObjectiveError,
)
from .market import SpreadPanel
from .validators import (
    frozen_array,
    frozen_vector,
    symmetrized,
    symmetrized_tuple,
    validate_finite,
    validate_square,
)

logger = logging.getLogger(__name__)


def check_degeneracy(m0: np.ndarray) -> None:
    """Raises :class:`DegenerateMomentsError` if M0 is numerically singular.

    M0 is degenerate when its smallest eigenvalue is at most
    :data:`mrpdesign.data.DEGENERACY_RATIO` times its largest.
    """
    eigs = scipy.linalg.eigvalsh(m0)
    (lo, hi) = (eigs[0], eigs[-1])
    if hi <= 0 or lo <= DEGENERACY_RATIO * hi:
        raise DegenerateMomentsError(
            f"Lag-0 moment matrix is degenerate (eigenvalues in [{lo:.3e}, {hi:.3e}]). "
            + "Use fewer spreads or more data."
        )


def _validate_mats(instance, attribute, value) -> None:
    if len(value) < 2:
        raise ConfigError("Lag moments need M0 and at least one lag (p >= 1)")
    shape = value[0].shape
    for mat in value:
        if mat.shape != shape:
            raise DataError(f"Lag moments have mixed shapes {shape} and {mat.shape}")
        validate_square(instance, attribute, mat)
        validate_finite(instance, attribute, mat)
    check_degeneracy(value[0])


def _validate_p(instance, attribute, value) -> None:
    if value != len(instance.mats) - 1:
        raise ConfigError(f"p={value} does not match {len(instance.mats)} matrices")


@frozen(eq=False)
class LagMoments:
    """Symmetrized autocovariance matrices M0 ... Mp of a centered spread panel.

    Attributes:
        mats: N×N matrices M0 ... Mp. Symmetrized on construction.
        p: Maximum lag.
        T_est: Number of samples the moments were estimated from.
        mean: In-sample column means used for centering, if estimated from data.
    """

    mats: Tuple[np.ndarray, ...] = field(
        converter=symmetrized_tuple, validator=_validate_mats
    )
    p: int = field(validator=_validate_p)
    T_est: int = field()
    mean: Optional[np.ndarray] = field(default=None)

    @classmethod
    def from_matrices(
        cls, mats: Sequence[np.ndarray], T_est: int = 1, mean=None
    ) -> "LagMoments":
        """Builds moments from a list M0 ... Mp, inferring `p`"""
        return cls(mats, len(mats) - 1, T_est, mean)

    @property
    def m0(self) -> np.ndarray:
        return self.mats[0]

    @property
    def lags(self) -> Tuple[np.ndarray, ...]:
        """M1 ... Mp"""
        return self.mats[1:]

    @property
    def N(self) -> int:
        return self.mats[0].shape[0]


def estimate_moments(spreads: Union[SpreadPanel, np.ndarray], p: int) -> LagMoments:
    """Estimates lag moments of a spread panel.

    Spreads are centered by their in-sample column means. For `i = 0 ... p`,
    `M_i = (1/T) * sum_{t=1}^{T-i} s_t s_{t+i}ᵀ`, symmetrized as `(M_i + M_iᵀ)/2`.
    The 1/T normalization is used for every lag.

    Args:
        spreads: :class:`mrpdesign.market.SpreadPanel` or a T×N array.
        p: Lag order, at least 1.
    Returns:
        :class:`LagMoments`
    Raises:
        ConfigError: If `p < 1`.
        DataError: If `T <= p + 1`.
        DegenerateMomentsError: If M0 is numerically singular.
    """
    values = spreads.values if isinstance(spreads, SpreadPanel) else spreads
    s = np.asarray(values, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    if int(p) < 1:
        raise ConfigError(f"Lag order p must be >= 1, got {p}")
    T = s.shape[0]
    if T <= p + 1:
        raise DataError(f"Need more than p + 1 = {p + 1} samples, got {T}")
    mean = s.mean(axis=0)
    centered = s - mean
    mats = [centered[: T - i].T @ centered[i:] / T for i in range(p + 1)]
    logger.debug(f"Estimated {p + 1} lag moments of {s.shape[1]} spreads from {T} rows")
    return LagMoments(mats, int(p), T, frozen_vector(mean))


def lag_quadratics(w: np.ndarray, moments: LagMoments) -> np.ndarray:
    """`wᵀ M_i w` for `i = 0 ... p`"""
    w = np.asarray(w, dtype=float)
    return np.array([w @ m @ w for m in moments.mats])


def raw_objective(w: np.ndarray, moments: LagMoments) -> float:
    """Objective minimized by the solver, `sum_{i=1}^{p} (wᵀ M_i w)^2`"""
    q = lag_quadratics(w, moments)
    return float(np.sum(q[1:] ** 2))


def portmanteau(w: np.ndarray, moments: LagMoments) -> float:
    """Portmanteau statistic `T * sum_{i=1}^{p} ((wᵀ M_i w) / (wᵀ M0 w))^2`.

    Invariant to rescaling `w` by any nonzero constant.

    Raises:
        DataError: If `w` is zero or `wᵀ M0 w <= 0`.
    """
    w = np.asarray(w, dtype=float)
    if not np.any(w):
        raise DataError("Portmanteau statistic is undefined for w = 0")
    q = lag_quadratics(w, moments)
    if q[0] <= 0:
        raise DataError(f"wᵀ M0 w must be positive, got {q[0]!r}")
    rho = q[1:] / q[0]
    return float(moments.T_est * np.sum(rho**2))


def min_variance_portfolio(m0: np.ndarray) -> Tuple[np.ndarray, float]:
    """Minimum-variance point of the budget hyperplane `1ᵀw = 1`.

    Returns:
        Tuple of `w_mv = M0⁻¹1 / (1ᵀM0⁻¹1)` and `nu_min = 1 / (1ᵀM0⁻¹1)`
    """
    ones = np.ones(m0.shape[0])
    try:
        factor = scipy.linalg.cho_factor(m0, lower=True)
    except scipy.linalg.LinAlgError:
        raise NotPositiveDefiniteError("M0 is not positive definite")
    y = scipy.linalg.cho_solve(factor, ones)
    denom = float(ones @ y)
    return (y / denom, 1.0 / denom)


def nu_min(moments: LagMoments) -> float:
    """Smallest variance level attainable on the budget hyperplane"""
    return min_variance_portfolio(moments.m0)[1]


@frozen(eq=False)
class WhitenedMoments:
    """Moments in coordinates where M0 is the identity.

    With `M0 = L Lᵀ` and `w̄ = Lᵀ w`, `wᵀ M_i w = w̄ᵀ M̄_i w̄`. The N²×N² matrix
    `sum_i vec(M̄_i) vec(M̄_i)ᵀ` is represented through its p×p Gram matrix.

    Attributes:
        L: Lower-triangular Cholesky factor of M0.
        mbars: `M̄_i = L⁻¹ M_i L⁻ᵀ` for `i = 1 ... p`, symmetrized.
        c: `L⁻¹ 1`, the budget normal in whitened coordinates.
        gram: `G_ij = Tr(M̄_i M̄_j)`.
    """

    L: np.ndarray = field(converter=frozen_array)
    mbars: Tuple[np.ndarray, ...] = field(converter=symmetrized_tuple)
    c: np.ndarray = field(converter=frozen_vector)
    gram: np.ndarray = field(converter=symmetrized)

    def to_whitened(self, w: np.ndarray) -> np.ndarray:
        """`w̄ = Lᵀ w`"""
        return self.L.T @ np.asarray(w, dtype=float)

    def to_original(self, wbar: np.ndarray) -> np.ndarray:
        """`w = L⁻ᵀ w̄`"""
        return scipy.linalg.solve_triangular(
            self.L.T, np.asarray(wbar, dtype=float), lower=False
        )


def whiten(moments: LagMoments) -> WhitenedMoments:
    """Whitens lag moments with the Cholesky factor of M0.

    Raises:
        DegenerateMomentsError: If the Cholesky factorization of M0 fails.
    """
    try:
        L = scipy.linalg.cholesky(moments.m0, lower=True)
    except scipy.linalg.LinAlgError:
        raise DegenerateMomentsError(
            "Cholesky factorization of M0 failed. Use fewer spreads or more data."
        )
    mbars = []
    for m in moments.lags:
        half = scipy.linalg.solve_triangular(L, m, lower=True)
        mbars.append(scipy.linalg.solve_triangular(L, half.T, lower=True))
    stacked = np.stack(mbars)
    # Tr(A B) = sum(A * B) for symmetric A, B
    gram = np.einsum("iab,jab->ij", stacked, stacked)
    c = scipy.linalg.solve_triangular(L, np.ones(moments.N), lower=True)
    return WhitenedMoments(L, mbars, c, gram)


def psi_bound(wm: WhitenedMoments, mode: str = "spectral") -> float:
    """Majorization constant ψ with `ψ I ⪰ sum_i vec(M̄_i) vec(M̄_i)ᵀ`.

    Args:
        wm: :class:`WhitenedMoments`
        mode: "spectral" for the exact largest eigenvalue (that of the Gram matrix),
            or "frobenius" for the Frobenius norm, `sqrt(sum G_ij^2)`.
    Returns:
        ψ > 0
    Raises:
        ConfigError: If `mode` is not recognised.
        ZeroObjectiveError: If every M̄_i is zero.
    """
    if mode not in PSI_MODES:
        raise ConfigError(f"psi mode must be one of {PSI_MODES}, got {mode!r}")
    if not np.any(wm.gram):
        raise ZeroObjectiveError(
            "Every lag moment is zero, the objective is identically zero"
        )
    if mode == "spectral":
        return float(scipy.linalg.eigvalsh(wm.gram)[-1])
    return float(np.linalg.norm(wm.gram, "fro"))
