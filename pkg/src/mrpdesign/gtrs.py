"""Generalized trust region subproblem (GTRS):

    minimize    xᵀ N x + 2 pᵀ x + b
    subject to  xᵀ N0 x + 2 p0ᵀ x + b0 = ν

with N symmetric (possibly indefinite) and N0 positive definite. The dual variable ξ
is located by bisection on the secular function φ, which is strictly decreasing on
`(-λ_min(N, N0), ∞)`. In the eigenbasis of `L0⁻¹ N L0⁻ᵀ`, with `N0 = L0 L0ᵀ`,
φ is a sum of one rational term per eigenvalue, see :class:`SecularForm`.
"""
import logging
from typing import Optional, Tuple

import numpy as np
import scipy.linalg  # type: ignore
from attrs import field, frozen

from .data import (
    DEFAULT_GTRS_TOL,
    GTRS_MAX_BISECTIONS,
    GTRS_MAX_DOUBLINGS,
    HARD_CASE_MODES,
)
from .errors import (
    ConfigError,
    DataError,
    GtrsHardCaseError,
    InfeasibleVarianceError,
    NotPositiveDefiniteError,
    NumericalFailureError,
)
from .validators import (
    frozen_array,
    frozen_vector,
    validate_finite,
    validate_positive,
    validate_symmetric,
)

logger = logging.getLogger(__name__)

#: Relative half-width of the bracket tried around a warm-start root.
_GUESS_WIDTH = 1e-6

#: Relative eigenvalue gap under which a direction belongs to the null space of
#: N + ξN0 at the lower end of the dual interval.
_NULL_GAP = 1e-10


def _cholesky(matrix: np.ndarray, what: str) -> np.ndarray:
    try:
        return scipy.linalg.cholesky(matrix, lower=True)
    except scipy.linalg.LinAlgError:
        raise NotPositiveDefiniteError(f"{what} is not positive definite")


def _validate_pd(instance, attribute, value) -> None:
    validate_symmetric(instance, attribute, value)
    _cholesky(value, attribute.name)


def _validate_vector_length(instance, attribute, value) -> None:
    if value.shape != (instance.N.shape[0],):
        raise DataError(
            f"{attribute.name} has shape {value.shape}, expected ({instance.N.shape[0]},)"
        )


def _validate_same_shape_as_N(instance, attribute, value) -> None:
    if value.shape != instance.N.shape:
        raise DataError(
            f"{attribute.name} has shape {value.shape}, expected {instance.N.shape}"
        )


@frozen(eq=False)
class GtrsProblem:
    """A GTRS instance. See the module docstring for the program.

    Raises:
        InfeasibleVarianceError: If ν is below the minimum of the constraint
            quadratic, `b0 - p0ᵀ N0⁻¹ p0`.
    """

    N: np.ndarray = field(
        converter=frozen_array, validator=[validate_symmetric, validate_finite]
    )
    p: np.ndarray = field(converter=frozen_vector, validator=_validate_vector_length)
    b: float = field(converter=float)
    N0: np.ndarray = field(
        converter=frozen_array, validator=[_validate_same_shape_as_N, _validate_pd]
    )
    p0: np.ndarray = field(converter=frozen_vector, validator=_validate_vector_length)
    b0: float = field(converter=float)
    nu: float = field(converter=float, validator=validate_positive)

    def __attrs_post_init__(self):
        level = self.constraint_minimum()
        if level > self.nu * (1 + 1e-12) + 1e-15:
            raise InfeasibleVarianceError(self.nu, level)

    @property
    def n(self) -> int:
        return self.N.shape[0]

    def constraint_minimum(self) -> float:
        """`min_x xᵀ N0 x + 2 p0ᵀ x + b0 = b0 - p0ᵀ N0⁻¹ p0`"""
        factor = scipy.linalg.cho_factor(self.N0, lower=True)
        return float(self.b0 - self.p0 @ scipy.linalg.cho_solve(factor, self.p0))

    def objective(self, x: np.ndarray) -> float:
        return float(x @ self.N @ x + 2 * self.p @ x + self.b)

    def constraint(self, x: np.ndarray) -> float:
        return float(x @ self.N0 @ x + 2 * self.p0 @ x + self.b0)


@frozen
class GtrsSolution:
    """Primal and dual answer of a GTRS.

    Attributes:
        x: Minimizer.
        xi: Dual variable ξ.
        value: Objective at `x`.
        phi_residual: `|xᵀ N0 x + 2 p0ᵀ x + b0 - ν|`.
        hard_case: Whether the root sat at the boundary of the dual interval and
            the solution was completed along the null direction.
        bisections: Number of bisection steps taken.
    """

    x: np.ndarray = field(converter=frozen_vector)
    xi: float
    value: float
    phi_residual: float
    hard_case: bool = False
    bisections: int = 0


def _reduced_pencil(A: np.ndarray, B: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Cholesky factor `L_B` of B and the symmetric `L_B⁻¹ A L_B⁻ᵀ`"""
    L = _cholesky(B, "B")
    half = scipy.linalg.solve_triangular(L, A, lower=True)
    C = scipy.linalg.solve_triangular(L, half.T, lower=True)
    return (L, 0.5 * (C + C.T))


def min_gen_eig(A: np.ndarray, B: np.ndarray) -> float:
    """Smallest generalized eigenvalue λ of the pair (A, B), `det(A - λB) = 0`.

    Args:
        A: Symmetric matrix.
        B: Symmetric positive definite matrix.
    Raises:
        NotPositiveDefiniteError: If B is not positive definite.
    """
    (_, C) = _reduced_pencil(np.asarray(A, dtype=float), np.asarray(B, dtype=float))
    return float(scipy.linalg.eigvalsh(C)[0])


def x_of_xi(xi: float, prob: GtrsProblem) -> np.ndarray:
    """`x(ξ) = -(N + ξ N0)⁻¹ (p + ξ p0)`, solved through a Cholesky factorization.

    Raises:
        NotPositiveDefiniteError: If `N + ξ N0` is not positive definite.
    """
    try:
        factor = scipy.linalg.cho_factor(prob.N + xi * prob.N0, lower=True)
    except scipy.linalg.LinAlgError:
        raise NotPositiveDefiniteError(f"N + ξ N0 is not positive definite at ξ={xi!r}")
    return -scipy.linalg.cho_solve(factor, prob.p + xi * prob.p0)


def phi(xi: float, prob: GtrsProblem) -> float:
    """Secular function `φ(ξ) = x(ξ)ᵀ N0 x(ξ) + 2 p0ᵀ x(ξ) + b0 - ν`.

    Raises:
        NotPositiveDefiniteError: If `N + ξ N0` is not positive definite.
    """
    return prob.constraint(x_of_xi(xi, prob)) - prob.nu


@frozen(eq=False)
class SecularForm:
    """A GTRS rotated into the eigenbasis of its whitened quadratic.

    With `N0 = L0 L0ᵀ`, `y = L0ᵀ x` and `L0⁻¹ N L0⁻ᵀ = Q diag(λ) Qᵀ`, the
    stationary point for a given ξ is `y(ξ) + c0 = Q (g / (λ + ξ))` and

        φ(ξ) = Σ_j g_j² / (λ_j + ξ)² - κ

    where `c0 = L0⁻¹ p0`, `d = L0⁻¹ p`, `g = λ ∘ Qᵀc0 - Qᵀd` and
    `κ = c0ᵀc0 - b0 + ν` is the squared radius of the constraint sphere
    `||y + c0||² = κ`.

    Attributes:
        lam: Ascending eigenvalues λ.
        Q: Orthonormal eigenvectors, one per column.
        g: Rotated right-hand side.
        kappa: κ, nonnegative for a feasible problem.
    """

    lam: np.ndarray
    Q: np.ndarray
    g: np.ndarray
    kappa: float

    def phi(self, xi: float) -> float:
        return float(np.sum((self.g / (self.lam + xi)) ** 2) - self.kappa)


def secular_form(
    C: np.ndarray, d: np.ndarray, c0: np.ndarray, b0: float, nu: float
) -> SecularForm:
    """Eigendecomposition of `min yᵀ C y + 2 dᵀ y` subject to
    `yᵀ y + 2 c0ᵀ y + b0 = ν`. `C` must be symmetric."""
    (lam, Q) = np.linalg.eigh(C)
    g = lam * (Q.T @ c0) - Q.T @ d
    return SecularForm(lam=lam, Q=Q, g=g, kappa=float(c0 @ c0 - b0 + nu))


def _secular_point(form: SecularForm, t: float) -> np.ndarray:
    return form.Q @ (form.g / (form.lam - form.lam[0] + t))


def _complete_hard_case(form: SecularForm, null: np.ndarray) -> np.ndarray:
    """Boundary solution at `ξ = -λ_1`.

    Off the null space the coordinates are `g_j / (λ_j - λ_1)`. The remaining radius
    of the constraint sphere is spent along the first null eigenvector.
    """
    coef = np.zeros_like(form.g)
    free = ~null
    coef[free] = form.g[free] / (form.lam[free] - form.lam[0])
    rest = form.kappa - float(coef @ coef)
    if rest < 0:
        raise GtrsHardCaseError(
            "Minimum of the constraint on the null direction exceeds ν"
        )
    coef[np.flatnonzero(null)[0]] = np.sqrt(rest)
    return form.Q @ coef


def solve_secular(
    form: SecularForm,
    scale: float,
    hard_case: str = "complete",
    guess: Optional[float] = None,
) -> Tuple[np.ndarray, float, bool, int]:
    """Root of φ by bisection.

    The search runs on `t = λ_1 + ξ > 0`:

    1. Lower bracket `t = ε` with `ε = max(1e-10, 1e-10 max|λ|)`. If `φ < 0` there
       and `g` vanishes on the null space of `C - λ_1 I`, this is the hard case.
    2. Every term of φ is at most `g_j² / t²`, so `t_hi = ||g|| / sqrt(κ)` has
       `φ(t_hi) <= 0`. It is doubled if rounding says otherwise. The lower end is
       raised to `max_j |g_j| / sqrt(κ) - (λ_j - λ_1)`.
    3. With a `guess`, the points `t_guess (1 ± 1e-6)` narrow the bracket first.
    4. Bisection until `|φ| <= scale`.

    Args:
        form: :class:`SecularForm`
        scale: Absolute tolerance on φ.
        hard_case: "complete" or "raise".
        guess (optional): ξ of a nearby problem.
    Returns:
        `(y + c0, ξ, hard_case, bisections)`
    Raises:
        GtrsHardCaseError: In the hard case when `hard_case="raise"`, or when the
            boundary solution cannot satisfy the constraint.
        NumericalFailureError: If the upper bracket is not found within
            :data:`mrpdesign.data.GTRS_MAX_DOUBLINGS` doublings.
    """
    lam0 = float(form.lam[0])
    kappa = form.kappa
    if kappa <= 0:
        # the constraint sphere is the single point y = -c0
        return (np.zeros_like(form.g), np.inf, False, 0)
    gaps = form.lam - lam0
    pairs = list(zip((form.g**2).tolist(), gaps.tolist()))

    def phi_t(t: float) -> float:
        return sum(gg / (a + t) ** 2 for (gg, a) in pairs) - kappa

    size = float(np.max(np.abs(form.lam)))
    lo = max(1e-10, 1e-10 * size)
    phi_lo = phi_t(lo)
    if abs(phi_lo) <= scale:
        return (_secular_point(form, lo), lo - lam0, False, 0)
    if phi_lo < 0:
        null = gaps <= _NULL_GAP * max(1.0, size)
        g_norm = float(np.linalg.norm(form.g))
        if np.linalg.norm(form.g[null]) <= 1e-8 * g_norm:
            if hard_case == "raise":
                raise GtrsHardCaseError(
                    f"φ(ξ_lo) = {phi_lo:.3e} < 0, the root is on the boundary of the "
                    + "dual interval"
                )
            logger.warning(
                f"GTRS hard case at ξ={-lam0:.6g}, completing along the null direction"
            )
            return (_complete_hard_case(form, null), -lam0, True, 0)
        # the root lies between the boundary and the shifted lower bracket
        (lo, hi, phi_hi) = (0.0, lo, phi_lo)
    else:
        root_k = np.sqrt(kappa)
        lo = max([lo] + [np.sqrt(gg) / root_k - a for (gg, a) in pairs])
        hi = max(float(np.sqrt(sum(gg for (gg, _) in pairs))) / root_k, lo)
        phi_hi = phi_t(hi)
        doublings = 0
        while phi_hi > scale:
            doublings += 1
            if doublings > GTRS_MAX_DOUBLINGS:
                raise NumericalFailureError(
                    f"No upper bracket for the GTRS root after {GTRS_MAX_DOUBLINGS} "
                    + "doublings"
                )
            (lo, hi) = (hi, 2 * hi)
            phi_hi = phi_t(hi)
        if abs(phi_hi) <= scale:
            return (_secular_point(form, hi), hi - lam0, False, 0)

    (best_t, best_phi) = (hi, phi_hi)
    if guess is not None and np.isfinite(guess):
        t_guess = lam0 + guess
        for edge in (t_guess * (1 - _GUESS_WIDTH), t_guess * (1 + _GUESS_WIDTH)):
            if not lo < edge < hi:
                continue
            value = phi_t(edge)
            if abs(value) <= scale:
                return (_secular_point(form, edge), edge - lam0, False, 0)
            if value > 0:
                lo = edge
            else:
                (hi, best_t, best_phi) = (edge, edge, value)

    bisections = 0
    while bisections < GTRS_MAX_BISECTIONS:
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            logger.warning(
                "GTRS bisection exhausted floating point resolution at "
                + f"ξ={mid - lam0!r} with |φ|={abs(best_phi):.3e}"
            )
            break
        bisections += 1
        value = phi_t(mid)
        if abs(value) < abs(best_phi):
            (best_t, best_phi) = (mid, value)
        if abs(value) <= scale:
            break
        if value > 0:
            lo = mid
        else:
            hi = mid
    return (_secular_point(form, best_t), best_t - lam0, False, bisections)


def _finish(prob: GtrsProblem, x: np.ndarray, xi: float, **kwargs) -> GtrsSolution:
    return GtrsSolution(
        x=x,
        xi=float(xi),
        value=prob.objective(x),
        phi_residual=abs(prob.constraint(x) - prob.nu),
        **kwargs,
    )


def solve_gtrs(
    prob: GtrsProblem, tol: float = DEFAULT_GTRS_TOL, hard_case: str = "complete"
) -> GtrsSolution:
    """Solves a GTRS by bisection on the secular function.

    N0 is factored once and the whitened quadratic is diagonalized once, after which
    every evaluation of φ is a sum over the eigenvalues. See :func:`solve_secular`
    for the brackets.

    Args:
        prob: :class:`GtrsProblem`
        tol: Tolerance on φ, relative to `max(1, ν)`.
        hard_case: "complete" to build the boundary solution along the null
            direction (with a warning), or "raise".
    Returns:
        :class:`GtrsSolution`
    Raises:
        GtrsHardCaseError: In the hard case when `hard_case="raise"`, or when the
            boundary solution cannot satisfy the constraint.
        NumericalFailureError: If the upper bracket is not found within
            :data:`mrpdesign.data.GTRS_MAX_DOUBLINGS` doublings.
    """
    if hard_case not in HARD_CASE_MODES:
        raise ConfigError(f"hard_case must be one of {HARD_CASE_MODES}")
    (L0, C) = _reduced_pencil(prob.N, prob.N0)
    d = scipy.linalg.solve_triangular(L0, prob.p, lower=True)
    c0 = scipy.linalg.solve_triangular(L0, prob.p0, lower=True)
    form = secular_form(C, d, c0, prob.b0, prob.nu)
    (u, xi, hard, bisections) = solve_secular(
        form, tol * max(1.0, prob.nu), hard_case
    )
    x = scipy.linalg.solve_triangular(L0.T, u - c0, lower=False)
    return _finish(prob, x, xi, hard_case=hard, bisections=bisections)
