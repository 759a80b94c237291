"""Majorization-minimization loop for mean-reverting portfolio design.

Solves

    minimize    sum_{i=1}^{p} (wᵀ M_i w)^2
    subject to  wᵀ M0 w = ν,  1ᵀ w = 1

by repeatedly majorizing the quartic objective with a quadratic, eliminating the
budget constraint with `w = w0 + F x` and solving the resulting generalized trust
region subproblem.
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg  # type: ignore
from attrs import field, frozen

from .data import (
    DEFAULT_GTRS_TOL,
    DEFAULT_LAG_ORDER,
    DEFAULT_MAX_ITER,
    DEFAULT_N_STARTS,
    DEFAULT_TOL_OBJ,
    DEFAULT_TOL_W,
    HARD_CASE_MODES,
    PSI_MODES,
    SOLVER_SPACES,
)
from .errors import ConfigError, DataError, GtrsHardCaseError, InfeasibleVarianceError
from .gtrs import GtrsProblem, secular_form, solve_secular
from .moments import (
    LagMoments,
    min_variance_portfolio,
    portmanteau,
    psi_bound,
    raw_objective,
    whiten,
)
from .validators import (
    frozen_array,
    frozen_vector,
    symmetrized,
    validate_at_least_one,
    validate_one_of,
    validate_positive,
)

logger = logging.getLogger(__name__)

#: Relative tolerance under which a variance level counts as equal to nu_min
_NU_MIN_SLACK = 1e-12

#: Constraint violation beyond which a majorizer is built with a warning
_FEASIBILITY_WARN = 1e-6

#: Relative objective increase beyond which an MM update is discarded
_DESCENT_SLACK = 1e-10


@frozen
class MrpConfig:
    """Solver configuration.

    Attributes:
        nu: Variance level ν of the designed portfolio.
        p: Lag order of the objective.
        psi_mode: "spectral" or "frobenius", see
            :func:`mrpdesign.moments.psi_bound`.
        tol_obj: Stop when the relative objective decrease is at most this.
        tol_w: Stop when `||w_new - w|| / max(1, ||w||)` is at most this.
        max_iter: Cap on MM iterations per start.
        gtrs_tol: Tolerance of the GTRS subsolver on the variance constraint,
            relative to ν.
        space: "original" or "whitened" coordinates for the loop.
        n_starts: Number of feasible starting points tried.
        hard_case: GTRS hard case handling, "complete" or "raise".
        seed: Seed of the pseudo-random starting directions.
    """

    nu: float = field(converter=float, validator=validate_positive)
    p: int = field(default=DEFAULT_LAG_ORDER, validator=validate_at_least_one)
    psi_mode: str = field(default="spectral", validator=validate_one_of(PSI_MODES))
    tol_obj: float = field(
        default=DEFAULT_TOL_OBJ, converter=float, validator=validate_positive
    )
    tol_w: float = field(default=DEFAULT_TOL_W, converter=float, validator=validate_positive)
    max_iter: int = field(default=DEFAULT_MAX_ITER, validator=validate_at_least_one)
    gtrs_tol: float = field(
        default=DEFAULT_GTRS_TOL, converter=float, validator=validate_positive
    )
    space: str = field(default="original", validator=validate_one_of(SOLVER_SPACES))
    n_starts: int = field(default=DEFAULT_N_STARTS, validator=validate_at_least_one)
    hard_case: str = field(
        default="complete", validator=validate_one_of(HARD_CASE_MODES)
    )
    seed: int = 0


def _validate_reduction(instance, attribute, value) -> None:
    a = instance.normal
    F = instance.F
    if np.max(np.abs(a @ F), initial=0.0) > 1e-12 * max(1.0, np.linalg.norm(a)):
        raise DataError("F is not in the kernel of the constraint normal")
    if np.max(np.abs(F.T @ F - np.eye(F.shape[1])), initial=0.0) > 1e-12:
        raise DataError("F is not semi-unitary")
    if abs(a @ instance.w0 - 1) > 1e-12:
        raise DataError("w0 does not satisfy the budget constraint")


@frozen(eq=False)
class AffineReduction:
    """Parametrization `w = w0 + F x` of the hyperplane `aᵀw = 1`.

    Attributes:
        w0: Particular solution `a / (aᵀa)`.
        F: N×(N-1) orthonormal basis of the kernel of `aᵀ`.
        normal: Constraint normal `a`, the all-ones vector for the budget.
    """

    normal: np.ndarray = field(converter=frozen_vector)
    w0: np.ndarray = field(converter=frozen_vector)
    F: np.ndarray = field(converter=frozen_array, validator=_validate_reduction)

    def lift(self, x: np.ndarray) -> np.ndarray:
        return self.w0 + self.F @ x


def affine_reduction(N: int, normal: Optional[np.ndarray] = None) -> AffineReduction:
    """Deterministic reduction of `aᵀw = 1` with `a = 1` unless `normal` is given.

    F is the orthonormalization (QR) of the columns of `I - a aᵀ / (aᵀa)` with the
    column of the largest `|a_j|` deleted, the first such for the all-ones normal.

    Raises:
        ConfigError: If `N < 2` or the normal is zero.
    """
    if N < 2:
        raise ConfigError(f"Need at least 2 spreads to design a portfolio, got {N}")
    a = np.ones(N) if normal is None else np.asarray(normal, dtype=float)
    if a.shape != (N,) or not np.any(a):
        raise ConfigError(f"Constraint normal must be a nonzero vector of length {N}")
    aa = float(a @ a)
    projector = np.eye(N) - np.outer(a, a) / aa
    keep = np.delete(np.arange(N), int(np.argmax(np.abs(a))))
    (F, _) = scipy.linalg.qr(projector[:, keep], mode="economic")
    return AffineReduction(normal=a, w0=a / aa, F=F)


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    """Flips `v` so that its largest-magnitude entry is positive"""
    return v if v[np.argmax(np.abs(v))] >= 0 else -v


def _min_variance_point(
    m0: np.ndarray, red: AffineReduction
) -> Tuple[np.ndarray, float]:
    """Minimum of `wᵀ M0 w` on `aᵀw = 1`, returned with its value"""
    y = scipy.linalg.cho_solve(scipy.linalg.cho_factor(m0, lower=True), red.normal)
    denom = float(red.normal @ y)
    return (y / denom, 1.0 / denom)


def _check_nu(nu: float, level: float) -> None:
    if nu < level * (1 - _NU_MIN_SLACK):
        raise InfeasibleVarianceError(nu, level)


def _start_on_direction(
    m0: np.ndarray, nu: float, red: AffineReduction, direction: np.ndarray
) -> np.ndarray:
    """Feasible point `w_mv + t F d` with `t >= 0`.

    `M0 w_mv` is parallel to the normal, so the cross term vanishes and
    `t = sqrt((ν - ν_min) / (dᵀ Fᵀ M0 F d))`.
    """
    (w_mv, level) = _min_variance_point(m0, red)
    _check_nu(nu, level)
    step = red.F @ direction
    t = np.sqrt(max(nu - level, 0.0) / float(step @ m0 @ step))
    return w_mv + t * step


def _reduced_eigh(m0: np.ndarray, red: AffineReduction) -> Tuple[np.ndarray, np.ndarray]:
    N0 = symmetrized(red.F.T @ m0 @ red.F)
    return scipy.linalg.eigh(N0)


def feasible_init(
    moments: LagMoments, nu: float, red: Optional[AffineReduction] = None
) -> np.ndarray:
    """Deterministic point satisfying `wᵀ M0 w = ν` and `1ᵀ w = 1`.

    Starts from the minimum-variance point on the budget hyperplane and moves along
    `F u`, with `u` the eigenvector of `Fᵀ M0 F` with the smallest eigenvalue.

    Args:
        moments: :class:`mrpdesign.moments.LagMoments`
        nu: Variance level.
        red (optional): :class:`AffineReduction`, the budget reduction by default.
    Raises:
        InfeasibleVarianceError: If `ν < ν_min = 1 / (1ᵀ M0⁻¹ 1)`.
    """
    if red is None:
        red = affine_reduction(moments.N)
    (_, vecs) = _reduced_eigh(moments.m0, red)
    return _start_on_direction(moments.m0, nu, red, _canonical_sign(vecs[:, 0]))


def _start_directions(
    m0: np.ndarray, red: AffineReduction, n_starts: int, seed: int
) -> List[np.ndarray]:
    """Unit directions in the reduced space. The first is the one used by
    :func:`feasible_init`."""
    (_, vecs) = _reduced_eigh(m0, red)
    u = _canonical_sign(vecs[:, 0])
    dim = vecs.shape[0]
    if dim == 1:
        return [u, -u][:n_starts]
    if dim == 2:
        u_perp = np.array([-u[1], u[0]])
        angles = 2 * np.pi * np.arange(n_starts) / n_starts
        return [np.cos(a) * u + np.sin(a) * u_perp for a in angles]
    directions = [u, -u]
    for j in range(1, dim):
        v = _canonical_sign(vecs[:, j])
        directions.extend([v, -v])
    rng = np.random.default_rng(seed)
    while len(directions) < n_starts:
        d = rng.standard_normal(dim)
        directions.append(d / np.linalg.norm(d))
    return directions[:n_starts]


def _check_feasible(w: np.ndarray, m0: np.ndarray, red: AffineReduction, nu) -> None:
    budget = abs(float(red.normal @ w) - 1)
    variance = None if nu is None else abs(float(w @ m0 @ w) - nu) / max(1.0, nu)
    if budget > _FEASIBILITY_WARN or (
        variance is not None and variance > _FEASIBILITY_WARN
    ):
        logger.warning(
            f"Majorizer built at an infeasible iterate (budget residual {budget:.2e}"
            + ("" if variance is None else f", variance residual {variance:.2e}")
            + ")"
        )


def _majorizer(
    w_k: np.ndarray, lags: Sequence[np.ndarray], m0: np.ndarray, psi: float
) -> np.ndarray:
    h = sum((float(w_k @ m @ w_k) * m for m in lags), np.zeros_like(m0))
    m0w = m0 @ w_k
    h = h - psi * np.outer(m0w, m0w)
    return 0.5 * (h + h.T)


def build_majorizer(
    w_k: np.ndarray, moments: LagMoments, psi: float, nu: Optional[float] = None
) -> np.ndarray:
    """`H = sum_{i=1}^{p} (w_kᵀ M_i w_k) M_i - ψ M0 w_k w_kᵀ M0`, symmetrized.

    On the feasible set, `2 wᵀ H w` plus constants majorizes the objective with
    equality at `w_k`, see :func:`majorizer_value`.

    Args:
        w_k: Current iterate.
        moments: :class:`mrpdesign.moments.LagMoments`
        psi: Majorization constant from :func:`mrpdesign.moments.psi_bound`.
        nu (optional): Variance level, checked against `w_k` when given.
    Raises:
        DataError: If `w_k` does not have one entry per spread.
    """
    w_k = np.asarray(w_k, dtype=float)
    if w_k.shape != (moments.N,):
        raise DataError(f"w_k has shape {w_k.shape}, expected ({moments.N},)")
    _check_feasible(w_k, moments.m0, affine_reduction(moments.N), nu)
    return _majorizer(w_k, moments.lags, moments.m0, psi)


def majorizer_value(
    w: np.ndarray, w_k: np.ndarray, moments: LagMoments, psi: float
) -> float:
    """Surrogate `u(w | w_k) = 2 wᵀ H w + ψ (wᵀ M0 w)^2 + ψ (w_kᵀ M0 w_k)^2 - f(w_k)`.

    `u(w | w_k) >= f(w)` for every `w`, with equality at `w = w_k`, where f is
    :func:`mrpdesign.moments.raw_objective`.
    """
    w = np.asarray(w, dtype=float)
    w_k = np.asarray(w_k, dtype=float)
    H = _majorizer(w_k, moments.lags, moments.m0, psi)
    v = float(w @ moments.m0 @ w)
    v_k = float(w_k @ moments.m0 @ w_k)
    return float(
        2 * w @ H @ w + psi * v**2 + psi * v_k**2 - raw_objective(w_k, moments)
    )


def reduce_to_gtrs(
    H: np.ndarray, M0: np.ndarray, nu: float, red: AffineReduction
) -> GtrsProblem:
    """Substitutes `w = w0 + F x` into `wᵀ H w` and `wᵀ M0 w = ν`"""
    (F, w0) = (red.F, red.w0)
    if H.shape != (w0.size, w0.size) or M0.shape != H.shape:
        raise DataError(f"H and M0 must be {w0.size}x{w0.size}")
    return GtrsProblem(
        N=symmetrized(F.T @ H @ F),
        p=F.T @ H @ w0,
        b=float(w0 @ H @ w0),
        N0=symmetrized(F.T @ M0 @ F),
        p0=F.T @ M0 @ w0,
        b0=float(w0 @ M0 @ w0),
        nu=nu,
    )


def kkt_residual(
    w: np.ndarray, moments: LagMoments, nu: Optional[float] = None
) -> float:
    """Stationarity residual of the design problem at `w`.

    The objective gradient `g = sum_i 4 (wᵀ M_i w) M_i w` minus its least-squares
    projection onto the constraint normals `{1, M0 w}`, as a fraction of
    `max(1, ||g||)`.
    """
    w = np.asarray(w, dtype=float)
    if nu is not None:
        _check_feasible(w, moments.m0, affine_reduction(moments.N), nu)
    g = sum((4 * float(w @ m @ w) * (m @ w) for m in moments.lags), np.zeros_like(w))
    normals = np.column_stack([np.ones_like(w), moments.m0 @ w])
    (coef, *_) = scipy.linalg.lstsq(normals, g)
    return float(np.linalg.norm(g - normals @ coef) / max(1.0, np.linalg.norm(g)))


@frozen(eq=False)
class MrpResult:
    """Designed portfolio and solver diagnostics.

    Attributes:
        w: Market-value weights on the spreads.
        objective_trace: `sum_i (wᵀ M_i w)^2` after each accepted MM update, or
            the starting objective alone when the first update is discarded.
        iterations: Number of MM updates of the winning start.
        converged: Whether a stopping test was met before `max_iter`.
        kkt_residual: :func:`kkt_residual` at `w`.
        initial_objective: Objective at the winning starting point.
        start_index: Index of the winning starting point, 0 being
            :func:`feasible_init`.
        psi: Majorization constant, `None` if the objective is identically zero.
        nu: Variance level.
        portmanteau: Portmanteau statistic at `w`.
    """

    w: np.ndarray = field(converter=frozen_vector)
    objective_trace: Tuple[float, ...] = field(converter=tuple)
    iterations: int
    converged: bool
    kkt_residual: float
    initial_objective: float
    start_index: int
    psi: Optional[float]
    nu: float
    portmanteau: float

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    def to_dict(self) -> dict:
        return {
            "w": self.w.tolist(),
            "objective_trace": list(self.objective_trace),
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "kkt_residual": self.kkt_residual,
            "initial_objective": self.initial_objective,
            "start_index": self.start_index,
            "psi": self.psi,
            "nu": self.nu,
            "portmanteau": self.portmanteau,
        }


@frozen(eq=False)
class _LoopSpace:
    """Data of the MM loop that does not change between iterations.

    All moments are divided by ν, so that the variance constraint reads
    `wᵀ M0 w = 1`. With `Fᵀ M0 F = L0 L0ᵀ` and `T = F L0⁻ᵀ`, the budget hyperplane
    is `w = w0 + T y` and the constraint is the sphere `||y + c0||² = 1 - b0 + c0ᵀc0`.
    Lag moments are kept both full (`mats`) and reduced (`B`, `E`).
    """

    mats: np.ndarray
    T: np.ndarray
    TtM0: np.ndarray
    m0w0: np.ndarray
    B: np.ndarray
    E: np.ndarray
    c0: np.ndarray
    b0: float
    centre: np.ndarray


def _loop_space(
    lags: Sequence[np.ndarray], m0: np.ndarray, red: AffineReduction, nu: float
) -> _LoopSpace:
    F = red.F
    m0 = m0 / nu
    L0 = scipy.linalg.cholesky(symmetrized(F.T @ m0 @ F), lower=True)
    T = scipy.linalg.solve_triangular(L0, F.T, lower=True).T
    mats = np.stack(lags) / nu
    m0w0 = m0 @ red.w0
    c0 = T.T @ m0w0
    B = T.T @ mats @ T
    B = 0.5 * (B + B.transpose(0, 2, 1))
    return _LoopSpace(
        mats=mats,
        T=T,
        TtM0=T.T @ m0,
        m0w0=m0w0,
        B=B.reshape(len(lags), -1),
        E=T.T @ mats @ red.w0,
        c0=c0,
        b0=float(red.w0 @ m0w0),
        centre=red.w0 - T @ c0,
    )


def _mm_loop(
    w: np.ndarray, space: _LoopSpace, psi: float, cfg: MrpConfig
) -> Tuple[np.ndarray, List[float], bool]:
    """Runs MM updates from a feasible `w` until a stopping test holds.

    Each update minimizes the majorizer of :func:`build_majorizer` on the feasible
    set, in the coordinates of `space`. An update that raises the objective by more
    than :data:`_DESCENT_SLACK` (relative) is discarded and the loop stops. The
    trace is in the units of `space`, i.e. divided by ν².
    """
    n = space.c0.size
    q = space.mats @ w @ w
    f = float(q @ q)
    trace: List[float] = []
    xi: Optional[float] = None
    for k in range(cfg.max_iter):
        h = space.TtM0 @ w
        C = (q @ space.B).reshape(n, n) - psi * np.outer(h, h)
        d = q @ space.E - (psi * float(space.m0w0 @ w)) * h
        form = secular_form(C, d, space.c0, space.b0, 1.0)
        try:
            (u, xi, _, _) = solve_secular(form, cfg.gtrs_tol, cfg.hard_case, guess=xi)
        except GtrsHardCaseError as e:
            raise GtrsHardCaseError(str(e), iteration=k + 1) from e
        w_new = space.centre + space.T @ u
        q = space.mats @ w_new @ w_new
        f_new = float(q @ q)
        if f_new > f * (1 + _DESCENT_SLACK):
            logger.debug(
                f"MM iteration {k + 1} raises the objective from {f:.6e} to "
                + f"{f_new:.6e}, keeping the previous iterate"
            )
            if not trace:
                trace.append(f)
            return (w, trace, True)
        trace.append(f_new)
        step = np.linalg.norm(w_new - w) / max(1.0, np.linalg.norm(w))
        decrease = f - f_new
        logger.debug(
            f"MM iteration {k + 1}: objective {f_new:.6e}, step {step:.2e}, "
            + f"GTRS ξ={xi:.6g}"
        )
        (w, f_old, f) = (w_new, f, f_new)
        if decrease <= cfg.tol_obj * abs(f_old) or step <= cfg.tol_w:
            return (w, trace, True)
    return (w, trace, False)


def _truncate(moments: LagMoments, p: int) -> LagMoments:
    if p > moments.p:
        raise ConfigError(f"Lag order p={p} exceeds the {moments.p} estimated lags")
    if p == moments.p:
        return moments
    return LagMoments(moments.mats[: p + 1], p, moments.T_est, moments.mean)


def solve_mrp(moments: LagMoments, cfg: MrpConfig) -> MrpResult:
    """Designs a mean-reverting portfolio.

    Whitens the moments and computes ψ once, then runs the MM loop from
    `cfg.n_starts` feasible starting points and keeps the lowest final objective.
    Every start's objective trace is non-increasing. The subproblems are solved to
    `|wᵀ M0 w - ν| <= cfg.gtrs_tol * ν`, whatever the scale of the moments.

    Args:
        moments: :class:`mrpdesign.moments.LagMoments` with at least `cfg.p` lags.
        cfg: :class:`MrpConfig`
    Returns:
        :class:`MrpResult`
    Raises:
        InfeasibleVarianceError: If `cfg.nu` is below the minimum variance on the
            budget hyperplane.
        GtrsHardCaseError: If a subproblem hits the hard case with
            `cfg.hard_case="raise"`. Carries the MM iteration.
    """
    moments = _truncate(moments, cfg.p)
    red = affine_reduction(moments.N)
    (_, level) = min_variance_portfolio(moments.m0)
    _check_nu(cfg.nu, level)
    w_init = feasible_init(moments, cfg.nu, red)

    if not any(np.any(m) for m in moments.lags):
        logger.info("All lag moments are zero, every feasible portfolio is optimal")
        return MrpResult(
            w=w_init,
            objective_trace=[0.0],
            iterations=1,
            converged=True,
            kkt_residual=0.0,
            initial_objective=0.0,
            start_index=0,
            psi=None,
            nu=cfg.nu,
            portmanteau=portmanteau(w_init, moments),
        )

    wm = whiten(moments)
    psi = psi_bound(wm, cfg.psi_mode)
    directions = _start_directions(moments.m0, red, cfg.n_starts, cfg.seed)
    starts = [_start_on_direction(moments.m0, cfg.nu, red, d) for d in directions]

    if cfg.space == "whitened":
        loop_red = affine_reduction(moments.N, normal=wm.c)
        loop_m0 = np.eye(moments.N)
        loop_lags: Sequence[np.ndarray] = wm.mbars
        to_loop = wm.to_whitened
        from_loop = wm.to_original
    else:
        (loop_red, loop_m0, loop_lags) = (red, moments.m0, moments.lags)
        to_loop = from_loop = np.asarray
    space = _loop_space(loop_lags, loop_m0, loop_red, cfg.nu)

    best = None
    for (index, start) in enumerate(starts):
        (w_end, trace, converged) = _mm_loop(to_loop(start), space, psi, cfg)
        trace = [f * cfg.nu**2 for f in trace]
        w_end = from_loop(w_end)
        logger.debug(
            f"Start {index}: objective {trace[-1]:.6e} after {len(trace)} iterations"
        )
        if best is None or trace[-1] < best[2][-1]:
            best = (index, w_end, trace, converged, raw_objective(start, moments))

    (index, w, trace, converged, initial) = best  # type: ignore
    if not converged:
        logger.warning(
            f"MM loop stopped at max_iter={cfg.max_iter} without meeting a stopping "
            + "test"
        )
    logger.info(
        f"Designed portfolio with objective {trace[-1]:.6e} "
        + f"in {len(trace)} iterations (start {index} of {len(starts)})"
    )
    return MrpResult(
        w=w,
        objective_trace=trace,
        iterations=len(trace),
        converged=converged,
        kkt_residual=kkt_residual(w, moments),
        initial_objective=initial,
        start_index=index,
        psi=psi,
        nu=cfg.nu,
        portmanteau=portmanteau(w, moments),
    )
