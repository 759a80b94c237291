import time

import numpy as np
import pytest

from mrpdesign.errors import (
    GtrsHardCaseError,
    InfeasibleVarianceError,
    NotPositiveDefiniteError,
)
from mrpdesign.gtrs import (
    GtrsProblem,
    min_gen_eig,
    phi,
    secular_form,
    solve_gtrs,
    solve_secular,
    x_of_xi,
)


def _sphere_problem(N, p, nu=1.0):
    n = len(p)
    return GtrsProblem(
        N=N, p=p, b=0.0, N0=np.eye(n), p0=np.zeros(n), b0=0.0, nu=nu
    )


def _random_problem(rng, n, random_spd, random_symmetric):
    N0 = random_spd(rng, n)
    p0 = rng.standard_normal(n)
    b0 = p0 @ np.linalg.solve(N0, p0) + 0.5
    return GtrsProblem(
        N=random_symmetric(rng, n),
        p=rng.standard_normal(n),
        b=0.0,
        N0=N0,
        p0=p0,
        b0=b0,
        nu=1.5 + rng.uniform(),
    )


def _whitened_form(prob: GtrsProblem):
    L = np.linalg.cholesky(prob.N0)
    C = np.linalg.solve(L, np.linalg.solve(L, prob.N).T)
    return secular_form(
        0.5 * (C + C.T),
        np.linalg.solve(L, prob.p),
        np.linalg.solve(L, prob.p0),
        prob.b0,
        prob.nu,
    )


def _ellipse_grid_minimum(prob: GtrsProblem, count: int = 1_000_000) -> float:
    """Minimum of the objective over `count` points of a two-dimensional feasible set"""
    # xᵀN0x + 2p0ᵀx + b0 = ν is an ellipse centred at -N0⁻¹p0
    centre = -np.linalg.solve(prob.N0, prob.p0)
    radius2 = prob.nu - prob.constraint_minimum()
    L = np.linalg.cholesky(prob.N0)
    angles = np.linspace(0, 2 * np.pi, count, endpoint=False)
    circle = np.sqrt(radius2) * np.vstack([np.cos(angles), np.sin(angles)])
    points = centre[:, None] + np.linalg.solve(L.T, circle)
    values = (
        np.einsum("ik,ij,jk->k", points, prob.N, points) + 2 * prob.p @ points + prob.b
    )
    return float(values.min())


def _assert_dual_conditions(prob: GtrsProblem, sol, constraint_tol: float):
    assert sol.phi_residual <= constraint_tol * max(1.0, prob.nu)
    dual = prob.N + sol.xi * prob.N0
    assert np.linalg.eigvalsh(dual)[0] >= -1e-8 * np.linalg.norm(prob.N, 2)
    stationarity = dual @ sol.x + prob.p + sol.xi * prob.p0
    assert np.linalg.norm(stationarity) <= 1e-8 * (1 + np.linalg.norm(prob.p))


class TestMinGenEig:
    def test_diagonal(self):
        assert min_gen_eig(np.diag([1.0, 2.0]), np.eye(2)) == pytest.approx(1.0)

    def test_identity_metric(self, random_symmetric, rng):
        A = random_symmetric(rng, 5)
        assert min_gen_eig(A, np.eye(5)) == pytest.approx(
            np.linalg.eigvalsh(A)[0], abs=1e-12
        )

    def test_determinant_sign_change(self, random_spd, random_symmetric, rng):
        (A, B) = (random_symmetric(rng, 4), random_spd(rng, 4))
        lam = min_gen_eig(A, B)

        def det(x):
            return np.linalg.det(A - x * B)

        # det(A - xB) is positive below the smallest root and changes sign there
        assert det(lam - 1.0) > 0
        assert det(lam - 1e-6) > 0
        assert det(lam + 1e-6) < 0

    def test_metric_not_positive_definite(self):
        with pytest.raises(NotPositiveDefiniteError):
            min_gen_eig(np.eye(2), np.diag([1.0, -1.0]))


class TestPhi:
    prob = _sphere_problem(np.zeros((2, 2)), np.array([-1.0, 0.0]))

    def test_on_root(self):
        assert phi(1.0, self.prob) == pytest.approx(0.0, abs=1e-15)

    def test_below_root(self):
        assert phi(2.0, self.prob) == pytest.approx(-0.75)

    def test_closed_form_x(self):
        np.testing.assert_allclose(x_of_xi(4.0, self.prob), [0.25, 0.0])

    def test_zero_linear_terms(self):
        prob = _sphere_problem(np.diag([1.0, 3.0]), np.zeros(2), nu=2.5)
        for xi in (0.1, 1.0, 10.0):
            assert phi(xi, prob) == pytest.approx(-2.5)

    def test_outside_interval(self):
        with pytest.raises(NotPositiveDefiniteError):
            phi(-0.5, self.prob)

    def test_decreasing(self, random_spd, random_symmetric, rng):
        prob = _random_problem(rng, 3, random_spd, random_symmetric)
        lower = -min_gen_eig(prob.N, prob.N0)
        for _ in range(50):
            (a, b) = np.sort(lower + 1e-3 + rng.exponential(2.0, size=2))
            if b - a < 1e-9:
                continue
            assert phi(a, prob) > phi(b, prob)


class TestSecularForm:
    def test_matches_direct_evaluation(self, random_spd, random_symmetric, rng):
        prob = _random_problem(rng, 4, random_spd, random_symmetric)
        form = _whitened_form(prob)
        lower = -min_gen_eig(prob.N, prob.N0)
        for xi in lower + np.array([0.1, 1.0, 10.0]):
            assert form.phi(xi) == pytest.approx(phi(xi, prob), rel=1e-8, abs=1e-10)

    def test_radius(self):
        form = _whitened_form(_sphere_problem(np.zeros((2, 2)), np.zeros(2), nu=2.0))
        assert form.kappa == pytest.approx(2.0)

    def test_guess_gives_the_same_root(self, random_spd, random_symmetric, rng):
        form = _whitened_form(_random_problem(rng, 3, random_spd, random_symmetric))
        (u, xi, hard, _) = solve_secular(form, 1e-12)
        assert not hard
        for guess in (xi * (1 + 1e-7), xi - 0.5, xi + 100.0):
            (u_warm, xi_warm, _, _) = solve_secular(form, 1e-12, guess=guess)
            assert xi_warm == pytest.approx(xi, abs=1e-8)
            np.testing.assert_allclose(u_warm, u, atol=1e-8)

    def test_close_guess_saves_bisections(self, random_spd, random_symmetric, rng):
        form = _whitened_form(_random_problem(rng, 3, random_spd, random_symmetric))
        (_, xi, _, cold) = solve_secular(form, 1e-12)
        (_, _, _, warm) = solve_secular(form, 1e-12, guess=xi)
        assert warm < cold


class TestSolveGtrs:
    def test_unit_sphere(self):
        sol = solve_gtrs(_sphere_problem(np.zeros((2, 2)), np.array([-1.0, 0.0])))
        np.testing.assert_allclose(sol.x, [1.0, 0.0], atol=1e-8)
        assert sol.xi == pytest.approx(1.0, abs=1e-8)
        assert sol.value == pytest.approx(-2.0, abs=1e-8)
        assert not sol.hard_case

    def test_sphere_of_radius_two(self):
        sol = solve_gtrs(
            _sphere_problem(np.zeros((2, 2)), np.array([-1.0, 0.0]), nu=4.0)
        )
        np.testing.assert_allclose(sol.x, [2.0, 0.0], atol=1e-8)
        assert sol.xi == pytest.approx(0.5, abs=1e-8)
        assert sol.value == pytest.approx(-4.0, abs=1e-8)

    def test_indefinite_diagonal_completes_hard_case(self):
        sol = solve_gtrs(_sphere_problem(np.diag([-1.0, 1.0]), np.zeros(2)))
        assert sol.hard_case
        assert abs(sol.x[0]) == pytest.approx(1.0, abs=1e-8)
        assert sol.x[1] == pytest.approx(0.0, abs=1e-8)
        assert sol.value == pytest.approx(-1.0, abs=1e-8)
        assert sol.xi == pytest.approx(1.0, abs=1e-8)

    def test_hard_case_can_raise(self):
        with pytest.raises(GtrsHardCaseError):
            solve_gtrs(
                _sphere_problem(np.diag([-1.0, 1.0]), np.zeros(2)), hard_case="raise"
            )

    def test_root_inside_the_interior_shift(self):
        # the root sits 1e-12 above the end of the dual interval
        sol = solve_gtrs(_sphere_problem(np.diag([-1.0, 1.0]), np.array([-1e-12, 0.0])))
        assert not sol.hard_case
        np.testing.assert_allclose(sol.x, [1.0, 0.0], atol=1e-8)
        assert sol.xi == pytest.approx(1.0, abs=1e-8)
        assert sol.phi_residual <= 1e-10

    def test_infeasible_level(self):
        with pytest.raises(InfeasibleVarianceError):
            GtrsProblem(
                N=np.eye(2),
                p=np.zeros(2),
                b=0.0,
                N0=np.eye(2),
                p0=np.zeros(2),
                b0=2.0,
                nu=1.0,
            )

    @pytest.mark.parametrize("seed", range(5))
    def test_optimality_conditions(self, seed, random_spd, random_symmetric):
        rng = np.random.default_rng(seed)
        prob = _random_problem(rng, 4, random_spd, random_symmetric)
        _assert_dual_conditions(prob, solve_gtrs(prob), 1e-10)

    @pytest.mark.parametrize("seed", range(3))
    def test_beats_grid_on_ellipse(self, seed, random_spd, random_symmetric):
        rng = np.random.default_rng(100 + seed)
        prob = _random_problem(rng, 2, random_spd, random_symmetric)
        sol = solve_gtrs(prob)
        grid_min = _ellipse_grid_minimum(prob)
        assert sol.value <= grid_min + 1e-6 * (1 + abs(grid_min))


@pytest.mark.slow
def test_optimality_at_scale(random_spd, random_symmetric):
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    for _ in range(200):
        n = int(rng.integers(2, 7))
        prob = _random_problem(rng, n, random_spd, random_symmetric)
        sol = solve_gtrs(prob)
        _assert_dual_conditions(prob, sol, 1e-10)
        if prob.n == 2:
            grid_min = _ellipse_grid_minimum(prob)
            assert sol.value <= grid_min + 1e-6 * (1 + abs(grid_min))
    assert time.perf_counter() - start < 30
