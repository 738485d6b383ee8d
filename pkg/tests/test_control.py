import math

import numpy as np
import pytest

from fracctrl.control import (
    ControlProblem,
    ControlSignal,
    algorithm1,
    assemble_H,
    boundary_error,
    linear_control,
    picard_sequence,
    pinv_apply,
)
from fracctrl.domain import (
    Actuator,
    Field,
    GridPatch,
    RectDomain,
    Region,
    build_basis,
    extend_target,
)
from fracctrl.solver import NonlinearTerm, TimeGrid, solve_linear


@pytest.fixture(scope="module")
def setup():
    dom = RectDomain(1.0, 1.0, 51, 51)
    basis = build_basis(dom, 12, 12)
    grid = TimeGrid(3.0, 30)
    act = Actuator.zonal(0.0, 0.2, 0.2, 0.4)
    omega = Region.interior(0.0, 0.3, 0.0, 0.1)
    gamma = Region.boundary("left", 0.0, 0.1)
    return dom, basis, grid, act, omega, gamma


def _example_problem(setup, F, eps=1e-3, lambda_reg=-1.0, **kw):
    dom, basis, grid, act, omega, gamma = setup
    ys = dom.y[dom.y <= 0.1 + 1e-9]
    zd = 7 * ys**3 - 13 * ys**2 + 3.0
    d_s = extend_target(zd, omega, gamma, dom)
    return ControlProblem(
        basis=basis, act=act, grid=grid, alpha=0.3, F=F, omega_c=omega,
        gamma=gamma, d_s=d_s, zd=zd, eps=eps, lambda_reg=lambda_reg, **kw
    )


class TestPinvApply:
    def test_scalar_tikhonov_formula(self, setup):
        # one target dof: u = m r / (m m^T + lambda), checked entrywise
        _, basis, grid, act, _, gamma = setup
        H = assemble_H(basis, act, grid, gamma, 0.3, lambda_reg=1e-4)
        row = H.Mw[:1, :]
        H.Mw = row
        H.G = row @ row.T
        H.M = H.M[:1, :]
        H.weights = H.weights[:1] * 0 + 1.0
        H._chol = None
        r = np.array([2.5])
        u = pinv_apply(H, r)
        expect = row[0] * 2.5 / ((row @ row.T).item() + 1e-4)
        assert np.allclose(u.values, expect, rtol=1e-12)

    def test_image_round_trip(self, setup):
        # r in Im(M) with negligible regularization: M pinv(r) = r
        _, basis, grid, act, omega, _ = setup
        H = assemble_H(basis, act, grid, omega, 0.3, lambda_reg=1e-16)
        u_true = np.sin(np.linspace(0.0, 2.0, grid.K))
        r = H.apply(u_true)
        u = pinv_apply(H, r)
        assert np.allclose(H.apply(u.values), r, atol=1e-8 * np.abs(r).max())

    def test_linearity(self, setup):
        _, basis, grid, act, omega, _ = setup
        H = assemble_H(basis, act, grid, omega, 0.3, lambda_reg=1e-8)
        rng = np.random.default_rng(1)
        r1 = rng.standard_normal(H.M.shape[0])
        r2 = rng.standard_normal(H.M.shape[0])
        u1 = pinv_apply(H, r1).values
        u2 = pinv_apply(H, r2).values
        u12 = pinv_apply(H, 2.0 * r1 - 3.0 * r2).values
        assert np.allclose(u12, 2.0 * u1 - 3.0 * u2, atol=1e-10)

    def test_minimizes_regularized_objective(self, setup):
        # the returned control beats 100 random perturbations of itself
        _, basis, grid, act, omega, _ = setup
        lam = 1e-6
        H = assemble_H(basis, act, grid, omega, 0.3, lambda_reg=lam)
        rng = np.random.default_rng(7)
        r = rng.standard_normal(H.M.shape[0])
        rw = np.sqrt(H.weights) * r
        u = pinv_apply(H, r).values

        def objective(v):
            return float(np.sum((H.Mw @ v - rw) ** 2) + lam * np.sum(v**2))

        base = objective(u)
        for _ in range(100):
            d = rng.standard_normal(u.size)
            d *= rng.uniform(1e-4, 1.0) / np.linalg.norm(d)
            assert objective(u + d) >= base

    def test_rejects_wrong_size(self, setup):
        _, basis, grid, act, omega, _ = setup
        H = assemble_H(basis, act, grid, omega, 0.3)
        with pytest.raises(ValueError):
            pinv_apply(H, np.ones(3))


class TestAssembleH:
    def test_constant_mode_closed_form(self, setup):
        # single constant mode (eigenvalue 0): the response to a unit
        # control on step k is b0 ((T-t_k)^a - (T-t_(k+1))^a) / Gamma(a+1)
        dom, _, grid, act, omega, _ = setup
        basis1 = build_basis(dom, 1, 1)
        alpha = 0.3
        H = assemble_H(basis1, act, grid, omega, alpha)
        from fracctrl.domain import actuator_coefficients

        b0 = actuator_coefficients(act, basis1)[0]
        t = grid.nodes
        T = grid.T
        expect = b0 * ((T - t[:-1]) ** alpha - (T - t[1:]) ** alpha)
        expect /= math.gamma(alpha + 1.0)
        # every target node sees the same constant-mode response
        assert np.allclose(H.M, expect[None, :], rtol=1e-12)

    def test_classical_alpha_one_weights(self, setup):
        # alpha = 1: mode response is (exp(-lam(T-t_(k+1)))
        # - exp(-lam(T-t_k))) / lam, the classical heat-kernel quadrature
        dom, _, grid, act, omega, _ = setup
        basis = build_basis(dom, 3, 1)
        H = assemble_H(basis, act, grid, omega, 1.0)
        from fracctrl.domain import actuator_coefficients, _cos_rows

        b = actuator_coefficients(act, basis)
        lam = basis.eigenvalues
        t = grid.nodes
        T = grid.T
        C = np.empty((lam.size, grid.K))
        for m, lm in enumerate(lam):
            if lm == 0.0:
                C[m] = b[m] * (t[1:] - t[:-1])
            else:
                C[m] = b[m] * (
                    np.exp(-lm * (T - t[1:])) - np.exp(-lm * (T - t[:-1]))
                ) / lm
        patch_x = dom.x[dom.x <= 0.3 + 1e-9]
        ex = _cos_rows(3, 1.0, patch_x)
        # reconstruct the target-node values from the mode responses
        ny = dom.y[dom.y <= 0.1 + 1e-9].size
        expect = np.repeat(ex.T @ C, ny, axis=0)
        assert np.allclose(H.M, expect, rtol=1e-10)

    def test_rejects_empty_target(self, setup):
        dom, basis, grid, act, _, _ = setup
        bad = Region.interior(0.013, 0.017, 0.013, 0.017)  # between nodes
        with pytest.raises(ValueError):
            assemble_H(basis, act, grid, bad, 0.3)


class TestLinearControl:
    def test_zero_target_zero_control(self, setup):
        _, basis, grid, act, omega, _ = setup
        H = assemble_H(basis, act, grid, omega, 0.3)
        u = linear_control(H, np.zeros(H.M.shape[0]))
        assert np.all(u.values == 0.0)

    def test_scaling_covariance(self, setup):
        # doubling the target doubles the control (fixed regularization)
        _, basis, grid, act, omega, _ = setup
        H = assemble_H(basis, act, grid, omega, 0.3, lambda_reg=1e-8)
        rng = np.random.default_rng(3)
        d = rng.standard_normal(H.M.shape[0])
        u1 = linear_control(H, d).values
        u2 = linear_control(H, 2.0 * d).values
        assert np.allclose(u2, 2.0 * u1, atol=1e-10 * np.abs(u1).max())

    def test_reaches_manufactured_target(self, setup):
        # target manufactured as the image of u = 1: the synthesized
        # control reproduces the target values (the per-step control
        # itself is not identifiable — the map has fast-decaying
        # singular values — but its image is)
        _, basis, grid, act, omega, _ = setup
        H = assemble_H(basis, act, grid, omega, 0.3, lambda_reg=1e-14)
        d = H.apply(np.ones(grid.K))
        u = linear_control(H, d)
        reached = H.apply(u.values)
        assert np.linalg.norm(reached - d) <= 1e-4 * np.linalg.norm(d)


class TestBoundaryError:
    def test_reached_trace_is_zero_error(self, setup):
        dom, basis, grid, act, omega, gamma = setup
        y0 = Field.from_function(
            dom, lambda x, y: np.cos(np.pi * x) + 0.5
        )
        traj = solve_linear(y0, None, act, basis, grid, 0.5)
        from fracctrl.domain import trace

        prof = trace(traj.final_field(), gamma)
        assert boundary_error(traj, prof.values, gamma) == 0.0

    def test_constant_offset_norm(self, setup):
        # error c over a segment of length L has norm c sqrt(L)
        dom, basis, grid, act, omega, gamma = setup
        traj = solve_linear(
            Field.zero(dom), None, act, basis, grid, 0.5
        )
        c = 2.0
        zd = np.full(dom.y[dom.y <= 0.1 + 1e-9].size, c)
        assert boundary_error(traj, zd, gamma) == pytest.approx(
            c * math.sqrt(0.1), rel=1e-12
        )


class TestAlgorithm1:
    def test_linear_exactness_one_iteration(self, setup):
        # F = none and d_s in Im(H): terminates at iteration 1 with
        # residual at the regularization-bias level
        problem = _example_problem(
            setup, NonlinearTerm.none(), eps=1e-6, lambda_reg=1e-10
        )
        H = problem.operator()
        manufactured = H.apply(np.cos(np.linspace(0.0, 1.0, H.M.shape[1])))
        problem.d_s = GridPatch(
            x=problem.d_s.x, y=problem.d_s.y,
            values=manufactured.reshape(problem.d_s.values.shape),
        )
        # the best achievable residual is the regularization bias
        # lambda (G + lambda I)^{-1} d_w, computable in closed form
        dw = np.sqrt(H.weights) * manufactured.ravel()
        A = H.G + problem.lambda_reg * np.eye(H.G.shape[0])
        bias = problem.lambda_reg * np.linalg.norm(
            np.linalg.solve(A, dw)
        )
        problem.eps = 1e-6 + bias
        u, traj, report = algorithm1(problem)
        assert report.converged
        assert report.iterations == 1
        assert report.residuals[0] <= 1e-6 + bias * (1.0 + 1e-9)

    def test_zero_target_trivial(self, setup):
        problem = _example_problem(setup, NonlinearTerm.none())
        problem.d_s = GridPatch(
            x=problem.d_s.x, y=problem.d_s.y,
            values=np.zeros_like(problem.d_s.values),
        )
        problem.zd = np.zeros_like(problem.zd)
        u, traj, report = algorithm1(problem)
        assert report.converged
        assert np.all(u.values == 0.0)
        assert report.costs[-1] == 0.0

    def test_linear_residual_constant_after_first(self, setup):
        # with F = none the reached state is linear in r, so from
        # iteration 1 onward the residual only shrinks by the iterated
        # Tikhonov factor, which is tiny at small regularization
        problem = _example_problem(
            setup, NonlinearTerm.none(), eps=1e-14, lambda_reg=1e-10,
            n_max=6,
        )
        u, traj, report = algorithm1(problem)
        assert report.iterations >= 3
        later = report.residuals[1:]
        assert np.allclose(later, later[0], rtol=1e-2)

    def test_gamma_mode_residual_is_boundary_error(self, setup):
        problem = _example_problem(
            setup, NonlinearTerm.none(), eps=1e-3, lambda_reg=1e-8,
            target_mode="gamma", n_max=3,
        )
        u, traj, report = algorithm1(problem)
        assert report.residuals == pytest.approx(report.boundary_errors)

    def test_rejects_bad_metric(self, setup):
        problem = _example_problem(setup, NonlinearTerm.none())
        problem.stop_metric = "bogus"
        with pytest.raises(ValueError):
            algorithm1(problem)

    def test_y0_offset_linear(self, setup):
        # with y0 nonzero and F = none the loop still reaches the target:
        # the residual is initialized net of the free evolution
        dom, basis, grid, act, omega, gamma = setup
        problem = _example_problem(
            setup, NonlinearTerm.none(), eps=1e-8, lambda_reg=1e-12
        )
        problem.y0 = Field.from_function(
            dom, lambda x, y: 0.1 * np.cos(np.pi * y)
        )
        H = problem.operator()
        manufactured = H.apply(np.sin(np.linspace(0.0, 2.0, H.M.shape[1])))
        free = solve_linear(problem.y0, None, act, basis, grid, 0.3)
        from fracctrl.domain import restrict

        offset = restrict(free.final_field(), omega).values
        problem.d_s = GridPatch(
            x=problem.d_s.x, y=problem.d_s.y,
            values=manufactured.reshape(problem.d_s.values.shape) + offset,
        )
        u, traj, report = algorithm1(problem)
        assert report.converged
        assert report.residuals[-1] <= 1e-6


class TestPicardSequence:
    def test_linear_collapses_to_linear_control(self, setup):
        # F = none: converges in one step to the one-shot control
        problem = _example_problem(
            setup, NonlinearTerm.none(), eps=1e-10, lambda_reg=1e-8
        )
        u, traj, report = picard_sequence(problem)
        assert report.converged
        H = problem.operator()
        expect = linear_control(H, problem.d_s.values.ravel())
        assert np.allclose(u.values, expect.values, atol=1e-12)

    def test_zero_target_stays_zero(self, setup):
        problem = _example_problem(setup, NonlinearTerm.square())
        problem.d_s = GridPatch(
            x=problem.d_s.x, y=problem.d_s.y,
            values=np.zeros_like(problem.d_s.values),
        )
        problem.zd = np.zeros_like(problem.zd)
        u, traj, report = picard_sequence(problem)
        assert report.converged
        assert np.all(u.values == 0.0)

    def test_requires_zero_initial_state(self, setup):
        dom = setup[0]
        problem = _example_problem(setup, NonlinearTerm.none())
        problem.y0 = Field.from_function(dom, lambda x, y: x * 0 + 1.0)
        with pytest.raises(ValueError):
            picard_sequence(problem)

    def test_small_target_contracts(self, setup):
        # scaled-down target: successive control increments shrink
        problem = _example_problem(
            setup, NonlinearTerm.square(), eps=1e-9, lambda_reg=1e-8,
            n_max=25,
        )
        problem.d_s = GridPatch(
            x=problem.d_s.x, y=problem.d_s.y,
            values=problem.d_s.values * 1e-2,
        )
        problem.zd = problem.zd * 1e-2
        u, traj, report = picard_sequence(problem)
        assert report.converged
        ratios = report.contraction_ratios()
        assert len(ratios) >= 1
        assert all(r < 1.0 for r in ratios[1:])


class TestControlSignal:
    def test_cost_is_squared_l2(self, setup):
        _, _, grid, _, _, _ = setup
        u = ControlSignal(np.full(grid.K, 2.0), grid)
        assert u.cost() == pytest.approx(4.0 * grid.T)
        assert u.norm() == pytest.approx(2.0 * math.sqrt(grid.T))

    def test_rejects_nonfinite(self, setup):
        _, _, grid, _, _, _ = setup
        vals = np.zeros(grid.K)
        vals[3] = np.inf
        with pytest.raises(ValueError):
            ControlSignal(vals, grid)

    def test_rejects_wrong_length(self, setup):
        _, _, grid, _, _, _ = setup
        with pytest.raises(ValueError):
            ControlSignal(np.zeros(grid.K + 1), grid)
