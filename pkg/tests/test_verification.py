"""Oracle self-consistency and manufactured-solution checks."""

import math
from types import SimpleNamespace

import numpy as np
import pytest
import scipy.linalg

from convdiff.estimator import estimate_trajectory
from convdiff.fem import (FeSpace, DofVector, interpolate, mass_matrix,
                          stiffness_matrix, l2_project)
from convdiff.mesh import generate_structured, uniform_refine
from convdiff.problem import ProblemData, ThetaParams, derived_constants
from convdiff.stepper import TimePartition, Trajectory, StepDiagnostics, run
from convdiff.verification import (manufactured_case, case_residual,
                                   dual_norm_oracle, riesz_representer,
                                   friedrichs_eig, fine_space_for,
                                   true_errors, effectivity,
                                   residual_decomposition_check,
                                   residual_dual_norms, _residual_vectors,
                                   _blended_matrix, convergence_study,
                                   ErrorReport, STUDY_COLUMNS)


def test_manufactured_cases_satisfy_equation():
    for name in ("heat", "nonlinear"):
        case = manufactured_case(name)
        assert case_residual(case) <= 1e-10


def test_manufactured_epsilon_override():
    case = manufactured_case("nonlinear", epsilon=1e-4)
    assert case.problem.epsilon == 1e-4
    assert case_residual(case) <= 1e-10


def test_unknown_case_rejected():
    with pytest.raises(ValueError):
        manufactured_case("stokes")


def test_dual_norm_zero_functional():
    sp = FeSpace(generate_structured((0, 0, 1, 1), 3))
    assert dual_norm_oracle(np.zeros(sp.n_dofs), 1.0, 0.0, sp) == 0.0


def test_dual_norm_degenerate_rejected():
    sp = FeSpace(generate_structured((0, 0, 1, 1), 2))
    with pytest.raises(ValueError):
        dual_norm_oracle(np.zeros(sp.n_dofs), 0.0, 0.0, sp)


def test_dual_norm_riesz_roundtrip():
    sp = FeSpace(generate_structured((0, 0, 1, 1), 4))
    eps, beta = 0.3, 0.7
    A = eps * stiffness_matrix(sp) + beta * mass_matrix(sp)
    rng = np.random.default_rng(5)
    w = rng.standard_normal(sp.n_dofs) * sp.free
    ell = A @ w
    target = math.sqrt(w @ (A @ w))
    assert dual_norm_oracle(ell, eps, beta, sp) == pytest.approx(
        target, rel=1e-11)
    w_back = riesz_representer(ell, eps, beta, sp)
    assert np.allclose(w_back, w, atol=1e-10)


def test_dual_norm_against_dense_eigenproblem():
    sp = FeSpace(generate_structured((0, 0, 1, 1), 3))  # 9 free dofs
    eps, beta = 0.05, 0.4
    A = (eps * stiffness_matrix(sp) + beta * mass_matrix(sp)).toarray()
    free = np.where(sp.free)[0]
    Af = A[np.ix_(free, free)]
    rng = np.random.default_rng(9)
    ell = rng.standard_normal(sp.n_dofs)
    lf = ell.copy()
    lf[~sp.free] = 0.0
    direct = math.sqrt(lf[free] @ np.linalg.solve(Af, lf[free]))
    # same number as the largest generalized eigenvalue of l l^T v = s A v
    evals = scipy.linalg.eigh(np.outer(lf[free], lf[free]), Af,
                              eigvals_only=True)
    assert math.sqrt(max(evals)) == pytest.approx(direct, rel=1e-9)
    assert dual_norm_oracle(lf, eps, beta, sp) == pytest.approx(
        direct, rel=1e-9)


def test_friedrichs_monotone_and_bounded():
    mesh = generate_structured((0, 0, 1, 1), 4)
    vals = []
    for _ in range(3):
        vals.append(friedrichs_eig(FeSpace(mesh)))
        mesh = uniform_refine(mesh)
    assert vals[0] < vals[1] < vals[2]
    assert vals[-1] <= math.sqrt(2.0)
    assert vals[-1] == pytest.approx(1.0 / (math.pi * math.sqrt(2.0)),
                                     rel=0.05)


def small_run(name="nonlinear", n=4, steps=4, vartheta=0.0, **case_kw):
    case = manufactured_case(name, **case_kw)
    mesh = generate_structured((0, 0, 1, 1), n)
    times = TimePartition.uniform(case.problem.T, steps)
    traj = run(case.problem, mesh, times,
               params=ThetaParams(1.0, vartheta))
    return case, traj


def test_residual_decomposition_identity():
    _, traj = small_run(vartheta=0.5)
    for n in (1, len(traj.states) - 1):
        assert residual_decomposition_check(traj, n, samples=25) <= 1e-11


def test_residual_decomposition_nu_zero():
    case, traj = small_run("heat")
    assert residual_decomposition_check(traj, 1, samples=10) <= 1e-11
    sp = traj.spaces[0]
    M = mass_matrix(sp)
    B = _blended_matrix(case.problem, traj.params, sp, 0.0,
                        float(traj.times.nodes[1]))
    parts = _residual_vectors(case.problem, traj.params, sp,
                              traj.states[0].values, traj.states[1].values,
                              0.0, float(traj.times.nodes[1]),
                              0.01, M, B)
    assert np.allclose(parts["tau_nonlin"], 0.0)


def test_residual_data_part_vanishes_for_static_data():
    prob = ProblemData(epsilon=1.0, nu=1.0, T=0.5, beta=0.25,
                       g=lambda x, y, t: np.sin(x) * np.cos(y),
                       b=lambda x, y, t: 0.25 + 0 * x,
                       u0=lambda x, y: x * (1 - x) * y * (1 - y))
    mesh = generate_structured((0, 0, 1, 1), 3)
    traj = run(prob, mesh, TimePartition.uniform(0.5, 2))
    sp = traj.spaces[0]
    M = mass_matrix(sp)
    B = _blended_matrix(prob, traj.params, sp, 0.0, 0.25)
    parts = _residual_vectors(prob, traj.params, sp,
                              traj.states[0].values, traj.states[1].values,
                              0.0, 0.25, 0.1, M, B)
    assert np.abs(parts["data"]).max() <= 1e-13


def zero_case():
    import sympy
    x, y = sympy.symbols("x y")
    prob = ProblemData(epsilon=1.0, nu=0.0, T=0.5)
    zero3 = lambda X, Y, T_: np.zeros_like(X)
    from convdiff.verification import ManufacturedCase
    return ManufacturedCase("zero", prob, zero3, zero3, zero3, zero3,
                            zero3)


def test_true_errors_zero_case():
    case = zero_case()
    mesh = generate_structured((0, 0, 1, 1), 3)
    traj = run(case.problem, mesh, TimePartition.uniform(0.5, 2))
    errs = true_errors(traj, case)
    assert errs.x_norm == pytest.approx(0.0, abs=1e-13)
    assert errs.x_norm ** 2 == pytest.approx(errs.components_sq(),
                                             abs=1e-15)


def exact_trajectory(case, n, steps):
    """The nodal interpolant of the exact solution posing as a computed
    trajectory."""
    mesh = generate_structured((0, 0, 1, 1), n)
    sp = FeSpace(mesh)
    times = TimePartition.uniform(case.problem.T, steps)
    states = []
    for t in times.nodes:
        vals = case.exact(sp.dof_points[:, 0], sp.dof_points[:, 1],
                          float(t))
        vals = np.asarray(vals) * sp.free
        states.append(DofVector(sp, vals))
    diags = [StepDiagnostics(1, 0, 0.0, True, 0.0)
             for _ in range(steps)]
    return Trajectory(times, [sp] * (steps + 1), states, diags,
                      problem=case.problem, params=ThetaParams(),
                      stab=None, constants=None)


def test_true_errors_interpolant_consistency():
    case = manufactured_case("heat", T=0.5)
    coarse = true_errors(exact_trajectory(case, 4, 4), case)
    fine = true_errors(exact_trajectory(case, 8, 8), case)
    assert fine.x_norm < coarse.x_norm
    assert coarse.x_norm < 1.5  # interpolation scale, not solver error
    for r in (coarse, fine):
        assert r.x_norm ** 2 == pytest.approx(r.components_sq(),
                                              rel=1e-12)


def test_true_errors_on_solver_output():
    case, traj = small_run("heat", n=4, steps=4)
    errs = true_errors(traj, case)
    assert 0.0 < errs.x_norm < 2.0
    assert len(errs.per_step) == 4
    total_dual = sum(s["dual_sq"] for s in errs.per_step)
    assert errs.dual == pytest.approx(math.sqrt(total_dual), rel=1e-12)


def test_true_errors_threaded_identical():
    case, traj = small_run("heat", n=4, steps=3)
    a = true_errors(traj, case, threads=1)
    b = true_errors(traj, case, threads=4)
    assert a.x_norm == b.x_norm
    assert a.sup_l2 == b.sup_l2
    assert a.energy == b.energy


def test_effectivity_conventions():
    est = SimpleNamespace(totals={"estimate": 2.0})
    errs = ErrorReport(0.0, 0.0, 0.0, 1.0)
    assert effectivity(est, errs) == 2.0
    assert effectivity(SimpleNamespace(totals={"estimate": 0.0}),
                       ErrorReport(0, 0, 0, 0.0)) == 1.0
    assert effectivity(est, ErrorReport(0, 0, 0, 0.0)) == math.inf


def test_residual_bounded_by_error():
    # residual <= sqrt(2) c_b (1 + nu L lam min(lam, sqrt(tau)) gamma)
    # times the step error, allowing slack 3 for oracle discretization
    case, traj = small_run("nonlinear", n=4, steps=4)
    cc = traj.constants
    p = case.problem
    fine = fine_space_for(traj)
    errs = true_errors(traj, case, fine_space=fine)
    for st in errs.per_step:
        n = st["n"]
        tau = float(np.diff(traj.times.nodes)[n - 1])
        resid, _ = residual_dual_norms(traj, n, fine)
        factor = math.sqrt(2.0) * p.c_b * (
            1.0 + p.nu * p.lipschitz_L * cc.lam
            * min(cc.lam, math.sqrt(tau)) * cc.gamma)
        step_x = math.sqrt(st["sup_l2"] ** 2 + st["energy_sq"]
                           + st["dual_sq"])
        assert resid <= 3.0 * factor * step_x


def test_nonlinear_temporal_indicator_bounded_by_error():
    case, traj = small_run("nonlinear", n=4, steps=4, vartheta=0.5)
    rep = estimate_trajectory(traj)
    cc = traj.constants
    p = case.problem
    fine = fine_space_for(traj)
    M = mass_matrix(fine)
    from convdiff.verification import _transfer_coeffs
    cache = {}
    coeffs = [_transfer_coeffs(u, fine, cache) for u in traj.states]
    pts = fine.dof_points
    nuLg = p.nu * p.lipschitz_L * cc.lam * cc.gamma
    from convdiff.quadrature import edge_rule
    rule = edge_rule(3)
    for st in rep.steps:
        n, tau = st.n, st.tau
        t0 = float(traj.times.nodes[n - 1])
        sup_err = 0.0
        for w in (0.0, 0.25, 0.5, 0.75, 1.0):
            ex = np.asarray(case.exact(pts[:, 0], pts[:, 1], t0 + w * tau))
            e = ex - (w * coeffs[n] + (1 - w) * coeffs[n - 1])
            sup_err = max(sup_err, math.sqrt(e @ (M @ e)))
        dt_sq = 0.0
        for s, wq in zip(rule.points[:, 0], rule.weights):
            ut = np.asarray(case.exact_t(pts[:, 0], pts[:, 1],
                                         t0 + s * tau))
            dt_sq += tau * wq * float(ut @ (M @ ut))
        bound = (2.0 * math.sqrt(tau / 3.0) * nuLg * sup_err
                 + (tau / math.sqrt(3.0)) * nuLg * math.sqrt(dt_sq))
        assert st.temporal_nonlinear <= 1.05 * bound + 1e-14


def test_lipschitz_dual_bound():
    sp = FeSpace(uniform_refine(generate_structured((0, 0, 1, 1), 4)))
    c_f = friedrichs_eig(sp)
    lam = c_f  # eps = 1, beta = 0
    M = mass_matrix(sp)
    rng = np.random.default_rng(17)
    from convdiff.fem import assemble_N
    from convdiff.problem import phi_by_name
    phi, L = phi_by_name("one_plus_abs")
    g = lambda x, y: np.ones_like(x)
    for _ in range(20):
        u1 = rng.standard_normal(sp.n_dofs) * sp.free
        u2 = rng.standard_normal(sp.n_dofs) * sp.free
        ell = assemble_N(sp, 1.0, phi, g, u1) \
            - assemble_N(sp, 1.0, phi, g, u2)
        lhs = dual_norm_oracle(ell, 1.0, 0.0, sp)
        rhs = L * lam * math.sqrt((u1 - u2) @ (M @ (u1 - u2)))
        assert lhs <= rhs * (1.0 + 1e-6)


def test_convergence_study_shape():
    case = manufactured_case("heat", T=0.1)
    rows = convergence_study(case, levels=2, n0=4, tau0=0.05)
    assert len(rows) == 2
    assert set(STUDY_COLUMNS) == set(rows[0].keys())
    assert math.isnan(rows[0]["rate_X"])
    assert np.isfinite(rows[1]["rate_X"])
    assert rows[1]["err_X"] < rows[0]["err_X"]
