"""Indicator oracles: tiny meshes where every term is computable by hand."""

import math

import numpy as np
import pytest

from convdiff.estimator import (mdiam, estimate_step, estimate_trajectory,
                                temporal_nonlinear_bound,
                                data_residual_bound,
                                convective_dual_estimate,
                                error_from_residual_factor,
                                _StepFrame, CSV_COLUMNS)
from convdiff.fem import (FeSpace, DofVector, l2_project,
                          prolongation_matrix, stiffness_matrix)
from convdiff.mesh import generate_structured, uniform_refine
from convdiff.problem import (ProblemData, ThetaParams, DerivedConstants,
                              derived_constants, friedrichs_bound)
from convdiff.stabilization import StabilizationSpec
from convdiff.stepper import TimePartition, run


def consts(lam=1.0, gamma=1.0, kappa=0.0, kappa_tilde=0.0, c_f=1.0):
    return DerivedConstants(lam=lam, gamma=gamma, kappa=kappa,
                            kappa_tilde=kappa_tilde, c_f=c_f,
                            gamma_of_t=lambda t: gamma)


def pure_diffusion(**kw):
    base = dict(epsilon=1.0, nu=0.0, T=1.0, beta=0.0, c_b=1.0)
    base.update(kw)
    return ProblemData(**base)


def test_mdiam_branches():
    assert mdiam(0.5, 1.0, 0.0) == pytest.approx(0.5)
    assert mdiam(1.0, 4.0, 0.0) == pytest.approx(0.5)
    # reaction branch caps the weight
    assert mdiam(3.0, 1.0, 0.25) == pytest.approx(2.0)
    # beta = 0 must not divide by zero
    out = mdiam(np.array([1.0, 2.0]), 0.25, 0.0)
    assert np.allclose(out, [2.0, 4.0])


def test_zero_state_all_indicators_vanish():
    mesh = generate_structured((0, 0, 1, 1), 2)
    sp = FeSpace(mesh)
    z = DofVector(sp, np.zeros(sp.n_dofs))
    prob = pure_diffusion()
    ind = estimate_step(prob, consts(), ThetaParams(), StabilizationSpec(),
                        z, z, 0.0, 0.1)
    for name in ("eta", "theta_data", "theta_cip", "energy_jump",
                 "conv_dual", "temporal_linear", "temporal_nonlinear",
                 "data_residual"):
        assert getattr(ind, name) == pytest.approx(0.0, abs=1e-14)
    assert np.allclose(ind.eta_elements, 0.0)


def test_flux_jump_hand_value():
    # Hat at (1,0) on the 2-triangle square: u = x - y on the lower
    # triangle, 0 on the upper.  The only contribution is the diagonal
    # jump: |[[n . grad u]]| = sqrt(2) along an edge of length sqrt(2),
    # so eta^2 = 1/2 * mdiam(sqrt2) * 2*sqrt2 = 2 at eps = 1.
    mesh = generate_structured((0, 0, 1, 1), 1)
    sp = FeSpace(mesh)
    vals = np.zeros(sp.n_dofs)
    i = np.where((np.abs(sp.dof_points[:, 0] - 1) < 1e-12)
                 & (np.abs(sp.dof_points[:, 1]) < 1e-12))[0][0]
    vals[i] = 1.0
    u = DofVector(sp, vals)
    prob = pure_diffusion()
    ind = estimate_step(prob, consts(), ThetaParams(), StabilizationSpec(),
                        u, u, 0.0, 0.5)
    assert ind.eta == pytest.approx(math.sqrt(2.0), rel=1e-12)
    # split half-half between the two sharing triangles
    assert np.allclose(ind.eta_elements, [1.0, 1.0])
    assert ind.energy_jump == pytest.approx(0.0, abs=1e-14)
    assert ind.temporal_linear == pytest.approx(0.0, abs=1e-14)


def test_eta_elements_sum_matches_total():
    mesh = uniform_refine(generate_structured((0, 0, 1, 1), 2))
    sp = FeSpace(mesh)
    rng = np.random.default_rng(7)
    u0 = DofVector(sp, rng.standard_normal(sp.n_dofs) * sp.free)
    u1 = DofVector(sp, rng.standard_normal(sp.n_dofs) * sp.free)
    prob = pure_diffusion(epsilon=0.05, beta=0.3,
                          a1=lambda x, y, t: 1.0 + 0 * x,
                          a2=lambda x, y, t: x * y,
                          b=lambda x, y, t: 0.3 + 0 * x,
                          source=lambda x, y, t: np.sin(3 * x) + t)
    ind = estimate_step(prob, consts(lam=2.0), ThetaParams(0.5, 0.0),
                        StabilizationSpec(), u0, u1, 0.0, 0.25)
    assert len(ind.eta_elements) == mesh.n_triangles
    assert (ind.eta_elements ** 2).sum() == pytest.approx(ind.eta ** 2,
                                                          rel=1e-12)


def test_constant_source_interior_residual():
    # u = 0 throughout, f = 3: residual is the constant 3 on both
    # triangles, eta^2 = sum h_K^2 * 9 * |K| = 2 * 2 * 9 * 0.5 = 18.
    mesh = generate_structured((0, 0, 1, 1), 1)
    sp = FeSpace(mesh)
    z = DofVector(sp, np.zeros(sp.n_dofs))
    prob = pure_diffusion(source=lambda x, y, t: 3.0 + 0 * x)
    ind = estimate_step(prob, consts(), ThetaParams(), StabilizationSpec(),
                        z, z, 0.0, 1.0)
    assert ind.eta == pytest.approx(math.sqrt(18.0), rel=1e-12)
    assert ind.theta_data == pytest.approx(0.0, abs=1e-13)


def test_source_oscillation_hand_value():
    # f = x against its barycenter value: int (x - xbar)^2 = 1/36 on each
    # of the two triangles, so theta_data^2 = 2 * h^2 / 36 = 1/9.
    mesh = generate_structured((0, 0, 1, 1), 1)
    sp = FeSpace(mesh)
    z = DofVector(sp, np.zeros(sp.n_dofs))
    prob = pure_diffusion(source=lambda x, y, t: x)
    ind = estimate_step(prob, consts(), ThetaParams(), StabilizationSpec(),
                        z, z, 0.0, 1.0)
    assert ind.theta_data == pytest.approx(1.0 / 3.0, rel=1e-12)


def test_nonlinear_temporal_factor():
    prob = ProblemData(epsilon=1.0, nu=1.0, T=1.0, lipschitz_L=1.0)
    cc = consts(lam=1.0, gamma=1.0)
    tau = 0.8
    for vt, frac in ((0.0, 1.0 / 3.0), (0.25, 7.0 / 48.0),
                     (0.5, 1.0 / 12.0), (1.0, 1.0 / 3.0)):
        l2v, env = temporal_nonlinear_bound(tau, vt, prob, cc, 1.0, 1.0)
        # oracle: tau * int_0^1 (s - vt)^2 ds by quadrature
        s = np.linspace(0, 1, 20001)
        ref = tau * np.trapezoid((s - vt) ** 2, s)
        assert abs(ref - tau * frac) < 1e-8
        assert l2v == pytest.approx(math.sqrt(tau * frac), rel=1e-12)
        assert env == pytest.approx(l2v, rel=1e-12)  # lam = 1


def test_convective_dual_domdiff_arithmetic():
    mesh = generate_structured((0, 0, 1, 1), 4)
    sp = FeSpace(mesh)
    rng = np.random.default_rng(3)
    du = rng.standard_normal(sp.n_dofs) * sp.free
    u0 = DofVector(sp, np.zeros(sp.n_dofs))
    u1 = DofVector(sp, du)
    prob = pure_diffusion(a1=lambda x, y, t: 2.0 + 0 * x,
                          a2=lambda x, y, t: 0 * x)
    frame = _StepFrame(u0, u1)
    K = stiffness_matrix(sp)
    energy = math.sqrt(du @ (K @ du))
    val, branch, eta_aux, theta_aux, aux_energy = convective_dual_estimate(
        prob, ThetaParams(), frame, 0.0, 0.1, consts(lam=3.0))
    domdiff = 3.0 * 2.0 * energy
    domconv = aux_energy + eta_aux
    assert val == pytest.approx(min(domdiff, domconv), rel=1e-12)
    assert branch == ("domdiff" if domdiff <= domconv else "domconv")
    # constant field: no data oscillation in the auxiliary bound
    assert theta_aux == pytest.approx(0.0, abs=1e-12)
    assert domconv > 0.0


def test_data_residual_time_sampling():
    # g(x,y,t) = t with vartheta = 0 blends to 0; midpoint-rule value of
    # int_0^1 t^2 dt with 10 samples is 0.3325 and the sup is hit at the
    # right endpoint.
    mesh = generate_structured((0, 0, 1, 1), 1)
    sp = FeSpace(mesh)
    z = DofVector(sp, np.zeros(sp.n_dofs))
    prob = ProblemData(epsilon=1.0, nu=1.0, T=1.0,
                       g=lambda x, y, t: t + 0 * x)
    frame = _StepFrame(z, z)
    val, comp = data_residual_bound(prob, ThetaParams(), frame, 0.0, 1.0,
                                    consts(lam=2.0))
    assert comp.g_l2 == pytest.approx(math.sqrt(0.3325), rel=1e-12)
    assert comp.g_linf == pytest.approx(1.0, rel=1e-12)
    # zero states: only the L2-in-time part survives
    assert val == pytest.approx(2.0 * math.sqrt(0.3325), rel=1e-12)


def test_data_residual_static_data_vanishes():
    mesh = generate_structured((0, 0, 1, 1), 2)
    sp = FeSpace(mesh)
    u = l2_project(lambda x, y: x * (1 - x) * y * (1 - y), sp)
    prob = ProblemData(epsilon=0.5, nu=1.0, T=1.0, beta=0.25,
                       g=lambda x, y, t: np.sin(x) + y,
                       a1=lambda x, y, t: 1.0 + 0 * x,
                       b=lambda x, y, t: 0.5 + 0 * x)
    frame = _StepFrame(u, u)
    val, comp = data_residual_bound(prob, ThetaParams(), frame, 0.0, 0.5,
                                    consts())
    assert val == pytest.approx(0.0, abs=1e-13)
    assert comp.u_energy_int > 0.0
    assert comp.u_energy_int <= comp.simpson_bound


def test_interpolant_energy_integral():
    # u_prev = 0: int ||u_I||_E^2 = tau/3 ||u||_E^2, Simpson gives tau/2.
    mesh = generate_structured((0, 0, 1, 1), 3)
    sp = FeSpace(mesh)
    u = l2_project(lambda x, y: np.sin(math.pi * x) * np.sin(math.pi * y),
                   sp)
    z = DofVector(sp, np.zeros(sp.n_dofs))
    prob = pure_diffusion()
    frame = _StepFrame(z, u)
    _, comp = data_residual_bound(prob, ThetaParams(), frame, 0.0, 0.6,
                                  consts())
    K = stiffness_matrix(sp)
    en_sq = u.values @ (K @ u.values)
    assert comp.u_energy_int == pytest.approx(0.2 * en_sq, rel=1e-12)
    assert comp.simpson_bound == pytest.approx(0.3 * en_sq, rel=1e-12)


def test_cross_mesh_step_equals_prolonged():
    coarse = generate_structured((0, 0, 1, 1), 2)
    fine = uniform_refine(coarse)
    sc, sf = FeSpace(coarse), FeSpace(fine)
    up = l2_project(lambda x, y: x * (1 - x) * y * (1 - y), sc)
    uc = l2_project(lambda x, y: np.sin(math.pi * x) * np.sin(math.pi * y),
                    sf)
    prob = pure_diffusion(epsilon=0.1, beta=0.2,
                          a1=lambda x, y, t: y, a2=lambda x, y, t: -x,
                          b=lambda x, y, t: 0.2 + 0 * x,
                          source=lambda x, y, t: x + t)
    cc = consts(lam=1.5)
    ind = estimate_step(prob, cc, ThetaParams(), StabilizationSpec(),
                        up, uc, 0.0, 0.2)
    P = prolongation_matrix(sc, sf)
    up_f = DofVector(sf, P @ up.values)
    ref = estimate_step(prob, cc, ThetaParams(), StabilizationSpec(),
                        up_f, uc, 0.0, 0.2)
    for name in ("eta", "theta_data", "theta_cip", "energy_jump",
                 "conv_dual", "eta_aux", "aux_energy", "temporal_linear",
                 "data_residual"):
        assert getattr(ind, name) == pytest.approx(getattr(ref, name),
                                                   rel=1e-10, abs=1e-13)
    assert np.allclose(ind.eta_elements, ref.eta_elements)


def heat_trajectory(eps=1.0, n=3, steps=4):
    prob = pure_diffusion(
        epsilon=eps,
        u0=lambda x, y: np.sin(math.pi * x) * np.sin(math.pi * y),
        source=lambda x, y, t: np.exp(-t) * np.sin(math.pi * x)
        * np.sin(math.pi * y))
    mesh = generate_structured((0, 0, 1, 1), n)
    times = TimePartition.uniform(1.0, steps)
    return run(prob, mesh, times)


def test_trajectory_report_invariants():
    traj = heat_trajectory()
    rep = estimate_trajectory(traj)
    assert len(rep.steps) == 4
    assert rep.aux_dropped  # eps = 1
    tot = rep.totals
    again = rep.recompute_totals()
    for k, v in tot.items():
        assert again[k] == pytest.approx(v, rel=1e-12, abs=1e-300)
    assert tot["estimate"] == pytest.approx(math.sqrt(tot["radicand"]),
                                            rel=1e-12)
    assert (rep.lower_bounds <= rep.estimate + 1e-12).all()
    assert rep.initial_error > 0.0
    d = rep.as_dict()
    assert len(d["steps"]) == 4
    assert d["totals"]["radicand"] == pytest.approx(tot["radicand"])


def test_aux_block_kept_for_small_diffusion():
    traj = heat_trajectory(eps=0.05)
    rep = estimate_trajectory(traj)
    assert not rep.aux_dropped
    # diffusion problem has no convection, so the aux terms are zero and
    # keeping them changes nothing
    assert rep.totals["primary_sum"] > 0.0


def test_regime_factor_values():
    # nu = 0 collapses to sqrt(4 + 3 c_b^2)
    prob = pure_diffusion(c_b=1.0)
    f, tag = error_from_residual_factor(prob, consts())
    assert tag == "kappa_small"
    assert f == pytest.approx(math.sqrt(7.0), rel=1e-12)
    prob2 = pure_diffusion(c_b=4.0 / 3.0)
    f2, _ = error_from_residual_factor(prob2, consts())
    assert f2 == pytest.approx(math.sqrt(4.0 + 16.0 / 3.0), rel=1e-12)
    # general regime applies when kappa >= 1
    prob3 = ProblemData(epsilon=1.0, nu=1.0, T=2.0, c_b=1.0)
    cc = consts(lam=1.0, gamma=1.0, kappa=2.0)
    f3, tag3 = error_from_residual_factor(prob3, cc)
    assert tag3 == "general"
    inner = 1.0 + 3.0 * max(1.0, 1.0 * min(2.0, 1.0))
    assert f3 == pytest.approx(math.sqrt(3.0 + inner * math.exp(4.0)),
                               rel=1e-12)


def test_csv_row_shape():
    traj = heat_trajectory(steps=2)
    rep = estimate_trajectory(traj)
    assert len(CSV_COLUMNS) == 15
    row = rep.steps[0].csv_values()
    assert len(row) == len(CSV_COLUMNS)
    assert row[0] == 1
    assert isinstance(row[CSV_COLUMNS.index("conv_branch")], str)


def test_constants_pass_through():
    traj = heat_trajectory(steps=2)
    rep = estimate_trajectory(traj)
    used = rep.constants_used
    assert used["epsilon"] == 1.0
    assert used["sigma_cip"] == 0.0
    assert used["error_from_residual_factor"] > 1.0
    assert used["residual_from_error_factor_max"] == pytest.approx(
        math.sqrt(2.0), rel=1e-12)  # nu = 0, c_b = 1
