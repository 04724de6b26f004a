"""End-to-end acceptance checks, one test per shipped guarantee."""

import math
import os
import time

import numpy as np
import pytest

from convdiff.adaptivity import AdaptPolicy
from convdiff.estimator import (estimate_trajectory, temporal_nonlinear_bound,
                                error_from_residual_factor)
from convdiff.fem import (FeSpace, assemble_B, assemble_N, mass_matrix,
                          prolongation_matrix)
from convdiff.mesh import generate_structured, uniform_refine
from convdiff.problem import (ProblemData, blend_field, derived_constants,
                              phi_by_name)
from convdiff.stabilization import StabilizationSpec
from convdiff.stepper import TimePartition, run
from convdiff.verification import (manufactured_case, true_errors,
                                   effectivity, convergence_study,
                                   dual_norm_oracle, friedrichs_eig,
                                   residual_decomposition_check)

UNIT = (0.0, 0.0, 1.0, 1.0)


@pytest.fixture(scope="module")
def adapted_nonlinear():
    """Nonlinear case on an adaptively refined run of 8 steps from an
    8 x 8 starting mesh."""
    t0 = time.monotonic()
    case = manufactured_case("nonlinear", T=0.25)
    mesh = generate_structured(UNIT, 8)
    policy = AdaptPolicy(refine_fraction=0.4, coarsen_fraction=0.05)
    traj = run(case.problem, mesh, TimePartition.uniform(0.25, 8),
               policy=policy)
    return case, traj, time.monotonic() - t0


def test_residual_decomposition_identity(adapted_nonlinear):
    case, traj, t_build = adapted_nonlinear
    sizes = [sp.mesh.n_triangles for sp in traj.spaces]
    assert len({id(sp.mesh) for sp in traj.spaces}) >= 3
    assert sizes[-1] >= 4 * sizes[0]   # local depth of at least two
    t0 = time.monotonic()
    worst = max(residual_decomposition_check(traj, n, samples=50, seed=0)
                for n in range(1, len(traj.states)))
    elapsed = t_build + time.monotonic() - t0
    assert worst <= 1e-10
    assert elapsed < 30.0


def test_scheme_residual_every_step(adapted_nonlinear):
    _, traj, _ = adapted_nonlinear
    assert all(d.residual <= 1e-10 for d in traj.diagnostics)
    assert any(not d.same_mesh for d in traj.diagnostics)


@pytest.fixture(scope="module")
def heat_studies():
    case = manufactured_case("heat", T=0.2)
    out = {}
    for key, theta, tau_power in (("implicit", 1.0, 2),
                                  ("midpoint", 0.5, 1)):
        t0 = time.monotonic()
        rows = convergence_study(case, levels=4, n0=4, theta=theta,
                                 tau0=0.04, tau_power=tau_power)
        out[key] = (rows, time.monotonic() - t0)
    return out


def _ls_rate(rows, column):
    h = np.log([r["h_max"] for r in rows])
    e = np.log([r[column] for r in rows])
    return np.polyfit(h, e, 1)[0]


def test_heat_energy_convergence_rates(heat_studies):
    for key in ("implicit", "midpoint"):
        rows, elapsed = heat_studies[key]
        assert elapsed < 120.0
        rate = _ls_rate(rows, "err_energy")
        assert 0.9 <= rate <= 1.1, (key, rate)


def test_estimator_effectivity_stable(heat_studies):
    rows, _ = heat_studies["implicit"]
    effs = [r["effectivity"] for r in rows]
    assert all(0.05 <= e <= 50.0 for e in effs)
    assert max(effs[-2:]) <= 2.0 * min(effs[-2:])


def _nonlinear_run(eps, n, T=0.25, steps=10):
    case = manufactured_case("nonlinear", epsilon=eps, T=T)
    mesh = generate_structured(UNIT, n)
    traj = run(case.problem, mesh, TimePartition.uniform(T, steps),
               stab=StabilizationSpec("sd", 0.5))
    return case, traj


@pytest.fixture(scope="module")
def epsilon_sweep():
    out = {}
    for eps in (1.0, 1e-2, 1e-4):
        case, traj = _nonlinear_run(eps, 8)
        rep = estimate_trajectory(traj)
        errs = true_errors(traj, case)
        out[eps] = effectivity(rep, errs)
    return out


def test_epsilon_robust_effectivity(epsilon_sweep):
    vals = list(epsilon_sweep.values())
    assert all(np.isfinite(vals))
    assert max(vals) <= 20.0 * min(vals)


def test_nonlinear_time_factor_values():
    problem = ProblemData(epsilon=1.0, nu=1.0, T=1.0, lipschitz_L=1.0)
    constants = derived_constants(problem, c_f=1.0, gamma=1.0)
    # tau (2 - 6 w (1 - w)) / 6 at w = 0, 1/4, 1/2, 1
    expected = {0.0: 1.0 / 3.0, 0.25: 7.0 / 48.0, 0.5: 1.0 / 12.0,
                1.0: 1.0 / 3.0}
    for tau in (1.0, 0.8, 0.0625):
        for w, frac in expected.items():
            got, _ = temporal_nonlinear_bound(tau, w, problem, constants,
                                              1.0, 1.0)
            want = math.sqrt(tau * frac)
            assert abs(got - want) <= 1e-15 * max(1.0, want)


def test_source_lipschitz_dual_bound():
    space = FeSpace(generate_structured(UNIT, 8))
    lam = friedrichs_eig(space)   # epsilon = 1, beta = 0
    M = mass_matrix(space)
    phi, L = phi_by_name("one_plus_abs")
    g = lambda x, y: np.ones_like(x)
    rng = np.random.default_rng(2024)
    for _ in range(100):
        u1 = rng.standard_normal(space.n_dofs) * space.free
        u2 = rng.standard_normal(space.n_dofs) * space.free
        ell = assemble_N(space, 1.0, phi, g, u1) \
            - assemble_N(space, 1.0, phi, g, u2)
        lhs = dual_norm_oracle(ell, 1.0, 0.0, space)
        d = u1 - u2
        assert lhs <= lam * math.sqrt(d @ (M @ d)) * (1.0 + 1e-6)


def test_convective_dual_norm_equivalence():
    a_sup = math.sqrt(1.25)
    for n in (4, 8, 16):
        case, traj = _nonlinear_run(1e-2, n)
        rep = estimate_trajectory(traj)
        p = case.problem
        lam = traj.constants.lam
        probe = FeSpace(uniform_refine(traj.spaces[0].mesh, 2))
        P = prolongation_matrix(traj.spaces[0], probe)
        for st in rep.steps:
            k = st.n
            du = P @ (traj.states[k].values - traj.states[k - 1].values)
            t0 = float(traj.times.nodes[k - 1])
            t1 = float(traj.times.nodes[k])
            a_bl = (blend_field(p.a1, t0, t1, 1.0),
                    blend_field(p.a2, t0, t1, 1.0))
            C = assemble_B(probe, 0.0, a_bl, None, dirichlet=False)
            oracle = dual_norm_oracle(C @ du, p.epsilon, p.beta, probe)
            ratio = (st.aux_energy + st.eta_aux) / oracle
            assert 0.05 <= ratio <= 20.0, (n, k, ratio)
            domdiff = lam / math.sqrt(p.epsilon) * a_sup \
                * st.energy_jump
            assert domdiff >= oracle * (1.0 - 1e-8)
            assert st.conv_dual == pytest.approx(
                min(domdiff, st.aux_energy + st.eta_aux), rel=1e-10)


def test_friedrichs_constant_unit_square():
    mesh = uniform_refine(generate_structured(UNIT, 2), 5)
    c_f = friedrichs_eig(FeSpace(mesh))
    target = 1.0 / (math.pi * math.sqrt(2.0))
    assert abs(c_f - target) <= 0.02 * target


def test_smallness_constants_and_factor():
    problem = ProblemData(epsilon=0.04, nu=2.0, T=3.0, beta=0.25,
                          c_b=1.5, lipschitz_L=0.5)
    cc = derived_constants(problem, c_f=0.3, gamma=1.7)
    lam = min(0.3 / math.sqrt(0.04), 1.0 / math.sqrt(0.25))
    assert abs(cc.lam - lam) <= 1e-15 * lam
    kappa = 2.0 * (2.0 * 0.5) * min(3.0, lam * lam) * 1.7
    kappa_tilde = 25.0 * (2.0 + 1.5) * (2.0 * 0.5) * lam * lam * 1.7
    assert abs(cc.kappa - kappa) <= 1e-15 * kappa
    assert abs(cc.kappa_tilde - kappa_tilde) <= 1e-15 * kappa_tilde

    linear = ProblemData(epsilon=1.0, nu=0.0, T=1.0, c_b=2.0)
    lc = derived_constants(linear, c_f=1.0, gamma=0.0)
    factor, regime = error_from_residual_factor(linear, lc)
    assert regime == "kappa_small"
    assert factor == math.sqrt(4.0 + 3.0 * 2.0 ** 2)


CLI_CONFIG = """\
[problem]
epsilon = 1
nu = 0
T = 0.1
u0 = sin(pi*x) * sin(pi*y)
f = sin(pi*x) * sin(pi*y)

[mesh]
n = 4

[time]
steps = 4

[verify]
case = heat
levels = 2
n0 = 4
tau0 = 0.025
"""


def test_csv_outputs_thread_independent(tmp_path):
    from convdiff.cli import main
    cfg = tmp_path / "c.ini"
    cfg.write_text(CLI_CONFIG)
    seen = {}
    for threads in ("1", "4"):
        out = tmp_path / ("t" + threads)
        for cmd in ("run", "estimate", "convergence"):
            assert main([cmd, "--config", str(cfg), "--out", str(out),
                         "--threads", threads]) == 0
        csvs = {}
        for root, _, names in os.walk(out):
            for name in sorted(names):
                if name.endswith(".csv"):
                    rel = os.path.relpath(os.path.join(root, name), out)
                    with open(os.path.join(root, name), "rb") as fh:
                        csvs[rel] = fh.read()
        seen[threads] = csvs
    assert seen["1"].keys() == seen["4"].keys()
    assert len(seen["1"]) > 6
    for rel in seen["1"]:
        assert seen["1"][rel] == seen["4"][rel], rel
