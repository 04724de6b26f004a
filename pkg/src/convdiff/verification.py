"""Independent oracles and manufactured-solution studies.

The manufactured cases build their data symbolically, folding the exact
forcing into the multiplicative source slot (g = F / (nu phi(u)) with
phi(s) = 1 + |s| and a non-negative exact solution) or, for the linear
heat case, into the additive source.  Errors are measured against the
nodally interpolated exact solution on a reference space at least two
uniform refinements beyond every trajectory mesh, with dual norms
evaluated by discrete Riesz problems on that space.
"""

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.sparse.linalg as spla
import sympy

from .estimator import _StepFrame
from .fem import (FeSpace, DofVector, assemble_B, assemble_N, mass_matrix,
                  stiffness_matrix, load_vector, prolongation_matrix,
                  _values_of)
from .mesh import common_refinement, uniform_refine
from .problem import ProblemData, ThetaParams, blend_field, phi_by_name
from .quadrature import edge_rule

__all__ = ["ManufacturedCase", "ErrorReport", "manufactured_case",
           "case_residual", "dual_norm_oracle", "riesz_representer",
           "friedrichs_eig", "fine_space_for", "true_errors",
           "effectivity", "residual_decomposition_check",
           "residual_dual_norms", "convergence_study", "STUDY_COLUMNS"]

STUDY_COLUMNS = ["level", "h_max", "tau", "err_supL2", "err_energy",
                 "err_dual", "err_X", "estimator", "effectivity",
                 "rate_energy", "rate_X"]


@dataclass
class ManufacturedCase:
    """Closed-form exact solution with matching problem data."""
    name: str
    problem: ProblemData
    exact: Callable
    exact_t: Callable
    exact_gx: Callable
    exact_gy: Callable
    exact_lap: Callable
    description: str = ""


@dataclass
class ErrorReport:
    sup_l2: float
    energy: float
    dual: float
    x_norm: float
    per_step: List[dict] = field(default_factory=list)
    effectivity: Optional[float] = None

    def components_sq(self):
        return self.sup_l2 ** 2 + self.energy ** 2 + self.dual ** 2


_case_cache = {}


def manufactured_case(name, epsilon=None, T=1.0):
    """Registry of exact-solution test problems on the unit square.

    heat       pure diffusion, additive forcing, nu = 0
    nonlinear  convection-reaction-diffusion with the forcing folded
               into the multiplicative source, nu = 1
    """
    key = (name, epsilon, T)
    if key in _case_cache:
        return _case_cache[key]
    x, y, t = sympy.symbols("x y t")
    u = sympy.sin(sympy.pi * x) * sympy.sin(sympy.pi * y) * sympy.exp(-t)
    ut = sympy.diff(u, t)
    lap = sympy.diff(u, x, 2) + sympy.diff(u, y, 2)

    def lam3(expr):
        f = sympy.lambdify((x, y, t), expr, "numpy")
        return lambda X, Y, T_: f(X, Y, T_)

    def lam2(expr):
        f = sympy.lambdify((x, y), expr, "numpy")
        return lambda X, Y: f(X, Y)

    if name == "heat":
        eps = 1.0 if epsilon is None else float(epsilon)
        F = ut - eps * lap
        problem = ProblemData(
            epsilon=eps, nu=0.0, T=T, beta=0.0, c_b=1.0,
            u0=lam2(u.subs(t, 0)), source=lam3(F))
        desc = "pure diffusion with additive forcing"
    elif name == "nonlinear":
        eps = 1e-2 if epsilon is None else float(epsilon)
        a1, a2, b = sympy.Float(1.0), sympy.Float(0.5), sympy.Float(1.0)
        F = ut - eps * lap + a1 * sympy.diff(u, x) \
            + a2 * sympy.diff(u, y) + b * u
        phi, L = phi_by_name("one_plus_abs")
        # u >= 0 on the unit square, so phi(u) = 1 + u stays positive
        g = F / (1 + u)
        problem = ProblemData(
            epsilon=eps, nu=1.0, T=T, beta=0.75, c_b=4.0 / 3.0,
            lipschitz_L=L, phi=phi, phi_name="one_plus_abs",
            a1=lam3(a1 + 0 * x), a2=lam3(a2 + 0 * x),
            b=lam3(b + 0 * x), g=lam3(g),
            u0=lam2(u.subs(t, 0)),
            div_a=lam3(0 * x))
        desc = "convection-reaction with multiplicative forcing"
    else:
        raise ValueError("unknown manufactured case %r" % name)
    case = ManufacturedCase(
        name=name, problem=problem, exact=lam3(u), exact_t=lam3(ut),
        exact_gx=lam3(sympy.diff(u, x)), exact_gy=lam3(sympy.diff(u, y)),
        exact_lap=lam3(lap), description=desc)
    _case_cache[key] = case
    return case


def case_residual(case, n_points=200, seed=0):
    """Largest pointwise defect of the exact solution in the strong
    equation, at random interior points and times."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.05, 0.95, n_points)
    Y = rng.uniform(0.05, 0.95, n_points)
    Tm = rng.uniform(0.0, case.problem.T, n_points)
    p = case.problem
    U = case.exact(X, Y, Tm)
    res = case.exact_t(X, Y, Tm) - p.epsilon * case.exact_lap(X, Y, Tm)
    if p.a1 is not None or p.a2 is not None:
        res += _values_of3(p.a1, X, Y, Tm) * case.exact_gx(X, Y, Tm)
        res += _values_of3(p.a2, X, Y, Tm) * case.exact_gy(X, Y, Tm)
    if p.b is not None:
        res += _values_of3(p.b, X, Y, Tm) * U
    rhs = np.zeros_like(X)
    if p.nu != 0.0 and p.g is not None:
        rhs = rhs + p.nu * p.phi(U) * _values_of3(p.g, X, Y, Tm)
    if p.source is not None:
        rhs = rhs + _values_of3(p.source, X, Y, Tm)
    return float(np.abs(rhs - res).max())


def _values_of3(f, X, Y, T_):
    if f is None:
        return np.zeros_like(X)
    v = f(X, Y, T_)
    return np.broadcast_to(np.asarray(v, dtype=float), X.shape)


_riesz_cache = {}
_solve_lock = threading.Lock()


def _riesz_solver(space, eps, beta):
    key = (id(space), float(eps), float(beta))
    entry = _riesz_cache.get(key)
    if entry is None or entry[0] is not space:
        if eps == 0.0 and beta == 0.0:
            raise ValueError("energy norm is degenerate for "
                             "eps = beta = 0")
        A = eps * stiffness_matrix(space) + beta * mass_matrix(space)
        free = np.where(space.free)[0]
        lu = spla.splu(A[free][:, free].tocsc())
        entry = (space, free, lu)
        _riesz_cache[key] = entry
    return entry


def riesz_representer(ell, eps, beta, space):
    """Discrete Riesz lift of the dof functional in the energy inner
    product; zero on the boundary."""
    _, free, lu = _riesz_solver(space, eps, beta)
    w = np.zeros(space.n_dofs)
    with _solve_lock:
        w[free] = lu.solve(np.asarray(ell, dtype=float)[free])
    return w


def dual_norm_oracle(ell, eps, beta, space):
    """Discrete dual norm sup <ell, v> / ||v||_E over the space, via the
    Riesz problem; a lower approximation of the continuous dual norm."""
    w = riesz_representer(ell, eps, beta, space)
    return math.sqrt(max(float(np.asarray(ell) @ w), 0.0))


def friedrichs_eig(space, tol=1e-12, maxiter=500):
    """Discrete Friedrichs constant: sqrt of the largest mu with
    M v = mu K v on the constrained space, by power iteration on
    K^{-1} M."""
    K, M = stiffness_matrix(space), mass_matrix(space)
    free = np.where(space.free)[0]
    Kf = K[free][:, free].tocsc()
    Mf = M[free][:, free].tocsr()
    lu = spla.splu(Kf)
    rng = np.random.default_rng(1234)
    v = rng.standard_normal(len(free))
    mu = 0.0
    for _ in range(maxiter):
        w = lu.solve(Mf @ v)
        nrm = math.sqrt(float(w @ (Kf @ w)))
        v_new = w / nrm
        mu_new = float(v_new @ (Mf @ v_new))
        if abs(mu_new - mu) <= tol * max(mu_new, 1e-30):
            return math.sqrt(mu_new)
        v, mu = v_new, mu_new
    raise RuntimeError("power iteration did not converge in %d steps"
                       % maxiter)


def fine_space_for(traj, extra=2, degree=None):
    """Reference space: common refinement of every trajectory mesh, then
    `extra` uniform refinements."""
    mesh = traj.spaces[0].mesh
    for spc in traj.spaces[1:]:
        if spc.mesh is not mesh:
            mesh = common_refinement(mesh, spc.mesh).mesh
    mesh = uniform_refine(mesh, extra)
    return FeSpace(mesh, degree or traj.spaces[0].degree)


def _time_callable(f, t):
    return None if f is None else (lambda X, Y, _t=t: f(X, Y, _t))


def _residual_vectors(problem, params, space, up, uc, t0, t1, t,
                      M, B_th):
    """Dof functionals of the full residual of the linear interpolant at
    time t and of its four-way split (linear temporal, non-linear
    temporal, spatial, data)."""
    tau = t1 - t0
    w = (t - t0) / tau
    uI = w * uc + (1.0 - w) * up
    td = (uc - up) / tau
    th, vt = params.theta, params.vartheta
    p = problem
    U_th = th * uc + (1.0 - th) * up
    U_vt = vt * uc + (1.0 - vt) * up

    has_a = p.a1 is not None or p.a2 is not None
    a_t = (_time_callable(p.a1, t), _time_callable(p.a2, t)) \
        if has_a else None
    b_t = _time_callable(p.b, t)
    B_t = assemble_B(space, p.epsilon, a_t, b_t, dirichlet=False) \
        if (has_a or p.b is not None) else None
    if B_t is None:
        B_t = p.epsilon * stiffness_matrix(space)

    g_t = _time_callable(p.g, t)
    g_vt = blend_field(p.g, t0, t1, vt)
    f_t = _time_callable(p.source, t)
    f_th = blend_field(p.source, t0, t1, th)

    def Nfun(coeffs, g2):
        if p.nu == 0.0 or g2 is None:
            return np.zeros(space.n_dofs)
        return assemble_N(space, p.nu, p.phi, g2, coeffs)

    def Ffun(f2):
        if f2 is None:
            return np.zeros(space.n_dofs)
        return load_vector(space, f2)

    Mtd = M @ td
    total = Nfun(uI, g_t) + Ffun(f_t) - Mtd - B_t @ uI
    tau_lin = B_th @ (U_th - uI)
    tau_nonlin = Nfun(uI, g_vt) - Nfun(U_vt, g_vt)
    spatial = Nfun(U_vt, g_vt) + Ffun(f_th) - Mtd - B_th @ U_th
    data = Nfun(uI, g_t) - Nfun(uI, g_vt) + Ffun(f_t) - Ffun(f_th) \
        - B_t @ uI + B_th @ uI
    return {"total": total, "tau_lin": tau_lin, "tau_nonlin": tau_nonlin,
            "spatial": spatial, "data": data}


def _blended_matrix(problem, params, space, t0, t1):
    p = problem
    th = params.theta
    has_a = p.a1 is not None or p.a2 is not None
    a_bl = (blend_field(p.a1, t0, t1, th),
            blend_field(p.a2, t0, t1, th)) if has_a else None
    b_bl = blend_field(p.b, t0, t1, th)
    if a_bl is None and b_bl is None:
        return p.epsilon * stiffness_matrix(space)
    return assemble_B(space, p.epsilon, a_bl, b_bl, dirichlet=False)


def residual_decomposition_check(traj, n, samples=50, seed=0):
    """Largest defect of <R, v> minus the sum of its four parts over
    random discrete test functions and times inside step n, relative to
    the largest term; also covers the split of the temporal part."""
    frame = _StepFrame(traj.states[n - 1], traj.states[n])
    space = frame.ov_space
    t0 = float(traj.times.nodes[n - 1])
    t1 = float(traj.times.nodes[n])
    M = mass_matrix(space)
    B_th = _blended_matrix(traj.problem, traj.params, space, t0, t1)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        t = rng.uniform(t0, t1)
        v = rng.standard_normal(space.n_dofs) * space.free
        parts = _residual_vectors(traj.problem, traj.params, space,
                                  frame.u_prev, frame.u_cur, t0, t1, t,
                                  M, B_th)
        vals = {k: float(v @ p) for k, p in parts.items()}
        scale = max(abs(x) for x in vals.values())
        scale = max(scale, 1e-30)
        split_sum = vals["tau_lin"] + vals["tau_nonlin"] \
            + vals["spatial"] + vals["data"]
        worst = max(worst, abs(vals["total"] - split_sum) / scale)
        # the temporal part regrouped from the other side of the identity
        tau_regrouped = vals["total"] - vals["spatial"] - vals["data"]
        worst = max(worst, abs(tau_regrouped - vals["tau_lin"]
                               - vals["tau_nonlin"]) / scale)
    return worst


def _transfer_coeffs(u, fine_space, cache):
    key = id(u.space)
    P = cache.get(key)
    if P is None:
        P = prolongation_matrix(u.space, fine_space)
        cache[key] = P
    return P @ u.values


def residual_dual_norms(traj, n, fine_space, n_time=3):
    """Oracle L2(I_n) norm of the dual norm of the full residual, and of
    the non-linear temporal part, by Gauss quadrature in time."""
    t0 = float(traj.times.nodes[n - 1])
    t1 = float(traj.times.nodes[n])
    tau = t1 - t0
    cache = getattr(traj, "_prolong_cache", None)
    if cache is None:
        cache = {}
        traj._prolong_cache = cache
    up = _transfer_coeffs(traj.states[n - 1], fine_space, cache)
    uc = _transfer_coeffs(traj.states[n], fine_space, cache)
    M = mass_matrix(fine_space)
    B_th = _blended_matrix(traj.problem, traj.params, fine_space, t0, t1)
    rule = edge_rule(n_time)
    p, beta, eps = traj.problem, traj.problem.beta, traj.problem.epsilon
    tot_sq = nl_sq = 0.0
    for s, wq in zip(rule.points[:, 0], rule.weights):
        t = t0 + s * tau
        parts = _residual_vectors(p, traj.params, fine_space, up, uc,
                                  t0, t1, t, M, B_th)
        d = dual_norm_oracle(parts["total"], eps, beta, fine_space)
        dn = dual_norm_oracle(parts["tau_nonlin"], eps, beta, fine_space)
        tot_sq += tau * wq * d * d
        nl_sq += tau * wq * dn * dn
    return math.sqrt(tot_sq), math.sqrt(nl_sq)


def _exact_on(space, case, t, what="u"):
    pts = space.dof_points
    f = {"u": case.exact, "ut": case.exact_t}[what]
    return np.asarray(f(pts[:, 0], pts[:, 1], t), dtype=float)


def true_errors(traj, case, fine_space=None, threads=1):
    """X-norm distance between the exact solution and the trajectory's
    piecewise linear interpolant, on a reference space."""
    fine = fine_space or fine_space_for(traj)
    p = traj.problem
    eps, beta = p.epsilon, p.beta
    M = mass_matrix(fine)
    K = stiffness_matrix(fine)
    E = eps * K + beta * M
    _riesz_solver(fine, eps, beta)  # factorize once up front
    fine.phys_grads()               # warm caches before any threading
    cache = {}
    nodes = traj.times.nodes
    fine_states = [_transfer_coeffs(u, fine, cache) for u in traj.states]
    rule = edge_rule(3)
    has_a = p.a1 is not None or p.a2 is not None

    def step_work(n):
        t0, t1 = float(nodes[n - 1]), float(nodes[n])
        tau = t1 - t0
        up, uc = fine_states[n - 1], fine_states[n]
        sup_sq = 0.0
        for w in (0.0, 0.25, 0.5, 0.75, 1.0):
            t = t0 + w * tau
            e = _exact_on(fine, case, t) - (w * uc + (1.0 - w) * up)
            sup_sq = max(sup_sq, float(e @ (M @ e)))
        energy = dual = 0.0
        ells = []
        for s, wq in zip(rule.points[:, 0], rule.weights):
            t = t0 + s * tau
            e = _exact_on(fine, case, t) - (s * uc + (1.0 - s) * up)
            energy += tau * wq * float(e @ (E @ e))
            td = _exact_on(fine, case, t, "ut") - (uc - up) / tau
            ell = M @ td
            if has_a:
                a_t = (_time_callable(p.a1, t), _time_callable(p.a2, t))
                C = assemble_B(fine, 0.0, a_t, None, dirichlet=False)
                ell = ell + C @ e
            ells.append((tau * wq, ell))
        return sup_sq, energy, ells

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            worked = list(ex.map(step_work, range(1, len(nodes))))
    else:
        worked = [step_work(n) for n in range(1, len(nodes))]

    sup_sq_all = 0.0
    energy_int = 0.0
    dual_int = 0.0
    per_step = []
    for n, (sup_sq, energy, ells) in enumerate(worked, start=1):
        dual_step = 0.0
        for wq, ell in ells:
            d = dual_norm_oracle(ell, eps, beta, fine)
            dual_step += wq * d * d
        sup_sq_all = max(sup_sq_all, sup_sq)
        energy_int += energy
        dual_int += dual_step
        per_step.append({"n": n, "t": float(nodes[n]),
                         "sup_l2": math.sqrt(sup_sq),
                         "energy_sq": energy, "dual_sq": dual_step})
    x = math.sqrt(sup_sq_all + energy_int + dual_int)
    return ErrorReport(sup_l2=math.sqrt(sup_sq_all),
                       energy=math.sqrt(energy_int),
                       dual=math.sqrt(dual_int), x_norm=x,
                       per_step=per_step)


def effectivity(report, errors):
    """Estimator total over true X-norm error, generic constants taken
    as one."""
    est = report.totals["estimate"]
    err = errors.x_norm
    if err == 0.0:
        return 1.0 if est == 0.0 else math.inf
    return est / err


def convergence_study(case, levels, n0=4, theta=1.0, tau0=0.1,
                      tau_power=2, stab=None, degree=1, threads=1,
                      extra_refine=2):
    """Runs the case on uniformly refined meshes with tau scaled as
    h^tau_power, reporting errors, estimates and log2 rates."""
    from .mesh import generate_structured
    from .stepper import TimePartition, run
    from .estimator import estimate_trajectory

    rows = []
    prev = None
    for lvl in range(levels):
        n = n0 * 2 ** lvl
        tau = tau0 / 2 ** (tau_power * lvl)
        n_steps = max(1, int(round(case.problem.T / tau)))
        mesh = generate_structured((0.0, 0.0, 1.0, 1.0), n)
        times = TimePartition.uniform(case.problem.T, n_steps)
        traj = run(case.problem, mesh, times,
                   params=ThetaParams(theta, 0.0), stab=stab,
                   degree=degree)
        rep = estimate_trajectory(traj)
        errs = true_errors(traj, case, threads=threads,
                           fine_space=fine_space_for(
                               traj, extra=extra_refine, degree=degree))
        eff = effectivity(rep, errs)
        row = {"level": lvl, "h_max": float(mesh.diameters().max()),
               "tau": case.problem.T / n_steps,
               "err_supL2": errs.sup_l2, "err_energy": errs.energy,
               "err_dual": errs.dual, "err_X": errs.x_norm,
               "estimator": rep.totals["estimate"], "effectivity": eff,
               "rate_energy": float("nan"), "rate_X": float("nan")}
        if prev is not None:
            row["rate_energy"] = math.log2(prev["err_energy"]
                                           / max(row["err_energy"],
                                                 1e-300))
            row["rate_X"] = math.log2(prev["err_X"]
                                      / max(row["err_X"], 1e-300))
        rows.append(row)
        prev = row
    return rows
