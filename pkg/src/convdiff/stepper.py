"""Theta-scheme time stepping for the non-linear convection-diffusion
equation.

Each step solves, for u_n in the current space V_n,

    (u_n - u_{n-1}, v)/tau + B_blend(U_theta, v) + S(U_theta, v)
        = (nu phi(U_vartheta) g_blend + source_blend, v),

where U_w = w u_n + (1-w) u_{n-1}, B_blend carries the linear data blended
between the two time levels with weight theta, the source non-linearity is
blended with weight vartheta, and S is the configured stabilization.

When the mesh changed between steps, all products against u_{n-1} are
integrated exactly on the common refinement of the two meshes; testing
happens in the current space via prolongation, so the single-mesh case is
recovered identically when the meshes coincide.

For vartheta > 0 the non-linearity couples to u_n and is resolved by a
fixed-point iteration that freezes phi at the current iterate; for
vartheta = 0 (and for the phi-dependent part of the streamline-diffusion
source term) phi is evaluated at the previous time level, so each step is
exactly one linear solve.
"""

import warnings
from dataclasses import dataclass
from typing import List

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import (FeSpace, DofVector, assemble_B, load_vector, mass_matrix,
                  l2_project, prolongation_matrix, apply_dirichlet_matrix,
                  zero_dirichlet, _values_of)
from .mesh import common_refinement, interior_faces, FaceSet
from .problem import ThetaParams, blend_field, derived_constants, \
    friedrichs_bound
from .stabilization import (StabilizationSpec, sd_parameters, assemble_sd,
                            sd_source_vector, assemble_cip)

__all__ = ["TimePartition", "StepDiagnostics", "Trajectory", "SolverFailure",
           "solve_sparse", "step", "run"]

_LU_DOF_LIMIT = 200_000


class SolverFailure(RuntimeError):
    pass


@dataclass
class TimePartition:
    """Strictly increasing time nodes 0 = t_0 < ... < t_N = T."""
    nodes: np.ndarray

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        if self.nodes.ndim != 1 or len(self.nodes) < 2:
            raise ValueError("need at least two time nodes")
        if self.nodes[0] != 0.0:
            raise ValueError("time partition must start at 0")
        if np.any(np.diff(self.nodes) <= 0.0):
            raise ValueError("time nodes must be strictly increasing")
        if not np.isclose(self.taus.sum(), self.nodes[-1], rtol=1e-12):
            raise ValueError("step sizes do not sum to the final time")

    @classmethod
    def uniform(cls, T, n_steps):
        return cls(np.linspace(0.0, float(T), int(n_steps) + 1))

    @property
    def taus(self):
        return np.diff(self.nodes)

    @property
    def n_steps(self):
        return len(self.nodes) - 1


@dataclass
class StepDiagnostics:
    n_solves: int
    picard_iterations: int
    picard_increment: float
    converged: bool
    residual: float
    contraction_warned: bool = False
    same_mesh: bool = True


@dataclass
class Trajectory:
    times: TimePartition
    spaces: List[FeSpace]
    states: List[DofVector]
    diagnostics: List[StepDiagnostics]
    problem: object = None
    params: object = None
    stab: object = None
    constants: object = None


def solve_sparse(A, rhs, kind="lu", tol=1e-12):
    """Solve the sparse system; kind 'lu' (direct, default) or 'bicgstab'
    (ILU preconditioned).  Raises SolverFailure when iteration stalls."""
    return _factorized(A, kind, tol)(rhs)


def _factorized(A, kind, tol):
    A = A.tocsc()
    if kind == "lu":
        if A.shape[0] > _LU_DOF_LIMIT:
            warnings.warn("direct LU beyond %d dofs; consider bicgstab"
                          % _LU_DOF_LIMIT)
        return spla.splu(A).solve
    if kind != "bicgstab":
        raise ValueError("solver kind must be 'lu' or 'bicgstab'")
    ilu = spla.spilu(A, drop_tol=1e-6, fill_factor=20)
    M = spla.LinearOperator(A.shape, ilu.solve)

    def solve(b):
        try:
            x, info = spla.bicgstab(A, b, rtol=tol, atol=0.0, M=M,
                                    maxiter=2000)
        except TypeError:  # older scipy spells the tolerance 'tol'
            x, info = spla.bicgstab(A, b, tol=tol, atol=0.0, M=M,
                                    maxiter=2000)
        if info != 0:
            raise SolverFailure("bicgstab did not converge (info=%d)" % info)
        return x

    return solve


def _overlay_cip_faces(ov_space, to_cur, cur_mesh):
    """Interior faces of the overlay lying on current-mesh faces, paired
    with the current-mesh face length that sets the penalty scale."""
    faces = interior_faces(ov_space.mesh)
    cross = to_cur[faces.tris[:, 0]] != to_cur[faces.tris[:, 1]]
    idx = np.where(cross)[0]
    sub = FaceSet(faces.vertex_pairs[idx], faces.tris[idx],
                  faces.normals[idx], faces.lengths[idx],
                  faces.edge_ids[idx])
    cur_faces = interior_faces(cur_mesh)
    pair_len = {}
    for e in range(len(cur_faces)):
        k1, k2 = cur_faces.tris[e]
        pair_len[(int(k1), int(k2))] = float(cur_faces.lengths[e])
    h = np.empty(len(idx))
    for i in range(len(idx)):
        key = tuple(sorted((int(to_cur[sub.tris[i, 0]]),
                            int(to_cur[sub.tris[i, 1]]))))
        try:
            h[i] = pair_len[key]
        except KeyError:
            raise RuntimeError("overlay face does not lie on a current-mesh"
                               " face") from None
    return sub, h


def step(problem, times, n, u_prev, cur_space, params=None, stab=None,
         constants=None, solver_kind="lu", solver_tol=1e-12,
         picard_tol=1e-11, picard_max_iter=50):
    """Advance from t_{n-1} to t_n; returns (u_n, StepDiagnostics)."""
    params = params or ThetaParams()
    stab = stab or StabilizationSpec()
    t0, t1 = float(times.nodes[n - 1]), float(times.nodes[n])
    tau = t1 - t0
    th, vt = params.theta, params.vartheta

    prev_space = u_prev.space
    same = prev_space is cur_space or (
        prev_space.mesh is cur_space.mesh
        and prev_space.degree == cur_space.degree)
    if same:
        ov_space, P_c = cur_space, None
        to_cur = np.arange(cur_space.mesh.n_triangles)
        u_prev_ov = u_prev.values
    else:
        ov = common_refinement(cur_space.mesh, prev_space.mesh)
        ov_space = FeSpace(ov.mesh, cur_space.degree)
        P_c = prolongation_matrix(cur_space, ov_space)
        P_p = prolongation_matrix(prev_space, ov_space)
        to_cur = ov.to_first
        u_prev_ov = P_p @ u_prev.values

    a_bl = None
    if problem.a1 is not None or problem.a2 is not None:
        a_bl = (blend_field(problem.a1, t0, t1, th),
                blend_field(problem.a2, t0, t1, th))
    b_bl = blend_field(problem.b, t0, t1, th)
    g_bl = blend_field(problem.g, t0, t1, vt)
    f_bl = blend_field(problem.source, t0, t1, th)

    M_ov = mass_matrix(ov_space)
    B_ov = assemble_B(ov_space, problem.epsilon, a_bl, b_bl, dirichlet=False)
    delta_ov = None
    if stab.kind == "sd" and a_bl is not None:
        delta_ov = sd_parameters(cur_space, a_bl, stab.c_s)[to_cur]
        S_ov = assemble_sd(ov_space, delta_ov, problem.epsilon, a_bl, b_bl)
    elif stab.kind == "cip" and a_bl is not None:
        if same:
            S_ov = assemble_cip(ov_space, interior_faces(cur_space.mesh),
                                a_bl, stab.c_s)
        else:
            sub, h = _overlay_cip_faces(ov_space, to_cur, cur_space.mesh)
            S_ov = assemble_cip(ov_space, sub, a_bl, stab.c_s, h_override=h)
    else:
        S_ov = sp.csr_matrix((ov_space.n_dofs, ov_space.n_dofs))

    BS = (B_ov + S_ov).tocsr()
    A_ov = M_ov / tau + th * BS
    A_cur = A_ov if same else (P_c.T @ A_ov @ P_c).tocsr()
    A_dir = apply_dirichlet_matrix(A_cur, cur_space)
    solve = _factorized(A_dir, solver_kind, solver_tol)

    rhs_base = M_ov @ u_prev_ov / tau - (1.0 - th) * (BS @ u_prev_ov)
    if f_bl is not None:
        rhs_base = rhs_base + load_vector(ov_space, f_bl)

    geo = ov_space.geometry()
    Xq, Yq = geo["qpoints"][:, :, 0], geo["qpoints"][:, :, 1]
    g_q = None
    if problem.nu != 0.0 and g_bl is not None:
        g_q = _values_of(g_bl, Xq, Yq)
    f_q = _values_of(f_bl, Xq, Yq) if f_bl is not None else None

    def rhs_for(u_vt_ov):
        """Right-hand side with phi frozen at the given vartheta blend."""
        r = rhs_base
        rho_q = None
        if g_q is not None:
            uq = np.einsum("ei,qi->eq", u_vt_ov[ov_space.dof_map],
                           ov_space.basis)
            rho_q = problem.nu * problem.phi(uq) * g_q
            fe = np.einsum("eq,qi->ei", geo["wdet"] * rho_q, ov_space.basis)
            r = r + np.bincount(ov_space.dof_map.ravel(),
                                weights=fe.ravel(),
                                minlength=ov_space.n_dofs)
        if delta_ov is not None:
            dens = 0.0
            if rho_q is not None:
                dens = dens + rho_q
            if f_q is not None:
                dens = dens + f_q
            if np.ndim(dens) > 0:
                r = r + sd_source_vector(ov_space, delta_ov, a_bl, dens)
        return r

    def restrict(r_ov):
        r = r_ov if same else P_c.T @ r_ov
        return zero_dirichlet(np.asarray(r, dtype=float), cur_space)

    contraction_warned = False
    if constants is not None and vt > 0.0 and problem.nu > 0.0:
        contr = (vt * tau * problem.nu * problem.lipschitz_L
                 * constants.gamma * constants.lam)
        if contr > 0.5:
            warnings.warn("source fixed-point contraction estimate %.3g "
                          "exceeds 0.5; reduce the step size" % contr)
            contraction_warned = True

    def m_ov_norm(v):
        return float(np.sqrt(max(v @ (M_ov @ v), 0.0)))

    nonlinear = vt > 0.0 and g_q is not None
    if not nonlinear:
        rhs = restrict(rhs_for(u_prev_ov))
        x = solve(rhs)
        x[cur_space.dirichlet] = 0.0
        n_solves, iters, inc, conv = 1, 0, 0.0, True
        final_rhs = rhs
    else:
        guess = u_prev_ov.copy()
        inc, conv, x = np.inf, False, None
        for iters in range(1, picard_max_iter + 1):
            rhs = restrict(rhs_for(vt * guess + (1.0 - vt) * u_prev_ov))
            x = solve(rhs)
            x[cur_space.dirichlet] = 0.0
            x_ov = x if same else P_c @ x
            inc = m_ov_norm(x_ov - guess) / max(m_ov_norm(x_ov), 1e-300)
            guess = x_ov
            if inc <= picard_tol:
                conv = True
                break
        n_solves = iters
        if not conv:
            warnings.warn("fixed-point iteration stopped after %d sweeps "
                          "with relative increment %.2e" % (iters, inc))
        final_rhs = restrict(rhs_for(vt * guess + (1.0 - vt) * u_prev_ov))

    res = float(np.linalg.norm(A_dir @ x - final_rhs))
    scale = max(float(np.linalg.norm(final_rhs)),
                float(np.linalg.norm(A_dir @ x)), 1e-300)
    diag = StepDiagnostics(n_solves=n_solves, picard_iterations=iters,
                           picard_increment=float(inc), converged=conv,
                           residual=res / scale,
                           contraction_warned=contraction_warned,
                           same_mesh=same)
    return DofVector(cur_space, x), diag


def run(problem, mesh0, times, params=None, stab=None, policy=None,
        degree=1, constants=None, solver_kind="lu", solver_tol=1e-12,
        picard_tol=1e-11, picard_max_iter=50):
    """March over the partition; an adaptivity policy adjusts the mesh (and
    optionally the step size) between steps.  Returns a Trajectory."""
    params = params or ThetaParams()
    stab = stab or StabilizationSpec()
    if constants is None:
        constants = derived_constants(problem, friedrichs_bound(mesh0),
                                      mesh0, times)
    space = FeSpace(mesh0, degree)
    u = l2_project(problem.u0 if problem.u0 is not None else 0.0, space)
    spaces, states, diags = [space], [u], []

    adapt = policy is not None and getattr(policy, "enabled", True)
    adapt_time = adapt and getattr(policy, "adapt_time", False)
    if adapt:
        from . import adaptivity, estimator
    T = float(times.nodes[-1])
    nodes = [0.0, min(float(times.nodes[1]), T)] if adapt_time \
        else list(times.nodes)

    n = 1
    while n < len(nodes):
        part = TimePartition(np.asarray(nodes))
        u_new, d = step(problem, part, n, u, space, params, stab, constants,
                        solver_kind, solver_tol, picard_tol, picard_max_iter)
        spaces.append(space)
        states.append(u_new)
        diags.append(d)

        at_end = nodes[n] >= T - 1e-14
        if adapt and not at_end:
            ind = estimator.estimate_step(problem, constants, params, stab,
                                          u, u_new, nodes[n - 1], nodes[n])
            to_refine = adaptivity.mark_doerfler(ind.eta_elements,
                                                 policy.refine_fraction)
            to_coarsen = np.setdiff1d(
                adaptivity.mark_coarsen(ind.eta_elements,
                                        policy.coarsen_fraction),
                to_refine)
            report = adaptivity.adapt_space(space.mesh, to_refine,
                                            to_coarsen)
            if report.mesh is not space.mesh:
                space = FeSpace(report.mesh, degree)
            if adapt_time:
                tau_next = adaptivity.control_timestep(ind, policy)
                nodes.append(min(nodes[n] + tau_next, T))
        u = u_new
        n += 1

    return Trajectory(TimePartition(np.asarray(nodes)), spaces, states,
                      diags, problem=problem, params=params, stab=stab,
                      constants=constants)
