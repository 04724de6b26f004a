"""A posteriori error indicators for the theta-scheme trajectory.

Per step the module computes, on the common refinement of the two meshes
involved:

* the spatial indicator eta (weighted element residuals plus diffusive
  flux jumps) with its data-oscillation companion theta_data and the
  extra CIP consistency term theta_cip,
* the energy norm of the state increment and a computable surrogate for
  the dual norm of the convective derivative (closed form for dominant
  diffusion, auxiliary reaction-diffusion problem for dominant
  convection),
* the linear and non-linear temporal indicators,
* the data-residual bound with exact time integration of the piecewise
  linear interpolant's energy norm.

All weights min{eps^(-1/2) diam, beta^(-1/2)} are parameter-explicit;
generic constants of the underlying estimates are not folded in, so the
reported numbers are raw indicator values.  The report assembles the
upper-bound radicand and the per-step lower bounds, dropping the
auxiliary-problem block when eps >= 1, and records the explicitly
computable regime factors.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse.linalg as spla

from .fem import (FeSpace, DofVector, basis_values, basis_grads,
                  mass_matrix, stiffness_matrix, load_vector,
                  prolongation_matrix, element_laplacians, evaluate_grad,
                  _values_of)
from .mesh import common_refinement, interior_faces
from .problem import blend_field
from .quadrature import edge_rule

__all__ = ["mdiam", "StepIndicators", "DataComponents", "EstimatorReport",
           "estimate_step", "estimate_trajectory", "spatial_indicator",
           "convective_dual_estimate", "temporal_nonlinear_bound",
           "data_residual_bound", "CSV_COLUMNS"]

_FD_H = 1e-6

CSV_COLUMNS = ["n", "t_n", "tau_n", "eta", "theta_data", "theta_cip",
               "energy_jump", "conv_dual", "conv_branch", "eta_aux",
               "theta_aux", "aux_energy", "temporal_linear",
               "temporal_nonlinear", "data_residual"]


def mdiam(diameter, eps, beta):
    """Weight min{eps^(-1/2) diameter, beta^(-1/2)}; the reaction branch
    is dropped for beta = 0.  Accepts arrays."""
    d = np.asarray(diameter, dtype=float) / math.sqrt(eps)
    if beta > 0.0:
        d = np.minimum(d, 1.0 / math.sqrt(beta))
    return d if d.ndim else float(d)


@dataclass
class DataComponents:
    """Pieces of the data-residual bound for one step."""
    g_l2: float = 0.0          # ||g - g_blend|| in L2(time; L2)
    g_linf: float = 0.0        # ... in Linf(time; Linf)
    a_linf: float = 0.0
    b_linf: float = 0.0
    f_l2: float = 0.0
    f_linf: float = 0.0
    u_energy_int: float = 0.0  # int over the step of ||u_interp||_E^2
    simpson_bound: float = 0.0


@dataclass
class StepIndicators:
    eta: float
    eta_elements: np.ndarray
    theta_data: float
    theta_cip: float
    energy_jump: float
    conv_dual: float
    conv_branch: str
    eta_aux: float
    theta_aux: float
    aux_energy: float
    temporal_linear: float
    temporal_nonlinear: float
    temporal_nonlinear_energy: float
    data_residual: float
    data: DataComponents
    tau: float
    t: float = 0.0
    n: int = 0

    def csv_values(self):
        return [self.n, self.t, self.tau, self.eta, self.theta_data,
                self.theta_cip, self.energy_jump, self.conv_dual,
                self.conv_branch, self.eta_aux, self.theta_aux,
                self.aux_energy, self.temporal_linear,
                self.temporal_nonlinear, self.data_residual]

    def as_dict(self):
        d = {}
        for k in ("n", "t", "tau", "eta", "theta_data", "theta_cip",
                  "energy_jump", "conv_dual", "conv_branch", "eta_aux",
                  "theta_aux", "aux_energy", "temporal_linear",
                  "temporal_nonlinear", "temporal_nonlinear_energy",
                  "data_residual"):
            v = getattr(self, k)
            d[k] = v if isinstance(v, str) else (
                int(v) if k == "n" else float(v))
        d["data"] = {k: float(getattr(self.data, k))
                     for k in ("g_l2", "g_linf", "a_linf", "b_linf",
                               "f_l2", "f_linf", "u_energy_int",
                               "simpson_bound")}
        return d


class _StepFrame:
    """Both states expressed on the common refinement, with the maps back
    to the current mesh."""

    def __init__(self, u_prev, u_cur):
        cur_space, prev_space = u_cur.space, u_prev.space
        same = prev_space is cur_space or (
            prev_space.mesh is cur_space.mesh
            and prev_space.degree == cur_space.degree)
        if same:
            self.ov_space = cur_space
            self.parent = np.arange(cur_space.mesh.n_triangles)
            self.u_cur = u_cur.values
            self.u_prev = u_prev.values
        else:
            ov = common_refinement(cur_space.mesh, prev_space.mesh)
            self.ov_space = FeSpace(ov.mesh, cur_space.degree)
            self.parent = ov.to_first
            self.u_cur = prolongation_matrix(cur_space, self.ov_space) \
                @ u_cur.values
            self.u_prev = prolongation_matrix(prev_space, self.ov_space) \
                @ u_prev.values
        self.cur_space = cur_space
        self.cur_mesh = cur_space.mesh

    def blend(self, w):
        return w * self.u_cur + (1.0 - w) * self.u_prev

    @property
    def delta(self):
        return self.u_cur - self.u_prev


def _quad_values(space, coeffs):
    return np.einsum("ei,qi->eq", coeffs[space.dof_map], space.basis)


def _quad_grads(space, coeffs):
    return np.einsum("ei,eqik->eqk", coeffs[space.dof_map],
                     space.phys_grads())


def _energy_sq(space, coeffs, eps, beta):
    K, M = stiffness_matrix(space), mass_matrix(space)
    return max(eps * (coeffs @ (K @ coeffs))
               + beta * (coeffs @ (M @ coeffs)), 0.0)


def _host_elements(frame):
    """For each current-mesh element, an overlay sub-element containing
    its barycenter, plus that barycenter's reference coordinates."""
    ov_space, parent = frame.ov_space, frame.parent
    geo = ov_space.geometry()
    mesh = ov_space.mesh
    bc = frame.cur_mesh.barycenters()[parent]          # (nov, 2)
    v0 = mesh.vertices[mesh.triangles[:, 0]]
    lam = np.einsum("eij,ej->ei", geo["invB"], bc - v0)
    inside = (lam[:, 0] >= -1e-12) & (lam[:, 1] >= -1e-12) \
        & (lam.sum(axis=1) <= 1.0 + 1e-12)
    host = np.full(frame.cur_mesh.n_triangles, -1, dtype=np.int64)
    es = np.where(inside)[0]
    host[parent[es[::-1]]] = es[::-1]
    if np.any(host < 0):
        raise RuntimeError("failed to locate a parent barycenter in the "
                           "common refinement")
    return host, lam[host]


def _face_normal_jumps(space, faces, coeffs):
    """Jumps of the normal derivative of the discrete function across the
    given faces at 2-point Gauss nodes; returns (jumps (nf, nq), weights
    (nf, nq) = w * length)."""
    rule = edge_rule(2)
    s, w = rule.points[:, 0], rule.weights
    mesh = space.mesh
    p0 = mesh.vertices[faces.vertex_pairs[:, 0]]
    p1 = mesh.vertices[faces.vertex_pairs[:, 1]]
    qpts = p0[:, None, :] + s[None, :, None] * (p1 - p0)[:, None, :]
    geo = space.geometry()
    nd = space.dof_map.shape[1]
    nf = len(faces)
    jump = np.zeros((nf, len(s)))
    for side, sign in ((0, 1.0), (1, -1.0)):
        elems = faces.tris[:, side]
        V0 = mesh.vertices[mesh.triangles[elems][:, 0]]
        invB = geo["invB"][elems]
        lam = np.einsum("fij,fqj->fqi", invB, qpts - V0[:, None, :])
        G = basis_grads(space.degree, lam.reshape(-1, 2))
        G = G.reshape(nf, len(s), nd, 2)
        gphys = np.einsum("fqid,fdk->fqik", G, invB)
        gu = np.einsum("fi,fqik->fqk", coeffs[space.dof_map[elems]], gphys)
        jump += sign * np.einsum("fqk,fk->fq", gu, faces.normals)
    weights = faces.lengths[:, None] * w[None, :]
    return jump, weights


def _grad_jacobian_linf(a_bl, X, Y):
    """Max absolute entry of the convection field's Jacobian at the given
    points, by central differences."""
    h = _FD_H
    out = np.zeros_like(X)
    for comp in (a_bl[0], a_bl[1]):
        dx = (_values_of(comp, X + h, Y) - _values_of(comp, X - h, Y)) \
            / (2 * h)
        dy = (_values_of(comp, X, Y + h) - _values_of(comp, X, Y - h)) \
            / (2 * h)
        out = np.maximum(out, np.maximum(np.abs(dx), np.abs(dy)))
    return out


def spatial_indicator(problem, params, frame, t_prev, t_cur):
    """Returns (eta, theta_data, theta_cip, per-current-element eta^2)."""
    th = params.theta
    tau = t_cur - t_prev
    eps, beta, nu = problem.epsilon, problem.beta, problem.nu
    ov_space, parent = frame.ov_space, frame.parent
    geo = ov_space.geometry()
    Xq, Yq = geo["qpoints"][:, :, 0], geo["qpoints"][:, :, 1]
    wdet = geo["wdet"]

    a_bl = None
    if problem.a1 is not None or problem.a2 is not None:
        a_bl = (blend_field(problem.a1, t_prev, t_cur, th),
                blend_field(problem.a2, t_prev, t_cur, th))
    b_bl = blend_field(problem.b, t_prev, t_cur, th)
    g_bl = blend_field(problem.g, t_prev, t_cur, th)
    f_bl = blend_field(problem.source, t_prev, t_cur, th)

    U = frame.blend(th)
    U_q = _quad_values(ov_space, U)
    gU_q = _quad_grads(ov_space, U)
    du_q = _quad_values(ov_space, frame.delta)
    lapU = element_laplacians(DofVector(ov_space, U))

    # piecewise-constant data on the current mesh (barycenter values)
    host, host_ref = _host_elements(frame)
    bc = frame.cur_mesh.barycenters()
    bx, by = bc[:, 0], bc[:, 1]
    Nb = basis_values(ov_space.degree, host_ref)
    U_bc = np.einsum("ci,ci->c", U[ov_space.dof_map[host]], Nb)
    g_T = _values_of(g_bl, bx, by)
    b_T = _values_of(b_bl, bx, by)
    f_T = _values_of(f_bl, bx, by)
    if a_bl is not None:
        a1_T = _values_of(a_bl[0], bx, by)
        a2_T = _values_of(a_bl[1], bx, by)
    else:
        a1_T = a2_T = np.zeros(len(bc))
    source_T = nu * problem.phi(U_bc) * g_T + f_T

    # weighted interior residual on the common refinement
    r_q = source_T[parent, None] - du_q / tau + eps * lapU[:, None] \
        - a1_T[parent, None] * gU_q[:, :, 0] \
        - a2_T[parent, None] * gU_q[:, :, 1] \
        - b_T[parent, None] * U_q
    alpha_ov = mdiam(ov_space.mesh.diameters(), eps, beta)
    elem_sq = alpha_ov ** 2 * np.einsum("eq,eq->e", wdet, r_q ** 2)

    # diffusive flux jumps with the 1/2 edge-sharing factor
    faces = interior_faces(ov_space.mesh)
    eta_cur_sq = np.bincount(parent, weights=elem_sq,
                             minlength=frame.cur_mesh.n_triangles)
    if len(faces):
        jmp, w = _face_normal_jumps(ov_space, faces, U)
        face_sq = 0.5 * eps ** (-0.5) * mdiam(faces.lengths, eps, beta) \
            * np.einsum("fq,fq->f", w, (eps * jmp) ** 2)
        for side in (0, 1):
            eta_cur_sq += np.bincount(parent[faces.tris[:, side]],
                                      weights=0.5 * face_sq,
                                      minlength=frame.cur_mesh.n_triangles)
    eta = math.sqrt(max(eta_cur_sq.sum(), 0.0))

    # data oscillation: exact fields against their barycenter values
    g_var = _values_of(g_bl, Xq, Yq)
    b_var = _values_of(b_bl, Xq, Yq)
    f_var = _values_of(f_bl, Xq, Yq)
    if a_bl is not None:
        a1_var = _values_of(a_bl[0], Xq, Yq)
        a2_var = _values_of(a_bl[1], Xq, Yq)
    else:
        a1_var = a2_var = np.zeros_like(Xq)
    phi_U = problem.phi(U_q)
    osc_q = nu * phi_U * (g_T[parent, None] - g_var) \
        + nu * (phi_U - problem.phi(U_bc)[parent, None]) * g_T[parent, None] \
        + (a1_T[parent, None] - a1_var) * gU_q[:, :, 0] \
        + (a2_T[parent, None] - a2_var) * gU_q[:, :, 1] \
        + (b_T[parent, None] - b_var) * U_q \
        + (f_T[parent, None] - f_var)
    osc_int = np.bincount(parent,
                          weights=np.einsum("eq,eq->e", wdet, osc_q ** 2),
                          minlength=frame.cur_mesh.n_triangles)
    alpha_cur = mdiam(frame.cur_mesh.diameters(), eps, beta)
    theta_data = math.sqrt(max((alpha_cur ** 2 * osc_int).sum(), 0.0))

    # CIP consistency: a-oscillation against grad U plus the Jacobian term
    aosc_q = ((a1_var - a1_T[parent, None]) * gU_q[:, :, 0]
              + (a2_var - a2_T[parent, None]) * gU_q[:, :, 1]) ** 2
    aosc_int = np.bincount(parent, weights=np.einsum("eq,eq->e", wdet,
                                                     aosc_q),
                           minlength=frame.cur_mesh.n_triangles)
    gradU_int = np.bincount(
        parent,
        weights=np.einsum("eq,eq->e", wdet,
                          gU_q[:, :, 0] ** 2 + gU_q[:, :, 1] ** 2),
        minlength=frame.cur_mesh.n_triangles)
    if a_bl is not None:
        ja = _grad_jacobian_linf(a_bl, Xq, Yq)
        ja_cur = np.zeros(frame.cur_mesh.n_triangles)
        np.maximum.at(ja_cur, np.repeat(parent, Xq.shape[1]), ja.ravel())
    else:
        ja_cur = np.zeros(frame.cur_mesh.n_triangles)
    h_cur = frame.cur_mesh.diameters()
    cip_sq = alpha_cur ** 2 * aosc_int \
        + alpha_cur ** 2 * h_cur ** 2 * ja_cur * gradU_int
    theta_cip = math.sqrt(max(cip_sq.sum(), 0.0))
    return eta, theta_data, theta_cip, eta_cur_sq


def convective_dual_estimate(problem, params, frame, t_prev, t_cur,
                             constants):
    """Surrogate for the dual norm of a_blend . grad(delta u).

    Computes the dominant-diffusion closed form and the dominant-convection
    auxiliary estimate, returns the smaller with its branch tag plus the
    auxiliary triple (eta_aux, theta_aux, aux_energy)."""
    eps, beta = problem.epsilon, problem.beta
    if problem.a1 is None and problem.a2 is None:
        return 0.0, "domdiff", 0.0, 0.0, 0.0
    th = params.theta
    a_bl = (blend_field(problem.a1, t_prev, t_cur, th),
            blend_field(problem.a2, t_prev, t_cur, th))
    ov_space = frame.ov_space
    du = frame.delta
    energy_jump = math.sqrt(_energy_sq(ov_space, du, eps, beta))

    aux_space = ov_space if ov_space.degree == 1 \
        else FeSpace(ov_space.mesh, 1)
    geo = aux_space.geometry()
    Xq, Yq = geo["qpoints"][:, :, 0], geo["qpoints"][:, :, 1]
    wdet = geo["wdet"]
    a1 = _values_of(a_bl[0], Xq, Yq)
    a2 = _values_of(a_bl[1], Xq, Yq)
    a_mag = float(np.sqrt(a1 ** 2 + a2 ** 2).max())
    domdiff = eps ** (-0.5) * constants.lam * a_mag * energy_jump

    if ov_space.degree == 1:
        gdu = _quad_grads(ov_space, du)
    else:
        elems = np.arange(ov_space.mesh.n_triangles)
        gdu = evaluate_grad(DofVector(ov_space, du), elems,
                            aux_space.quad.points)
    rho_q = a1 * gdu[:, :, 0] + a2 * gdu[:, :, 1]

    fe = np.einsum("eq,qi->ei", wdet * rho_q, aux_space.basis)
    rhs = np.bincount(aux_space.dof_map.ravel(), weights=fe.ravel(),
                      minlength=aux_space.n_dofs)
    A = eps * stiffness_matrix(aux_space) + beta * mass_matrix(aux_space)
    free = aux_space.free
    ut = np.zeros(aux_space.n_dofs)
    if free.any():
        ut[free] = spla.spsolve(A[free][:, free].tocsc(), rhs[free])
    aux_energy = math.sqrt(_energy_sq(aux_space, ut, eps, beta))

    # interior residual of the auxiliary problem (P1: no Laplacian)
    ut_q = _quad_values(aux_space, ut)
    alpha_ov = mdiam(aux_space.mesh.diameters(), eps, beta)
    res_sq = alpha_ov ** 2 * np.einsum(
        "eq,eq->e", wdet, (rho_q - beta * ut_q) ** 2)
    eta_aux_sq = float(res_sq.sum())
    faces = interior_faces(aux_space.mesh)
    if len(faces):
        # flux jump of the auxiliary solution, same scaling as the
        # diffusive jump in the spatial indicator
        jmp, w = _face_normal_jumps(aux_space, faces, ut)
        eta_aux_sq += float((eps ** (-0.5)
                             * mdiam(faces.lengths, eps, beta)
                             * np.einsum("fq,fq->f", w,
                                         (eps * jmp) ** 2)).sum())
    eta_aux = math.sqrt(max(eta_aux_sq, 0.0))

    # a-oscillation against barycenter values on the common refinement
    bc = aux_space.mesh.barycenters()
    a1_bar = _values_of(a_bl[0], bc[:, 0], bc[:, 1])
    a2_bar = _values_of(a_bl[1], bc[:, 0], bc[:, 1])
    t_q = ((a1 - a1_bar[:, None]) * gdu[:, :, 0]
           + (a2 - a2_bar[:, None]) * gdu[:, :, 1]) ** 2
    theta_aux = math.sqrt(max(float(
        (alpha_ov ** 2 * np.einsum("eq,eq->e", wdet, t_q)).sum()), 0.0))

    domconv = aux_energy + eta_aux
    if domdiff <= domconv:
        return domdiff, "domdiff", eta_aux, theta_aux, aux_energy
    return domconv, "domconv", eta_aux, theta_aux, aux_energy


def temporal_nonlinear_bound(tau, vartheta, problem, constants,
                             du_l2, du_energy):
    """Sharp vartheta-dependent bound for the non-linear temporal residual;
    returns (L2 variant, energy variant)."""
    factor = math.sqrt(tau * (2.0 - 6.0 * vartheta * (1.0 - vartheta))
                       / 6.0)
    nuLg = problem.nu * problem.lipschitz_L * constants.gamma
    return (factor * nuLg * constants.lam * du_l2,
            factor * nuLg * constants.lam ** 2 * du_energy)


def data_residual_bound(problem, params, frame, t_prev, t_cur, constants,
                        samples_per_step=10):
    """Evaluates the data-residual upper bound; returns (value,
    DataComponents)."""
    eps, beta = problem.epsilon, problem.beta
    tau = t_cur - t_prev
    th, vt = params.theta, params.vartheta
    lam = constants.lam
    space = frame.cur_space
    geo = space.geometry()
    Xq, Yq = geo["qpoints"][:, :, 0], geo["qpoints"][:, :, 1]
    wdet = geo["wdet"]

    mids = t_prev + (np.arange(samples_per_step) + 0.5) \
        * tau / samples_per_step
    all_ts = np.concatenate([mids, [t_prev, t_cur]])

    def devs(fld, weight):
        if fld is None:
            return None, 0.0, 0.0
        blend = _values_of(blend_field(fld, t_prev, t_cur, weight), Xq, Yq)
        l2_sq, linf = 0.0, 0.0
        for t in mids:
            d = _values_of(lambda x, y, _t=t: fld(x, y, _t), Xq, Yq) - blend
            l2_sq += tau / samples_per_step \
                * float(np.einsum("eq,eq->", wdet, d ** 2))
            linf = max(linf, float(np.abs(d).max()))
        for t in (t_prev, t_cur):
            d = _values_of(lambda x, y, _t=t: fld(x, y, _t), Xq, Yq) - blend
            linf = max(linf, float(np.abs(d).max()))
        return None, math.sqrt(l2_sq), linf

    _, g_l2, g_linf = devs(problem.g, vt)
    _, f_l2, f_linf = devs(problem.source, th)

    a_linf = 0.0
    if problem.a1 is not None or problem.a2 is not None:
        b1 = _values_of(blend_field(problem.a1, t_prev, t_cur, th), Xq, Yq)
        b2 = _values_of(blend_field(problem.a2, t_prev, t_cur, th), Xq, Yq)
        for t in all_ts:
            d1 = _values_of(None if problem.a1 is None
                            else lambda x, y, _t=t: problem.a1(x, y, _t),
                            Xq, Yq) - b1
            d2 = _values_of(None if problem.a2 is None
                            else lambda x, y, _t=t: problem.a2(x, y, _t),
                            Xq, Yq) - b2
            a_linf = max(a_linf, float(np.sqrt(d1 ** 2 + d2 ** 2).max()))
    _, _, b_linf = (None, 0.0, 0.0) if problem.b is None else \
        devs(problem.b, th)

    # exact time integral of the energy norm of the linear interpolant
    ov = frame.ov_space
    K, M = stiffness_matrix(ov), mass_matrix(ov)
    un, up = frame.u_cur, frame.u_prev

    def e_inner(v, w):
        return eps * (v @ (K @ w)) + beta * (v @ (M @ w))

    nn, np_, pp = e_inner(un, un), e_inner(un, up), e_inner(up, up)
    u_int = tau / 3.0 * (nn + np_ + pp)
    simpson = tau / 2.0 * (nn + pp)
    assert u_int <= simpson + 1e-12 * max(simpson, 1.0)
    e_half = math.sqrt(max(u_int, 0.0))

    nuL = problem.nu * problem.lipschitz_L
    value = nuL * lam * (g_l2 + g_linf * e_half) \
        + eps ** (-0.5) * lam * a_linf * e_half \
        + lam ** 2 * b_linf * e_half \
        + lam * f_l2
    comp = DataComponents(g_l2=g_l2, g_linf=g_linf, a_linf=a_linf,
                          b_linf=b_linf, f_l2=f_l2, f_linf=f_linf,
                          u_energy_int=float(max(u_int, 0.0)),
                          simpson_bound=float(simpson))
    return value, comp


def estimate_step(problem, constants, params, stab, u_prev, u_cur,
                  t_prev, t_cur, samples_per_step=10):
    """All indicators for the step from t_prev to t_cur."""
    tau = t_cur - t_prev
    eps, beta = problem.epsilon, problem.beta
    frame = _StepFrame(u_prev, u_cur)

    eta, theta_data, theta_cip, eta_sq = spatial_indicator(
        problem, params, frame, t_prev, t_cur)

    du = frame.delta
    energy_jump = math.sqrt(_energy_sq(frame.ov_space, du, eps, beta))
    du_l2 = math.sqrt(max(du @ (mass_matrix(frame.ov_space) @ du), 0.0))

    conv_dual, branch, eta_aux, theta_aux, aux_energy = \
        convective_dual_estimate(problem, params, frame, t_prev, t_cur,
                                 constants)
    temporal_linear = math.sqrt(tau) * (energy_jump + conv_dual)
    tn_l2, tn_energy = temporal_nonlinear_bound(
        tau, params.vartheta, problem, constants, du_l2, energy_jump)
    data_value, comp = data_residual_bound(
        problem, params, frame, t_prev, t_cur, constants,
        samples_per_step)

    return StepIndicators(
        eta=eta, eta_elements=np.sqrt(np.maximum(eta_sq, 0.0)),
        theta_data=theta_data, theta_cip=theta_cip,
        energy_jump=energy_jump, conv_dual=conv_dual, conv_branch=branch,
        eta_aux=eta_aux, theta_aux=theta_aux, aux_energy=aux_energy,
        temporal_linear=temporal_linear, temporal_nonlinear=tn_l2,
        temporal_nonlinear_energy=tn_energy, data_residual=data_value,
        data=comp, tau=tau, t=t_cur)


@dataclass
class EstimatorReport:
    steps: List[StepIndicators]
    initial_error: float
    sigma_cip: float
    aux_dropped: bool
    totals: dict = field(default_factory=dict)
    regime: dict = field(default_factory=dict)
    constants_used: dict = field(default_factory=dict)
    lower_bounds: Optional[np.ndarray] = None

    def recompute_totals(self):
        """Re-derive the totals from the per-step data (consistency
        check)."""
        return _assemble_totals(self.steps, self.initial_error,
                                self.sigma_cip, self.aux_dropped)

    @property
    def estimate(self):
        return self.totals["estimate"]

    def as_dict(self):
        return {
            "initial_error": float(self.initial_error),
            "sigma_cip": float(self.sigma_cip),
            "aux_dropped": bool(self.aux_dropped),
            "totals": {k: float(v) for k, v in self.totals.items()},
            "regime": dict(self.regime),
            "constants_used": {k: (float(v) if not isinstance(v, str)
                                   else v)
                               for k, v in self.constants_used.items()},
            "lower_bounds": [float(v) for v in self.lower_bounds],
            "steps": [s.as_dict() for s in self.steps],
        }


def _assemble_totals(steps, initial_error, sigma_cip, aux_dropped):
    primary = 0.0
    data_sum = 0.0
    u_int_total = 0.0
    g_linf = a_linf = b_linf = 0.0
    f_l2_sq = 0.0
    for s in steps:
        aux = 0.0 if aux_dropped else \
            s.eta_aux ** 2 + s.aux_energy ** 2 + s.theta_aux ** 2
        primary += s.tau * (s.eta ** 2 + s.energy_jump ** 2 + aux)
        data_sum += s.tau * (s.theta_data ** 2
                             + sigma_cip * s.theta_cip ** 2)
        u_int_total += s.data.u_energy_int
        g_linf = max(g_linf, s.data.g_linf)
        a_linf = max(a_linf, s.data.a_linf)
        b_linf = max(b_linf, s.data.b_linf)
        f_l2_sq += s.data.f_l2 ** 2
    consistency_g = g_linf ** 2 * (1.0 + u_int_total)
    consistency_ab = (a_linf ** 2 + b_linf ** 2) * u_int_total
    radicand = initial_error ** 2 + primary + data_sum \
        + consistency_g + consistency_ab + f_l2_sq
    return {
        "initial_sq": initial_error ** 2,
        "primary_sum": primary,
        "data_sum": data_sum,
        "consistency_g": consistency_g,
        "consistency_ab": consistency_ab,
        "consistency_f": f_l2_sq,
        "u_energy_int_total": u_int_total,
        "radicand": radicand,
        "estimate": math.sqrt(max(radicand, 0.0)),
    }


def _initial_projection_error(problem, u0_state):
    """L2 distance between the initial field and its discrete projection,
    by the projection's own quadrature."""
    if problem.u0 is None:
        return math.sqrt(max(u0_state.values
                             @ (mass_matrix(u0_state.space)
                                @ u0_state.values), 0.0))
    space = u0_state.space
    geo = space.geometry()
    Xq, Yq = geo["qpoints"][:, :, 0], geo["qpoints"][:, :, 1]
    u0_sq = float(np.einsum("eq,eq->", geo["wdet"],
                            _values_of(problem.u0, Xq, Yq) ** 2))
    cross = float(u0_state.values @ load_vector(space, problem.u0))
    self_sq = float(u0_state.values
                    @ (mass_matrix(space) @ u0_state.values))
    return math.sqrt(max(u0_sq - 2.0 * cross + self_sq, 0.0))


def error_from_residual_factor(problem, constants):
    """Explicit factor turning the residual norm into an error bound,
    regime-dependent; returns (factor, regime tag)."""
    nuL = problem.nu * problem.lipschitz_L
    lam, gamma = constants.lam, constants.gamma
    c_b = problem.c_b
    if constants.kappa < 1.0:
        inner = 1.0 + 3.0 * max(c_b ** 2, 0.5 * nuL * lam ** 2 * gamma)
        return math.sqrt(3.0 + inner / (1.0 - constants.kappa)), \
            "kappa_small"
    inner = 1.0 + 3.0 * max(c_b ** 2, nuL ** 2 * lam ** 2 * gamma ** 2
                            * min(problem.T, lam ** 2))
    return math.sqrt(3.0 + inner
                     * math.exp(2.0 * nuL * gamma * problem.T)), "general"


def residual_from_error_factor(problem, constants, tau):
    """Explicit per-step factor bounding the residual by the error."""
    return math.sqrt(2.0) * problem.c_b * (
        1.0 + problem.nu * problem.lipschitz_L * constants.lam
        * min(constants.lam, math.sqrt(tau)) * constants.gamma)


def estimate_trajectory(traj, samples_per_step=10):
    """Per-step indicators plus assembled totals for a trajectory."""
    problem, params = traj.problem, traj.params
    stab, constants = traj.stab, traj.constants
    steps = []
    nodes = traj.times.nodes
    for n in range(1, len(nodes)):
        ind = estimate_step(problem, constants, params, stab,
                            traj.states[n - 1], traj.states[n],
                            float(nodes[n - 1]), float(nodes[n]),
                            samples_per_step)
        ind.n = n
        steps.append(ind)
    initial_error = _initial_projection_error(problem, traj.states[0])
    sigma = stab.sigma_cip
    aux_dropped = problem.epsilon >= 1.0
    totals = _assemble_totals(steps, initial_error, sigma, aux_dropped)
    factor, regime_tag = error_from_residual_factor(problem, constants)
    lower = np.array([math.sqrt(s.tau)
                      * math.sqrt(s.eta ** 2 + s.energy_jump ** 2
                                  + s.eta_aux ** 2 + s.aux_energy ** 2)
                      for s in steps])
    report = EstimatorReport(
        steps=steps, initial_error=initial_error, sigma_cip=sigma,
        aux_dropped=aux_dropped, totals=totals,
        regime={
            "kappa_small": constants.kappa_small,
            "kappa_tilde_small": constants.kappa_tilde_small,
            "error_factor_regime": regime_tag,
            "temporal_dominated_by_linear": constants.kappa_tilde_small,
        },
        constants_used={
            "lam": constants.lam, "gamma": constants.gamma,
            "kappa": constants.kappa,
            "kappa_tilde": constants.kappa_tilde,
            "c_f": constants.c_f, "c_b": problem.c_b,
            "epsilon": problem.epsilon, "beta": problem.beta,
            "nu": problem.nu, "lipschitz_L": problem.lipschitz_L,
            "sigma_cip": sigma,
            "error_from_residual_factor": factor,
            "residual_from_error_factor_max": max(
                (residual_from_error_factor(problem, constants, s.tau)
                 for s in steps), default=0.0),
        },
        lower_bounds=lower)
    return report
