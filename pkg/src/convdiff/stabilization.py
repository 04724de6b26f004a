"""Stabilization forms for convection-dominated problems.

Streamline diffusion (SD) adds, per element,

    delta_K * int_K (-eps Lap(u) + a.grad u + b u - rhs)(a.grad v),
    delta_K = c_s * h_K / max(||a||_{inf,K}, tiny),

where rhs collects the source density (nu phi(.) g plus any explicit
source).  The rhs part depends on the current non-linearity iterate and is
assembled separately as a vector so each linear solve sees an affine form.

Continuous interior penalty (CIP) adds, per interior face,

    delta_E * int_E [a.grad u][a.grad v],   delta_E = c_s * h_E^2,

with jumps across faces evaluated by 2-point Gauss quadrature.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fem import basis_grads, basis_laplacians, _values_of
from .quadrature import edge_rule

__all__ = ["StabilizationSpec", "sd_parameters", "assemble_sd",
           "sd_source_vector", "assemble_cip", "stabilization_matrix"]

_TINY = 1e-30
_KINDS = ("none", "sd", "cip")


@dataclass
class StabilizationSpec:
    kind: str = "none"
    c_s: float = 0.5

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError("stabilization kind must be one of %s"
                             % (_KINDS,))
        if self.c_s < 0.0:
            raise ValueError("c_s must be non-negative")

    @property
    def sigma_cip(self):
        """Weight of frontal CIP terms in the estimator total: 1 iff CIP."""
        return 1.0 if self.kind == "cip" else 0.0


def _a_magnitude_per_element(space, a):
    geo = space.geometry()
    X, Y = geo["qpoints"][:, :, 0], geo["qpoints"][:, :, 1]
    a1 = _values_of(a[0] if a else None, X, Y)
    a2 = _values_of(a[1] if a else None, X, Y)
    return np.sqrt(a1 ** 2 + a2 ** 2).max(axis=1)


def sd_parameters(space, a, c_s):
    """Per-element SD weights delta_K = c_s h_K / max(||a||_{inf,K}, tiny);
    the floor keeps delta finite where a vanishes (the form vanishes there
    anyway)."""
    h = space.mesh.diameters()
    amax = _a_magnitude_per_element(space, a)
    return c_s * h / np.maximum(amax, _TINY)


def assemble_sd(space, delta, eps, a, b):
    """Matrix part of the SD form (the rhs part is sd_source_vector)."""
    geo = space.geometry()
    X, Y = geo["qpoints"][:, :, 0], geo["qpoints"][:, :, 1]
    wdet = geo["wdet"]
    g = space.phys_grads()
    N = space.basis
    a1 = _values_of(a[0] if a else None, X, Y)
    a2 = _values_of(a[1] if a else None, X, Y)
    adg = a1[:, :, None] * g[:, :, :, 0] + a2[:, :, None] * g[:, :, :, 1]
    bv = _values_of(b, X, Y)
    lap = basis_laplacians(space)
    # strong operator applied to the trial function at quadrature points
    strong = (-eps * lap[:, None, :]
              + adg
              + bv[:, :, None] * N[None, :, :])
    Ae = np.einsum("e,eq,eqj,eqi->eij", delta, wdet, strong, adg)
    nd = N.shape[1]
    rows = np.repeat(space.dof_map, nd, axis=1).ravel()
    cols = np.tile(space.dof_map, (1, nd)).ravel()
    return sp.coo_matrix((Ae.ravel(), (rows, cols)),
                         shape=(space.n_dofs, space.n_dofs)).tocsr()


def sd_source_vector(space, delta, a, rho_q):
    """Vector of delta_K int rho (a.grad phi_i) for a source density rho
    given by its values at the volume quadrature points (nt, nq)."""
    geo = space.geometry()
    X, Y = geo["qpoints"][:, :, 0], geo["qpoints"][:, :, 1]
    g = space.phys_grads()
    a1 = _values_of(a[0] if a else None, X, Y)
    a2 = _values_of(a[1] if a else None, X, Y)
    adg = a1[:, :, None] * g[:, :, :, 0] + a2[:, :, None] * g[:, :, :, 1]
    fe = np.einsum("e,eq,eqi->ei", delta, geo["wdet"] * rho_q, adg)
    return np.bincount(space.dof_map.ravel(), weights=fe.ravel(),
                       minlength=space.n_dofs)


def assemble_cip(space, faces, a, c_s, h_override=None):
    """CIP jump-penalty matrix over the given interior faces.

    h_override replaces the face lengths entering delta_E (used when the
    faces are sub-segments of coarser-mesh faces whose length sets the
    penalty scale)."""
    nfaces = len(faces)
    if nfaces == 0 or a is None:
        return sp.csr_matrix((space.n_dofs, space.n_dofs))
    rule = edge_rule(2)
    s = rule.points[:, 0]
    w = rule.weights
    mesh = space.mesh
    p0 = mesh.vertices[faces.vertex_pairs[:, 0]]
    p1 = mesh.vertices[faces.vertex_pairs[:, 1]]
    qpts = p0[:, None, :] + s[None, :, None] * (p1 - p0)[:, None, :]
    X, Y = qpts[:, :, 0], qpts[:, :, 1]
    a1 = _values_of(a[0], X, Y)
    a2 = _values_of(a[1], X, Y)

    geo = space.geometry()
    nd = space.dof_map.shape[1]
    J = np.empty((nfaces, len(s), 2 * nd))
    dofs = np.empty((nfaces, 2 * nd), dtype=np.int64)
    for side, sign in ((0, 1.0), (1, -1.0)):
        elems = faces.tris[:, side]
        V0 = mesh.vertices[mesh.triangles[elems][:, 0]]
        invB = geo["invB"][elems]
        lam = np.einsum("fij,fqj->fqi", invB, qpts - V0[:, None, :])
        G = basis_grads(space.degree, lam.reshape(-1, 2))
        G = G.reshape(nfaces, len(s), nd, 2)
        gphys = np.einsum("fqid,fdk->fqik", G, invB)
        adg = (a1[:, :, None] * gphys[:, :, :, 0]
               + a2[:, :, None] * gphys[:, :, :, 1])
        J[:, :, side * nd:(side + 1) * nd] = sign * adg
        dofs[:, side * nd:(side + 1) * nd] = space.dof_map[elems]

    hE = faces.lengths if h_override is None else np.asarray(h_override)
    weight = (c_s * hE ** 2 * faces.lengths)[:, None] * w[None, :]
    Ae = np.einsum("fq,fqi,fqj->fij", weight, J, J)
    rows = np.repeat(dofs, 2 * nd, axis=1).ravel()
    cols = np.tile(dofs, (1, 2 * nd)).ravel()
    return sp.coo_matrix((Ae.ravel(), (rows, cols)),
                         shape=(space.n_dofs, space.n_dofs)).tocsr()


def stabilization_matrix(spec, space, faces, a, b, eps, delta=None):
    """Matrix part of the configured stabilization; zero matrix for
    kind='none'."""
    if spec.kind == "none" or a is None:
        return sp.csr_matrix((space.n_dofs, space.n_dofs)), None
    if spec.kind == "sd":
        d = sd_parameters(space, a, spec.c_s) if delta is None else delta
        return assemble_sd(space, d, eps, a, b), d
    return assemble_cip(space, faces, a, spec.c_s), None
