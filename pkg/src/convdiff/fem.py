"""Lagrange finite element spaces on triangle meshes and form assembly.

Spaces are continuous P1 or P2 with homogeneous Dirichlet boundary
conditions handled by symmetric elimination (rows/columns zeroed, unit
diagonal).  Volume quadrature is exact to degree 4 for P1 and degree 6 for
P2, so that every product of two basis functions against piecewise-smooth
data is integrated well below discretisation accuracy.

Spatial data fields are callables f(x, y) acting on numpy arrays; vector
fields are passed as a pair (a1, a2) of scalar callables.  Constants are
accepted wherever a field is.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import ancestor_map, common_refinement
from .quadrature import triangle_rule

__all__ = [
    "FeSpace", "DofVector", "assemble_B", "assemble_N", "load_vector",
    "mass_matrix", "stiffness_matrix", "apply_dirichlet_matrix",
    "zero_dirichlet", "l2_project", "interpolate", "transfer",
    "prolongation_matrix", "energy_norm", "energy_inner", "l2_norm",
    "evaluate", "evaluate_grad", "dump_dofvector", "load_dofvector",
]


def _p1_values(pts):
    x, y = pts[:, 0], pts[:, 1]
    return np.stack([1.0 - x - y, x, y], axis=1)


def _p1_grads(pts):
    g = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return np.broadcast_to(g, (len(pts), 3, 2)).copy()


def _p2_values(pts):
    x, y = pts[:, 0], pts[:, 1]
    l0 = 1.0 - x - y
    return np.stack([l0 * (2 * l0 - 1), x * (2 * x - 1), y * (2 * y - 1),
                     4 * x * y, 4 * y * l0, 4 * x * l0], axis=1)


def _p2_grads(pts):
    x, y = pts[:, 0], pts[:, 1]
    l0 = 1.0 - x - y
    z = np.zeros_like(x)
    gx = np.stack([1 - 4 * l0, 4 * x - 1, z, 4 * y, -4 * y,
                   4 * (l0 - x)], axis=1)
    gy = np.stack([1 - 4 * l0, z, 4 * y - 1, 4 * x, 4 * (l0 - y),
                   -4 * x], axis=1)
    return np.stack([gx, gy], axis=2)


# constant reference Hessians of the P2 basis
_P2_HESS = np.array([
    [[4.0, 4.0], [4.0, 4.0]],
    [[4.0, 0.0], [0.0, 0.0]],
    [[0.0, 0.0], [0.0, 4.0]],
    [[0.0, 4.0], [4.0, 0.0]],
    [[0.0, -4.0], [-4.0, -8.0]],
    [[-8.0, -4.0], [-4.0, 0.0]],
])


def basis_values(degree, pts):
    pts = np.atleast_2d(pts)
    return _p1_values(pts) if degree == 1 else _p2_values(pts)


def basis_grads(degree, pts):
    pts = np.atleast_2d(pts)
    return _p1_grads(pts) if degree == 1 else _p2_grads(pts)


class FeSpace:
    """Continuous Lagrange space of degree 1 or 2 on a TriMesh."""

    def __init__(self, mesh, degree=1):
        if degree not in (1, 2):
            raise ValueError("degree must be 1 or 2")
        self.mesh = mesh
        self.degree = degree
        nv = mesh.n_vertices
        if degree == 1:
            self.dof_map = mesh.triangles.copy()
            self.n_dofs = nv
            self.dof_points = mesh.vertices.copy()
            self.dirichlet = mesh.boundary_vertex.copy()
        else:
            edges, tri_edges, counts = mesh.edge_table()
            # local edge dofs 3,4,5 sit on edges (1,2), (2,0), (0,1)
            self.dof_map = np.hstack([mesh.triangles,
                                      nv + tri_edges[:, [0, 2, 1]]])
            self.n_dofs = nv + len(edges)
            mids = 0.5 * (mesh.vertices[edges[:, 0]]
                          + mesh.vertices[edges[:, 1]])
            self.dof_points = np.vstack([mesh.vertices, mids])
            self.dirichlet = np.concatenate([mesh.boundary_vertex,
                                             counts == 1])
        self.free = ~self.dirichlet
        self.quad = triangle_rule(4 if degree == 1 else 6)
        self.basis = basis_values(degree, self.quad.points)
        self.basis_grad = basis_grads(degree, self.quad.points)
        self._cache = {}

    def geometry(self):
        """Affine element maps and quadrature data.

        Returns dict with B (nt,2,2), invB (nt,2,2), det (nt,), qpoints
        (nt,nq,2) physical quadrature points and wdet (nt,nq) weights
        scaled by the Jacobian determinant."""
        if "geo" not in self._cache:
            V = self.mesh.vertices[self.mesh.triangles]
            B = np.stack([V[:, 1] - V[:, 0], V[:, 2] - V[:, 0]], axis=2)
            det = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
            invB = np.empty_like(B)
            invB[:, 0, 0] = B[:, 1, 1] / det
            invB[:, 0, 1] = -B[:, 0, 1] / det
            invB[:, 1, 0] = -B[:, 1, 0] / det
            invB[:, 1, 1] = B[:, 0, 0] / det
            qp = np.einsum("eij,qj->eqi", B, self.quad.points) \
                + V[:, 0][:, None, :]
            wdet = self.quad.weights[None, :] * det[:, None]
            self._cache["geo"] = dict(B=B, invB=invB, det=det, qpoints=qp,
                                      wdet=wdet)
        return self._cache["geo"]

    def phys_grads(self):
        """Physical basis gradients at quadrature points (nt,nq,nd,2)."""
        if "pgrad" not in self._cache:
            invB = self.geometry()["invB"]
            self._cache["pgrad"] = np.einsum("qid,edk->eqik",
                                             self.basis_grad, invB)
        return self._cache["pgrad"]


class DofVector:
    """Coefficient vector tied to a space.  Members of the discrete
    Dirichlet space keep zeros at constrained dofs."""

    def __init__(self, space, values=None):
        self.space = space
        if values is None:
            values = np.zeros(space.n_dofs)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (space.n_dofs,):
            raise ValueError("coefficient vector has wrong length")

    def copy(self):
        return DofVector(self.space, self.values.copy())

    def __add__(self, other):
        assert self.space is other.space
        return DofVector(self.space, self.values + other.values)

    def __sub__(self, other):
        assert self.space is other.space
        return DofVector(self.space, self.values - other.values)

    def __rmul__(self, c):
        return DofVector(self.space, float(c) * self.values)


def _values_of(f, X, Y):
    if f is None:
        return np.zeros_like(X)
    if np.isscalar(f):
        return np.full_like(X, float(f))
    return np.broadcast_to(np.asarray(f(X, Y), dtype=float), X.shape)


def assemble_B(space, eps, a=None, b=None, dirichlet=True):
    """Matrix of the form
    (u, v) -> int eps grad u . grad v + (a . grad u) v + b u v.

    a is a pair of scalar fields (or None), b a scalar field / constant.
    With dirichlet=True, constrained rows/columns are eliminated
    symmetrically and replaced by a unit diagonal.
    """
    geo = space.geometry()
    X, Y = geo["qpoints"][:, :, 0], geo["qpoints"][:, :, 1]
    wdet = geo["wdet"]
    N = space.basis
    g = space.phys_grads()
    nd = N.shape[1]
    Ae = np.zeros((space.mesh.n_triangles, nd, nd))
    if eps != 0.0:
        Ae += eps * np.einsum("eq,eqik,eqjk->eij", wdet, g, g)
    if a is not None:
        a1 = _values_of(a[0], X, Y)
        a2 = _values_of(a[1], X, Y)
        adg = a1[:, :, None] * g[:, :, :, 0] + a2[:, :, None] * g[:, :, :, 1]
        Ae += np.einsum("eq,qi,eqj->eij", wdet, N, adg)
    if b is not None:
        bv = _values_of(b, X, Y)
        Ae += np.einsum("eq,qi,qj->eij", wdet * bv, N, N)
    rows = np.repeat(space.dof_map, nd, axis=1).ravel()
    cols = np.tile(space.dof_map, (1, nd)).ravel()
    A = sp.coo_matrix((Ae.ravel(), (rows, cols)),
                      shape=(space.n_dofs, space.n_dofs)).tocsr()
    return apply_dirichlet_matrix(A, space) if dirichlet else A


def apply_dirichlet_matrix(A, space):
    free = space.free.astype(float)
    D = sp.diags(free)
    I_c = sp.diags(1.0 - free)
    return (D @ A @ D + I_c).tocsr()


def zero_dirichlet(vec, space):
    out = np.array(vec, dtype=float)
    out[space.dirichlet] = 0.0
    return out


def mass_matrix(space):
    if "mass" not in space._cache:
        space._cache["mass"] = assemble_B(space, 0.0, None, 1.0,
                                          dirichlet=False)
    return space._cache["mass"]


def stiffness_matrix(space):
    if "stiffness" not in space._cache:
        space._cache["stiffness"] = assemble_B(space, 1.0, None, None,
                                               dirichlet=False)
    return space._cache["stiffness"]


def load_vector(space, f):
    """Vector of int f phi_i."""
    geo = space.geometry()
    X, Y = geo["qpoints"][:, :, 0], geo["qpoints"][:, :, 1]
    fe = np.einsum("eq,qi->ei", geo["wdet"] * _values_of(f, X, Y),
                   space.basis)
    return np.bincount(space.dof_map.ravel(), weights=fe.ravel(),
                       minlength=space.n_dofs)


def assemble_N(space, nu, phi, g, u):
    """Vector of the source functional int nu phi(u) g phi_i for the
    discrete function u (DofVector or raw coefficients)."""
    uv = u.values if isinstance(u, DofVector) else np.asarray(u)
    geo = space.geometry()
    X, Y = geo["qpoints"][:, :, 0], geo["qpoints"][:, :, 1]
    uq = np.einsum("ei,qi->eq", uv[space.dof_map], space.basis)
    dens = nu * phi(uq) * _values_of(g, X, Y)
    fe = np.einsum("eq,qi->ei", geo["wdet"] * dens, space.basis)
    return np.bincount(space.dof_map.ravel(), weights=fe.ravel(),
                       minlength=space.n_dofs)


def l2_project(f, space):
    """L2 projection of the field f onto the homogeneous-Dirichlet space."""
    M = mass_matrix(space)
    rhs = load_vector(space, f)
    free = space.free
    x = np.zeros(space.n_dofs)
    Mff = M[free][:, free].tocsc()
    x[free] = spla.spsolve(Mff, rhs[free])
    return DofVector(space, x)


def interpolate(space, f):
    """Nodal interpolation (vertex / edge-midpoint values); does not
    enforce the boundary condition."""
    pts = space.dof_points
    return DofVector(space, np.asarray(f(pts[:, 0], pts[:, 1]), dtype=float))


def evaluate(u, elements, ref_pts):
    """Values of u at reference points (nq,2) inside the given elements;
    returns (len(elements), nq)."""
    space = u.space
    N = basis_values(space.degree, ref_pts)
    return np.einsum("ei,qi->eq", u.values[space.dof_map[elements]], N)


def evaluate_grad(u, elements, ref_pts):
    """Physical gradients of u, shape (len(elements), nq, 2)."""
    space = u.space
    G = basis_grads(space.degree, ref_pts)
    invB = space.geometry()["invB"][elements]
    gphys = np.einsum("qid,edk->eqik", G, invB)
    return np.einsum("ei,eqik->eqk", u.values[space.dof_map[elements]],
                     gphys)


def basis_laplacians(space, elements=None):
    """Per-element Laplacians of the basis functions, shape (ne, nd);
    identically zero for P1."""
    if elements is None:
        elements = np.arange(space.mesh.n_triangles)
    nd = space.dof_map.shape[1]
    if space.degree == 1:
        return np.zeros((len(elements), nd))
    invB = space.geometry()["invB"][elements]
    return np.einsum("edi,ndk,eki->en", invB, _P2_HESS, invB)


def element_laplacians(u, elements=None):
    """Per-element Laplacian of u (constant for degree <= 2); zero for P1."""
    space = u.space
    if elements is None:
        elements = np.arange(space.mesh.n_triangles)
    if space.degree == 1:
        return np.zeros(len(elements))
    lap = basis_laplacians(space, elements)
    return np.einsum("en,en->e", u.values[space.dof_map[elements]], lap)


def prolongation_matrix(from_space, to_space):
    """Sparse matrix taking coefficients on from_space to coefficients on
    to_space, whose mesh must be a refinement (in the same forest).  Exact
    for nested spaces of equal or higher degree."""
    if to_space.degree < from_space.degree:
        raise ValueError("prolongation target must have degree >= source")
    amap = ancestor_map(to_space.mesh, from_space.mesh)
    fmesh = from_space.mesh
    fv = fmesh.vertices[fmesh.triangles[amap]]
    B = np.stack([fv[:, 1] - fv[:, 0], fv[:, 2] - fv[:, 0]], axis=2)
    det = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
    invB = np.empty_like(B)
    invB[:, 0, 0] = B[:, 1, 1] / det
    invB[:, 0, 1] = -B[:, 0, 1] / det
    invB[:, 1, 0] = -B[:, 1, 0] / det
    invB[:, 1, 1] = B[:, 0, 0] / det

    nd_to = to_space.dof_map.shape[1]
    pts = to_space.dof_points[to_space.dof_map]          # (nt, nd_to, 2)
    rel = pts - fv[:, 0][:, None, :]
    lam = np.einsum("eij,enj->eni", invB, rel)           # reference coords
    visited = np.zeros(to_space.n_dofs, dtype=bool)
    rows, cols, vals = [], [], []
    for e in range(to_space.mesh.n_triangles):
        Nf = basis_values(from_space.degree, lam[e])     # (nd_to, nd_from)
        fdofs = from_space.dof_map[amap[e]]
        for i_loc, dof in enumerate(to_space.dof_map[e]):
            if visited[dof]:
                continue
            visited[dof] = True
            rows.extend([dof] * len(fdofs))
            cols.extend(fdofs)
            vals.extend(Nf[i_loc])
    P = sp.coo_matrix((vals, (rows, cols)),
                      shape=(to_space.n_dofs, from_space.n_dofs)).tocsr()
    P.eliminate_zeros()
    return P


def transfer(u, to_space):
    """Carry u over to to_space: exact nested interpolation when the target
    mesh refines the source mesh, otherwise L2 projection computed exactly
    on the common refinement."""
    if u.space is to_space:
        return u.copy()
    try:
        P = prolongation_matrix(u.space, to_space)
        return DofVector(to_space, P @ u.values)
    except ValueError:
        pass
    ov = common_refinement(to_space.mesh, u.space.mesh)
    deg = max(to_space.degree, u.space.degree)
    ov_space = FeSpace(ov.mesh, deg)
    P_to = prolongation_matrix(to_space, ov_space)
    P_from = prolongation_matrix(u.space, ov_space)
    rhs = P_to.T @ (mass_matrix(ov_space) @ (P_from @ u.values))
    M = mass_matrix(to_space)
    free = to_space.free
    x = np.zeros(to_space.n_dofs)
    x[free] = spla.spsolve(M[free][:, free].tocsc(), rhs[free])
    return DofVector(to_space, x)


def energy_norm(u, eps, beta):
    """sqrt(eps |u|_H1^2 + beta ||u||_L2^2)."""
    K, M = stiffness_matrix(u.space), mass_matrix(u.space)
    v = u.values
    val = eps * (v @ (K @ v)) + beta * (v @ (M @ v))
    return float(np.sqrt(max(val, 0.0)))


def energy_inner(u, v, eps, beta):
    assert u.space is v.space
    K, M = stiffness_matrix(u.space), mass_matrix(u.space)
    return float(eps * (u.values @ (K @ v.values))
                 + beta * (u.values @ (M @ v.values)))


def l2_norm(u):
    M = mass_matrix(u.space)
    return float(np.sqrt(max(u.values @ (M @ u.values), 0.0)))


def dump_dofvector(u, path):
    """Text dump: header "dofvec <n>", then one hex-float coefficient per
    line.  Bit-exact round trip."""
    with open(path, "w") as f:
        f.write("dofvec %d\n" % len(u.values))
        for v in u.values:
            f.write(float(v).hex() + "\n")


def load_dofvector(path, space):
    with open(path) as f:
        toks = f.read().split()
    if len(toks) < 2 or toks[0] != "dofvec":
        raise ValueError("not a dofvec file: %s" % path)
    n = int(toks[1])
    if n != space.n_dofs or len(toks) != 2 + n:
        raise ValueError("dofvec length %d does not match space (%d dofs)"
                         % (n, space.n_dofs))
    return DofVector(space, np.array([float.fromhex(t) for t in toks[2:]]))
