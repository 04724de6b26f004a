"""Conforming triangle meshes with newest-vertex bisection.

Triangles are stored in canonical order (peak, a, b): the refinement edge is
the edge (a, b) between local vertices 1 and 2, and local vertex 0 is the
peak (the newest vertex for triangles created by bisection).  Bisection of
(p, a, b) at the midpoint m of (a, b) produces the children

    left  = (m, p, a)   and   right = (m, b, p),

both positively oriented, with refinement edges (p, a) and (b, p).

Every mesh derived from a root mesh by refinement/coarsening keeps, per
triangle, the index of its ancestor triangle in the root and a binary path
code describing the sequence of bisections (the code carries a leading 1
sentinel; appending bit 0 selects the left child, bit 1 the right child).
Two meshes over the same root can be compared through these codes: triangle
x contains triangle y iff x's code is a prefix of y's.  This is what the
overlay (common refinement), coarsening and cross-mesh transfer rely on.
"""

import warnings

import numpy as np

__all__ = [
    "TriMesh", "FaceSet", "MeshMetrics", "Overlay", "CoarsenReport",
    "generate_structured", "refine", "uniform_refine", "coarsen",
    "common_refinement", "ancestor_map", "interior_faces", "mesh_metrics",
    "check_admissible", "save_mesh", "load_mesh", "domain_diameter",
]


class TriMesh:
    """Immutable conforming triangle mesh.

    Parameters
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, canonical order (refinement edge between
        local vertices 1 and 2), positively oriented
    boundary_vertex : (nv,) bool array
    root, root_tri, depth, code : bisection-forest identity; omitted for a
        fresh root mesh
    prev : the mesh this one was derived from, if any
    """

    def __init__(self, vertices, triangles, boundary_vertex,
                 root=None, root_tri=None, depth=None, code=None, prev=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.boundary_vertex = np.ascontiguousarray(boundary_vertex,
                                                    dtype=bool)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise ValueError("vertices must be (nv, 2)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must be (nt, 3)")
        if self.boundary_vertex.shape != (len(self.vertices),):
            raise ValueError("boundary_vertex must be (nv,)")
        nt = len(self.triangles)
        if root is None:
            self.root = self
            self.root_tri = np.arange(nt, dtype=np.int64)
            self.depth = np.zeros(nt, dtype=np.int64)
            self.code = np.ones(nt, dtype=np.int64)
        else:
            self.root = root
            self.root_tri = np.ascontiguousarray(root_tri, dtype=np.int64)
            self.depth = np.ascontiguousarray(depth, dtype=np.int64)
            self.code = np.ascontiguousarray(code, dtype=np.int64)
        self.prev = prev
        if np.any(self.depth > 60):
            raise ValueError("bisection depth exceeds the 60-level limit")
        v = self.vertices[self.triangles]
        det = ((v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1])
               - (v[:, 1, 1] - v[:, 0, 1]) * (v[:, 2, 0] - v[:, 0, 0]))
        if np.any(det <= 0.0):
            raise ValueError("triangles must be positively oriented and "
                             "non-degenerate")
        for arr in (self.vertices, self.triangles, self.boundary_vertex,
                    self.root_tri, self.depth, self.code):
            arr.setflags(write=False)
        self._cache = {}

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def edge_table(self):
        """Return (edges, tri_edges, counts).

        edges : (ne, 2) sorted vertex pairs in lexicographic order
        tri_edges : (nt, 3) edge ids; column 0 is the refinement edge
            (local vertices 1-2), column 1 the edge 0-1, column 2 the
            edge 2-0
        counts : (ne,) number of adjacent triangles (1 = boundary edge)
        """
        if "edges" not in self._cache:
            t = self.triangles
            raw = np.concatenate([t[:, [1, 2]], t[:, [0, 1]], t[:, [2, 0]]])
            raw = np.sort(raw, axis=1)
            edges, inv, counts = np.unique(raw, axis=0, return_inverse=True,
                                           return_counts=True)
            tri_edges = inv.reshape(3, -1).T
            self._cache["edges"] = (edges, tri_edges, counts)
        return self._cache["edges"]

    def areas(self):
        if "areas" not in self._cache:
            v = self.vertices[self.triangles]
            det = ((v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1])
                   - (v[:, 1, 1] - v[:, 0, 1]) * (v[:, 2, 0] - v[:, 0, 0]))
            self._cache["areas"] = 0.5 * det
        return self._cache["areas"]

    def diameters(self):
        """Per-triangle diameter (longest edge length)."""
        if "diameters" not in self._cache:
            v = self.vertices[self.triangles]
            e = np.stack([v[:, 1] - v[:, 2], v[:, 2] - v[:, 0],
                          v[:, 0] - v[:, 1]])
            self._cache["diameters"] = np.sqrt(
                (e ** 2).sum(axis=2)).max(axis=0)
        return self._cache["diameters"]

    def barycenters(self):
        if "barycenters" not in self._cache:
            self._cache["barycenters"] = \
                self.vertices[self.triangles].mean(axis=1)
        return self._cache["barycenters"]


class FaceSet:
    """Interior faces of a mesh, in deterministic (lexicographic) order.

    normals point from the lower-index adjacent triangle to the higher one.
    """

    def __init__(self, vertex_pairs, tris, normals, lengths, edge_ids):
        self.vertex_pairs = vertex_pairs
        self.tris = tris
        self.normals = normals
        self.lengths = lengths
        self.edge_ids = edge_ids

    def __len__(self):
        return len(self.vertex_pairs)


class MeshMetrics:
    def __init__(self, h_max, h_min, shape, transition=1.0):
        self.h_max = h_max
        self.h_min = h_min
        self.shape = shape
        self.transition = transition


class Overlay:
    """Common refinement of two meshes over the same root.

    mesh : the overlay triangulation
    to_first, to_second : per-overlay-triangle indices of the containing
        triangle in the first / second input mesh
    transition : max over overlay triangles of
        diam(containing triangle in first mesh) / diam(overlay triangle)
    """

    def __init__(self, mesh, to_first, to_second, transition):
        self.mesh = mesh
        self.to_first = to_first
        self.to_second = to_second
        self.transition = transition


class CoarsenReport:
    def __init__(self, merged_pairs, skipped):
        self.merged_pairs = merged_pairs
        self.skipped = skipped


def generate_structured(rect, n):
    """Criss-cross triangulation of the rectangle [x0,x1] x [y0,y1] with
    n x n cells, each split along its (0,0)-(1,1) diagonal: 2*n^2 triangles,
    (n+1)^2 vertices.  Refinement edges are the diagonals, which are the
    strictly longest edges of every cell."""
    x0, y0, x1, y1 = map(float, rect)
    if not (x1 > x0 and y1 > y0) or n < 1:
        raise ValueError("degenerate rectangle or n < 1")
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    tris = []
    for j in range(n):
        for i in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((v10, v11, v00))
            tris.append((v01, v00, v11))
    boundary = np.zeros(len(vertices), dtype=bool)
    jj, ii = np.divmod(np.arange(len(vertices)), n + 1)
    boundary[(ii == 0) | (ii == n) | (jj == 0) | (jj == n)] = True
    return TriMesh(vertices, np.array(tris), boundary)


def refine(mesh, marked):
    """Bisect the marked triangles, plus whatever the conformity closure
    requires.  Each triangle is bisected one or two levels per call.
    Returns `mesh` itself if nothing is marked."""
    marked = np.unique(np.asarray(marked, dtype=np.int64))
    if marked.size == 0:
        return mesh
    if marked.min() < 0 or marked.max() >= mesh.n_triangles:
        raise ValueError("marked triangle index out of range")
    edges, tri_edges, counts = mesh.edge_table()
    emark = np.zeros(len(edges), dtype=bool)
    emark[tri_edges[marked, 0]] = True
    passes = 0
    while True:
        passes += 1
        if passes > 10 * mesh.n_triangles + 10:
            raise RuntimeError("conformity closure did not terminate")
        tri_any = emark[tri_edges].any(axis=1)
        need = tri_any & ~emark[tri_edges[:, 0]]
        if not need.any():
            break
        emark[tri_edges[need, 0]] = True

    nv = mesh.n_vertices
    eidx = np.where(emark)[0]
    mid_of_edge = np.full(len(edges), -1, dtype=np.int64)
    mid_of_edge[eidx] = nv + np.arange(len(eidx))
    mids = 0.5 * (mesh.vertices[edges[eidx, 0]] + mesh.vertices[edges[eidx, 1]])
    vertices = np.vstack([mesh.vertices, mids])
    boundary = np.concatenate([mesh.boundary_vertex, counts[eidx] == 1])

    t = mesh.triangles
    p, a, b = t[:, 0], t[:, 1], t[:, 2]
    m0 = emark[tri_edges[:, 0]]
    mL = emark[tri_edges[:, 1]] & m0
    mR = emark[tri_edges[:, 2]] & m0
    mid0 = mid_of_edge[tri_edges[:, 0]]
    midL = mid_of_edge[tri_edges[:, 1]]
    midR = mid_of_edge[tri_edges[:, 2]]

    nchild = 1 + m0.astype(np.int64) + mL + mR
    off = np.zeros(mesh.n_triangles + 1, dtype=np.int64)
    np.cumsum(nchild, out=off[1:])
    total = off[-1]
    newtri = np.empty((total, 3), dtype=np.int64)
    newcode = np.empty(total, dtype=np.int64)
    newdepth = np.empty(total, dtype=np.int64)
    code, depth = mesh.code, mesh.depth

    i = np.where(~m0)[0]
    newtri[off[i]] = t[i]
    newcode[off[i]] = code[i]
    newdepth[off[i]] = depth[i]

    i = np.where(m0 & ~mL)[0]
    newtri[off[i]] = np.column_stack([mid0[i], p[i], a[i]])
    newcode[off[i]] = 2 * code[i]
    newdepth[off[i]] = depth[i] + 1

    i = np.where(mL)[0]
    newtri[off[i]] = np.column_stack([midL[i], mid0[i], p[i]])
    newcode[off[i]] = 4 * code[i]
    newtri[off[i] + 1] = np.column_stack([midL[i], a[i], mid0[i]])
    newcode[off[i] + 1] = 4 * code[i] + 1
    newdepth[off[i]] = depth[i] + 2
    newdepth[off[i] + 1] = depth[i] + 2

    rs = off[:-1] + 1 + mL
    i = np.where(m0 & ~mR)[0]
    newtri[rs[i]] = np.column_stack([mid0[i], b[i], p[i]])
    newcode[rs[i]] = 2 * code[i] + 1
    newdepth[rs[i]] = depth[i] + 1

    i = np.where(mR)[0]
    newtri[rs[i]] = np.column_stack([midR[i], mid0[i], b[i]])
    newcode[rs[i]] = 4 * code[i] + 2
    newtri[rs[i] + 1] = np.column_stack([midR[i], p[i], mid0[i]])
    newcode[rs[i] + 1] = 4 * code[i] + 3
    newdepth[rs[i]] = depth[i] + 2
    newdepth[rs[i] + 1] = depth[i] + 2

    newroot = np.repeat(mesh.root_tri, nchild)
    return TriMesh(vertices, newtri, boundary, root=mesh.root,
                   root_tri=newroot, depth=newdepth, code=newcode, prev=mesh)


def uniform_refine(mesh, levels=1):
    for _ in range(levels):
        mesh = refine(mesh, np.arange(mesh.n_triangles))
    return mesh


def _forest_index(mesh):
    return {(int(r), int(c)): i for i, (r, c)
            in enumerate(zip(mesh.root_tri, mesh.code))}


def coarsen(mesh, marked):
    """Merge marked sibling pairs back into their parents.

    A merge at a bisection vertex m is executed only when every triangle
    touching m belongs to a marked sibling pair whose shared peak is m;
    anything else would break conformity and is skipped (reported).  The
    initial mesh is never coarsened past.  Returns (mesh, CoarsenReport);
    the input mesh itself if nothing can be merged.
    """
    marked = np.unique(np.asarray(marked, dtype=np.int64))
    if marked.size and (marked.min() < 0 or marked.max() >= mesh.n_triangles):
        raise ValueError("marked triangle index out of range")
    forest = _forest_index(mesh)
    markset = set(int(k) for k in marked)
    pairs = {}  # left index -> right index, candidate sibling pairs
    for i in marked:
        i = int(i)
        if mesh.depth[i] == 0:
            continue
        c = int(mesh.code[i])
        if c % 2 == 1:
            continue  # handle pairs from their left member
        j = forest.get((int(mesh.root_tri[i]), c + 1))
        if j is None or j not in markset:
            continue
        pairs[i] = j

    # incidence: triangles touching each vertex
    vert_tris = [[] for _ in range(mesh.n_vertices)]
    for k, tri in enumerate(mesh.triangles):
        for v in tri:
            vert_tris[int(v)].append(k)

    by_peak = {}
    for i, j in pairs.items():
        m = int(mesh.triangles[i, 0])
        if m != int(mesh.triangles[j, 0]):
            raise RuntimeError("sibling pair with inconsistent peak")
        by_peak.setdefault(m, []).append((i, j))

    merged, removed_vertices = {}, set()
    for m, plist in by_peak.items():
        members = set()
        for i, j in plist:
            members.update((i, j))
        if members == set(vert_tris[m]):
            for i, j in plist:
                merged[i] = j
            removed_vertices.add(m)
    merged_tris = set(merged) | set(merged.values())
    skipped = np.array(sorted(set(int(k) for k in marked) - merged_tris),
                       dtype=np.int64)
    if not merged:
        return mesh, CoarsenReport(0, skipped)

    keep_vertex = np.ones(mesh.n_vertices, dtype=bool)
    keep_vertex[list(removed_vertices)] = False
    newid = np.cumsum(keep_vertex) - 1

    partner = {}
    for i, j in merged.items():
        partner[i] = (i, j)
        partner[j] = (i, j)
    rows, codes, depths, roots = [], [], [], []
    emitted = set()
    for k in range(mesh.n_triangles):
        if k in partner:
            i, j = partner[k]
            if (i, j) in emitted:
                continue
            emitted.add((i, j))
            L, R = mesh.triangles[i], mesh.triangles[j]
            rows.append((L[1], L[2], R[1]))
            codes.append(int(mesh.code[i]) >> 1)
            depths.append(int(mesh.depth[i]) - 1)
            roots.append(int(mesh.root_tri[i]))
        else:
            rows.append(tuple(mesh.triangles[k]))
            codes.append(int(mesh.code[k]))
            depths.append(int(mesh.depth[k]))
            roots.append(int(mesh.root_tri[k]))
    newtri = newid[np.array(rows, dtype=np.int64)]
    out = TriMesh(mesh.vertices[keep_vertex], newtri,
                  mesh.boundary_vertex[keep_vertex], root=mesh.root,
                  root_tri=np.array(roots), depth=np.array(depths),
                  code=np.array(codes), prev=mesh)
    return out, CoarsenReport(len(merged), skipped)


def ancestor_map(fine, coarse):
    """For each triangle of `fine`, the index of the triangle of `coarse`
    containing it.  Requires both meshes to share a root and `coarse` to be
    an ancestor cut along every branch."""
    if fine.root is not coarse.root:
        raise ValueError("meshes do not share a bisection forest")
    index = _forest_index(coarse)
    out = np.empty(fine.n_triangles, dtype=np.int64)
    for i in range(fine.n_triangles):
        r, c = int(fine.root_tri[i]), int(fine.code[i])
        while c >= 1:
            j = index.get((r, c))
            if j is not None:
                out[i] = j
                break
            c >>= 1
        else:
            raise ValueError("triangle %d has no ancestor in the coarse "
                             "mesh" % i)
    return out


def common_refinement(first, second):
    """Overlay (coarsest common refinement) of two meshes over the same
    root.  The transition metric is measured against `first`."""
    if first is second:
        n = first.n_triangles
        return Overlay(first, np.arange(n), np.arange(n), 1.0)
    if first.root is not second.root:
        raise ValueError("meshes do not share a bisection forest")
    ia, ib = _forest_index(first), _forest_index(second)
    src = []  # (mesh, local index, index in first, index in second)
    for i in range(first.n_triangles):
        r, c = int(first.root_tri[i]), int(first.code[i])
        cc = c
        while cc >= 1:
            j = ib.get((r, cc))
            if j is not None:
                src.append((first, i, i, j))
                break
            cc >>= 1
    for j in range(second.n_triangles):
        r, c = int(second.root_tri[j]), int(second.code[j])
        cc = c >> 1
        while cc >= 1:
            i = ia.get((r, cc))
            if i is not None:
                src.append((second, j, i, j))
                break
            cc >>= 1

    vid, coords, bnd = {}, [], []
    tris, roots, depths, codes = [], [], [], []
    to_first, to_second = [], []
    for msh, k, i, j in src:
        row = []
        for v in msh.triangles[k]:
            key = (float(msh.vertices[v, 0]), float(msh.vertices[v, 1]))
            if key not in vid:
                vid[key] = len(coords)
                coords.append(key)
                bnd.append(bool(msh.boundary_vertex[v]))
            row.append(vid[key])
        tris.append(row)
        roots.append(int(msh.root_tri[k]))
        depths.append(int(msh.depth[k]))
        codes.append(int(msh.code[k]))
        to_first.append(i)
        to_second.append(j)
    mesh = TriMesh(np.array(coords), np.array(tris), np.array(bnd),
                   root=first.root, root_tri=np.array(roots),
                   depth=np.array(depths), code=np.array(codes))
    cover = mesh.areas().sum()
    want = first.areas().sum()
    if not np.isclose(cover, want, rtol=1e-12, atol=0.0):
        raise RuntimeError("overlay does not cover the domain")
    to_first = np.array(to_first, dtype=np.int64)
    to_second = np.array(to_second, dtype=np.int64)
    transition = float(np.max(first.diameters()[to_first]
                              / mesh.diameters()))
    return Overlay(mesh, to_first, to_second, transition)


def interior_faces(mesh):
    edges, tri_edges, counts = mesh.edge_table()
    ne = len(edges)
    adj = np.full((ne, 2), -1, dtype=np.int64)
    flat = tri_edges.ravel()
    order = np.argsort(flat, kind="stable")
    eids_sorted = flat[order]
    tri_sorted = order // 3
    first = np.r_[True, eids_sorted[1:] != eids_sorted[:-1]]
    adj[eids_sorted[first], 0] = tri_sorted[first]
    adj[eids_sorted[~first], 1] = tri_sorted[~first]
    interior = counts == 2
    eid = np.where(interior)[0]
    tris = np.sort(adj[eid], axis=1)
    vp = edges[eid]
    tang = mesh.vertices[vp[:, 1]] - mesh.vertices[vp[:, 0]]
    lengths = np.sqrt((tang ** 2).sum(axis=1))
    normals = np.column_stack([tang[:, 1], -tang[:, 0]]) / lengths[:, None]
    cent = mesh.vertices[mesh.triangles[tris[:, 0]]].mean(axis=1)
    emid = 0.5 * (mesh.vertices[vp[:, 0]] + mesh.vertices[vp[:, 1]])
    flip = ((cent - emid) * normals).sum(axis=1) > 0.0
    normals[flip] *= -1.0
    return FaceSet(vp, tris, normals, lengths, eid)


def mesh_metrics(mesh, transition=1.0):
    v = mesh.vertices[mesh.triangles]
    sides = np.stack([v[:, 1] - v[:, 2], v[:, 2] - v[:, 0],
                      v[:, 0] - v[:, 1]])
    lengths = np.sqrt((sides ** 2).sum(axis=2))
    h = lengths.max(axis=0)
    peri = lengths.sum(axis=0)
    inradius = 2.0 * mesh.areas() / peri
    shape = float(np.max(h / inradius))
    assert shape >= 2.0
    return MeshMetrics(float(h.max()), float(h.min()), shape, transition)


def check_admissible(mesh):
    """Raise ValueError if the mesh is not a conforming triangulation;
    warn when a triangle has no strictly interior vertex."""
    edges, tri_edges, counts = mesh.edge_table()
    if counts.max() > 2:
        e = int(np.argmax(counts))
        raise ValueError("edge %s shared by more than two triangles"
                         % (tuple(edges[e]),))
    bedges = edges[counts == 1]
    if not mesh.boundary_vertex[bedges].all():
        raise ValueError("boundary edge with unflagged boundary vertex")
    # hanging-node check: no vertex strictly inside a single-adjacency edge
    for u, v in bedges:
        a, b = mesh.vertices[u], mesh.vertices[v]
        d = b - a
        L2 = float(d @ d)
        rel = mesh.vertices - a
        t = (rel @ d) / L2
        on = np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0]) \
            <= 1e-12 * np.sqrt(L2)
        inside = on & (t > 1e-12) & (t < 1.0 - 1e-12)
        if inside.any():
            w = int(np.where(inside)[0][0])
            raise ValueError("hanging node: vertex %d lies inside edge %s"
                             % (w, (int(u), int(v))))
    all_bnd = mesh.boundary_vertex[mesh.triangles].all(axis=1)
    if all_bnd.any():
        warnings.warn("%d triangle(s) have all vertices on the boundary"
                      % int(all_bnd.sum()))


def domain_diameter(mesh):
    """Diameter of the meshed domain (max pairwise vertex distance)."""
    pts = mesh.vertices[mesh.boundary_vertex]
    if len(pts) > 600:
        from scipy.spatial import ConvexHull
        pts = pts[ConvexHull(pts).vertices]
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    return float(np.sqrt(d2.max()))


def save_mesh(mesh, path):
    """Plain-text mesh format, bit-exact round trip.

    Layout: header "trimesh 2"; vertex count; one "x y" line per vertex in
    C99 hex-float notation; triangle count; one "i j k refedge" line per
    triangle where refedge is the local index of the vertex opposite the
    refinement edge; boundary vertex count; one index per line.
    """
    lines = ["trimesh 2", str(mesh.n_vertices)]
    for x, y in mesh.vertices:
        lines.append("%s %s" % (float(x).hex(), float(y).hex()))
    lines.append(str(mesh.n_triangles))
    for i, j, k in mesh.triangles:
        lines.append("%d %d %d 0" % (i, j, k))
    bidx = np.where(mesh.boundary_vertex)[0]
    lines.append(str(len(bidx)))
    lines.extend(str(int(i)) for i in bidx)
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def _parse_float(tok):
    return float.fromhex(tok) if "0x" in tok.lower() else float(tok)


def load_mesh(path):
    """Load a mesh written by save_mesh (decimal coordinates are accepted
    too).  The result is a fresh forest root; admissibility is checked."""
    with open(path) as f:
        toks = f.read().split()
    pos = 0

    def take(n=1):
        nonlocal pos
        out = toks[pos:pos + n]
        if len(out) != n:
            raise ValueError("truncated mesh file %s" % path)
        pos += n
        return out

    magic = take(2)
    if magic != ["trimesh", "2"]:
        raise ValueError("not a trimesh-2 file: %s" % path)
    nv = int(take()[0])
    vertices = np.array([[_parse_float(x) for x in take(2)]
                         for _ in range(nv)])
    nt = int(take()[0])
    tris = np.empty((nt, 3), dtype=np.int64)
    for k in range(nt):
        i, j, l, ref = (int(x) for x in take(4))
        if ref not in (0, 1, 2):
            raise ValueError("refedge marker must be 0, 1 or 2")
        row = [i, j, l]
        row = row[ref:] + row[:ref]  # rotate the opposite vertex to slot 0
        p, a, b = row
        va, vb, vp = vertices[a], vertices[b], vertices[p]
        det = (va[0] - vp[0]) * (vb[1] - vp[1]) \
            - (va[1] - vp[1]) * (vb[0] - vp[0])
        if det < 0:
            a, b = b, a
        tris[k] = (p, a, b)
    nb = int(take()[0])
    boundary = np.zeros(nv, dtype=bool)
    boundary[[int(x[0]) for x in (take() for _ in range(nb))]] = True
    mesh = TriMesh(vertices, tris, boundary)
    check_admissible(mesh)
    return mesh
