"""Laplace-domain kernels and collocation assembly of the single- and
double-layer matrices.

Entries are quadratures over triangles.  For a block of (collocation point,
triangle) pairs the geometric part of the quadrature (distances, weights,
normal factors) is frequency independent and is kept in a :class:`Stencil`;
evaluating the block at a frequency ``s`` then only costs one exponential per
quadrature point.
"""
from dataclasses import dataclass

import numpy as np

from .quad import duffy_rule, gauss_triangle, select_orders

FOUR_PI = 4.0 * np.pi


class SingularEvaluationError(ValueError):
    pass


def kernel_slp(x, y, s, c=1.0):
    """exp(-s r / c) / (4 pi r)."""
    r = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), axis=-1)
    if np.any(r < 1e-14):
        raise SingularEvaluationError("x == y; use a singular quadrature")
    return np.exp(-s * r / c) / (FOUR_PI * r)


def kernel_dlp(x, y, n_y, s, c=1.0):
    """Normal derivative in y of :func:`kernel_slp`."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r = np.linalg.norm(d, axis=-1)
    if np.any(r < 1e-14):
        raise SingularEvaluationError("x == y; use a singular quadrature")
    sr = s * r / c
    return np.exp(-sr) * (1.0 + sr) * np.sum(d * n_y, axis=-1) / (FOUR_PI * r ** 3)


@dataclass
class Collocation:
    """Collocation points and, per point, the triangles on which it lies.

    ``on_triangles[i]`` lists triangles whose integrals are singular for
    point ``i`` (own triangle for centroids, incident triangles for
    vertices, none for points off the surface).
    """

    points: np.ndarray
    on_triangles: list

    def __len__(self):
        return len(self.points)

    def subset(self, idx):
        idx = np.asarray(idx)
        return Collocation(self.points[idx], [self.on_triangles[i] for i in idx])


def centroid_collocation(mesh, triangles=None):
    tri = np.arange(mesh.n_triangles) if triangles is None else np.asarray(triangles)
    return Collocation(mesh.centroids[tri], [[int(t)] for t in tri])


def vertex_collocation(mesh, vertices=None):
    vert = np.arange(mesh.n_vertices) if vertices is None else np.asarray(vertices)
    inc = mesh.vertex_triangles()
    return Collocation(mesh.vertices[vert], [inc[v] for v in vert])


def point_collocation(points):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return Collocation(points, [[] for _ in range(len(points))])


@dataclass
class _Group:
    pairs: np.ndarray     # (G,) flat pair index row * n_tri + tri
    r: np.ndarray         # (G, n)
    ws: np.ndarray        # (G, n)   weight * jacobian / (4 pi)
    wd: np.ndarray        # (G, n, 3) ws * shape_a * (x - y).n / r^3


class Stencil:
    """Frequency-independent quadrature data for all pairs ``rows x triangles``."""

    def __init__(self, mesh, colloc, rows, triangles, c=1.0):
        self.mesh = mesh
        self.c = float(c)
        self.rows = np.asarray(rows, dtype=np.int64)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        nr, nt = len(self.rows), len(self.triangles)
        self.shape = (nr, nt)
        x = colloc.points[self.rows]
        p0, p1, p2 = (c_[self.triangles] for c_ in mesh.corners())
        normals = mesh.normals[self.triangles]
        areas = mesh.areas[self.triangles]
        hs = mesh.element_sizes[self.triangles]
        cent = (p0 + p1 + p2) / 3.0

        singular = np.zeros((nr, nt), dtype=bool)
        tri_pos = {int(t): j for j, t in enumerate(self.triangles)}
        for i, r_ in enumerate(self.rows):
            for t in colloc.on_triangles[r_]:
                j = tri_pos.get(int(t))
                if j is not None:
                    singular[i, j] = True

        dist = np.linalg.norm(x[:, None, :] - cent[None, :, :], axis=2)
        orders = select_orders(dist, hs[None, :])
        orders[singular] = -1
        self.groups = []
        for order in np.unique(orders):
            if order < 0:
                continue
            ii, jj = np.nonzero(orders == order)
            ref, w = gauss_triangle(int(order))
            xi, eta = ref[:, 0], ref[:, 1]
            shape = np.stack([1.0 - xi - eta, xi, eta], axis=1)   # (n, 3)
            e1 = (p1 - p0)[jj]
            e2 = (p2 - p0)[jj]
            y = p0[jj][:, None, :] + xi[None, :, None] * e1[:, None, :] + eta[None, :, None] * e2[:, None, :]
            self._add_group(ii, jj, x[ii][:, None, :] - y, w[None, :] * (2.0 * areas[jj])[:, None],
                            np.broadcast_to(shape, (len(ii),) + shape.shape), normals[jj])
        ii, jj = np.nonzero(singular)
        by_len = {}
        for i, j in zip(ii, jj):
            pts, wts = duffy_rule(x[i], p0[j], p1[j], p2[j])
            from .quad import barycentric
            lam = barycentric(pts, p0[j], p1[j], p2[j])
            by_len.setdefault(len(wts), []).append((i, j, x[i] - pts, wts, lam))
        for items in by_len.values():
            ii_ = np.array([it[0] for it in items])
            jj_ = np.array([it[1] for it in items])
            self._add_group(ii_, jj_, np.stack([it[2] for it in items]),
                            np.stack([it[3] for it in items]),
                            np.stack([it[4] for it in items]), normals[jj_])

    def _add_group(self, ii, jj, d, w, shape, normals):
        r = np.linalg.norm(d, axis=2)
        ws = w / FOUR_PI
        dn = np.einsum("gnk,gk->gn", d, normals)
        wd = (ws * dn / r ** 3)[:, :, None] * shape
        self.groups.append(_Group(ii * self.shape[1] + jj, r, ws, wd))

    @property
    def n_points(self):
        return sum(g.r.size for g in self.groups)

    def slp(self, s):
        """Single-layer block (rows x triangles) at frequency ``s``."""
        out = np.zeros(self.shape[0] * self.shape[1], dtype=complex)
        k = s / self.c
        for g in self.groups:
            out[g.pairs] = np.sum(g.ws * np.exp(-k * g.r) / g.r, axis=1)
        return out.reshape(self.shape)

    def dlp_local(self, s):
        """Double-layer contributions (rows x triangles x local vertex) at ``s``."""
        out = np.zeros((self.shape[0] * self.shape[1], 3), dtype=complex)
        k = s / self.c
        for g in self.groups:
            kr = k * g.r
            out[g.pairs] = np.einsum("gn,gna->ga", np.exp(-kr) * (1.0 + kr), g.wd)
        return out.reshape(self.shape + (3,))

    def dlp(self, s, vertex_cols):
        """Double-layer block (rows x P1 vertex columns) at ``s``."""
        loc = np.full(self.mesh.n_vertices, -1, dtype=np.int64)
        vertex_cols = np.asarray(vertex_cols, dtype=np.int64)
        loc[vertex_cols] = np.arange(len(vertex_cols))
        return scatter_vertices(self.dlp_local(s), self.mesh.triangles[self.triangles], loc)


def scatter_vertices(local, tri_vertices, loc):
    """Sum per-triangle local-vertex contributions into vertex columns ``loc``."""
    nr = local.shape[0]
    out = np.zeros((nr, int(loc.max()) + 1 if loc.max() >= 0 else 0), dtype=local.dtype)
    for a in range(3):
        cols = loc[tri_vertices[:, a]]
        keep = cols >= 0
        if np.any(keep):
            np.add.at(out.T, cols[keep], local[:, keep, a].T)
    return out


def triangles_touching(mesh, vertices):
    mask = np.isin(mesh.triangles, np.asarray(vertices)).any(axis=1)
    return np.nonzero(mask)[0]


def assemble_slp(mesh, colloc, s, rows=None, triangles=None, c=1.0):
    rows = np.arange(len(colloc)) if rows is None else rows
    triangles = np.arange(mesh.n_triangles) if triangles is None else triangles
    return Stencil(mesh, colloc, rows, triangles, c).slp(s)


def assemble_dlp(mesh, colloc, s, rows=None, vertices=None, c=1.0):
    rows = np.arange(len(colloc)) if rows is None else rows
    vertices = np.arange(mesh.n_vertices) if vertices is None else np.asarray(vertices)
    tris = triangles_touching(mesh, vertices)
    return Stencil(mesh, colloc, rows, tris, c).dlp(s, vertices)


def integral_free_term(mesh, colloc, chunk_rows=128):
    """Jump coefficient C at each collocation point from C 1 + K(0) 1 = 0."""
    if not mesh.is_closed():
        raise ValueError("the row-sum identity for C needs a closed surface")
    layout = Layout(mesh, colloc, [ColumnBlock("dlp", np.arange(mesh.n_vertices))])
    out = np.empty(len(colloc))
    for a in range(0, len(colloc), chunk_rows):
        rows = np.arange(a, min(a + chunk_rows, len(colloc)))
        out[rows] = -np.real(layout.evaluate(0.0, rows).sum(axis=1))
    return out


def trace_evaluation(mesh, colloc_kind, ids, vertex_cols=None):
    """Sparse matrix evaluating a P1 function at collocation points.

    Rows follow ``ids`` (triangles for centroid rows, vertices for vertex
    rows); columns are ``vertex_cols`` (all vertices by default).
    """
    import scipy.sparse as sp
    ids = np.asarray(ids, dtype=np.int64)
    if colloc_kind == "centroid":
        rows = np.repeat(np.arange(len(ids)), 3)
        cols = mesh.triangles[ids].ravel()
        vals = np.full(len(cols), 1.0 / 3.0)
    elif colloc_kind == "vertex":
        rows, cols, vals = np.arange(len(ids)), ids, np.ones(len(ids))
    else:
        raise ValueError(colloc_kind)
    full = sp.csr_matrix((vals, (rows, cols)), shape=(len(ids), mesh.n_vertices))
    if vertex_cols is None:
        return full
    return full[:, np.asarray(vertex_cols, dtype=np.int64)]


# ---------------------------------------------------------------------------
# Operator layouts: one set of collocation rows, columns made of P0 (single
# layer) and P1 (double layer) blocks with signs.  Entries of a layout are
#     sum_q coef_q * exp(-s u_q) * (1 + dl_q * s u_q),   u = r / c
# which covers both kernels with the same frequency dependence.


@dataclass
class ColumnBlock:
    kind: str            # "slp": triangle columns, "dlp": vertex columns
    ids: np.ndarray
    sign: float = 1.0

    def __post_init__(self):
        if self.kind not in ("slp", "dlp"):
            raise ValueError(f"unknown column kind {self.kind!r}")
        self.ids = np.asarray(self.ids, dtype=np.int64)


class Layout:
    """Row collocation set and signed column blocks of one boundary operator."""

    def __init__(self, mesh, colloc, blocks, c=1.0):
        self.mesh = mesh
        self.colloc = colloc
        self.blocks = [b for b in blocks if len(b.ids)]
        self.c = float(c)
        sizes = [len(b.ids) for b in self.blocks]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.n_rows = len(colloc)
        self.n_cols = int(self.offsets[-1])

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    def column_points(self):
        """Representative geometric point per column (centroid or vertex)."""
        pts = [self.mesh.centroids[b.ids] if b.kind == "slp" else self.mesh.vertices[b.ids]
               for b in self.blocks]
        return np.concatenate(pts) if pts else np.zeros((0, 3))

    def quadrature(self, rows=None, cols=None):
        rows = np.arange(self.n_rows) if rows is None else np.asarray(rows, dtype=np.int64)
        cols = np.arange(self.n_cols) if cols is None else np.asarray(cols, dtype=np.int64)
        return PairQuadrature.build(self, rows, cols)

    def evaluate(self, s, rows=None, cols=None):
        return self.quadrature(rows, cols).evaluate(s)


class PairQuadrature:
    """Quadrature points of a (rows x cols) sub-block, sorted by pair."""

    def __init__(self, shape, pair, u, coef, dl):
        self.shape = shape
        order = np.argsort(pair, kind="stable")
        self.pair = pair[order]
        self.u = u[order]
        self.coef = coef[order]
        self.dl = dl[order]
        n_pairs = shape[0] * shape[1]
        counts = np.bincount(self.pair, minlength=n_pairs)
        if n_pairs and counts.min() == 0:
            raise AssertionError("every pair needs at least one quadrature point")
        self.starts = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
        self._col_perm = None

    @classmethod
    def build(cls, layout, rows, cols):
        nc = len(cols)
        pieces = []
        blk = np.searchsorted(layout.offsets, cols, side="right") - 1
        for b, block in enumerate(layout.blocks):
            pos = np.nonzero(blk == b)[0]
            if len(pos) == 0:
                continue
            ids = block.ids[cols[pos] - layout.offsets[b]]
            if block.kind == "slp":
                st = Stencil(layout.mesh, layout.colloc, rows, ids, layout.c)
                for g in st.groups:
                    i, j = np.divmod(g.pairs, len(ids))
                    npt = g.r.shape[1]
                    pieces.append((np.repeat(i * nc + pos[j], npt), g.r.ravel() / layout.c,
                                   (block.sign * g.ws / g.r).ravel(), np.zeros(g.r.size, bool)))
            else:
                tris = triangles_touching(layout.mesh, ids)
                st = Stencil(layout.mesh, layout.colloc, rows, tris, layout.c)
                loc = np.full(layout.mesh.n_vertices, -1, dtype=np.int64)
                loc[ids] = pos
                tv = layout.mesh.triangles[tris]
                for g in st.groups:
                    i, j = np.divmod(g.pairs, len(tris))
                    npt = g.r.shape[1]
                    for a in range(3):
                        col = loc[tv[j, a]]
                        keep = col >= 0
                        if not np.any(keep):
                            continue
                        pieces.append((np.repeat(i[keep] * nc + col[keep], npt),
                                       g.r[keep].ravel() / layout.c,
                                       block.sign * g.wd[keep, :, a].ravel(),
                                       np.ones(int(keep.sum()) * npt, bool)))
        if not pieces:
            z = np.zeros(0)
            return cls((len(rows), nc), z.astype(np.int64), z, z, z.astype(bool))
        pair, u, coef, dl = (np.concatenate(p) for p in zip(*pieces))
        return cls((len(rows), nc), pair, u, coef, dl)

    @property
    def n_points(self):
        return len(self.u)

    def _phi(self, s, sel=slice(None)):
        su = s * self.u[sel]
        return self.coef[sel] * np.exp(-su) * np.where(self.dl[sel], 1.0 + su, 1.0)

    def evaluate(self, s):
        if self.n_points == 0:
            return np.zeros(self.shape, dtype=complex)
        return np.add.reduceat(self._phi(s), self.starts).reshape(self.shape)

    def row(self, i, s):
        nc = self.shape[1]
        a = self.starts[i * nc]
        b = self.starts[(i + 1) * nc] if (i + 1) * nc < len(self.starts) else self.n_points
        return np.add.reduceat(self._phi(s, slice(a, b)), self.starts[i * nc:(i + 1) * nc] - a)

    def col(self, j, s):
        if self._col_perm is None:
            nr, nc = self.shape
            i, jj = np.divmod(self.pair, nc)
            self._col_perm = np.argsort(jj * nr + i, kind="stable")
            counts = np.bincount(jj, minlength=nc)
            self._col_starts = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
            self._col_rows = i[self._col_perm]
        idx = self._col_perm[self._col_starts[j]:self._col_starts[j + 1]]
        vals = self._phi(s, idx)
        return np.bincount(self._col_rows[self._col_starts[j]:self._col_starts[j + 1]],
                           weights=vals.real, minlength=self.shape[0]) + 1j * np.bincount(
            self._col_rows[self._col_starts[j]:self._col_starts[j + 1]],
            weights=vals.imag, minlength=self.shape[0])

    def entry(self, i, j, s):
        """Entry (i, j) at one or many frequencies."""
        p = i * self.shape[1] + j
        a = self.starts[p]
        b = self.starts[p + 1] if p + 1 < len(self.starts) else self.n_points
        s = np.asarray(s)
        su = np.multiply.outer(s, self.u[a:b])
        vals = self.coef[a:b] * np.exp(-su) * np.where(self.dl[a:b], 1.0 + su, 1.0)
        return vals.sum(axis=-1)


def frequency_basis(u_unique, s):
    """exp(-s u) and (1 + s u) exp(-s u) stacked, the two kernel profiles."""
    su = s * u_unique
    e = np.exp(-su)
    return np.concatenate([e, e * (1.0 + su)])


class SparseFrequencyOperator:
    """Whole-layout operator as ``S @ basis(s)`` with deduplicated distances.

    On structured meshes many quadrature distances coincide, so the number of
    distinct ``u`` values is far below the number of quadrature points.  Any
    linear combination of frequencies, ``sum_l c_l A(s_l)``, then costs one
    small dense product plus one sparse product.
    """

    QUANTUM = 2.0 ** -42

    def __init__(self, layout, chunk_rows=128):
        self.layout = layout
        self.shape = layout.shape
        nr, nc = self.shape
        parts = []
        for a in range(0, nr, chunk_rows):
            rows = np.arange(a, min(a + chunk_rows, nr))
            pq = layout.quadrature(rows)
            key = np.round(pq.u / self.QUANTUM).astype(np.int64)
            uk, inv = np.unique(key, return_inverse=True)
            parts.append((rows, pq.pair, uk, inv, pq.coef, pq.dl))
        keys = np.unique(np.concatenate([p[2] for p in parts])) if parts else np.zeros(0, np.int64)
        self.u = keys * self.QUANTUM
        nu = len(keys)
        import scipy.sparse as sp
        self.chunks = []
        for rows, pair, uk, inv, coef, dl in parts:
            col = np.searchsorted(keys, uk)[inv] + nu * dl
            mat = sp.csr_matrix((coef, (pair, col)), shape=(len(rows) * nc, 2 * nu))
            mat.sum_duplicates()
            self.chunks.append((rows, mat))

    @property
    def nnz(self):
        return sum(m.nnz for _, m in self.chunks)

    def basis(self, s):
        return frequency_basis(self.u, s)

    def combine(self, psi):
        """Dense matrices for basis combinations ``psi`` (2U x K) -> (K, nr, nc)."""
        psi = np.asarray(psi)
        squeeze = psi.ndim == 1
        if squeeze:
            psi = psi[:, None]
        nr, nc = self.shape
        out = np.empty((psi.shape[1], nr, nc), dtype=np.result_type(psi.dtype, float))
        for rows, mat in self.chunks:
            out[:, rows, :] = (mat @ psi).T.reshape(psi.shape[1], len(rows), nc)
        return out[0] if squeeze else out

    def evaluate(self, s):
        return self.combine(self.basis(s))
