"""Black-box FMM with tensor Chebyshev interpolation on a uniform octree.

Sources are far-field quadrature points of the column basis functions,
targets are collocation points.  Only the M2L translation matrices and the
near-field blocks depend on the frequency; interpolation operators are
shared by all frequencies.  The double layer reuses the single-layer M2L
matrices: its normal derivative acts on the source-side interpolants.

Near field: for every finest target box, the columns whose support touches
its 3x3x3 neighbourhood are evaluated exactly (singular quadrature
included), minus whatever the far-field expansion already adds for them.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assemble import FOUR_PI, PairQuadrature, triangles_touching
from .quad import gauss_triangle, select_order


def cheb_nodes(p):
    k = np.arange(1, p + 1)
    return np.cos((2 * k - 1) * np.pi / (2 * p))


def _cheb_tu(x, p):
    """T_0..T_{p-1} and U_0..U_{p-1} at x (shape (n, p))."""
    x = np.asarray(x, dtype=float)
    T = np.ones((len(x), max(p, 1)))
    U = np.ones((len(x), max(p, 1)))
    if p > 1:
        T[:, 1] = x
        U[:, 1] = 2 * x
    for k in range(2, p):
        T[:, k] = 2 * x * T[:, k - 1] - T[:, k - 2]
        U[:, k] = 2 * x * U[:, k - 1] - U[:, k - 2]
    return T, U


def cheb_interp_1d(x, p):
    """S_p(x, xbar_m) and its x-derivative for the p first-kind nodes."""
    nodes = cheb_nodes(p)
    T, U = _cheb_tu(x, p)
    Tn, _ = _cheb_tu(nodes, p)
    S = np.full((len(x), p), 1.0 / p)
    dS = np.zeros((len(x), p))
    if p > 1:
        S += (2.0 / p) * T[:, 1:] @ Tn[:, 1:].T
        k = np.arange(1, p)
        dS += (2.0 / p) * (U[:, :-1] * k) @ Tn[:, 1:].T
    return S, dS


def cheb_interp_3d(local, p, normals=None, half=1.0):
    """Tensor interpolation weights (n, p^3); with normals, n . grad_y instead."""
    Sx, dSx = cheb_interp_1d(local[:, 0], p)
    Sy, dSy = cheb_interp_1d(local[:, 1], p)
    Sz, dSz = cheb_interp_1d(local[:, 2], p)

    def outer(a, b, c):
        return (a[:, :, None, None] * b[:, None, :, None] * c[:, None, None, :]).reshape(len(local), -1)

    if normals is None:
        return outer(Sx, Sy, Sz)
    n = normals / half
    return (n[:, 0, None] * outer(dSx, Sy, Sz) + n[:, 1, None] * outer(Sx, dSy, Sz)
            + n[:, 2, None] * outer(Sx, Sy, dSz))


def cheb_grid(p):
    x = cheb_nodes(p)
    g = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1)
    return g.reshape(-1, 3)


def kernel_g(r, s, c=1.0):
    return np.exp(-s * r / c) / r


@dataclass
class _Level:
    keys: np.ndarray      # (nb, 3) integer box coordinates
    centers: np.ndarray


class FmmTree:
    """Uniform octree over targets and sources; ``levels`` subdivisions."""

    def __init__(self, targets, sources, levels):
        if levels < 1:
            raise ValueError("levels must be >= 1")
        self.levels = int(levels)
        pts = np.vstack([targets, sources])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        self.center = 0.5 * (lo + hi)
        self.half = 0.5 * float(np.max(hi - lo)) * (1 + 1e-9) + 1e-12
        self.t_coords = self._coords(targets, self.levels)
        self.s_coords = self._coords(sources, self.levels)
        self.t_levels, self.s_levels = {}, {}
        self.t_box, self.s_box = {}, {}
        for lev in range(1, self.levels + 1):
            for coords, levels_, box in ((self.t_coords, self.t_levels, self.t_box),
                                         (self.s_coords, self.s_levels, self.s_box)):
                c = coords >> (self.levels - lev)
                keys, inv = np.unique(c, axis=0, return_inverse=True)
                levels_[lev] = _Level(keys, self.box_centers(keys, lev))
                box[lev] = inv.ravel()
        self.interactions = {lev: self._interactions(lev) for lev in range(2, self.levels + 1)}
        self.near = self._near()

    def _coords(self, pts, lev):
        n = 2 ** lev
        c = np.floor((pts - (self.center - self.half)) / (2 * self.half) * n).astype(np.int64)
        return np.clip(c, 0, n - 1)

    def width(self, lev):
        return 2 * self.half / 2 ** lev

    def box_centers(self, keys, lev):
        return self.center - self.half + (keys + 0.5) * self.width(lev)

    def _interactions(self, lev):
        """{offset: (target box ids, source box ids)} at one level."""
        tk, sk = self.t_levels[lev].keys, self.s_levels[lev].keys
        out = {}
        for t, key in enumerate(tk):
            d_par = np.abs((sk >> 1) - (key >> 1)).max(axis=1)
            d = np.abs(sk - key).max(axis=1)
            for s_ in np.nonzero((d_par <= 1) & (d > 1))[0]:
                off = tuple(int(v) for v in sk[s_] - key)
                out.setdefault(off, ([], []))
                out[off][0].append(t)
                out[off][1].append(int(s_))
        return {k: (np.array(a), np.array(b)) for k, (a, b) in out.items()}

    def _near(self):
        tk, sk = self.t_levels[self.levels].keys, self.s_levels[self.levels].keys
        return [np.nonzero(np.abs(sk - key).max(axis=1) <= 1)[0] for key in tk]

    @property
    def n_interaction_pairs(self):
        return sum(len(a) for lev in self.interactions.values() for a, _ in lev.values())


class SourcePoints:
    """Far-field quadrature points of the layout's columns with a charge map."""

    def __init__(self, layout, order):
        mesh = layout.mesh
        ref, w = gauss_triangle(order)
        xi, eta = ref[:, 0], ref[:, 1]
        shape = np.stack([1 - xi - eta, xi, eta], axis=1)
        p0, p1, p2 = mesh.corners()
        pts, nrm, dl, rows, cols, vals = [], [], [], [], [], []
        npt = 0
        for b, block in enumerate(layout.blocks):
            off = layout.offsets[b]
            tris = block.ids if block.kind == "slp" else triangles_touching(mesh, block.ids)
            y = (p0[tris][:, None] + xi[None, :, None] * (p1 - p0)[tris][:, None]
                 + eta[None, :, None] * (p2 - p0)[tris][:, None]).reshape(-1, 3)
            ws = (w[None, :] * 2 * mesh.areas[tris][:, None] / FOUR_PI).ravel()
            ids = npt + np.arange(len(y))
            pts.append(y)
            nrm.append(np.repeat(mesh.normals[tris], len(w), axis=0))
            dl.append(np.full(len(y), block.kind == "dlp"))
            if block.kind == "slp":
                rows.append(ids)
                cols.append(off + np.repeat(np.arange(len(tris)), len(w)))
                vals.append(block.sign * ws)
            else:
                loc = np.full(mesh.n_vertices, -1, dtype=np.int64)
                loc[block.ids] = np.arange(len(block.ids))
                tv = mesh.triangles[tris]
                for a in range(3):
                    col = np.repeat(loc[tv[:, a]], len(w))
                    keep = col >= 0
                    rows.append(ids[keep])
                    cols.append(off + col[keep])
                    vals.append(block.sign * (ws * np.tile(shape[:, a], len(tris)))[keep])
            npt += len(y)
        self.points = np.vstack(pts)
        self.normals = np.vstack(nrm)
        self.dl = np.concatenate(dl)
        self.charges = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                     shape=(npt, layout.n_cols))
        self.charges_csc = self.charges.tocsc()


class FmmOperator:
    """FMM representation of a layout; per-frequency data via :meth:`at`."""

    def __init__(self, layout, levels, order, far_order=None):
        self.layout = layout
        self.p = int(order)
        mesh = layout.mesh
        targets = layout.colloc.points
        width = 2 * 0.5 * float(np.max(np.ptp(np.vstack([targets, mesh.vertices]), axis=0))) / 2 ** levels
        if far_order is None:
            far_order = select_order(width, mesh.h)
        self.far_order = far_order
        self.src = SourcePoints(layout, far_order)
        self.tree = FmmTree(targets, self.src.points, levels)
        self.c = layout.c
        self.shape = layout.shape
        self._build_interp()
        self._build_near()

    # -- frequency independent parts ------------------------------------
    def _build_interp(self):
        tree, p, L = self.tree, self.p, self.tree.levels
        self.grid = cheb_grid(p)
        h = tree.half / 2 ** L
        self.p2m = []
        box = tree.s_box[L]
        cen = tree.s_levels[L].centers
        order = np.argsort(box, kind="stable")
        counts = np.bincount(box, minlength=len(cen))
        starts = np.concatenate([[0], np.cumsum(counts)])
        for b in range(len(cen)):
            idx = order[starts[b]:starts[b + 1]]
            loc = (self.src.points[idx] - cen[b]) / h
            S = cheb_interp_3d(loc, p)
            if np.any(self.src.dl[idx]):
                S = np.where(self.src.dl[idx][:, None], cheb_interp_3d(loc, p, self.src.normals[idx], h), S)
            self.p2m.append((idx, S.T.copy()))
        tbox = tree.t_box[L]
        tcen = tree.t_levels[L].centers
        order = np.argsort(tbox, kind="stable")
        counts = np.bincount(tbox, minlength=len(tcen))
        starts = np.concatenate([[0], np.cumsum(counts)])
        self.l2p = []
        for b in range(len(tcen)):
            idx = order[starts[b]:starts[b + 1]]
            self.l2p.append((idx, cheb_interp_3d((self.layout.colloc.points[idx] - tcen[b]) / h, p)))
        # child-in-parent interpolation, identical on every level
        self.m2m = {}
        for oct_ in np.ndindex(2, 2, 2):
            child = (self.grid + (2 * np.array(oct_) - 1)) / 2.0
            self.m2m[oct_] = cheb_interp_3d(child, p).T.copy()   # (parent, child)
        self.parent = {}
        for lev in range(2, L + 1):
            for side, levels_ in (("s", tree.s_levels), ("t", tree.t_levels)):
                keys = levels_[lev].keys
                pk = levels_[lev - 1].keys
                pidx = {tuple(k): i for i, k in enumerate(pk)}
                par = np.array([pidx[tuple(k >> 1)] for k in keys], dtype=np.int64)
                octs = [tuple(int(v) for v in (k & 1)) for k in keys]
                self.parent[(side, lev)] = (par, octs)

    def m2l_matrix(self, lev, offset, s):
        return self.m2l_fiber_points(lev, offset, np.atleast_1d(s))[0]

    def m2l_fiber_points(self, lev, offset, svec):
        h = self.tree.half / 2 ** lev
        x = h * self.grid
        y = np.asarray(offset) * 2 * h + h * self.grid
        r = np.linalg.norm(x[:, None, :] - y[None, :, :], axis=2)
        svec = np.asarray(svec)
        return np.exp(-np.multiply.outer(svec, r) / self.c) / r

    def _build_near(self):
        """Exact near-field blocks per finest target box as pair quadratures."""
        tree, L, lay = self.tree, self.tree.levels, self.layout
        mesh = lay.mesh
        # support bounding boxes of the columns
        lo, hi = [], []
        for block in lay.blocks:
            if block.kind == "slp":
                v = mesh.vertices[mesh.triangles[block.ids]]
                lo.append(v.min(axis=1))
                hi.append(v.max(axis=1))
            else:
                vt = mesh.vertex_triangles()
                for vid in block.ids:
                    pts = mesh.vertices[mesh.triangles[vt[vid]]].reshape(-1, 3)
                    lo.append(pts.min(axis=0)[None])
                    hi.append(pts.max(axis=0)[None])
        lo, hi = np.vstack(lo), np.vstack(hi)
        w = tree.width(L)
        tbox = tree.t_box[L]
        sbox = tree.s_box[L]
        self.near_blocks = []
        Q = self.src.charges_csc
        for b, key in enumerate(tree.t_levels[L].keys):
            rows = np.nonzero(tbox == b)[0]
            c = tree.t_levels[L].centers[b]
            nlo, nhi = c - 1.5 * w, c + 1.5 * w
            cols = np.nonzero(np.all((hi >= nlo - 1e-12) & (lo <= nhi + 1e-12), axis=1))[0]
            pq = lay.quadrature(rows, cols)
            # subtract the far-field expansion of these columns' far points
            near_src = set(int(v) for v in tree.near[b])
            sub = Q[:, cols].tocoo()
            far = ~np.isin(sbox[sub.row], list(near_src))
            if np.any(far):
                q, jl, val = sub.row[far], sub.col[far], sub.data[far]
                x = lay.colloc.points[rows]
                d = x[:, None, :] - self.src.points[q][None]
                r = np.linalg.norm(d, axis=2)
                dl = np.broadcast_to(self.src.dl[q], r.shape)
                dn = np.einsum("ipk,pk->ip", d, self.src.normals[q])
                coef = -val[None, :] * np.where(dl, dn / r ** 3, 1.0 / r)
                pair = (np.arange(len(rows))[:, None] * len(cols) + jl[None, :]).ravel()
                pq = PairQuadrature(pq.shape, np.concatenate([pq.pair, pair]),
                                    np.concatenate([pq.u, (r / self.c).ravel()]),
                                    np.concatenate([pq.coef, coef.ravel()]),
                                    np.concatenate([pq.dl, dl.ravel()]))
            self.near_blocks.append((rows, cols, pq))

    # -- passes -----------------------------------------------------------
    def upward(self, charges):
        """Multipole moments per level from point charges (npts, ...)."""
        L = self.tree.levels
        tail = charges.shape[1:]
        nb = len(self.tree.s_levels[L].keys)
        M = {L: np.zeros((nb, self.p ** 3) + tail, dtype=complex)}
        for b, (idx, S) in enumerate(self.p2m):
            M[L][b] = np.tensordot(S, charges[idx], axes=1)
        for lev in range(L, 2, -1):
            par, octs = self.parent[("s", lev)]
            Mp = np.zeros((len(self.tree.s_levels[lev - 1].keys),) + M[lev].shape[1:], dtype=complex)
            for b in range(len(par)):
                Mp[par[b]] += np.tensordot(self.m2m[octs[b]], M[lev][b], axes=1)
            M[lev - 1] = Mp
        return M

    def downward(self, Lc):
        L = self.tree.levels
        for lev in range(3, L + 1):
            par, octs = self.parent[("t", lev)]
            for b in range(len(par)):
                Lc[lev][b] += np.tensordot(self.m2m[octs[b]].T, Lc[lev - 1][par[b]], axes=1)
        tail = Lc[L].shape[2:]
        out = np.zeros((self.shape[0],) + tail, dtype=complex)
        for b, (idx, S) in enumerate(self.l2p):
            out[idx] = np.tensordot(S, Lc[L][b], axes=1)
        return out

    def _empty_locals(self, tail):
        return {lev: np.zeros((len(self.tree.t_levels[lev].keys), self.p ** 3) + tail, dtype=complex)
                for lev in range(2, self.tree.levels + 1)}

    def far_apply(self, x, m2l):
        """Far field for charges from ``x`` with ``m2l[(lev, off)]`` matrices."""
        if self.tree.levels < 2:
            return np.zeros((self.shape[0],) + x.shape[1:], dtype=complex)
        M = self.upward(self.src.charges @ x if x.ndim == 1 else np.asarray(self.src.charges @ x.reshape(x.shape[0], -1)).reshape((-1,) + x.shape[1:]))
        Lc = self._empty_locals(x.shape[1:])
        for lev, table in self.tree.interactions.items():
            for off, (tb, sb) in table.items():
                contrib = np.tensordot(m2l[(lev, off)], M[lev][sb], axes=([1], [1]))
                np.add.at(Lc[lev], tb, np.moveaxis(contrib, 0, 1))
        return self.downward(Lc)

    def at(self, s):
        return FmmFace(self, s)

    @property
    def m2l_keys(self):
        return [(lev, off) for lev, table in self.tree.interactions.items() for off in table]


class FmmFace:
    """FMM operator frozen at one frequency."""

    def __init__(self, fmm, s):
        self.fmm, self.s = fmm, s
        self.shape = fmm.shape
        self.m2l = {k: fmm.m2l_matrix(k[0], k[1], s) for k in fmm.m2l_keys}
        self.near = [(rows, cols, pq.evaluate(s)) for rows, cols, pq in fmm.near_blocks]

    def matvec(self, x):
        x = np.asarray(x)
        if x.shape[0] != self.shape[1]:
            raise ValueError(f"length {x.shape[0]} does not match {self.shape[1]} columns")
        y = self.fmm.far_apply(x, self.m2l)
        for rows, cols, blk in self.near:
            y[rows] += blk @ x[cols]
        return y


def fmm_matvec(face, x):
    return face.matvec(x)
