"""Operator backends used by the time stepping.

Every backend represents one layout over the (upper half of the) contour and
offers two things: a face at an arbitrary frequency (``at``), used for the
stage-eigenvalue systems, and ``history(W) = sum_l A(s_l) W[l]`` over the
stored contour nodes, used for the convolution.
"""
import time

import numpy as np

from .aca import HMatrixFace, aca_from_quadrature
from .assemble import SparseFrequencyOperator
from .bbfmm import FmmOperator
from .htree import build_block_tree, build_cluster_tree
from .tensor3 import CompressedBlock, CompressedTensor, SeparatedOperator, three_d_aca


class DenseFace:
    def __init__(self, matrix, s=None):
        self.matrix = matrix
        self.s = s
        self.shape = matrix.shape

    def matvec(self, x):
        return self.matrix @ x

    @property
    def nbytes(self):
        return self.matrix.nbytes


class Backend:
    name = "base"

    def __init__(self, layout, nodes):
        self.layout = layout
        self.shape = layout.shape
        self.nodes = np.asarray(nodes)
        self.timings = {}

    @property
    def n_freq(self):
        return len(self.nodes)

    def dense_nbytes(self):
        return self.shape[0] * self.shape[1] * self.n_freq * 16


class DenseBackend(Backend):
    """All slices exact; slices are recomputed from the distance-deduplicated
    sparse form instead of being stored."""

    name = "dense"

    def __init__(self, layout, nodes):
        super().__init__(layout, nodes)
        t = time.perf_counter()
        self.op = SparseFrequencyOperator(layout)
        self.timings["build"] = time.perf_counter() - t

    def at(self, s):
        return DenseFace(self.op.evaluate(s), s)

    def history(self, W):
        out = np.zeros((self.shape[0],) + W.shape[2:], dtype=complex)
        for ell, s in enumerate(self.nodes):
            out += np.tensordot(self.op.evaluate(s), W[ell], axes=1)
        return out

    def lag_basis(self, coeff):
        """2 Re sum_l coeff[l, :] basis(s_l), chunked over distances -> (2U, K)."""
        u = self.op.u
        nu = len(u)
        out = np.empty((2 * nu, coeff.shape[1]))
        step = max(1, 2 ** 22 // max(1, len(self.nodes)))
        for a in range(0, nu, step):
            b = min(a + step, nu)
            su = np.multiply.outer(u[a:b], self.nodes)
            e = np.exp(-su)
            out[a:b] = 2.0 * np.real(e @ coeff)
            out[nu + a:nu + b] = 2.0 * np.real((e * (1.0 + su)) @ coeff)
        return out

    def stats(self):
        return {"ranks": np.array([self.n_freq]), "compression": 1.0,
                "histogram": np.ones(self.n_freq, dtype=np.int64), "capped": 0,
                "nbytes": self.dense_nbytes(), "admissible": np.array([False])}


class AcaBackend(Backend):
    """H-matrix faces and per-block 3D-ACA over the frequency axis."""

    name = "aca"

    def __init__(self, layout, nodes, eps_aca, eps, b_min=20, eta=0.8, r_max=None):
        super().__init__(layout, nodes)
        self.eps_aca, self.eps = eps_aca, eps
        t = time.perf_counter()
        rt = build_cluster_tree(layout.colloc.points, b_min)
        ct = build_cluster_tree(layout.column_points(), b_min)
        self.block_tree = build_block_tree(rt, ct, eta)
        self.quads = [layout.quadrature(b.rows.indices, b.cols.indices) for b in self.block_tree.blocks]
        self.timings["tree"] = time.perf_counter() - t
        t = time.perf_counter()
        blocks = []
        for blk, pq in zip(self.block_tree.blocks, self.quads):
            if blk.admissible:
                def face_fn(k, pq=pq):
                    return aca_from_quadrature(pq, self.nodes[k], eps_aca)
            else:
                def face_fn(k, pq=pq):
                    return pq.evaluate(self.nodes[k])

            def fiber_fn(i, j, pq=pq):
                return pq.entry(i, j, self.nodes)

            crosses, capped = three_d_aca(face_fn, fiber_fn, self.n_freq, eps, r_max, 0, eps_aca)
            cb = CompressedBlock(blk.rows.indices, blk.cols.indices, crosses, blk.admissible, capped,
                                 self.n_freq)
            cb.prepare()
            blocks.append(cb)
        self.tensor = CompressedTensor(blocks, self.shape, self.n_freq, eps, "aca")
        self.timings["tensor"] = time.perf_counter() - t

    def at(self, s):
        return HMatrixFace.from_layout(self.block_tree, self.quads, s, self.eps_aca)

    def history(self, W):
        return self.tensor.convolve(W)

    def stats(self):
        t = self.tensor
        return {"ranks": t.ranks, "compression": t.nbytes / self.dense_nbytes(),
                "histogram": t.frequency_histogram(), "capped": sum(b.capped for b in t.blocks),
                "nbytes": t.nbytes, "admissible": np.array([b.admissible for b in t.blocks])}


class FmmBackend(Backend):
    """bbFMM faces; 3D-ACA compresses the M2L matrices and near-field blocks."""

    name = "fmm"

    def __init__(self, layout, nodes, levels, order, eps, r_max=None):
        super().__init__(layout, nodes)
        self.eps = eps
        t = time.perf_counter()
        self.fmm = FmmOperator(layout, levels, order)
        self.timings["tree"] = time.perf_counter() - t
        t = time.perf_counter()
        self.m2l = {}
        p3 = self.fmm.p ** 3
        idx = np.arange(p3)
        for key in self.fmm.m2l_keys:
            full = self.fmm.m2l_fiber_points(key[0], key[1], self.nodes)
            crosses, capped = three_d_aca(lambda k, full=full: full[k],
                                          lambda i, j, full=full: full[:, i, j],
                                          self.n_freq, eps, r_max, 0)
            cb = CompressedBlock(idx, idx, crosses, True, capped, self.n_freq)
            cb.prepare()
            self.m2l[key] = cb
        self.near = []
        self._near_op = None
        for rows, cols, pq in self.fmm.near_blocks:
            crosses, capped = three_d_aca(lambda k, pq=pq: pq.evaluate(self.nodes[k]),
                                          lambda i, j, pq=pq: pq.entry(i, j, self.nodes),
                                          self.n_freq, eps, r_max, 0)
            cb = CompressedBlock(rows, cols, crosses, False, capped, self.n_freq)
            cb.prepare()
            self.near.append(cb)
        self.timings["tensor"] = time.perf_counter() - t

    def at(self, s):
        return self.fmm.at(s)

    def history(self, W):
        fmm = self.fmm
        tail = W.shape[2:]
        out = np.zeros((self.shape[0],) + tail, dtype=complex)
        if fmm.tree.levels >= 2:
            Wt = np.moveaxis(W, 0, 1)                        # (n_cols, L, ...)
            flat = Wt.reshape(Wt.shape[0], -1)
            charges = np.asarray(fmm.src.charges @ flat).reshape((-1,) + Wt.shape[1:])
            M = fmm.upward(charges)                          # (nb, p3, L, ...)
            Lc = fmm._empty_locals(tail)
            for lev, table in fmm.tree.interactions.items():
                for off, (tb, sb) in table.items():
                    cb = self.m2l[(lev, off)]
                    if cb.rank == 0:
                        continue
                    Y = np.tensordot(cb._fib, M[lev][sb], axes=([1], [2]))       # (r, np, p3, ...)
                    contrib = np.tensordot(cb._stack, Y, axes=([0, 2], [0, 2]))  # (p3, np, ...)
                    np.add.at(Lc[lev], tb, np.moveaxis(contrib, 0, 1))
            out += fmm.downward(Lc)
        if self._near_op is None:
            self._near_op = SeparatedOperator(self.near, self.shape[0])
        return out + self._near_op.apply(W)

    def _blocks(self):
        return list(self.m2l.values()) + self.near

    def stats(self):
        blocks = self._blocks()
        ranks = np.array([b.rank for b in blocks])
        hist = np.zeros(self.n_freq, dtype=np.int64)
        for b in blocks:
            for k in b.frequencies:
                hist[k] += 1
        # interpolation operators are frequency independent and stored once
        interp = sum(S.nbytes for _, S in self.fmm.p2m) + sum(S.nbytes for _, S in self.fmm.l2p)
        nbytes = sum(b.nbytes for b in blocks) + interp
        return {"ranks": ranks, "compression": nbytes / self.dense_nbytes(), "histogram": hist,
                "capped": sum(b.capped for b in blocks), "nbytes": nbytes,
                "admissible": np.array([b.admissible for b in blocks])}


class ScalarBackend(Backend):
    """A scalar transfer function, handy for testing the time stepping."""

    name = "scalar"

    def __init__(self, transfer, nodes):
        self.transfer = transfer
        self.shape = (1, 1)
        self.nodes = np.asarray(nodes)
        self.timings = {}

    def at(self, s):
        return DenseFace(np.array([[self.transfer(s)]], dtype=complex), s)

    def history(self, W):
        return np.einsum("l,l...->...", self.transfer(self.nodes), W)

    def stats(self):
        return {"ranks": np.array([self.n_freq]), "compression": 1.0,
                "histogram": np.ones(self.n_freq, dtype=np.int64), "capped": 0,
                "nbytes": 16 * self.n_freq, "admissible": np.array([False])}
