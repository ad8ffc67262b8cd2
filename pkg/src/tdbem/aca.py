"""Adaptive cross approximation, recompression and H-matrix faces."""
from dataclasses import dataclass

import numpy as np


@dataclass
class LowRankBlock:
    """Block approximated as ``U @ V^H``."""

    U: np.ndarray
    V: np.ndarray

    @property
    def rank(self):
        return self.U.shape[1]

    @property
    def shape(self):
        return (self.U.shape[0], self.V.shape[0])

    def dense(self):
        return self.U @ self.V.conj().T

    def matvec(self, x):
        return np.tensordot(self.U, np.tensordot(self.V.conj().T, x, axes=1), axes=1)

    def conj(self):
        return LowRankBlock(self.U.conj(), self.V.conj())

    @property
    def nbytes(self):
        return self.U.nbytes + self.V.nbytes


def aca_block(row, col, n_rows, n_cols, eps, max_rank=None):
    """Partially pivoted ACA.

    ``row(i)`` and ``col(j)`` return one row / column of the block.  Stops when
    the newest cross satisfies ``|u_k| |v_k| <= eps |A_k|_F``, which is then
    dropped; the Frobenius norm of the approximation is updated incrementally.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    max_rank = min(n_rows, n_cols) if max_rank is None else min(max_rank, n_rows, n_cols)
    us, vs = [], []
    norm2 = 0.0
    used_rows = np.zeros(n_rows, dtype=bool)
    i = 0
    while len(us) < max_rank:
        r = np.asarray(row(i), dtype=complex).copy()
        for u, v in zip(us, vs):
            r -= u[i] * v.conj()
        used_rows[i] = True
        j = int(np.argmax(np.abs(r)))
        if abs(r[j]) < 1e-300:
            # zero residual row: advance to the next unused row
            free = np.nonzero(~used_rows)[0]
            if len(free) == 0:
                break
            i = int(free[0])
            continue
        c = np.asarray(col(j), dtype=complex).copy()
        for u, v in zip(us, vs):
            c -= v[j].conj() * u
        u_new = c / r[j]
        v_new = r.conj()
        un, vn = np.linalg.norm(u_new), np.linalg.norm(v_new)
        cross = sum(2.0 * np.real(np.vdot(u, u_new) * np.vdot(v_new, v)) for u, v in zip(us, vs))
        new_norm2 = norm2 + cross + (un * vn) ** 2
        if un * vn <= eps * np.sqrt(max(new_norm2, 0.0)):
            break          # sub-threshold cross is discarded
        norm2 = new_norm2
        us.append(u_new)
        vs.append(v_new)
        ui = np.abs(u_new)
        ui[used_rows] = -1.0
        i = int(np.argmax(ui))
        if ui[i] < 0:
            break
    if not us:
        return LowRankBlock(np.zeros((n_rows, 0), complex), np.zeros((n_cols, 0), complex))
    return LowRankBlock(np.stack(us, axis=1), np.stack(vs, axis=1))


def recompress(block, eps):
    """QR of both factors, SVD of the small core, truncation at eps * sigma_1."""
    if block.rank == 0:
        return block
    qu, ru = np.linalg.qr(block.U)
    qv, rv = np.linalg.qr(block.V)
    w, sig, zh = np.linalg.svd(ru @ rv.conj().T)
    if sig[0] == 0:
        return LowRankBlock(block.U[:, :0], block.V[:, :0])
    k = int(np.sum(sig > eps * sig[0])) if eps > 0 else len(sig)
    k = max(k, 1)
    return LowRankBlock((qu @ w[:, :k]) * sig[:k], qv @ zh[:k].conj().T)


def aca_from_quadrature(pq, s, eps, recompress_eps=None):
    """ACA of a block given as a :class:`~tdbem.assemble.PairQuadrature`."""
    nr, nc = pq.shape
    lr = aca_block(lambda i: pq.row(i, s), lambda j: pq.col(j, s), nr, nc, eps)
    return recompress(lr, eps if recompress_eps is None else recompress_eps)


class HMatrixFace:
    """One frequency slice stored blockwise along a block tree."""

    def __init__(self, block_tree, data, s=None):
        self.tree = block_tree
        self.data = data      # list aligned with block_tree.blocks
        self.s = s
        self.shape = block_tree.shape

    @classmethod
    def from_layout(cls, block_tree, quads, s, eps):
        data = []
        for blk, pq in zip(block_tree.blocks, quads):
            data.append(aca_from_quadrature(pq, s, eps) if blk.admissible else pq.evaluate(s))
        return cls(block_tree, data, s)

    def matvec(self, x):
        x = np.asarray(x)
        if x.shape[0] != self.shape[1]:
            raise ValueError(f"length {x.shape[0]} does not match {self.shape[1]} columns")
        y = np.zeros((self.shape[0],) + x.shape[1:], dtype=complex)
        for blk, d in zip(self.tree.blocks, self.data):
            xs = x[blk.cols.indices]
            y[blk.rows.indices] += d.matvec(xs) if isinstance(d, LowRankBlock) else d @ xs
        return y

    def dense(self):
        out = np.zeros(self.shape, dtype=complex)
        for blk, d in zip(self.tree.blocks, self.data):
            out[np.ix_(blk.rows.indices, blk.cols.indices)] = d.dense() if isinstance(d, LowRankBlock) else d
        return out

    @property
    def nbytes(self):
        return sum(d.nbytes for d in self.data)


def hmatrix_matvec(face, x):
    return face.matvec(x)
