"""Three-dimensional cross approximation over the frequency axis.

A block of an operator evaluated at all contour nodes is a third-order
tensor.  It is approximated by a sum of crosses ``H_d (x) f_d`` where the
face ``H_d`` is one (residual) matrix slice and the fiber ``f_d`` carries the
frequency dependence.  Faces may be dense arrays or low-rank blocks.
"""
from dataclasses import dataclass, field

import numpy as np

from .aca import LowRankBlock, recompress

TINY_PIVOT = 1e-300


def face_dense(face):
    return face.dense() if isinstance(face, LowRankBlock) else np.asarray(face)


def face_entry(face, i, j):
    if isinstance(face, LowRankBlock):
        return complex(face.U[i] @ face.V[j].conj())
    return complex(face[i, j])


def face_inner(a, b):
    """Frobenius inner product sum(a * conj(b)), factored for low-rank faces."""
    if isinstance(a, LowRankBlock) and isinstance(b, LowRankBlock):
        return complex(np.trace((b.U.conj().T @ a.U) @ (a.V.conj().T @ b.V)))
    return complex(np.vdot(face_dense(b), face_dense(a)))


def face_pivot(face):
    """Position and value of the entry of largest modulus; ``None`` for a zero face."""
    d = face_dense(face)       # low-rank faces are densified transiently
    if d.size == 0:
        return None
    flat = int(np.argmax(np.abs(d)))
    i, j = divmod(flat, d.shape[1])
    if abs(d[i, j]) < TINY_PIVOT:
        return None
    return i, j, complex(d[i, j])


def face_scale_sub(face, crosses, weights, eps):
    """face - sum_d weights[d] * crosses[d].face, kept in the face's format."""
    if isinstance(face, LowRankBlock):
        us, vs = [face.U], [face.V]
        for cr, w in zip(crosses, weights):
            if w != 0:
                us.append(-w * cr.face.U)
                vs.append(cr.face.V)
        if len(us) == 1:
            return face
        return recompress(LowRankBlock(np.hstack(us), np.hstack(vs)), eps)
    out = np.array(face, dtype=complex)
    for cr, w in zip(crosses, weights):
        if w != 0:
            out -= w * face_dense(cr.face)
    return out


@dataclass
class FrequencyCross:
    face: object           # ndarray or LowRankBlock
    fiber: np.ndarray
    pivot: tuple           # (i, j, k)
    value: complex


@dataclass
class CompressedBlock:
    rows: np.ndarray
    cols: np.ndarray
    crosses: list = field(default_factory=list)
    admissible: bool = False
    capped: bool = False
    n_freq: int = 0

    @property
    def rank(self):
        return len(self.crosses)

    @property
    def frequencies(self):
        return [c.pivot[2] for c in self.crosses]

    @property
    def nbytes(self):
        total = 0
        for c in self.crosses:
            f = c.face
            total += f.nbytes if isinstance(f, LowRankBlock) else np.asarray(f).nbytes
            total += c.fiber.nbytes
        return total

    @property
    def dense_nbytes(self):
        return len(self.rows) * len(self.cols) * self.n_freq * 16

    def fibers(self):
        if not self.crosses:
            return np.zeros((0, self.n_freq), dtype=complex)
        return np.stack([c.fiber for c in self.crosses])

    def slice(self, k):
        """Reconstructed slice at frequency index ``k``."""
        out = np.zeros((len(self.rows), len(self.cols)), dtype=complex)
        for c in self.crosses:
            out += c.fiber[k] * face_dense(c.face)
        return out

    def prepare(self):
        """Cache stacked face data for fast contraction."""
        self._fib = self.fibers()
        dense = [c.face for c in self.crosses if not isinstance(c.face, LowRankBlock)]
        full = dense and len(dense) == len(self.crosses)
        self._stack = np.stack(dense) if full else None

    def contract(self, Y):
        """sum_k H_k @ Y[k] for Y of shape (r, n_cols, ...)."""
        if self.rank == 0:
            return np.zeros((len(self.rows),) + Y.shape[2:], dtype=complex)
        if getattr(self, "_fib", None) is None:
            self.prepare()
        if self._stack is not None:
            return np.tensordot(self._stack, Y, axes=([0, 2], [0, 1]))
        out = np.zeros((len(self.rows),) + Y.shape[2:], dtype=complex)
        for k, c in enumerate(self.crosses):
            f = c.face
            out += f.matvec(Y[k]) if isinstance(f, LowRankBlock) else f @ Y[k]
        return out

    def convolve(self, W):
        """sum_l A(s_l) W[l] for W of shape (n_freq, n_cols, ...)."""
        if self.rank == 0:
            return np.zeros((len(self.rows),) + W.shape[2:], dtype=complex)
        if getattr(self, "_fib", None) is None:
            self.prepare()
        Y = np.tensordot(self._fib, W, axes=([1], [0]))
        return self.contract(Y)


def recursive_frobenius(crosses):
    """Frobenius norm of sum_d H_d (x) f_d from face and fiber Gram matrices."""
    total = 0.0
    for a in crosses:
        for b in crosses:
            total += (face_inner(a.face, b.face) * np.vdot(b.fiber, a.fiber)).real
    return float(np.sqrt(max(total, 0.0)))


def three_d_aca(face_fn, fiber_fn, n_q, eps, r_max=None, k_first=0, face_eps=None):
    """Adaptive cross approximation of a (rows x cols x n_q) tensor.

    ``face_fn(k)`` returns slice ``k`` (dense or low-rank), ``fiber_fn(i, j)``
    the entry ``(i, j)`` at all ``n_q`` frequencies.  Returns the crosses and
    a flag telling whether the rank cap was hit.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    r_max = n_q if r_max is None else min(r_max, n_q)
    face_eps = eps if face_eps is None else face_eps
    crosses = []
    norm2 = 0.0
    used = np.zeros(n_q, dtype=bool)
    k = k_first
    capped = False
    while True:
        if len(crosses) >= r_max:
            capped = len(crosses) < n_q
            break
        weights = [c.fiber[k] for c in crosses]
        H = face_scale_sub(face_fn(k), crosses, weights, face_eps)
        used[k] = True
        piv = face_pivot(H)
        if piv is None:
            break
        i, j, val = piv
        fib = np.array(fiber_fn(i, j), dtype=complex)
        for c in crosses:
            fib -= face_entry(c.face, i, j) * c.fiber
        fib /= val
        fib[k] = 1.0
        hh = face_inner(H, H).real
        ff = float(np.vdot(fib, fib).real)
        cross_terms = sum(2.0 * (face_inner(H, c.face) * np.vdot(c.fiber, fib)).real for c in crosses)
        new_norm2 = norm2 + cross_terms + hh * ff
        if np.sqrt(hh * ff) <= eps * np.sqrt(max(new_norm2, 0.0)):
            break          # sub-threshold cross is discarded
        crosses.append(FrequencyCross(H, fib, (i, j, k), val))
        norm2 = new_norm2
        score = np.abs(fib)
        score[used] = -1.0
        k = int(np.argmax(score))
        if score[k] < 0:
            break
    return crosses, capped


def separated_convolution(blocks, W, n_rows):
    """sum_l A(s_l) W[l] block by block; W is (n_freq, n_cols, ...).

    Reference form of :class:`SeparatedOperator`, which is much faster when
    there are many small blocks.
    """
    out = np.zeros((n_rows,) + W.shape[2:], dtype=complex)
    for blk in blocks:
        out[blk.rows] += blk.convolve(W[:, blk.cols])
    return out


class SeparatedOperator:
    """All crosses of a blockwise compressed tensor, flattened for convolution.

    Fibers are contracted per column cluster with one dense product each;
    faces are then applied through sparse matrices (dense faces directly,
    low-rank faces as ``U`` times a block-diagonal ``V^H``).
    """

    def __init__(self, blocks, n_rows):
        import scipy.sparse as sp
        self.n_rows = n_rows
        groups = {}
        for blk in blocks:
            if blk.rank:
                groups.setdefault(np.asarray(blk.cols).tobytes(), []).append(blk)
        self.groups = []
        dr, dc, dv, vr, vc, vv, ur, uc, uv = ([] for _ in range(9))
        off = n_lr = 0
        for blks in groups.values():
            cols = np.asarray(blks[0].cols)
            nc = len(cols)
            fibs = []
            for blk in blks:
                rows = np.asarray(blk.rows)
                for cr in blk.crosses:
                    base = off + len(fibs) * nc
                    f = cr.face
                    if isinstance(f, LowRankBlock):
                        k = f.rank
                        a, j = np.meshgrid(np.arange(k), np.arange(nc), indexing="ij")
                        vr.append((n_lr + a).ravel())
                        vc.append((base + j).ravel())
                        vv.append(f.V.conj().T.ravel())
                        i, a = np.meshgrid(rows, np.arange(k), indexing="ij")
                        ur.append(i.ravel())
                        uc.append((n_lr + a).ravel())
                        uv.append(f.U.ravel())
                        n_lr += k
                    else:
                        i, j = np.meshgrid(rows, np.arange(nc), indexing="ij")
                        dr.append(i.ravel())
                        dc.append((base + j).ravel())
                        dv.append(np.asarray(f).ravel())
                    fibs.append(cr.fiber)
            self.groups.append((cols, np.array(fibs), off))
            off += len(fibs) * nc
        self.n_z = off

        def build(r, c, v, shape):
            if not r:
                return sp.csr_matrix(shape, dtype=complex)
            return sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))),
                                 shape=shape)

        self.D = build(dr, dc, dv, (n_rows, off))
        self.Vh = build(vr, vc, vv, (n_lr, off))
        self.U = build(ur, uc, uv, (n_rows, n_lr))

    def apply(self, W):
        """sum_l A(s_l) W[l] for W of shape (n_freq, n_cols, ...)."""
        L = W.shape[0]
        tail = W.shape[2:]
        t = int(np.prod(tail, dtype=np.int64))
        z = np.empty((self.n_z, t), dtype=complex)
        for cols, F, o in self.groups:
            Z = F @ W[:, cols].reshape(L, -1)
            z[o:o + Z.size // t] = Z.reshape(-1, t)
        out = self.D @ z + self.U @ (self.Vh @ z)
        return np.asarray(out).reshape((self.n_rows,) + tail)


@dataclass
class CompressedTensor:
    blocks: list
    shape: tuple
    n_freq: int
    eps: float
    backend: str

    def convolve(self, W):
        if getattr(self, "_op", None) is None:
            self._op = SeparatedOperator(self.blocks, self.shape[0])
        return self._op.apply(W)

    def slice(self, k):
        out = np.zeros(self.shape, dtype=complex)
        for blk in self.blocks:
            out[np.ix_(blk.rows, blk.cols)] += blk.slice(k)
        return out

    @property
    def ranks(self):
        return np.array([b.rank for b in self.blocks])

    @property
    def nbytes(self):
        return sum(b.nbytes for b in self.blocks)

    @property
    def dense_nbytes(self):
        return sum(b.dense_nbytes for b in self.blocks)

    @property
    def compression(self):
        d = self.dense_nbytes
        return self.nbytes / d if d else 1.0

    def frequency_histogram(self):
        hist = np.zeros(self.n_freq, dtype=np.int64)
        for b in self.blocks:
            for k in b.frequencies:
                hist[k] += 1
        return hist
