import numpy as np
import pytest

from tdbem.aca import LowRankBlock
from tdbem.backends import AcaBackend
from tdbem.htree import build_block_tree, build_cluster_tree
from tdbem.tensor3 import (
    CompressedBlock,
    FrequencyCross,
    SeparatedOperator,
    face_pivot,
    recursive_frobenius,
    separated_convolution,
    three_d_aca,
)

from conftest import slp_layout, uniform_contour


def _crand(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _run(T, eps, **kw):
    return three_d_aca(lambda k: T[:, :, k], lambda i, j: T[i, j, :], T.shape[2], eps, **kw)


def _tensor(crosses):
    return sum(np.multiply.outer(np.asarray(c.face if not isinstance(c.face, LowRankBlock) else c.face.dense()),
                                 c.fiber) for c in crosses) if crosses else 0


def test_rank_one(rng):
    T = np.multiply.outer(_crand(rng, 6, 5), _crand(rng, 9))
    crosses, capped = _run(T, 1e-12)
    assert len(crosses) == 1 and not capped
    assert np.allclose(_tensor(crosses), T, atol=1e-12)
    assert crosses[0].pivot[2] == 0 and crosses[0].fiber[0] == 1


def test_rank_two(rng):
    T = (np.multiply.outer(_crand(rng, 6, 5), _crand(rng, 9))
         + np.multiply.outer(_crand(rng, 6, 5), _crand(rng, 9)))
    crosses, _ = _run(T, 1e-12)
    assert len(crosses) == 2
    assert np.abs(_tensor(crosses) - T).max() < 1e-11 * np.abs(T).max()
    # interpolation at the pivots
    for c in crosses:
        i, j, k = c.pivot
        assert _tensor(crosses)[i, j, k] == pytest.approx(T[i, j, k], abs=1e-12)


def test_zero_tensor_and_cap(rng):
    crosses, _ = _run(np.zeros((3, 3, 4)), 1e-3)
    assert crosses == []
    T = _crand(rng, 4, 4, 6)
    crosses, capped = _run(T, 1e-14, r_max=2)
    assert len(crosses) == 2 and capped
    with pytest.raises(ValueError):
        _run(T, 0.0)


def test_low_rank_faces(rng):
    U, V = _crand(rng, 8, 2), _crand(rng, 7, 2)
    f = _crand(rng, 5)
    face = LowRankBlock(U, V)
    crosses, _ = three_d_aca(lambda k: LowRankBlock(U * f[k], V), lambda i, j: (U[i] @ V[j].conj()) * f,
                             5, 1e-10)
    assert len(crosses) == 1
    assert np.allclose(_tensor(crosses), np.multiply.outer(face.dense(), f))


def test_face_pivot(rng):
    assert face_pivot(np.array([[1, -3], [2, 0.5]])) == (0, 1, -3)
    u, v = _crand(rng, 6), _crand(rng, 4)
    i, j, val = face_pivot(LowRankBlock(u[:, None], v[:, None]))
    assert (i, j) == (np.argmax(np.abs(u)), np.argmax(np.abs(v)))
    assert face_pivot(np.zeros((3, 3))) is None


def test_recursive_frobenius(rng):
    H, f = _crand(rng, 4, 3), _crand(rng, 6)
    one = [FrequencyCross(H, f, (0, 0, 0), 1)]
    assert recursive_frobenius(one) == pytest.approx(np.linalg.norm(H) * np.linalg.norm(f))
    H2 = np.zeros((4, 3))
    H2[0, 0] = 2.0
    H1 = np.zeros((4, 3))
    H1[1, 1] = 3.0
    two = [FrequencyCross(H1, f, (1, 1, 0), 1), FrequencyCross(H2, f, (0, 0, 0), 1)]
    assert recursive_frobenius(two) == pytest.approx(np.sqrt(13) * np.linalg.norm(f))
    many = [FrequencyCross(LowRankBlock(_crand(rng, 4, 2), _crand(rng, 3, 2)) if d % 2 else _crand(rng, 4, 3),
                           _crand(rng, 6), (0, 0, d), 1) for d in range(5)]
    assert recursive_frobenius(many) == pytest.approx(np.linalg.norm(_tensor(many)), rel=1e-12)


def _near_block(level=1):
    lay = slp_layout(level)
    t = build_cluster_tree(lay.colloc.points, 20)
    bt = build_block_tree(t, t, 0.8)
    blk = bt.near[0]
    return lay.quadrature(blk.rows.indices, blk.cols.indices)


def test_near_block_slices():
    _, con = uniform_contour(10, 3.5)
    nodes = con.half_nodes
    pq = _near_block()
    eps = 1e-2
    crosses, _ = three_d_aca(lambda k: pq.evaluate(nodes[k]), lambda i, j: pq.entry(i, j, nodes), len(nodes), eps)
    approx = _tensor(crosses)
    exact = np.stack([pq.evaluate(s) for s in nodes], axis=2)
    assert len(crosses) < len(nodes)
    assert np.linalg.norm(approx - exact) <= 10 * eps * np.linalg.norm(exact)


def test_separated_single_cross(rng):
    H, f = _crand(rng, 4, 3), _crand(rng, 5)
    blk = CompressedBlock(np.arange(4), np.arange(3), [FrequencyCross(H, f, (0, 0, 0), 1)], False, False, 5)
    W = np.zeros((5, 3), complex)
    W[:, 0] = 1.0
    assert np.allclose(separated_convolution([blk], W, 4), H[:, 0] * f.sum())
    assert np.array_equal(separated_convolution([blk], np.zeros((5, 3)), 4), np.zeros(4))


def test_separated_operator_matches_loop(rng):
    blocks = []
    for rows, cols in ((np.arange(0, 5), np.arange(0, 4)), (np.arange(5, 9), np.arange(0, 4)),
                       (np.arange(0, 9), np.arange(4, 7))):
        crosses = []
        for d in range(3):
            face = (LowRankBlock(_crand(rng, len(rows), 2), _crand(rng, len(cols), 2)) if d == 1
                    else _crand(rng, len(rows), len(cols)))
            crosses.append(FrequencyCross(face, _crand(rng, 6), (0, 0, d), 1))
        blocks.append(CompressedBlock(rows, cols, crosses, False, False, 6))
    W = _crand(rng, 6, 7, 2)
    ref = separated_convolution(blocks, W, 9)
    assert np.allclose(SeparatedOperator(blocks, 9).apply(W), ref, atol=1e-12)


def test_cube_convolution(rng):
    _, con = uniform_contour(10, 3.5)
    nodes = con.half_nodes
    lay = slp_layout(1)
    eps = 1e-3
    be = AcaBackend(lay, nodes, eps_aca=1e-5, eps=eps)
    W = _crand(rng, len(nodes), lay.n_cols)
    ref = sum(lay.evaluate(s) @ w for s, w in zip(nodes, W))
    y = be.history(W)
    assert np.linalg.norm(y - ref) <= 10 * eps * np.linalg.norm(ref)
    assert be.tensor.compression < 1
