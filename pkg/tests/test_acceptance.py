"""Acceptance criteria; each test prints one PASS/FAIL line.

The heavy runs (dense level 3 takes several minutes) are cached and shared
between criteria.
"""
import functools
import math
import time

import numpy as np
import pytest

from tdbem.backends import AcaBackend
from tdbem.bbfmm import FmmOperator
from tdbem.cli import make_config, preset, run_problem
from tdbem.contour import build_contour, quadrature_count
from tdbem.gcq import gcq_scalar
from tdbem.mesh import unit_cube
from tdbem.problem import cube_problem
from tdbem.rk import radau_iia_2
from tdbem.tensor3 import FrequencyCross, recursive_frobenius

from conftest import slp_layout

TAB = radau_iia_2()


@functools.lru_cache(maxsize=None)
def run(level, backend, problem="dirichlet"):
    return run_problem(make_config({"preset": f"paper-level-{level}", "backend": backend,
                                    "problem": problem}))


@functools.lru_cache(maxsize=None)
def slp_tensor(level):
    """3D-ACA of the Dirichlet single layer with the preset parameters."""
    if level in (1, 2):
        return run(level, "aca").backends["lhs"]
    p = preset(f"paper-level-{level}")
    steps = np.full(p["N"], p["T"] / p["N"])
    con = build_contour(steps, TAB, quadrature_count(p["N"], TAB.stages))
    prob = cube_problem(unit_cube(level))
    return AcaBackend(prob.lhs_layout, con.half_nodes, p["eps_aca"], 100 * p["eps_aca"])


def _scalar_endpoint(transfer, g, n):
    return gcq_scalar(transfer, np.full(n, 1.0 / n), g, TAB)[-1, -1]


def test_c01_scalar_oracle(criterion):
    errs, times = [], []
    for n in (16, 32, 64):
        t0 = time.perf_counter()
        errs.append(abs(_scalar_endpoint(lambda s: 1 / s, lambda t: t ** 2, n) - 1 / 3))
        times.append(time.perf_counter() - t0)
    orders = [math.log2(a / b) if b > 0 else math.inf for a, b in zip(errs, errs[1:])]
    ok = min(orders) >= 2.7 and errs[1] <= 1e-5 and max(times) < 1.0
    detail = (f"1/s, g=t^2: errors {errs[0]:.2e} {errs[1]:.2e} {errs[2]:.2e}, "
              f"orders {orders[0]:.2f} {orders[1]:.2f}, max runtime {max(times):.2f} s")
    # same machinery on a kernel without a pole on the contour
    exact = 1 - 2 + 2 - 2 * math.exp(-1)
    e2 = [abs(_scalar_endpoint(lambda s: 1 / (s + 1), lambda t: t ** 2, n) - exact) for n in (16, 32, 64)]
    detail += f"; diagnostic 1/(s+1): errors {e2[0]:.2e} {e2[1]:.2e} {e2[2]:.2e}"
    assert criterion(1, ok, detail)


def test_c02_mesh_table(criterion):
    got = [(unit_cube(L).n_vertices, unit_cube(L).n_triangles) for L in (1, 2, 3)]
    want = [(50, 96), (194, 384), (770, 1536)]
    assert criterion(2, got == want, f"vertices/triangles {got}")


def test_c03_convergence(criterion):
    lmax = [run(L, "dense").lmax for L in (1, 2, 3)]
    eoc = [math.log2(a / b) for a, b in zip(lmax, lmax[1:])]
    ok = all(0.8 <= e <= 1.4 for e in eoc)
    assert criterion(3, ok, f"Lmax {lmax[0]:.4f} {lmax[1]:.4f} {lmax[2]:.4f}, eoc {eoc[0]:.3f} {eoc[1]:.3f}")


def test_c04_backend_agreement(criterion):
    dev = {}
    for backend in ("aca", "fmm"):
        for L in (1, 2):
            d = run(L, "dense").lmax
            dev[(backend, L)] = abs(run(L, backend).lmax - d) / d
    ok = all(v <= 0.05 for v in dev.values())
    detail = ", ".join(f"{b} L{L} {v:.2e}" for (b, L), v in dev.items())
    assert criterion(4, ok, f"relative Lmax deviation from dense: {detail}")


def test_c05_block_fidelity(criterion):
    be = slp_tensor(2)
    rng = np.random.default_rng(5)
    blocks = be.tensor.blocks
    worst, errs = 0.0, []
    for bi in rng.choice(len(blocks), 20, replace=False):
        cb, pq = blocks[bi], be.quads[bi]
        for k in rng.choice(be.n_freq, 5, replace=False):
            exact = pq.evaluate(be.nodes[k])
            e = np.linalg.norm(cb.slice(k) - exact) / np.linalg.norm(exact)
            errs.append(e)
            worst = max(worst, e)
    bound = 10 * be.eps
    ok = worst <= bound
    detail = (f"worst slice error {worst:.2e} (bound {bound:.0e}), median {np.median(errs):.2e}, "
              f"{np.mean(np.array(errs) <= bound):.0%} of 100 slices within bound")
    assert criterion(5, ok, detail)


def test_c06_rank_economy(criterion):
    means = {L: slp_tensor(L).stats()["ranks"].mean() for L in (1, 2, 3)}
    n_q = 2 * slp_tensor(2).n_freq
    growth = means[3] / means[1] - 1
    ok = means[2] <= 0.3 * n_q and growth < 0.5
    detail = (f"mean rank L1 {means[1]:.2f}, L2 {means[2]:.2f} (N_Q {n_q}), L3 {means[3]:.2f}; "
              f"growth L1->L3 {growth:.0%}")
    assert criterion(6, ok, detail)


def test_c07_selection_locality(criterion):
    shares = []
    for L in (1, 2, 3):
        be = slp_tensor(L)
        hist = be.stats()["histogram"]
        order = np.argsort(np.abs(be.nodes.real))
        shares.append(hist[order[:len(order) // 4]].sum() / hist.sum())
    ok = min(shares) > 0.5
    assert criterion(7, ok, "share of smallest-|Re s| quarter, L1-L3: " + " ".join(f"{s:.3f}" for s in shares))


def _convolution_check(level, rng):
    be = slp_tensor(level)
    n = be.shape[1]
    W = rng.standard_normal((be.n_freq, n)) + 1j * rng.standard_normal((be.n_freq, n))
    dense = np.array([be.layout.evaluate(s) for s in be.nodes])
    t0 = time.perf_counter()
    ref = np.einsum("lij,lj->i", dense, W)
    t_direct = time.perf_counter() - t0
    be.history(W)
    t0 = time.perf_counter()
    sep = be.history(W)
    t_sep = time.perf_counter() - t0
    rel = np.linalg.norm(sep - ref) / np.linalg.norm(ref)
    r = be.stats()["ranks"].mean()
    return rel, 10 * be.eps, t_sep / t_direct, 2 * r / be.n_freq


def test_c08_separated_convolution(criterion):
    rng = np.random.default_rng(8)
    rel1, b1, _, _ = _convolution_check(1, rng)
    rel2, b2, ratio, rbound = _convolution_check(2, rng)
    ok = rel1 <= b1 and rel2 <= b2 and ratio < rbound
    detail = (f"relative error L1 {rel1:.1e} (bound {b1:.0e}), L2 {rel2:.1e} (bound {b2:.0e}); "
              f"L2 wall-clock ratio {ratio:.3f} (bound 2 r/N_Q = {rbound:.3f})")
    assert criterion(8, ok, detail)


def test_c09_frobenius_recursion(criterion):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(50):
        nr, nc, nq = rng.integers(1, 21, size=2).tolist() + [int(rng.integers(1, 31))]
        crosses = [FrequencyCross(rng.standard_normal((nr, nc)) + 1j * rng.standard_normal((nr, nc)),
                                  rng.standard_normal(nq) + 1j * rng.standard_normal(nq), (0, 0, 0), 1)
                   for _ in range(int(rng.integers(1, 8)))]
        full = sum(np.multiply.outer(c.face, c.fiber) for c in crosses)
        brute = np.linalg.norm(full)
        worst = max(worst, abs(recursive_frobenius(crosses) - brute) / brute)
    assert criterion(9, worst <= 1e-12, f"worst relative deviation {worst:.1e} over 50 stacks")


def test_c10_fmm_fidelity(criterion):
    lay = slp_layout(2)
    s = 1 + 2j
    rng = np.random.default_rng(10)
    x = rng.standard_normal(lay.n_cols) + 1j * rng.standard_normal(lay.n_cols)
    ref = lay.evaluate(s) @ x
    errs = {}
    for p in (2, 3, 4, 5):
        y = FmmOperator(lay, 2, p).at(s).matvec(x)
        errs[p] = np.linalg.norm(y - ref) / np.linalg.norm(ref)
    seq = [errs[p] for p in (2, 3, 4, 5)]
    inversions = [b > a for a, b in zip(seq, seq[1:])]
    big = [b > 1.1 * a for a, b in zip(seq, seq[1:])]
    monotone = sum(inversions) <= 1 and not any(big)
    ok = errs[4] <= 1e-4 and monotone
    detail = "errors " + ", ".join(f"p={p} {e:.2e}" for p, e in errs.items()) + " (bound 1e-04 at p=4)"
    assert criterion(10, ok, detail)


def test_c11_causality(criterion):
    runs = [(L, b) for L in (1, 2, 3) for b in ("dense",)] + [(L, b) for L in (1, 2) for b in ("aca", "fmm")]
    ratios = {key: run(*key).causality for key in runs}
    worst = max(c["ratio"] for c in ratios.values())
    via = max(c["ratio_via_source"] for c in ratios.values())
    ok = all(c["ok"] for c in ratios.values())
    detail = (f"worst |u| before d/c relative to peak {worst:.1e} over {len(runs)} runs "
              f"(bound 1e-03); with source travel time added {via:.1e}")
    assert criterion(11, ok, detail)


def test_c12_declared_exclusion(criterion):
    criterion(12, None, "electric-machine geometry unavailable, excluded by declaration")
    pytest.skip("declared out of scope")
