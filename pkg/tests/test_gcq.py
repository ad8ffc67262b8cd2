import numpy as np
import pytest

from tdbem.backends import DenseBackend, ScalarBackend
from tdbem.cli import make_config, run_problem
from tdbem.gcq import (
    SolverError,
    System,
    bicgstab,
    gcq_scalar,
    history_update,
    rhs_weights,
    solve_gcq,
    solve_gcq_uniform_dense,
    stage_vectors,
)
from tdbem.contour import build_contour, quadrature_count
from tdbem.problem import cube_problem
from tdbem.rk import implicit_euler

from conftest import cube, uniform_contour


def test_bicgstab_identity(rng):
    b = rng.standard_normal(7) + 1j * rng.standard_normal(7)
    x, info = bicgstab(lambda v: v, b, 1e-12)
    assert info.iterations == 1 and np.allclose(x, b)


def test_bicgstab_dense_oracle(rng):
    n = 50
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)) + 3 * n * np.eye(n)
    b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    tol = 1e-10
    x, info = bicgstab(lambda v: A @ v, b, tol)
    assert np.linalg.norm(b - A @ x) <= tol * np.linalg.norm(b)
    assert np.linalg.norm(x - np.linalg.solve(A, b)) <= 10 * tol * np.linalg.norm(x)


def test_bicgstab_zero_rhs_and_errors(rng):
    x, info = bicgstab(lambda v: 2 * v, np.zeros(4), 1e-8)
    assert info.iterations == 0 and not x.any()
    with pytest.raises(ValueError):
        bicgstab(lambda v: v, np.ones(3), 0.0)
    A = rng.standard_normal((40, 40))
    with pytest.raises(SolverError, match="residual"):
        bicgstab(lambda v: A @ v, rng.standard_normal(40), 1e-14, max_iter=3)


def test_history_zero(radau):
    nodes = np.array([1 + 1j, 2 - 0.5j])
    z = history_update(np.zeros((2, 3), complex), nodes, 0.1, radau, np.zeros((3, 2)))
    assert not z.any()


def test_history_implicit_euler():
    tab = implicit_euler()
    s, dt = np.array([0.4 + 2j]), 0.25
    g = [1.0, -2.0, 0.5]
    z = np.zeros((1, 1), complex)
    for gn in g:
        z = history_update(z, s, dt, tab, [[gn]])
    d = 1 - dt * s[0]
    assert z[0, 0] == pytest.approx(dt * (g[2] / d + g[1] / d ** 2 + g[0] / d ** 3), rel=1e-14)


def test_history_uses_last_stage(radau):
    # b^T A^-1 = (0, 1): only the last stage of the previous solution enters
    assert np.allclose(radau.b_Ainv, [0, 1])
    r, a, v = stage_vectors(np.array([1 + 1j]), 0.2, radau)
    M = np.eye(2) - 0.2 * (1 + 1j) * radau.A
    assert np.allclose(v[0], np.linalg.solve(M, np.ones(2)))
    assert r[0] == pytest.approx(v[0][1])


def test_conjugate_weights(radau):
    s = np.array([0.7 + 3j])
    z = np.array([[1.0 - 2j]])
    w = rhs_weights(z, np.array([0.3 + 0.1j]), s, 0.1, radau)
    wc = rhs_weights(z.conj(), np.array([0.3 - 0.1j]), s.conj(), 0.1, radau)
    assert np.allclose(wc, w.conj())


def test_scalar_decaying_kernel(radau):
    # 1/(s+1) applied to t^2 on [0, 1]
    exact = lambda t: t ** 2 - 2 * t + 2 - 2 * np.exp(-t)
    errs = []
    for n in (16, 32):
        f = gcq_scalar(lambda s: 1 / (s + 1), np.full(n, 1.0 / n), lambda t: t ** 2, radau)
        errs.append(abs(f[-1, -1] - exact(1.0)))
    assert errs[1] < 1e-4 and errs[1] < errs[0] / 4


def test_scalar_graded_steps(radau):
    steps = np.geomspace(0.02, 0.06, 24)
    steps *= 1.0 / steps.sum()
    f = gcq_scalar(lambda s: 1 / (s + 2), steps, lambda t: np.sin(3 * t), radau)
    T = 1.0
    exact = (2 * np.sin(3 * T) - 3 * np.cos(3 * T) + 3 * np.exp(-2 * T)) / 13
    assert f[-1, -1] == pytest.approx(exact, abs=1e-3)


def test_zero_data_zero_solution(radau):
    steps, con = uniform_contour(8, 2.0)
    be = ScalarBackend(lambda s: (s + 2) / (s + 1), con.half_nodes)
    X, st = solve_gcq(System(be, be), steps, np.zeros((8, 1, 2)), radau, con)
    assert not X.any()


def test_scalar_system_inverse(radau):
    # (s + 2)/(s + 1) x = y with y(t) = t: x = t/2 + (1 - e^{-2t}) / 4
    steps = np.full(30, 0.05)
    con = build_contour(steps, radau, quadrature_count(30, 2))
    lhs = ScalarBackend(lambda s: (s + 2) / (s + 1), con.half_nodes)
    one = ScalarBackend(lambda s: np.ones_like(s), con.half_nodes)
    t = np.cumsum(steps)[:, None] - steps[:, None] + steps[:, None] * radau.c[None]
    X, _ = solve_gcq(System(lhs, one), steps, t[:, None, :], radau, con, tol=1e-12)
    T = 1.5
    assert X[-1, 0, -1] == pytest.approx(T / 2 + (1 - np.exp(-2 * T)) / 4, abs=1e-4)


def test_uniform_matches_generic(radau):
    prob = cube_problem(cube(1), "mixed")
    steps, con = uniform_contour(6, 2.1)
    lhs = DenseBackend(prob.lhs_layout, con.half_nodes)
    rhs = DenseBackend(prob.rhs_layout, con.half_nodes)
    sysm = System(lhs, rhs, prob.lhs_local, prob.rhs_local)
    Y = prob.stage_data(steps, radau)
    X1, _ = solve_gcq(sysm, steps, Y, radau, con, tol=1e-10)
    X2, _ = solve_gcq_uniform_dense(sysm, steps[0], len(steps), Y, radau, con, tol=1e-10)
    assert np.abs(X1 - X2).max() < 1e-8 * np.abs(X1).max()


def test_dense_vs_aca_level1():
    res = {b: run_problem(make_config({"preset": "paper-level-1", "backend": b}), probes=False)
           for b in ("dense", "aca")}
    Xd, Xa = res["dense"].X, res["aca"].X
    eps = res["aca"].config.eps_aca * 100
    diff = np.linalg.norm(Xd - Xa, axis=1).max()
    assert diff <= 10 * eps * np.linalg.norm(Xd, axis=1).max()
