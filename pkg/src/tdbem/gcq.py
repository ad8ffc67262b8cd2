"""Generalized convolution quadrature time stepping.

Each step of a Runge-Kutta based gCQ needs
  * the operator at the matrix argument (dt A)^-1, applied through the
    eigen-decomposition of (dt A)^-1 (one frequency per stage mode), and
  * the history sum over the contour nodes, whose per-node data is one
    stage-combined vector obtained from a scalar recursion.
With real data the nodes come in conjugate pairs, so only the upper half is
stored and the full sum is twice its real part.
"""
import time
from dataclasses import dataclass, field

import numpy as np

from .rk import stage_spectrum


class SolverError(RuntimeError):
    pass


@dataclass
class SolveInfo:
    iterations: int
    residual: float
    restarts: int = 0


def bicgstab(apply, b, tol, max_iter=2000, x0=None):
    """Unpreconditioned BiCGstab for complex systems.

    Stops on ``|b - A x| <= tol |b|``.  A breakdown of the shadow recurrence
    restarts once with the current residual as new shadow vector.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    b = np.asarray(b, dtype=complex)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b), SolveInfo(0, 0.0)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=complex)
    r = b - apply(x) if x0 is not None else b.copy()
    res = np.linalg.norm(r) / bnorm
    if res <= tol:
        return x, SolveInfo(0, res)
    r_hat = r.copy()
    rho = alpha = omega = 1.0 + 0j
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    restarts = 0
    for it in range(1, max_iter + 1):
        rho_new = np.vdot(r_hat, r)
        if abs(rho_new) < 1e-30 * np.linalg.norm(r_hat) * np.linalg.norm(r) or omega == 0:
            if restarts:
                raise SolverError(f"BiCGstab breakdown after restart, residual {res:.3e}")
            restarts += 1
            r_hat = r.copy()
            rho = alpha = omega = 1.0 + 0j
            v[:] = 0
            p[:] = 0
            rho_new = np.vdot(r_hat, r)
        beta = (rho_new / rho) * (alpha / omega)
        p = r + beta * (p - omega * v)
        v = apply(p)
        alpha = rho_new / np.vdot(r_hat, v)
        s = r - alpha * v
        res = np.linalg.norm(s) / bnorm
        if res <= tol:
            return x + alpha * p, SolveInfo(it, res, restarts)
        t = apply(s)
        tt = np.vdot(t, t).real
        omega = np.vdot(t, s) / tt if tt > 0 else 0.0
        x = x + alpha * p + omega * s
        r = s - omega * t
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            return x, SolveInfo(it, res, restarts)
        rho = rho_new
    raise SolverError(f"BiCGstab did not converge in {max_iter} iterations, residual {res:.3e}")


def stage_vectors(nodes, dt, tableau):
    """Per node: r = e^T M^-1 1, a^T = e^T M^-1 A and v = M^-1 1, M = I - dt s A."""
    nodes = np.asarray(nodes, dtype=complex)
    A = tableau.A
    m = tableau.stages
    M = np.eye(m)[None] - dt * nodes[:, None, None] * A[None]
    ones = np.ones((len(nodes), m, 1))
    v = np.linalg.solve(M, ones)[..., 0]
    e = np.broadcast_to(tableau.b_Ainv, (len(nodes), m))[..., None]
    y = np.linalg.solve(np.transpose(M, (0, 2, 1)), e)[..., 0]
    a = y @ A
    r = v @ tableau.b_Ainv
    return r, a, v


def history_update(z, nodes, dt, tableau, g):
    """z(n+1) = r z(n) + dt a^T g_n for the stage data g_n (n_dof x m).

    ``z`` holds the last-stage component of the per-node solutions (the only
    one that enters the next step since b^T A^-1 = e_m^T).
    """
    r, a, _ = stage_vectors(nodes, dt, tableau)
    return r[:, None] * z + dt * (a @ np.asarray(g).T)


def rhs_weights(z, weights, nodes, dt, tableau):
    """omega_l z_l (x) (I - dt s_l A)^-1 1, shape (L, n_dof, m)."""
    _, _, v = stage_vectors(nodes, dt, tableau)
    return weights[:, None, None] * z[:, :, None] * v[:, None, :]


def _conj_partner(mu, i):
    for j in range(i):
        if abs(mu[j] - np.conj(mu[i])) <= 1e-12 * max(1.0, abs(mu[i])) and abs(mu[i].imag) > 0:
            return j
    return None


def apply_matrix_argument(backend, spec, Y, faces=None, exploit_conjugacy=True):
    """backend((dt A)^-1) applied to real stage data Y (n x m)."""
    Yt = spec.to_modal(np.asarray(Y, dtype=complex))
    out = np.zeros((backend.shape[0], Yt.shape[1]), dtype=complex)
    for i, mu in enumerate(spec.mu):
        j = _conj_partner(spec.mu, i) if exploit_conjugacy else None
        if j is not None:
            out[:, i] = np.conj(out[:, j])
            continue
        face = faces[i] if faces is not None else backend.at(mu)
        out[:, i] = face.matvec(Yt[:, i])
    return spec.from_modal(out)


@dataclass
class System:
    """lhs(d/dt) x + lhs_local x = rhs(d/dt) y + rhs_local y, x unknown."""

    lhs: object
    rhs: object = None
    lhs_local: object = None
    rhs_local: object = None

    @property
    def n_rows(self):
        return self.lhs.shape[0]

    @property
    def n_x(self):
        return self.lhs.shape[1]

    @property
    def n_y(self):
        return 0 if self.rhs is None else self.rhs.shape[1]


@dataclass
class GcqState:
    n: int
    z_x: np.ndarray
    z_y: np.ndarray
    solutions: list = field(default_factory=list)
    info: list = field(default_factory=list)


class GcqStepper:
    """Sequential solver for a :class:`System` on a given step schedule."""

    def __init__(self, system, steps, tableau, contour, tol=1e-8, max_iter=2000, exploit_conjugacy=True):
        self.system = system
        self.steps = np.asarray(steps, dtype=float)
        self.tableau = tableau
        self.nodes = contour.half_nodes
        self.weights = contour.half_weights
        self.tol, self.max_iter = tol, max_iter
        self.exploit_conjugacy = exploit_conjugacy
        L = len(self.nodes)
        self.state = GcqState(0, np.zeros((L, system.n_x), complex), np.zeros((L, system.n_y), complex))
        self._faces = {}
        self.timings = {"convolution": 0.0, "solve": 0.0}

    def _faces_for(self, spec, which):
        key = (which, float(spec.dt))
        if key not in self._faces:
            backend = self.system.lhs if which == "lhs" else self.system.rhs
            self._faces[key] = [backend.at(mu) for mu in spec.mu]
            # keep only the most recent step size per operator
            for k in [k for k in self._faces if k[0] == which and k != key]:
                del self._faces[k]
        return self._faces[key]

    def step(self, Y):
        """Advance one step with the known stage data ``Y`` (n_y x m)."""
        sysm, st = self.system, self.state
        n = st.n
        dt = self.steps[n]
        tab = self.tableau
        spec = stage_spectrum(tab, dt)
        m = tab.stages
        rhs = np.zeros((sysm.n_rows, m))
        if sysm.rhs is not None:
            rhs += np.real(apply_matrix_argument(sysm.rhs, spec, Y, self._faces_for(spec, "rhs"),
                                                 self.exploit_conjugacy))
            if sysm.rhs_local is not None:
                rhs += sysm.rhs_local @ Y
        if n > 0:
            t0 = time.perf_counter()
            if sysm.rhs is not None:
                W = rhs_weights(st.z_y, self.weights, self.nodes, dt, tab)
                rhs += 2.0 * np.real(sysm.rhs.history(W))
            W = rhs_weights(st.z_x, self.weights, self.nodes, dt, tab)
            rhs -= 2.0 * np.real(sysm.lhs.history(W))
            self.timings["convolution"] += time.perf_counter() - t0
        X, info = self._solve(spec, rhs)
        st.z_x = history_update(st.z_x, self.nodes, dt, tab, X)
        if sysm.rhs is not None:
            st.z_y = history_update(st.z_y, self.nodes, dt, tab, Y)
        st.n += 1
        st.solutions.append(X)
        st.info.append(info)
        return X

    def _solve(self, spec, B):
        t0 = time.perf_counter()
        sysm = self.system
        faces = self._faces_for(spec, "lhs")
        Bt = spec.to_modal(B.astype(complex))
        Xt = np.zeros((sysm.n_x, Bt.shape[1]), dtype=complex)
        prev = spec.to_modal(self.state.solutions[-1].astype(complex)) if self.state.solutions else None
        infos = []
        for i, mu in enumerate(spec.mu):
            j = _conj_partner(spec.mu, i) if self.exploit_conjugacy else None
            if j is not None:
                Xt[:, i] = np.conj(Xt[:, j])
                continue
            face = faces[i]
            loc = sysm.lhs_local

            def apply(x, face=face, loc=loc):
                y = face.matvec(x)
                return y + loc @ x if loc is not None else y

            x0 = prev[:, i] if prev is not None else None
            Xt[:, i], inf = bicgstab(apply, Bt[:, i], self.tol, self.max_iter, x0)
            infos.append(inf)
        X = spec.from_modal(Xt)
        self.last_imag = float(np.abs(X.imag).max()) if X.size else 0.0
        self.timings["solve"] += time.perf_counter() - t0
        return np.real(X), infos


def solve_gcq(system, steps, data, tableau, contour, tol=1e-8, max_iter=2000, exploit_conjugacy=True):
    """Run all steps; ``data`` is (N, n_y, m) or a callable n -> (n_y, m)."""
    stepper = GcqStepper(system, steps, tableau, contour, tol, max_iter, exploit_conjugacy)
    for n in range(len(steps)):
        Y = data(n) if callable(data) else (data[n] if data is not None else np.zeros((0, tableau.stages)))
        stepper.step(Y)
    return np.array(stepper.state.solutions), stepper


def gcq_apply(backend, steps, Y, tableau, contour):
    """Forward convolution f = H(d/dt) y at all steps and stages; Y is (N, n, m)."""
    steps = np.asarray(steps, dtype=float)
    nodes, weights = contour.half_nodes, contour.half_weights
    z = np.zeros((len(nodes), backend.shape[1]), complex)
    out = []
    for n, dt in enumerate(steps):
        spec = stage_spectrum(tableau, dt)
        f = np.real(apply_matrix_argument(backend, spec, Y[n]))
        if n > 0:
            f += 2.0 * np.real(backend.history(rhs_weights(z, weights, nodes, dt, tableau)))
        z = history_update(z, nodes, dt, tableau, Y[n])
        out.append(f)
    return np.array(out)


def gcq_scalar(transfer, steps, g, tableau, n_q=None):
    """Apply a scalar Laplace-domain transfer function to ``g(t)``.

    Returns the (N, m) stage values of the convolution on the schedule.
    """
    from .backends import ScalarBackend
    from .contour import build_contour, quadrature_count
    steps = np.asarray(steps, dtype=float)
    n_q = n_q or quadrature_count(len(steps), tableau.stages)
    contour = build_contour(steps, tableau, n_q)
    t0 = np.concatenate([[0.0], np.cumsum(steps)[:-1]])
    ts = t0[:, None] + steps[:, None] * tableau.c[None, :]
    Y = np.asarray(g(ts), dtype=float)[:, None, :]
    backend = ScalarBackend(transfer, contour.half_nodes)
    return gcq_apply(backend, steps, Y, tableau, contour)[:, 0, :]


# ---------------------------------------------------------------------------
# Uniform steps with dense operators: the history becomes a discrete
# convolution with lag matrices W_k, each a fixed combination of contour
# slices.  Combining the frequencies on the deduplicated distance basis
# makes each W_k cost one sparse product.


def lag_coefficients(nodes, weights, dt, tableau, n_lags):
    """c[l, k, a, b] = omega_l r_l^(k-1) dt v_l[a] a_l[b] for k = 1..n_lags."""
    r, a, v = stage_vectors(nodes, dt, tableau)
    k = np.arange(n_lags)
    pw = r[:, None] ** k[None, :]
    c = (weights[:, None, None, None] * pw[:, :, None, None] * dt
         * v[:, None, :, None] * a[:, None, None, :])
    return c.reshape(len(nodes), -1)


def solve_gcq_uniform_dense(system, dt, n_steps, data, tableau, contour, tol=1e-8, max_iter=2000,
                            cache_bytes=1.2e9):
    """Same result as :func:`solve_gcq` for uniform steps and dense backends."""
    m = tableau.stages
    nodes, weights = contour.half_nodes, contour.half_weights
    n_lags = max(n_steps - 1, 0)
    spec = stage_spectrum(tableau, dt)
    nr = system.n_rows
    hist_rhs = np.zeros((n_steps, nr, m))
    t_start = time.perf_counter()
    C = lag_coefficients(nodes, weights, dt, tableau, n_lags) if n_lags else None
    Y = None
    if system.rhs is not None:
        Y = np.array([data(n) if callable(data) else data[n] for n in range(n_steps)])
        if n_lags:
            psi = system.rhs.lag_basis(C)
            nc = system.n_y
            for rows, mat in system.rhs.op.chunks:
                Wc = np.asarray(mat @ psi).reshape(len(rows), nc, n_lags, m, m)
                for k in range(1, n_lags + 1):
                    hist_rhs[k:, rows] += np.einsum("ijab,njb->nia", Wc[:, :, k - 1], Y[:n_steps - k])
            del psi
    psi_l = system.lhs.lag_basis(C) if n_lags else None
    t_hist = time.perf_counter() - t_start
    cache = {}
    per = nr * system.n_x * m * m * 8

    def lag(k):
        if k in cache:
            return cache[k]
        w = system.lhs.op.combine(psi_l[:, (k - 1) * m * m:k * m * m]).reshape(m, m, nr, system.n_x)
        if (len(cache) + 1) * per <= cache_bytes:
            cache[k] = w
        return w

    stepper = GcqStepper(system, np.full(n_steps, dt), tableau, contour, tol, max_iter)
    stepper.timings["convolution"] += t_hist
    X = []
    for n in range(n_steps):
        B = np.zeros((nr, m))
        if system.rhs is not None:
            B += np.real(apply_matrix_argument(system.rhs, spec, Y[n], stepper._faces_for(spec, "rhs")))
            if system.rhs_local is not None:
                B += system.rhs_local @ Y[n]
        B += hist_rhs[n]
        t0 = time.perf_counter()
        for k in range(1, n + 1):
            B -= np.einsum("abij,jb->ia", lag(k), X[n - k])
        stepper.timings["convolution"] += time.perf_counter() - t0
        Xn, info = stepper._solve(spec, B)
        stepper.state.solutions.append(Xn)
        stepper.state.info.append(info)
        stepper.state.n += 1
        X.append(Xn)
    return np.array(X), stepper
