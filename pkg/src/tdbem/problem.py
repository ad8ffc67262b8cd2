"""Cube test problems with the smooth-pulse load: data, operator systems,
error measure and field evaluation inside the domain."""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assemble import (
    ColumnBlock,
    Collocation,
    Layout,
    centroid_collocation,
    integral_free_term,
    point_collocation,
    trace_evaluation,
    vertex_collocation,
)
from .mesh import boundary_partition, positive_faces
from .quad import gauss_triangle

X_STAR = np.array([0.8, 0.2, 0.3])
ERROR_ORDER = 6


def smooth_pulse(y, t, c=1.0, x_star=X_STAR):
    """(t - r/c)^2 exp(-c (t - r/c)) H(t - r/c) / r."""
    y = np.asarray(y, dtype=float)
    r = np.linalg.norm(y - x_star, axis=-1)
    tau = np.asarray(t, dtype=float) - r / c
    pos = np.maximum(tau, 0.0)
    return np.where(tau > 0, pos ** 2 * np.exp(-c * pos), 0.0) / r


def smooth_pulse_flux(y, n_y, t, c=1.0, x_star=X_STAR):
    """Normal derivative of :func:`smooth_pulse` with respect to y."""
    y = np.asarray(y, dtype=float)
    d = y - x_star
    r = np.linalg.norm(d, axis=-1)
    tau = np.asarray(t, dtype=float) - r / c
    pos = np.maximum(tau, 0.0)
    f = np.where(tau > 0, pos ** 2 * np.exp(-c * pos), 0.0)
    df = np.where(tau > 0, (2 * pos - c * pos ** 2) * np.exp(-c * pos), 0.0)
    du_dr = -df / (c * r) - f / r ** 2
    return du_dr * np.sum(d * n_y, axis=-1) / r


def stage_times(steps, tableau):
    """(N, m) array of stage times t_{n-1} + c_i dt_n."""
    steps = np.asarray(steps, dtype=float)
    t0 = np.concatenate([[0.0], np.cumsum(steps)[:-1]])
    return t0[:, None] + steps[:, None] * tableau.c[None, :]


def midpoint_values(X, tableau, x_start=None):
    """Values at interval midpoints by interpolating t_{n-1} and all stages.

    ``X`` is (N, n, m) stage data; the value at t_0 is ``x_start`` (zero by
    default, the quiescent initial state).
    """
    nodes = np.concatenate([[0.0], tableau.c])
    w = np.ones(len(nodes))
    for i, ti in enumerate(nodes):
        for j, tj in enumerate(nodes):
            if i != j:
                w[i] *= (0.5 - tj) / (ti - tj)
    prev = np.concatenate([np.zeros_like(X[:1, :, -1]) if x_start is None else x_start[None],
                           X[:-1, :, -1]])
    return w[0] * prev + np.einsum("i,nki->nk", w[1:], X)


@dataclass
class CubeProblem:
    """Operators and data for the Dirichlet or mixed cube problem."""

    kind: str
    mesh: object
    c: float
    part: object
    rows: Collocation
    lhs_layout: Layout
    rhs_layout: Layout
    lhs_local: object
    rhs_local: object
    x_star: np.ndarray

    @property
    def n_x(self):
        return self.lhs_layout.n_cols

    @property
    def n_y(self):
        return self.rhs_layout.n_cols

    def data(self, t):
        """Known data y at times ``t`` (array) -> (len(t), n_y)."""
        t = np.atleast_1d(t)
        mesh, part = self.mesh, self.part
        out = []
        for block in self.rhs_layout.blocks:
            if block.kind == "dlp":
                v = mesh.vertices[block.ids]
                out.append(smooth_pulse(v[None], t[:, None], self.c, self.x_star))
            else:
                out.append(_element_average_flux(mesh, block.ids, t, self.c, self.x_star))
        return np.concatenate(out, axis=1)

    def stage_data(self, steps, tableau):
        ts = stage_times(steps, tableau)
        vals = self.data(ts.ravel()).reshape(ts.shape + (self.n_y,))
        return np.transpose(vals, (0, 2, 1))          # (N, n_y, m)

    def split_unknowns(self, x):
        """Unknown vector -> (flux on Dirichlet triangles, pressure on Neumann vertices)."""
        n_q = len(self.part.p0_dirichlet.global_ids)
        return x[..., :n_q], x[..., n_q:]


def _element_average_flux(mesh, tris, t, c, x_star):
    ref, w = gauss_triangle(ERROR_ORDER)
    p0, p1, p2 = (v[tris] for v in mesh.corners())
    y = p0[:, None] + ref[None, :, 0, None] * (p1 - p0)[:, None] + ref[None, :, 1, None] * (p2 - p0)[:, None]
    n = np.broadcast_to(mesh.normals[tris][:, None], y.shape)
    vals = smooth_pulse_flux(y[None], n[None], np.asarray(t)[:, None, None], c, x_star)
    return np.einsum("tkq,q->tk", vals, w) / w.sum()


def cube_problem(mesh, kind="dirichlet", c=1.0, predicate=positive_faces, x_star=X_STAR):
    if kind not in ("dirichlet", "mixed"):
        raise ValueError(f"unknown problem {kind!r}")
    part = boundary_partition(mesh, None if kind == "dirichlet" else predicate)
    tri_d = part.p0_dirichlet.global_ids
    tri_n = part.p0_neumann.global_ids
    vert_d = part.p1_dirichlet.global_ids
    vert_n = part.p1_neumann.global_ids
    if kind == "mixed" and (len(tri_d) == 0 or len(tri_n) == 0):
        raise ValueError("mixed problem needs both Dirichlet and Neumann triangles")
    cen = centroid_collocation(mesh, tri_d)
    ver = vertex_collocation(mesh, vert_n)
    rows = Collocation(np.vstack([cen.points, ver.points]), cen.on_triangles + ver.on_triangles)
    C = integral_free_term(mesh, rows)
    E_rows = sp.vstack([trace_evaluation(mesh, "centroid", tri_d),
                        trace_evaluation(mesh, "vertex", vert_n)]).tocsr()
    Cdiag = sp.diags(C)
    lhs = Layout(mesh, rows, [ColumnBlock("slp", tri_d, 1.0), ColumnBlock("dlp", vert_n, -1.0)], c)
    rhs = Layout(mesh, rows, [ColumnBlock("dlp", vert_d, 1.0), ColumnBlock("slp", tri_n, -1.0)], c)
    nq = len(tri_d)
    lhs_local = None
    if len(vert_n):
        lhs_local = sp.hstack([sp.csr_matrix((len(rows), nq)), -Cdiag @ E_rows[:, vert_n]]).tocsr()
    rhs_local = sp.hstack([Cdiag @ E_rows[:, vert_d], sp.csr_matrix((len(rows), len(tri_n)))]).tocsr()
    prob = CubeProblem(kind, mesh, c, part, rows, lhs, rhs, lhs_local, rhs_local, np.asarray(x_star))
    prob.C = C
    return prob


def exact_unknowns(problem, t):
    """Exact values of the unknowns at times ``t``: flux and pressure parts."""
    t = np.atleast_1d(t)
    mesh, part = problem.mesh, problem.part
    q = _element_average_flux(mesh, part.p0_dirichlet.global_ids, t, problem.c, problem.x_star)
    u = smooth_pulse(mesh.vertices[part.p1_neumann.global_ids][None], t[:, None], problem.c,
                     problem.x_star)
    return q, u


def l2_errors(problem, x_mid, t_mid):
    """Spatial L2 errors of flux (Dirichlet part) and pressure (Neumann part)."""
    mesh, part = problem.mesh, problem.part
    ref, w = gauss_triangle(ERROR_ORDER)
    q_h, u_h = problem.split_unknowns(x_mid)
    out_q = np.zeros(len(t_mid))
    out_u = np.zeros(len(t_mid))
    tri_d = part.p0_dirichlet.global_ids
    if len(tri_d):
        p0, p1, p2 = (v[tri_d] for v in mesh.corners())
        y = p0[:, None] + ref[None, :, 0, None] * (p1 - p0)[:, None] + ref[None, :, 1, None] * (p2 - p0)[:, None]
        n = np.broadcast_to(mesh.normals[tri_d][:, None], y.shape)
        ex = smooth_pulse_flux(y[None], n[None], t_mid[:, None, None], problem.c, problem.x_star)
        jac = 2 * mesh.areas[tri_d]
        out_q = np.sqrt(np.einsum("ntq,q,t->n", (ex - q_h[:, :, None]) ** 2, w, jac))
    tri_n = part.p0_neumann.global_ids
    if len(tri_n):
        loc = part.p1_neumann.local_index()
        tv = mesh.triangles[tri_n]
        shape = np.stack([1 - ref[:, 0] - ref[:, 1], ref[:, 0], ref[:, 1]], axis=1)
        uh = np.einsum("ntk,qk->ntq", u_h[:, loc[tv]], shape)
        p0, p1, p2 = (v[tri_n] for v in mesh.corners())
        y = p0[:, None] + ref[None, :, 0, None] * (p1 - p0)[:, None] + ref[None, :, 1, None] * (p2 - p0)[:, None]
        ex = smooth_pulse(y[None], t_mid[:, None, None], problem.c, problem.x_star)
        jac = 2 * mesh.areas[tri_n]
        out_u = np.sqrt(np.einsum("ntq,q,t->n", (ex - uh) ** 2, w, jac))
    return out_q, out_u


def lmax_error(problem, X, steps, tableau):
    """Max over steps of the midpoint spatial L2 errors -> (flux, pressure, per-step arrays)."""
    steps = np.asarray(steps, dtype=float)
    t_mid = np.cumsum(steps) - 0.5 * steps
    x_mid = midpoint_values(X, tableau)
    eq, eu = l2_errors(problem, x_mid, t_mid)
    return float(eq.max()), float(eu.max()), t_mid, eq, eu


def full_traces(problem, X, steps, tableau):
    """Stage values of flux on all triangles and pressure on all vertices."""
    mesh, part = problem.mesh, problem.part
    Y = problem.stage_data(steps, tableau)
    N, _, m = X.shape
    q = np.zeros((N, mesh.n_triangles, m))
    u = np.zeros((N, mesh.n_vertices, m))
    nq = len(part.p0_dirichlet.global_ids)
    q[:, part.p0_dirichlet.global_ids] = X[:, :nq]
    u[:, part.p1_neumann.global_ids] = X[:, nq:]
    nd = len(part.p1_dirichlet.global_ids)
    u[:, part.p1_dirichlet.global_ids] = Y[:, :nd]
    q[:, part.p0_neumann.global_ids] = Y[:, nd:]
    return q, u


def _surface_samples(mesh):
    ref, _ = gauss_triangle(ERROR_ORDER)
    p0, p1, p2 = mesh.corners()
    y = (p0[:, None] + ref[None, :, 0, None] * (p1 - p0)[:, None]
         + ref[None, :, 1, None] * (p2 - p0)[:, None]).reshape(-1, 3)
    mids = 0.5 * (mesh.vertices[mesh.triangles] + mesh.vertices[np.roll(mesh.triangles, 1, axis=1)])
    return np.vstack([y, mesh.vertices, mids.reshape(-1, 3)])


def boundary_distance(mesh, points):
    """Distance from each point to the surface, sampled at quadrature points,
    vertices and edge midpoints."""
    y = _surface_samples(mesh)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return np.array([np.linalg.norm(y - p, axis=1).min() for p in pts])


def representation_layout(mesh, points, c=1.0, min_distance=None):
    """Layout of u(x) = V q - K u at points off the boundary."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    limit = 0.5 * mesh.h if min_distance is None else min_distance
    if np.any(boundary_distance(mesh, points) <= limit):
        raise ValueError("evaluation point within h/2 of the boundary")
    return Layout(mesh, point_collocation(points),
                  [ColumnBlock("slp", np.arange(mesh.n_triangles), 1.0),
                   ColumnBlock("dlp", np.arange(mesh.n_vertices), -1.0)], c)


def interior_eval(problem, points, X, steps, tableau, contour, min_distance=None):
    """Field history at ``points`` by the representation formula -> (N, npts, m)."""
    from .backends import DenseBackend
    from .gcq import gcq_apply
    layout = representation_layout(problem.mesh, points, problem.c, min_distance)
    q, u = full_traces(problem, X, steps, tableau)
    Y = np.concatenate([q, u], axis=1)
    backend = DenseBackend(layout, contour.half_nodes)
    return gcq_apply(backend, steps, Y, tableau, contour)


def arrival_times(problem, points, via_source=False):
    """Earliest time a signal from the boundary can reach ``points``.

    By default this is the distance to the nearest boundary point over c.
    With ``via_source`` the travel time from the exterior source to the
    boundary is added, which gives the sharper first-arrival time of the
    manufactured field.
    """
    y = _surface_samples(problem.mesh)
    onset = np.linalg.norm(y - problem.x_star, axis=1) / problem.c if via_source else 0.0
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return np.array([np.min(onset + np.linalg.norm(y - p, axis=1) / problem.c) for p in pts])
