"""Triangle quadrature: Gauss rules with distance-based order selection and
Duffy-transformed rules for weakly singular collocation integrals.

Reference triangle is (0,0), (1,0), (0,1) with area 1/2.  Rules return
points as (n, 2) arrays of (xi, eta) and weights summing to 1/2.
"""
import math
from functools import lru_cache

import numpy as np

MAX_ORDER = 10
BASE_ORDER = 6
MIN_ORDER = 2


@lru_cache(maxsize=None)
def _gauss_legendre01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _collapsed_rule(degree):
    """Conical product (Stroud) rule exact to ``degree``.

    The radial direction carries the extra Jacobian factor, so it gets one
    more Gauss point when needed.
    """
    xu, wu = _gauss_legendre01((degree + 3) // 2)
    xv, wv = _gauss_legendre01((degree + 2) // 2)
    u, v = np.meshgrid(xu, xv, indexing="ij")
    wu, wv = np.meshgrid(wu, wv, indexing="ij")
    xi = u * (1.0 - v)
    eta = u * v
    weights = wu * wv * u
    return np.column_stack([xi.ravel(), eta.ravel()]), weights.ravel()


def _radon7():
    sq = math.sqrt(15.0)
    a, b = (6.0 - sq) / 21.0, (9.0 + 2.0 * sq) / 21.0
    c, d = (6.0 + sq) / 21.0, (9.0 - 2.0 * sq) / 21.0
    wa, wc = (155.0 - sq) / 2400.0, (155.0 + sq) / 2400.0
    pts = [(1 / 3, 1 / 3), (a, a), (b, a), (a, b), (c, c), (d, c), (c, d)]
    wts = [9.0 / 80.0, wa, wa, wa, wc, wc, wc]
    return np.array(pts), np.array(wts)


@lru_cache(maxsize=None)
def gauss_triangle(order):
    """Positive-weight rule on the reference triangle exact up to degree ``order``."""
    if not 1 <= order <= MAX_ORDER:
        raise ValueError(f"unsupported quadrature order {order}")
    if order == 1:
        pts, wts = np.array([[1 / 3, 1 / 3]]), np.array([0.5])
    elif order == 2:
        pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
        wts = np.full(3, 1 / 6)
    elif order in (4, 5):
        pts, wts = _radon7()
    else:
        pts, wts = _collapsed_rule(order)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


def select_order(dist, h_elem, base=BASE_ORDER):
    """Full order for near interactions, one order less per doubling of distance."""
    ratio = max(dist, h_elem) / h_elem
    return int(min(max(base - math.floor(math.log2(ratio)), MIN_ORDER), base))


def select_orders(dist, h_elem, base=BASE_ORDER):
    dist = np.asarray(dist, dtype=float)
    ratio = np.maximum(dist, h_elem) / h_elem
    return np.clip(base - np.floor(np.log2(ratio)).astype(int), MIN_ORDER, base)


def map_to_triangle(ref_points, p0, p1, p2):
    """Map reference points to a physical triangle; returns (n, 3) points."""
    xi, eta = ref_points[:, 0:1], ref_points[:, 1:2]
    return p0 + xi * (p1 - p0) + eta * (p2 - p0)


def barycentric(points, p0, p1, p2):
    """Barycentric coordinates (n, 3) of points lying in the triangle plane."""
    e1, e2 = p1 - p0, p2 - p0
    g = np.array([[e1 @ e1, e1 @ e2], [e1 @ e2, e2 @ e2]])
    rhs = np.stack([(points - p0) @ e1, (points - p0) @ e2], axis=1)
    xi_eta = np.linalg.solve(g, rhs.T).T
    return np.column_stack([1.0 - xi_eta.sum(axis=1), xi_eta[:, 0], xi_eta[:, 1]])


DUFFY_POINTS = 16


def duffy_rule(point, p0, p1, p2, n=DUFFY_POINTS, tol=1e-10):
    """Points and weights integrating a 1/r-singular integrand at ``point``.

    The triangle is split into sub-triangles having ``point`` as a vertex
    (one for a corner, two on an edge, three in the interior); each is
    mapped from the unit square by the Duffy substitution whose Jacobian
    cancels the singularity.
    """
    corners = [np.asarray(p, dtype=float) for p in (p0, p1, p2)]
    point = np.asarray(point, dtype=float)
    lam = barycentric(point[None, :], *corners)[0]
    scale = max(np.linalg.norm(corners[1] - corners[0]), np.linalg.norm(corners[2] - corners[0]))
    normal = np.cross(corners[1] - corners[0], corners[2] - corners[0])
    normal /= np.linalg.norm(normal)
    if abs((point - corners[0]) @ normal) > tol * scale or np.any(lam < -tol):
        raise ValueError("singular point is not on the triangle")
    subs = []
    for i in range(3):
        a, b = corners[(i + 1) % 3], corners[(i + 2) % 3]
        # skip the degenerate sub-triangle (point on edge a-b or at a corner)
        if lam[i] > 1e-14:
            subs.append((a, b))
    x, w = _gauss_legendre01(n)
    u, v = np.meshgrid(x, x, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    u, v, wuv = u.ravel(), v.ravel(), (wu * wv).ravel()
    pts, wts = [], []
    for a, b in subs:
        area2 = np.linalg.norm(np.cross(a - point, b - point))
        pts.append(point + u[:, None] * (a - point) + (u * v)[:, None] * (b - a))
        wts.append(wuv * u * area2)
    return np.vstack(pts), np.concatenate(wts)


def duffy_singular(point, triangle, kernel, n=DUFFY_POINTS):
    """Integrate ``kernel(points)`` over ``triangle`` (3x3 array) with a singularity at ``point``."""
    pts, wts = duffy_rule(point, *np.asarray(triangle, dtype=float), n=n)
    return np.sum(wts * kernel(pts))
