"""Integration contour of the generalized convolution quadrature.

The nodes lie on the image of a horizontal line in the period rectangle of
the Jacobi elliptic functions under a Moebius map; they are determined by
the smallest and largest step sizes and the spectrum of the RK matrix.
"""
import math
from dataclasses import dataclass

import numpy as np

from .specfun import (
    complete_elliptic_k,
    complete_elliptic_k_complementary,
    jacobi_sn_cn_dn,
)

Q_PERTURBATION = 0.05
CONTOUR_ENLARGEMENT = 5.0


@dataclass(frozen=True)
class Contour:
    nodes: np.ndarray
    weights: np.ndarray
    q: float
    k: float
    dt_min: float
    dt_max: float

    @property
    def n_q(self):
        return len(self.nodes)

    @property
    def half(self):
        """Indices of the representatives with Im s >= 0; the rest are conjugates."""
        return np.arange(self.n_q // 2)

    @property
    def half_nodes(self):
        return self.nodes[self.half]

    @property
    def half_weights(self):
        return self.weights[self.half]


def quadrature_count(n_steps, stages):
    """Number of contour nodes, ``N (ln N)^2`` (``N ln N`` for one stage)."""
    if n_steps < 1 or stages < 1:
        raise ValueError("n_steps and stages must be >= 1")
    log = math.log(n_steps)
    raw = n_steps * log * log if stages > 1 else n_steps * log
    n = max(4, math.ceil(raw - 1e-9))
    return n + (n % 2)


def step_ratio_q(steps, tableau):
    steps = np.asarray(steps, dtype=float)
    if steps.size == 0 or np.any(steps <= 0):
        raise ValueError("step sizes must be positive")
    lam = np.abs(tableau.eigenvalues())
    if np.any(lam == 0):
        raise ValueError("RK matrix has a zero eigenvalue")
    q = (steps.max() * lam.max()) / (steps.min() * lam.min())
    if tableau.stages > 1:
        q *= 5.0
    if abs(q - 1.0) < 1e-12:
        q = 1.0 + Q_PERTURBATION
    return float(q)


def modulus_k(q):
    if not q > 1.0:
        raise ValueError("q must exceed 1")
    root = math.sqrt(2.0 * q - 1.0)
    return (q - root) / (q + root)


def build_contour(steps, tableau, n_q):
    if n_q < 2 or n_q % 2:
        raise ValueError("n_q must be even and >= 2")
    steps = np.asarray(steps, dtype=float)
    dt_min, dt_max = float(steps.min()), float(steps.max())
    # multi-stage methods: the contour must also enclose the poles of the
    # RK resolvent (I - dt s A)^-1 and the region where |R(dt s)| > 1
    dt_ref = dt_min / CONTOUR_ENLARGEMENT if tableau.stages > 1 else dt_min
    q = step_ratio_q(steps, tableau)
    k = modulus_k(q)
    m = k * k
    K = complete_elliptic_k(m)
    Kp = complete_elliptic_k_complementary(m)
    root = math.sqrt(2.0 * q - 1.0)
    scale = 1.0 / (dt_ref * (q - 1.0))
    kinv = 1.0 / k

    nodes = np.empty(n_q, dtype=complex)
    weights = np.empty(n_q, dtype=complex)
    half = n_q // 2
    for ell in range(1, half + 1):
        sigma = complex(-K + (ell - 0.5) * 4.0 * K / n_q, 0.5 * Kp)
        sn, cn, dn = jacobi_sn_cn_dn(sigma, m)
        den = kinv - sn
        if abs(den) < 1e-10:
            raise ArithmeticError("contour node too close to the pole of the Moebius map")
        nodes[ell - 1] = scale * (root * (kinv + sn) / den - 1.0)
        dgamma = scale * root * 2.0 * cn * dn / (k * den * den)
        # trapezoidal rule on the period 4K of 1/(2 pi i) * integral ... ds
        weights[ell - 1] = 4.0 * K / (n_q * 2.0j * math.pi) * dgamma

    # mirror: s_{N_Q+1-l} = conj(s_l) exactly
    nodes[half:] = np.conj(nodes[:half][::-1])
    weights[half:] = np.conj(weights[:half][::-1])
    return Contour(nodes=nodes, weights=weights, q=q, k=k, dt_min=dt_min, dt_max=dt_max)


def contour_map(sigma, q, k, dt_ref):
    """Moebius-elliptic map ``gamma(sigma)`` and its derivative."""
    sn, cn, dn = jacobi_sn_cn_dn(sigma, k * k)
    root = math.sqrt(2.0 * q - 1.0)
    scale = 1.0 / (dt_ref * (q - 1.0))
    den = 1.0 / k - sn
    gamma = scale * (root * (1.0 / k + sn) / den - 1.0)
    dgamma = scale * root * 2.0 * cn * dn / (k * den * den)
    return gamma, dgamma
