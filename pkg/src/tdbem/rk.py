"""Runge-Kutta Butcher tableaux and the stage spectrum of ``(dt A)^-1``.

Operators evaluated at a matrix argument ``H((dt A)^-1)`` are applied by
diagonalising ``(dt A)^-1 = T diag(mu) T^-1``: stage-stacked data are
transformed, the scalar-frequency operator ``H(mu_i)`` acts on each
transformed stage, and the result is transformed back.
"""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class ButcherTableau:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    name: str = ""

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        m = A.shape[0]
        if A.shape != (m, m) or b.shape != (m,) or c.shape != (m,):
            raise ValueError("inconsistent tableau dimensions")
        if abs(np.linalg.det(A)) < 1e-14:
            raise ValueError("A must be invertible")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        last = np.zeros(m)
        last[-1] = 1.0
        if not np.allclose(self.b_Ainv, last, atol=1e-13):
            raise ValueError("tableau is not stiffly accurate (b^T A^-1 != e_m)")
        if abs(c[-1] - 1.0) > 1e-13:
            raise ValueError("c_m must equal 1")

    @property
    def stages(self):
        return self.A.shape[0]

    @property
    def b_Ainv(self):
        return np.linalg.solve(self.A.T, self.b)

    def eigenvalues(self):
        return np.linalg.eigvals(self.A)

    def stability_function(self, z):
        """R(z) = 1 + z b^T (I - z A)^-1 1."""
        m = self.stages
        ones = np.ones(m)
        return 1.0 + z * self.b @ np.linalg.solve(np.eye(m) - z * self.A, ones)


def radau_iia_2():
    """Two-stage Radau IIA (order 3, A- and L-stable)."""
    return ButcherTableau(
        A=[[5.0 / 12.0, -1.0 / 12.0], [3.0 / 4.0, 1.0 / 4.0]],
        b=[3.0 / 4.0, 1.0 / 4.0],
        c=[1.0 / 3.0, 1.0],
        name="radau_iia_2",
    )


def implicit_euler():
    return ButcherTableau(A=[[1.0]], b=[1.0], c=[1.0], name="implicit_euler")


@dataclass(frozen=True)
class StageSpectrum:
    """Eigen-decomposition ``(dt A)^-1 = T diag(mu) T_inv``."""

    mu: np.ndarray
    T: np.ndarray
    T_inv: np.ndarray
    dt: float = field(default=0.0)

    @property
    def stages(self):
        return len(self.mu)

    def to_modal(self, X):
        """Stage data ``X`` (..., m) -> modal coordinates ``X T^-T``."""
        return X @ self.T_inv.T

    def from_modal(self, Y):
        return Y @ self.T.T

    def apply(self, op, X):
        """Apply ``op((dt A)^-1)`` to stage data ``X`` of shape (M, m).

        ``op(mu, x)`` applies the scalar-frequency operator at ``mu``.
        """
        Xt = self.to_modal(np.asarray(X, dtype=complex))
        Yt = np.empty_like(Xt)
        for i, mu in enumerate(self.mu):
            Yt[..., i] = op(mu, Xt[..., i])
        return self.from_modal(Yt)


def _quantize(dt):
    return float(f"{dt:.12g}")


@lru_cache(maxsize=64)
def _spectrum_cached(A_bytes, m, dt):
    A = np.frombuffer(A_bytes, dtype=float).reshape(m, m)
    M = np.linalg.inv(dt * A)
    mu, T = np.linalg.eig(M)
    if np.linalg.cond(T) > 1e8:
        raise ValueError("(dt A)^-1 is (numerically) defective")
    order = np.argsort(-mu.imag)
    mu, T = mu[order], T[:, order]
    return StageSpectrum(mu=mu, T=T, T_inv=np.linalg.inv(T), dt=dt)


def stage_spectrum(tableau, dt):
    if dt <= 0:
        raise ValueError("dt must be positive")
    return _spectrum_cached(tableau.A.tobytes(), tableau.stages, _quantize(dt))
