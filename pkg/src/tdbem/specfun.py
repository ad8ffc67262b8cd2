"""Complete elliptic integrals and Jacobi elliptic functions.

All routines take the *parameter* ``m = k**2``.  Real arguments use the
arithmetic-geometric mean (descending Landen) recursion; complex arguments
are reduced to real ones by the addition theorem together with Jacobi's
imaginary transformation.
"""
import math

import numpy as np

_AGM_TOL = 4e-16
_AGM_MAXITER = 60


class EllipticDomainError(ValueError):
    pass


def _check_parameter(m):
    if not (0.0 <= m < 1.0) or not math.isfinite(m):
        raise EllipticDomainError(f"parameter m={m!r} outside [0, 1)")


def _agm(a, b):
    for _ in range(_AGM_MAXITER):
        if abs(a - b) <= _AGM_TOL * a:
            return a
        a, b = 0.5 * (a + b), math.sqrt(a * b)
    raise ArithmeticError("AGM iteration did not converge")


def complete_elliptic_k(m):
    """K(m) = int_0^1 dx / sqrt((1 - x^2)(1 - m x^2))."""
    m = float(m)
    _check_parameter(m)
    return math.pi / (2.0 * _agm(1.0, math.sqrt(1.0 - m)))


def complete_elliptic_k_complementary(m):
    """K'(m) = K(1 - m).  Diverges (rejected) at m = 0."""
    m = float(m)
    _check_parameter(m)
    if m == 0.0:
        raise EllipticDomainError("K'(0) diverges")
    return complete_elliptic_k(1.0 - m)


def _sncndn_real(u, m):
    """Jacobi sn, cn, dn for real u and parameter 0 <= m <= 1."""
    if m == 0.0:
        return math.sin(u), math.cos(u), 1.0
    if m == 1.0:
        sech = 1.0 / math.cosh(u)
        return math.tanh(u), sech, sech
    a = [1.0]
    c = [math.sqrt(m)]
    b = math.sqrt(1.0 - m)
    for _ in range(_AGM_MAXITER):
        if abs(c[-1]) <= _AGM_TOL * a[-1]:
            break
        an = 0.5 * (a[-1] + b)
        c.append(0.5 * (a[-1] - b))
        b = math.sqrt(a[-1] * b)
        a.append(an)
    else:
        raise ArithmeticError("descending Landen recursion did not converge")
    n = len(a) - 1
    phi = (2.0 ** n) * a[n] * u
    for j in range(n, 0, -1):
        phi = 0.5 * (phi + math.asin(c[j] / a[j] * math.sin(phi)))
    sn = math.sin(phi)
    cn = math.cos(phi)
    # 1 - m sn^2 written without cancellation; dn > 0 for real arguments
    dn = math.sqrt(cn * cn + (1.0 - m) * sn * sn)
    return sn, cn, dn


def jacobi_sn_cn_dn(sigma, m):
    """Return ``(sn, cn, dn)`` at complex ``sigma`` for parameter ``m``.

    ``|Im sigma|`` must stay below K'(m), i.e. inside the fundamental strip
    where sn has no poles.
    """
    m = float(m)
    _check_parameter(m)
    sigma = complex(sigma)
    if not (math.isfinite(sigma.real) and math.isfinite(sigma.imag)):
        raise EllipticDomainError("non-finite argument")
    u, v = sigma.real, sigma.imag
    if v == 0.0:
        s, c, d = _sncndn_real(u, m)
        return complex(s), complex(c), complex(d)
    m1 = 1.0 - m
    if m > 0.0 and abs(v) >= complete_elliptic_k(m1):
        raise EllipticDomainError(f"|Im sigma|={abs(v)} outside the strip |Im| < K'(m)")
    s, c, d = _sncndn_real(u, m)
    s1, c1, d1 = _sncndn_real(v, m1)
    den = c1 * c1 + m * s * s * s1 * s1
    sn = complex(s * d1, c * d * s1 * c1) / den
    cn = complex(c * c1, -s * d * s1 * d1) / den
    dn = complex(d * c1 * d1, -m * s * c * s1) / den
    return sn, cn, dn


def jacobi_sn_cn_dn_array(sigma, m):
    """Vectorized wrapper over :func:`jacobi_sn_cn_dn`."""
    sigma = np.asarray(sigma, dtype=complex)
    out = np.empty((3,) + sigma.shape, dtype=complex)
    for idx, z in np.ndenumerate(sigma):
        out[(slice(None),) + idx] = jacobi_sn_cn_dn(z, m)
    return out[0], out[1], out[2]
