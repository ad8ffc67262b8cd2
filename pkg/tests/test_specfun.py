import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from tdbem.specfun import (
    EllipticDomainError,
    complete_elliptic_k,
    complete_elliptic_k_complementary,
    jacobi_sn_cn_dn,
    jacobi_sn_cn_dn_array,
)


def test_k_at_zero():
    assert complete_elliptic_k(0.0) == pytest.approx(math.pi / 2, rel=1e-15)


@pytest.mark.parametrize("m", [0.0625, 0.5, 0.9, 0.9999])
def test_k_matches_quadrature(m):
    # adaptive quadrature of the defining integral, x = sin(theta)
    ref = mpmath.quad(lambda th: 1 / mpmath.sqrt(1 - m * mpmath.sin(th) ** 2), [0, mpmath.pi / 2])
    assert complete_elliptic_k(m) == pytest.approx(float(ref), rel=1e-12)


def test_k_near_one_is_large():
    assert complete_elliptic_k(0.9999) > 5


def test_complementary():
    assert complete_elliptic_k_complementary(1 - 1e-12) == pytest.approx(math.pi / 2, rel=1e-10)
    assert complete_elliptic_k_complementary(0.5) == pytest.approx(complete_elliptic_k(0.5), rel=1e-15)
    with pytest.raises(EllipticDomainError):
        complete_elliptic_k_complementary(0.0)


@pytest.mark.parametrize("m", [-0.1, 1.0, float("nan")])
def test_k_domain(m):
    with pytest.raises(EllipticDomainError):
        complete_elliptic_k(m)


def test_sn_cn_dn_origin():
    assert jacobi_sn_cn_dn(0.0, 0.4) == (0, 1, 1)


def test_quarter_period():
    m = 0.3
    sn, cn, dn = jacobi_sn_cn_dn(complete_elliptic_k(m), m)
    assert sn == pytest.approx(1.0, abs=1e-14)
    assert cn == pytest.approx(0.0, abs=1e-8)
    assert dn == pytest.approx(math.sqrt(1 - m), abs=1e-14)


def _mp(name, sigma, m):
    return complex(mpmath.ellipfun(name, sigma, m=m))


@pytest.mark.parametrize("sigma,m", [(0.7 + 0.2j, 0.0625), (-1.3 + 0.9j, 0.25), (2.0 - 0.5j, 0.8),
                                     (0.1 + 1.2j, 0.01)])
def test_complex_argument_vs_mpmath(sigma, m):
    sn, cn, dn = jacobi_sn_cn_dn(sigma, m)
    assert sn == pytest.approx(_mp("sn", sigma, m), rel=1e-12, abs=1e-14)
    assert cn == pytest.approx(_mp("cn", sigma, m), rel=1e-12, abs=1e-14)
    assert dn == pytest.approx(_mp("dn", sigma, m), rel=1e-12, abs=1e-14)


def test_outside_strip_rejected():
    m = 0.25
    with pytest.raises(EllipticDomainError):
        jacobi_sn_cn_dn(1j * complete_elliptic_k_complementary(m) * 1.01, m)


@given(u=st.floats(-6, 6), v=st.floats(-0.9, 0.9), m=st.floats(0.01, 0.95))
def test_identities(u, v, m):
    kp = complete_elliptic_k_complementary(m)
    sn, cn, dn = jacobi_sn_cn_dn(complex(u, v * kp), m)
    scale = max(1.0, abs(sn) ** 2)
    assert abs(sn * sn + cn * cn - 1) <= 1e-11 * scale
    assert abs(dn * dn + m * sn * sn - 1) <= 1e-11 * scale


def test_array_version_agrees():
    sig = np.array([0.3 + 0.1j, -1.0 + 0.4j, 2.2])
    out = jacobi_sn_cn_dn_array(sig, 0.2)
    for i, s in enumerate(sig):
        ref = jacobi_sn_cn_dn(s, 0.2)
        assert np.allclose([o[i] for o in out], ref, rtol=1e-14, atol=1e-15)
