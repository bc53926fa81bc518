import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from axicollapse.kasner import (
    KasnerDomainError,
    d1,
    d2,
    discriminant,
    kasner_triple,
    lipschitz_envelope,
)


def test_reference_values_at_one():
    assert d1(1.0) == pytest.approx(0.5, abs=1e-15)
    assert d2(1.0) == pytest.approx(-1.0, abs=1e-15)


def test_sum_and_product_of_roots():
    assert d1(0.9) + d2(0.9) == pytest.approx(0.9 - 1.5, abs=1e-15)
    assert d1(0.9) * d2(0.9) == pytest.approx(0.81 - 1.35, abs=1e-14)


def test_root_identities_sweep():
    a = np.linspace(0.8, 1.2, 10_000)
    assert np.max(np.abs(d1(a) + d2(a) - (a - 1.5))) <= 1e-12
    assert np.max(np.abs(d1(a) * d2(a) - (a * a - 1.5 * a))) <= 1e-12


def test_kasner_triple_at_one():
    p = kasner_triple(1.0)
    assert p == pytest.approx((-1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0), abs=1e-15)


def test_kasner_relations_sweep():
    a = np.linspace(0.8, 1.2, 10_000)
    p_t, p_th, p_ph = kasner_triple(a)
    assert np.max(np.abs(p_t + p_th + p_ph - 1.0)) <= 1e-12
    assert np.max(np.abs(p_t**2 + p_th**2 + p_ph**2 - 1.0)) <= 1e-12


def test_sum_p_at_105():
    p = kasner_triple(1.05)
    assert sum(p) == pytest.approx(1.0, abs=1e-14)


def test_sum_p_squared_mpmath_oracle():
    # Sum p^2 = 1 via d1^2 + d2^2 = 9/4 - alpha^2, checked in 50-digit arithmetic
    mpmath.mp.dps = 50
    a = mpmath.mpf("0.95")
    disc = (a - mpmath.mpf(1.5)) ** 2 + 6 * a - 4 * a * a
    r1 = ((a - mpmath.mpf(1.5)) + mpmath.sqrt(disc)) / 2
    r2 = ((a - mpmath.mpf(1.5)) - mpmath.sqrt(disc)) / 2
    oracle = r1**2 + r2**2
    assert abs(oracle - (mpmath.mpf(9) / 4 - a * a)) < mpmath.mpf("1e-40")
    assert float(oracle) == pytest.approx(9.0 / 4.0 - 0.95**2, rel=1e-15)
    p = kasner_triple(0.95)
    assert p[0] ** 2 + p[1] ** 2 + p[2] ** 2 == pytest.approx(1.0, abs=1e-13)


def test_small_deviation_bounds():
    # d1 stays within 1/8 of 1/2 on the full |alpha - 1| <= 1/8 window; the
    # second root has Lipschitz constant ~1.09 there, so its 1/8-bound is
    # sharp only on the slightly smaller window |alpha - 1| <= 0.114
    # (see decisions ledger).
    a = np.linspace(1 - 0.125, 1 + 0.125, 2001)
    assert np.max(np.abs(d1(a) - 0.5)) <= 0.125
    a2 = np.linspace(1 - 0.114, 1 + 0.114, 2001)
    assert np.max(np.abs(d2(a2) + 1.0)) <= 0.125
    # document the sharp edge value so a regression would be noticed
    assert np.max(np.abs(d2(a) + 1.0)) == pytest.approx(0.13646, abs=2e-4)


def test_domain_error_reports_alpha():
    with pytest.raises(KasnerDomainError) as e:
        d1(5.0)
    assert "5.0" in str(e.value)


def test_lipschitz_envelope():
    assert lipschitz_envelope(1.0, 1.0) == 0.0
    env = lipschitz_envelope(0.9, 1.1)
    a = np.linspace(0.9, 1.1, 1000)
    assert np.all(np.abs(d2(a) + 1.0) <= env * np.abs(a - 1.0) + 1e-12)
    assert np.isfinite(lipschitz_envelope(0.875, 1.125))


def test_d1_ge_d2_ordering():
    a = np.linspace(0.8, 1.2, 100)
    assert np.all(d1(a) >= d2(a))


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=0.8, max_value=1.2))
def test_property_relations(alpha):
    assert discriminant(alpha) >= 0
    p = kasner_triple(alpha)
    assert sum(p) == pytest.approx(1.0, abs=1e-12)
    assert sum(x * x for x in p) == pytest.approx(1.0, abs=1e-12)
