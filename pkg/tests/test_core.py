import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from decaycert.certificate import certify
from decaycert.core import (
    DBL_MAX,
    CertificateInvalid,
    DomainError,
    ForcingBound,
    PerturbationBound,
    PowerLaw,
    Tabulated,
    dominance_products,
    envelope_eval,
    envelope_limit,
    envelope_status,
    gamma_eval,
    gamma_integral,
    log_dominance,
    mu_eval,
    mu_eval_status,
    power_law_envelope_closed_form,
)

from oracles import envelope_quad, gamma_integral_quad

b0s = st.floats(0.1, 10.0)
b1s = st.floats(0.05, 10.0)
ds = st.floats(0.05, 1.0)


def valid_cert(mu0, gamma):
    # c0 = 0 and a tiny g0 make every closed-form condition except the rate one trivial
    cert = certify(gamma, PerturbationBound(0.0, 10.0), 0.5 / mu0, mu0)
    assert cert.valid
    return cert


class TestGamma:
    def test_power_law_values(self):
        assert gamma_eval(PowerLaw(2, 4, 1), 0.0) == 2.0
        assert gamma_eval(PowerLaw(1, 1, 0.5), 3.0) == 0.5

    @pytest.mark.parametrize("kw", [dict(b0=1, b1=0, d=1), dict(b0=0, b1=1, d=1),
                                    dict(b0=1, b1=1, d=0), dict(b0=1, b1=-1, d=0.5)])
    def test_constructor_rejects_nonpositive(self, kw):
        with pytest.raises(ValueError):
            PowerLaw(**kw)

    def test_negative_time_rejected(self):
        with pytest.raises(DomainError):
            gamma_eval(PowerLaw(1, 1, 1), -1.0)

    def test_tabulated_interpolates_and_refuses_outside(self):
        tab = Tabulated((0.0, 1.0, 3.0), (2.0, 0.0, 1.0))
        assert gamma_eval(tab, 0.5) == pytest.approx(1.0)
        assert gamma_eval(tab, 2.0) == pytest.approx(0.5)
        with pytest.raises(DomainError):
            gamma_eval(tab, 3.5)

    @pytest.mark.parametrize("grid,values", [((0.0,), (1.0,)), ((0.0, 0.0), (1, 1)),
                                             ((0.0, 1.0), (1.0, -0.1)), ((1.0, 0.0), (1, 1))])
    def test_tabulated_invariants(self, grid, values):
        with pytest.raises(ValueError):
            Tabulated(grid, values)

    def test_vectorised(self):
        g = PowerLaw(1, 1, 0.5)
        np.testing.assert_allclose(gamma_eval(g, np.array([0.0, 3.0, 8.0])), [1.0, 0.5, 1 / 3])


class TestGammaIntegral:
    def test_examples(self):
        assert gamma_integral(PowerLaw(1, 2, 1), 0.0) == 0.0
        assert gamma_integral(PowerLaw(1, 1, 0.5), 3.0) == pytest.approx(2.0, rel=1e-15)
        assert gamma_integral(PowerLaw(1, 2, 1), math.e - 1) == pytest.approx(2.0, rel=1e-15)

    @given(b0s, b1s, st.floats(0.05, 3.0), st.floats(1e-6, 1e4))
    def test_matches_quadrature(self, b0, b1, d, t):
        assert gamma_integral(PowerLaw(b0, b1, d), t) == pytest.approx(
            gamma_integral_quad(b0, b1, d, t), rel=1e-10, abs=1e-300)

    def test_near_one_exponent_is_continuous(self):
        g1 = gamma_integral(PowerLaw(1.5, 2.0, 1.0), 50.0)
        g2 = gamma_integral(PowerLaw(1.5, 2.0, 1.0 - 1e-9), 50.0)
        assert g2 == pytest.approx(g1, rel=1e-7)

    @given(b0s, b1s, ds)
    def test_nondecreasing(self, b0, b1, d):
        vals = gamma_integral(PowerLaw(b0, b1, d), np.geomspace(1e-3, 1e6, 200))
        assert np.all(np.diff(vals) >= 0)

    def test_trapezoid_is_second_order(self):
        g = PowerLaw(1.0, 2.0, 0.5)
        exact = gamma_integral(g, 10.0)
        errs = []
        for n in (41, 81, 161, 321):
            tab = Tabulated.sample(lambda t: gamma_eval(g, t), np.linspace(0.0, 10.0, n))
            errs.append(abs(gamma_integral(tab, 10.0) - exact))
        ratios = np.array(errs[:-1]) / np.array(errs[1:])
        np.testing.assert_allclose(ratios, 4.0, rtol=0.05)

    def test_tabulated_needs_zero_start(self):
        with pytest.raises(DomainError):
            gamma_integral(Tabulated((1.0, 2.0), (1.0, 1.0)), 1.5)


class TestMu:
    def test_examples(self):
        assert mu_eval(1.0, PowerLaw(3, 1, 0.7), 0.0) == 1.0
        assert mu_eval(1.0, PowerLaw(1, 4, 1), 3.0) == pytest.approx(16.0, rel=1e-14)
        assert mu_eval(2.0, PowerLaw(1, 1, 0.5), 3.0) == pytest.approx(2 * math.e, rel=1e-14)
        assert 2 * math.e == pytest.approx(5.43656, abs=1e-5)

    @given(b0s, b1s, st.floats(0.01, 100.0))
    def test_d_equal_one_closed_form(self, b0, b1, mu0):
        g = PowerLaw(b0, b1, 1.0)
        t = np.geomspace(1e-6, 1e8, 300)
        closed = mu0 * ((b0 + t) / b0) ** (b1 / 2)
        ok = closed < 1e300
        np.testing.assert_allclose(mu_eval(mu0, g, t)[ok], closed[ok], rtol=1e-12)

    def test_overflow_saturates_with_flag(self):
        g = PowerLaw(1.0, 1.0, 0.1)
        status = mu_eval_status(1.0, g, 1e6)
        assert status.saturated and status.value == DBL_MAX and status.log_value > 709
        assert mu_eval(1.0, g, 1e6) == DBL_MAX
        assert not mu_eval_status(1.0, g, 1.0).saturated

    def test_rejects_nonpositive_mu0(self):
        with pytest.raises(ValueError):
            mu_eval(0.0, PowerLaw(1, 1, 1), 1.0)


class TestEnvelope:
    def test_examples(self):
        e1 = envelope_eval(valid_cert(1.0, PowerLaw(1, 4, 0.5)), 3.0)
        assert e1 == pytest.approx(math.exp(-4), rel=1e-12)
        assert e1 == pytest.approx(0.0183156, abs=1e-7)
        e2 = envelope_eval(valid_cert(1.0, PowerLaw(1, 4, 1.0)), 3.0)
        assert e2 == pytest.approx(0.0625, rel=1e-12)
        cert = valid_cert(3.7, PowerLaw(2, 1, 0.3))
        assert envelope_eval(cert, 0.0) == pytest.approx(1 / 3.7, rel=1e-15)

    def test_invalid_certificate_refused(self):
        cert = certify(PowerLaw(1, 2, 1), PerturbationBound(1, 1), 0.5, 1.0)
        assert not cert.valid
        with pytest.raises(CertificateInvalid):
            envelope_eval(cert, 1.0)
        with pytest.raises(CertificateInvalid):
            envelope_status(cert, 1.0)

    @given(b0s, st.floats(0.5, 10.0), ds, st.floats(0.1, 10.0))
    def test_monotone_nonincreasing(self, b0, b1, d, mu0):
        cert = valid_cert(mu0, PowerLaw(b0, b1, d))
        env = envelope_eval(cert, np.concatenate([[0.0], np.geomspace(1e-4, 1e7, 400)]))
        assert np.all(np.diff(env) <= 0)

    @given(b0s, st.floats(0.5, 10.0), ds, st.floats(0.1, 10.0), st.floats(0.0, 1e3))
    def test_agrees_with_branch_formula_and_quadrature(self, b0, b1, d, mu0, t):
        g = PowerLaw(b0, b1, d)
        cert = valid_cert(mu0, g)
        env = envelope_eval(cert, t)
        assert env == pytest.approx(power_law_envelope_closed_form(mu0, g, t), rel=1e-9, abs=1e-300)
        assert env == pytest.approx(envelope_quad(mu0, b0, b1, d, t), rel=1e-9, abs=1e-300)

    @pytest.mark.parametrize("d", [0.3, 0.7, 1.0])
    def test_decays_to_zero_when_rate_not_integrable(self, d):
        g = PowerLaw(1.0, 2.5, d)
        cert = valid_cert(1.0, g)
        env = np.array([envelope_eval(cert, 10.0 ** k) for k in range(1, 7)])
        assert np.all(np.diff(env) <= 0)
        assert np.all(np.diff(env[env > 0]) < 0)
        assert env[-1] < 1e-5
        assert envelope_limit(1.0, g) == 0.0

    def test_positive_limit_when_rate_integrable(self):
        g = PowerLaw(2.0, 3.0, 2.0)
        limit = envelope_limit(1.5, g)
        assert limit == pytest.approx(math.exp(-3.0 / 4.0) / 1.5, rel=1e-15)
        assert not certify(g, PerturbationBound(1, 1), 0.1, 1.5).valid
        assert 1 / mu_eval(1.5, g, 1e7) == pytest.approx(limit, rel=1e-6)

    def test_underflow_is_flagged(self):
        cert = valid_cert(1.0, PowerLaw(1.0, 1.0, 0.1))
        status = envelope_status(cert, 1e6)
        assert status.underflow and status.value == 0.0
        assert not envelope_status(cert, 1.0).underflow

    def test_log_dominance_survives_overflow(self):
        cert = valid_cert(1.0, PowerLaw(1.0, 1.0, 0.1))
        t = np.array([1e3, 1e6])
        log_mu = 0.5 * gamma_integral(cert.gamma, t)
        assert log_mu[-1] > 1000  # mu itself is far outside the double range
        np.testing.assert_allclose(log_dominance(cert, t, -log_mu - 1.0), -1.0, rtol=1e-12)

    def test_dominance_products_moderate_range(self):
        cert = valid_cert(2.0, PowerLaw(1.0, 2.0, 1.0))
        t = np.array([0.0, 3.0])
        norms = np.array([0.25, 0.25 / 16])
        np.testing.assert_allclose(dominance_products(cert, t, norms), [0.5, 0.125], rtol=1e-14)


class TestBounds:
    def test_perturbation_bound_validation(self):
        with pytest.raises(ValueError):
            PerturbationBound(-1.0, 1.0)
        with pytest.raises(ValueError):
            PerturbationBound(1.0, 0.0)
        assert PerturbationBound(0.0, 0.5).c0 == 0.0

    def test_forcing_bound(self):
        assert ForcingBound(None).is_zero
        assert ForcingBound(0.3)(2.0) == 0.3
        with pytest.raises(ValueError):
            ForcingBound(-1.0)
        with pytest.raises(ValueError):
            ForcingBound(lambda t: -1.0)(0.0)
        tab = ForcingBound(Tabulated((0.0, 2.0), (0.0, 2.0)))
        assert tab(1.0) == pytest.approx(1.0)
