import json
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from decaycert.certificate import (
    Branch,
    ConditionId,
    GeneralMuSpec,
    Regime,
    SpecInvariantError,
    certificate_from_dict,
    certify,
    classify_regime,
    search_b1,
    verify_general_mu,
)
from decaycert.core import PerturbationBound, PowerLaw, Tabulated

params = dict(b0=st.floats(0.1, 10.0), d=st.floats(0.05, 1.0), c0=st.floats(0.0, 5.0),
              p=st.floats(0.05, 3.0), mu0=st.floats(0.1, 10.0))


def closed_form_ok(b0, b1, d, c0, p, mu0):
    """The branch inequalities written out by hand."""
    forcing = 2 * c0 * mu0 ** (-p)
    if d < 1:
        return 2 * d < p * b1 * b0 ** (1 - d) and forcing <= b1 * b0 ** (-d)
    return 2 < b1 * p and forcing <= b1 / b0


class TestCertify:
    def test_dlt1_example(self):
        cert = certify(PowerLaw(1, 2, 0.5), PerturbationBound(1, 1), 0.5, 1.0)
        assert cert.valid and cert.branch is Branch.POWER_LAW_DLT1
        got = {c.id: (c.lhs, c.rhs, c.passed) for c in cert.checks}
        assert got[ConditionId.MU0_STRICT] == (0.5, 1.0, True)
        assert got[ConditionId.DLT1_35] == (1.0, 2.0, True)
        assert got[ConditionId.DLT1_36] == (2.0, 2.0, True)

    def test_deq1_strict_boundary_fails(self):
        cert = certify(PowerLaw(1, 2, 1), PerturbationBound(1, 1), 0.5, 1.0)
        assert not cert.valid and cert.branch is Branch.POWER_LAW_DEQ1
        c41 = cert.check(ConditionId.DEQ1_41)
        assert c41.lhs == 2.0 and c41.rhs == 2.0 and c41.strict and not c41.passed
        assert cert.check(ConditionId.DEQ1_42).passed

    def test_mu0_boundary_fails(self):
        cert = certify(PowerLaw(1, 5, 0.5), PerturbationBound(0, 1), 1.0, 1.0)
        assert not cert.check(ConditionId.MU0_STRICT).passed and not cert.valid

    @given(st.floats(0.1, 10.0), st.floats(0.05, 1.0), st.floats(0.05, 3.0))
    def test_linear_system_needs_only_the_rate_condition(self, b0, d, p):
        # with c0 = 0 the forcing conditions read 0 <= rhs; the rate condition remains
        b1 = search_b1(b0, d, PerturbationBound(0.0, p), 1.0)
        cert = certify(PowerLaw(b0, b1, d), PerturbationBound(0.0, p), 0.5, 1.0)
        assert cert.valid
        assert all(c.lhs == 0 for c in cert.checks if c.id in (ConditionId.DLT1_36, ConditionId.DEQ1_42))

    def test_default_mu0_and_zero_data(self):
        cert = certify(PowerLaw(1, 4, 0.5), PerturbationBound(1, 1), 0.5)
        assert cert.mu0 == pytest.approx(0.99 / 0.5)
        zero = certify(PowerLaw(1, 1e-3, 0.5), PerturbationBound(5, 0.1), 0.0)
        assert zero.valid and zero.mu0 == 1.0
        assert [c.id for c in zero.checks] == [ConditionId.MU0_STRICT]

    def test_stability_only_regime(self):
        cert = certify(PowerLaw(1, 2, 2.0), PerturbationBound(1, 1), 0.5, 1.0)
        assert not cert.valid
        assert cert.regime is Regime.STABILITY_ONLY
        assert cert.check(ConditionId.MU0_STRICT).passed
        rate = cert.check(ConditionId.DIVERGENT_RATE)
        assert rate.lhs == pytest.approx(0.5) and not rate.passed
        assert any("stability only" in n for n in cert.notes)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            certify(PowerLaw(1, 1, 1), PerturbationBound(1, 1), -0.1)
        with pytest.raises(ValueError):
            certify(PowerLaw(1, 1, 1), PerturbationBound(1, 1), 0.5, 0.0)
        with pytest.raises(TypeError):
            certify(Tabulated((0, 1), (1, 1)), PerturbationBound(1, 1), 0.5)

    @given(**params, b1=st.floats(0.01, 50.0))
    def test_verdict_matches_hand_inequalities(self, b0, d, c0, p, mu0, b1):
        cert = certify(PowerLaw(b0, b1, d), PerturbationBound(c0, p), 0.5 / mu0, mu0)
        assert cert.valid == closed_form_ok(b0, b1, d, c0, p, mu0)

    @given(**params, b1=st.floats(0.01, 50.0), factor=st.floats(1.0, 100.0))
    def test_feasibility_upward_closed(self, b0, d, c0, p, mu0, b1, factor):
        bound = PerturbationBound(c0, p)
        if certify(PowerLaw(b0, b1, d), bound, 0.5 / mu0, mu0).valid:
            assert certify(PowerLaw(b0, b1 * factor, d), bound, 0.5 / mu0, mu0).valid


class TestSearchB1:
    def test_examples(self):
        assert search_b1(1, 0.5, PerturbationBound(1, 1), 1.0) == pytest.approx(2.0, abs=3e-9)
        b1 = search_b1(1, 1.0, PerturbationBound(1, 1), 1.0)
        assert 2.0 < b1 <= 2.0 + 3e-9
        b1 = search_b1(1, 0.5, PerturbationBound(0, 1), 1.0)
        assert 1.0 < b1 <= 1.0 + 3e-9

    @given(**params)
    def test_result_certifies_and_is_minimal(self, b0, d, c0, p, mu0):
        bound = PerturbationBound(c0, p)
        b1 = search_b1(b0, d, bound, mu0)
        assert certify(PowerLaw(b0, b1, d), bound, 0.5 / mu0, mu0).valid
        assert not certify(PowerLaw(b0, (1 - 1e-6) * b1, d), bound, 0.5 / mu0, mu0).valid

    @given(**params)
    def test_matches_analytic_minimum(self, b0, d, c0, p, mu0):
        need = max(2 * d / (p * b0 ** (1 - d)), 2 * c0 * mu0 ** (-p) * b0 ** d)
        b1 = search_b1(b0, d, PerturbationBound(c0, p), mu0)
        assert b1 == pytest.approx(need, rel=1e-8, abs=3e-9)

    def test_rejects_bad_template(self):
        with pytest.raises(ValueError):
            search_b1(1.0, 1.5, PerturbationBound(1, 1), 1.0)


class TestSerialisation:
    def test_schema(self):
        doc = json.loads(certify(PowerLaw(1, 2, 0.5), PerturbationBound(1, 1), 0.5, 1.0).to_json())
        assert list(doc) == ["gamma", "bound", "mu0", "branch", "checks", "valid", "regime"]
        assert doc["gamma"] == {"b0": 1.0, "b1": 2.0, "d": 0.5}
        assert doc["bound"] == {"c0": 1.0, "p": 1.0}
        assert list(doc["checks"][0]) == ["id", "lhs", "rhs", "strict", "pass"]

    @given(**params, b1=st.floats(0.01, 50.0), g0=st.floats(0.0, 1.0))
    def test_round_trip(self, b0, d, c0, p, mu0, b1, g0):
        cert = certify(PowerLaw(b0, b1, d), PerturbationBound(c0, p), g0, mu0)
        again = certificate_from_dict(json.loads(cert.to_json()))
        assert again.to_dict() == cert.to_dict()

    def test_shortest_round_trip_numbers(self):
        cert = certify(PowerLaw(0.1, 0.3, 0.7), PerturbationBound(0.2, 1.1), 0.3)
        compact = cert.to_json(indent=None)
        assert '"b0": 0.1,' in compact and '"c0": 0.2,' in compact
        assert json.loads(compact)["mu0"] == cert.mu0

    def test_malformed(self):
        with pytest.raises(ValueError):
            certificate_from_dict({"gamma": {}})


class TestRegime:
    def test_examples(self):
        assert classify_regime(PowerLaw(1, 1, 1.0)) is Regime.ASYMPTOTIC_STABILITY
        assert classify_regime(PowerLaw(1, 1, 0.5)) is Regime.ASYMPTOTIC_STABILITY
        assert classify_regime(PowerLaw(1, 1, 2.0)) is Regime.STABILITY_ONLY
        assert PowerLaw(3, 2, 2.0).tail_integral() == pytest.approx(2 / 3)

    def test_tabulated_unsupported(self):
        with pytest.raises(NotImplementedError):
            classify_regime(Tabulated((0, 1), (1, 1)))


class TestGeneralMu:
    def test_canonical_example(self):
        spec = GeneralMuSpec.canonical(1.0, PowerLaw(1, 2, 0.5), 1.0, 1.0, horizon=100.0)
        res = verify_general_mu(spec)
        assert res.passed and res.margin >= 0 and res.cond33 and res.cond32

    def test_zero_growth_any_slow_mu(self):
        g = PowerLaw(1, 1, 1)
        spec = GeneralMuSpec.from_mu(lambda t: 1 + 0.0 * np.asarray(t),
                                     lambda t: 0.0 * np.asarray(t), 0.0, None, g, 1.0, horizon=50.0)
        assert verify_general_mu(spec).passed

    def test_fast_mu_fails(self):
        g = PowerLaw(1, 1, 1)
        spec = GeneralMuSpec.from_mu(lambda t: np.exp(2 * np.asarray(t)),
                                     lambda t: 2 * np.exp(2 * np.asarray(t)), 0.0, None, g, 1.0,
                                     horizon=100.0, n_grid=1000)
        res = verify_general_mu(spec)
        assert not res.passed and res.margin < 0
        # gamma - 2 is most negative where gamma is smallest, at the horizon
        assert res.worst_t == pytest.approx(100.0)

    def test_spec_invariants(self):
        g = PowerLaw(1, 1, 1)
        bad_mu = GeneralMuSpec.from_mu(lambda t: 1 - np.asarray(t), lambda t: -np.ones_like(t),
                                       0.0, None, g, 1.0, horizon=10.0, n_grid=100)
        with pytest.raises(SpecInvariantError):
            verify_general_mu(bad_mu)
        decreasing = GeneralMuSpec.from_mu(lambda t: np.exp(-np.asarray(t)),
                                           lambda t: -np.exp(-np.asarray(t)), 0.0, None, g, 1.0,
                                           horizon=10.0, n_grid=100)
        with pytest.raises(SpecInvariantError):
            verify_general_mu(decreasing)

    def test_default_horizon_and_honest_reporting(self):
        spec = GeneralMuSpec.canonical(1.0, PowerLaw(2.0, 3.0, 0.5), 0.5, 1.0)
        assert spec.horizon == 2e4 and spec.n_grid == 100_000
        res = verify_general_mu(spec)
        assert res.passed
        # an unrelated spec with a custom mu is reported only up to its horizon
        spec2 = GeneralMuSpec.from_mu(lambda t: 1 + 0.0 * np.asarray(t),
                                      lambda t: 0.0 * np.asarray(t), 0.0, None,
                                      PowerLaw(1, 1, 1), 1.0, horizon=50.0, n_grid=100)
        assert verify_general_mu(spec2).verified_up_to == 50.0

    def test_closed_form_pass_implies_grid_pass(self):
        """200 random draws of certified parameters; the grid check must agree."""
        rng = np.random.default_rng(20261019)
        checked = 0
        while checked < 200:
            b0, d = rng.uniform(0.1, 10), rng.uniform(0.05, 0.999)
            c0, p, mu0 = rng.uniform(0, 5), rng.uniform(0.05, 3), rng.uniform(0.1, 10)
            b1 = search_b1(b0, d, PerturbationBound(c0, p), mu0) * rng.uniform(1.0, 3.0)
            cert = certify(PowerLaw(b0, b1, d), PerturbationBound(c0, p), 0.5 / mu0, mu0)
            if not cert.valid:
                continue
            spec = GeneralMuSpec.canonical(mu0, PowerLaw(b0, b1, d), c0, p, n_grid=20_000)
            res = verify_general_mu(spec)
            assert res.passed, (b0, b1, d, c0, p, mu0, res)
            checked += 1

    def test_forcing_term_enters(self):
        g = PowerLaw(1, 2, 0.5)
        ok = verify_general_mu(GeneralMuSpec.canonical(1.0, g, 0.0, 1.0, beta=0.0, horizon=100.0))
        bad = verify_general_mu(GeneralMuSpec.canonical(1.0, g, 0.0, 1.0, beta=10.0, horizon=100.0))
        assert ok.passed and not bad.passed
