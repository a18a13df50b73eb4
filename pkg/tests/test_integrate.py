import math

import numpy as np
import pytest

from decaycert.integrate import check_tolerance, dopri5, log_report_times


def test_tolerance_range():
    check_tolerance(1e-12)
    check_tolerance(1e-2)
    for bad in (1e-13, 0.1, 0.0, -1e-6):
        with pytest.raises(ValueError):
            check_tolerance(bad)


def test_exponential_decay_relative_accuracy_far_below_one():
    # y' = -y on [0, 500]: y(500) = e^-500 ~ 7e-218 must keep relative accuracy
    sol = dopri5(lambda t, y: -y, 0.0, [1.0], 500.0, 1e-10)
    assert sol.completed
    assert sol.states[-1, 0] == pytest.approx(math.exp(-500.0), rel=1e-6)


def test_dense_output_matches_closed_form():
    rep = np.linspace(0.0, 2 * math.pi, 37)
    sol = dopri5(lambda t, y: np.array([y[1], -y[0]]), 0.0, [1.0, 0.0], 2 * math.pi, 1e-10,
                 report_times=rep)
    np.testing.assert_allclose(sol.report_states[:, 0], np.cos(rep), atol=1e-8)
    np.testing.assert_allclose(sol.report_states[:, 1], -np.sin(rep), atol=1e-8)


def test_backward_direction():
    sol = dopri5(lambda t, y: -y, 2.0, [math.exp(-2.0)], 0.0, 1e-10, report_times=[1.0, 0.0])
    np.testing.assert_allclose(sol.report_states[:, 0], [math.exp(-1.0), 1.0], rtol=1e-8)
    assert sol.times[-1] == 0.0


def test_blowup_threshold_and_tau():
    # y' = y^2, y(0) = 1 escapes at t = 1
    sol = dopri5(lambda t, y: y * y, 0.0, [1.0], 2.0, 1e-8, blowup_threshold=1e12)
    assert sol.status == "blowup"
    assert sol.tau == pytest.approx(1.0, abs=1e-6)


def test_blowup_predicate():
    sol = dopri5(lambda t, y: np.ones_like(y), 0.0, [1.0], 10.0, 1e-8,
                 blowup_threshold=lambda y: y[0] > 3.0)
    assert sol.status == "blowup" and sol.states[-1, 0] > 3.0


def test_clamp_nonnegative():
    # y' = -1 would cross zero at t=1; the clamp keeps the state at 0.  Pure
    # relative control cannot follow a state through zero, hence abs_tol.
    sol = dopri5(lambda t, y: -np.ones_like(y), 0.0, [1.0], 3.0, 1e-8,
                 clamp_nonnegative=True, report_times=[0.5, 2.0, 3.0], abs_tol=1e-10)
    assert sol.completed
    assert np.all(sol.states >= 0)
    np.testing.assert_allclose(sol.report_states[:, 0], [0.5, 0.0, 0.0], atol=1e-12)


def test_max_steps_reported():
    sol = dopri5(lambda t, y: -y, 0.0, [1.0], 100.0, 1e-12, max_steps=5)
    assert sol.status == "underflow" and "maximum" in sol.message


def test_error_decreases_with_tolerance():
    errs = []
    for tol in (1e-4, 1e-6, 1e-8, 1e-10):
        sol = dopri5(lambda t, y: -2.0 / (1.0 + t) * y, 0.0, [1.0], 3.0, tol)
        errs.append(abs(sol.states[-1, 0] - 0.0625))
    assert all(a > b for a, b in zip(errs, errs[1:]))


def test_report_times_layout():
    r = log_report_times(1e3)
    assert r.size == 200 and r[0] == 0.0 and r[-1] == 1e3
    assert np.all(np.diff(r) > 0)
    assert r[1] == pytest.approx(1e-2)


def test_zero_span():
    sol = dopri5(lambda t, y: y, 1.0, [2.0], 1.0, 1e-8, report_times=[1.0])
    assert sol.completed and sol.report_states[0, 0] == 2.0
