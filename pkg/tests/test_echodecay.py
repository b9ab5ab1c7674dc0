import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from erspin.echodecay import (EchoTrace, MimsFitParams, effective_linewidth, extract_T2e, mims_amplitude,
                              model_curve, residual_linewidth, sd_linewidth, three_pulse_amplitude,
                              two_pulse_amplitude)
from erspin.errors import DomainError
from erspin.relaxation import SDParams, relaxation_rate

P = SDParams.reference_fit()


def test_mims_one_over_e_at_echo_time():
    p = MimsFitParams(2.0, 1.6e-6, 1.4)
    assert mims_amplitude(p, 0.8e-6) == pytest.approx(2.0 / math.e, rel=1e-14)
    assert mims_amplitude(p, 0.0) == 2.0


def test_mims_param_validation():
    for bad in [(0, 1e-6, 1.5), (1, 0, 1.5), (1, 1e-6, 0.9), (1, 1e-6, 3.1)]:
        with pytest.raises(DomainError):
            MimsFitParams(*bad)


def test_three_pulse_reduces_to_two_pulse():
    t12 = np.linspace(0, 2e-6, 11)
    for T in (1.6, 2.2, 3.0):
        two = two_pulse_amplitude(P, 1.3, T, 8.7e-3, t12)
        three = three_pulse_amplitude(P, 1.3, 1.0, T, 8.7e-3, t12, 0.0)
        np.testing.assert_allclose(three, two, rtol=1e-15)


def test_linewidth_saturates_at_long_t23():
    T, B, t12 = 2.5, 8.7e-3, 0.3e-6
    R = relaxation_rate(P, T, B)
    gsd = sd_linewidth(P, T, B)
    assert gsd > P.gamma_sd  # warmer than the reference point, so less polarized
    sat = effective_linewidth(P, T, B, t12, 100 / R)
    assert sat == pytest.approx(P.gamma0 + 0.5 * gsd * (R * t12 + 1), rel=1e-12)
    short = effective_linewidth(P, T, B, t12, 0.0)
    assert short == pytest.approx(P.gamma0 + 0.5 * gsd * R * t12, rel=1e-12)
    flat = effective_linewidth(P, T, B, t12, 100 / R, scale_sd=False)
    assert flat == pytest.approx(P.gamma0 + 0.5 * P.gamma_sd * (R * t12 + 1), rel=1e-12)


@given(st.floats(1.5, 3.2), st.floats(1e-7, 2e-6), st.lists(st.floats(0, 1e-3), min_size=2, max_size=8))
def test_linewidth_monotone_in_t23(T, t12, t23s):
    t23 = np.sort(np.array(t23s))
    g = effective_linewidth(P, T, 8.7e-3, t12, t23)
    assert np.all(np.diff(g) >= -1e-9 * g[:-1])


def test_site2_bath_freezes_residual_linewidth():
    assert residual_linewidth(P, 2.0, 8.7e-3) == P.gamma0
    assert residual_linewidth(P, 0.02, 0.05) == 0.0


def test_extract_T2e_is_one_over_e_crossing():
    for T in (1.6, 1.9, 2.5):
        est = extract_T2e(P, T, 8.7e-3)
        assert two_pulse_amplitude(P, 1.0, T, 8.7e-3, est.T2e / 2) == pytest.approx(1 / math.e, rel=2e-6)
        assert 1.0 <= est.x_eff <= 2.0


def test_x_eff_limits():
    lin = extract_T2e(P.with_(gamma_sd=0.0), 1.9, 8.7e-3)
    assert lin.x_eff == pytest.approx(1.0)
    assert lin.T2e == pytest.approx(1 / (math.pi * P.gamma0), rel=1e-6)
    quad = extract_T2e(P.with_(gamma0=0.0), 1.9, 8.7e-3)
    assert quad.x_eff == pytest.approx(2.0)


def test_T2e_at_operating_point():
    est = extract_T2e(P, 1.9, 8.7e-3)
    assert est.T2e == pytest.approx(1.167e-6, rel=2e-3)


def test_infinite_coherence_reported():
    est = extract_T2e(P.with_(gamma0=0.0, gamma_sd=0.0), 1.9, 8.7e-3)
    assert est.infinite and est.to_dict()["T2e_s"] is None


def test_trace_validation():
    with pytest.raises(DomainError):
        EchoTrace("four_pulse", [1e-6], 0.0, [1.0], 2.0, 0.01)
    with pytest.raises(DomainError):
        EchoTrace("two_pulse", [1e-6, 2e-6], [0.0, 1e-6], [1.0, 0.5], 2.0, 0.01)
    with pytest.raises(DomainError):
        EchoTrace("two_pulse", [2e-6, 1e-6], 0.0, [1.0, 0.5], 2.0, 0.01)
    with pytest.raises(DomainError):
        EchoTrace("three_pulse", 1e-6, [0.0, 1e-6], [1.0, np.nan], 2.0, 0.01)
    with pytest.raises(DomainError):
        EchoTrace("two_pulse", [1e-6, 2e-6], 0.0, [1.0, 0.5], 2.0, 0.01, sigma=[0.1, 0.0])


def test_model_curve_dispatch():
    d = np.linspace(0, 1e-4, 5)
    np.testing.assert_allclose(model_curve(P, "three_pulse", 2.0, 8.7e-3, d, T1e=1e-3, t12=3e-7),
                               three_pulse_amplitude(P, 1.0, 1e-3, 2.0, 8.7e-3, 3e-7, d))
    with pytest.raises(DomainError):
        model_curve(P, "three_pulse", 2.0, 8.7e-3, d)
    with pytest.raises(DomainError):
        model_curve(P, "nope", 2.0, 8.7e-3, d)
