import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from erspin.errors import ConfigError
from erspin.transducer import (ProtocolConfig, apply_storage, bandwidth_report, class_positions,
                               emission_efficiency, emission_efficiency_exact, rephasing_delay, run_protocol,
                               scan_kappa, storage_decay, write_trajectory_csv)

TWO_PI = 2 * math.pi
BASE = ProtocolConfig(coupling_v=TWO_PI * 34e6, cavity_kappa=TWO_PI * 68e6, T2e=1.6e-6)


@settings(max_examples=25, deadline=None)
@given(st.floats(1e6, 1e8), st.floats(1e6, 1e9), st.floats(1e-7, 1e-4), st.floats(-5e7, 5e7))
def test_ode_matches_lyapunov(v, kappa, T2e, delta):
    cfg = BASE.with_(coupling_v=v, cavity_kappa=kappa, T2e=T2e, cavity_detuning=delta)
    assert emission_efficiency(cfg) == pytest.approx(emission_efficiency_exact(cfg), rel=1e-6, abs=1e-9)


def test_no_coupling_no_emission():
    cfg = BASE.with_(coupling_v=0.0)
    assert emission_efficiency(cfg) == 0.0
    assert emission_efficiency_exact(cfg) == 0.0


def test_coherence_factor_scales_result():
    assert emission_efficiency(BASE, 0.3) == pytest.approx(0.3 * emission_efficiency(BASE), rel=1e-12)
    with pytest.raises(ConfigError):
        emission_efficiency(BASE, 1.5)


def test_excitation_bookkeeping():
    em = emission_efficiency(BASE, trajectory=True)
    assert em.conservation_error < 1e-6
    assert np.all(np.diff(em.emitted) >= -1e-12)
    assert np.all(np.diff(em.spin_norm + em.cavity_norm) <= 1e-12)


def test_lossless_exchange_keeps_norm():
    cfg = BASE.with_(cavity_kappa=0.0, T2e=math.inf)
    em = emission_efficiency(cfg, trajectory=True)
    np.testing.assert_allclose(em.spin_norm + em.cavity_norm, 1.0, atol=1e-7)
    assert em.cavity_norm.max() > 0.99  # full Rabi swap into the cavity
    assert em.efficiency == 0.0


def test_efficiency_monotone_in_T2e():
    etas = [emission_efficiency(BASE.with_(T2e=t)) for t in np.geomspace(1e-8, 1e-4, 10)]
    assert all(b >= a for a, b in zip(etas, etas[1:]))


def test_kappa_scan_finds_impedance_match():
    sc = scan_kappa(BASE, n=21)
    assert sc.eta_opt >= sc.efficiencies.max()
    assert sc.eta_opt >= 0.99
    # strong-coupling optimum sits close to kappa = 2 v
    assert sc.kappa_opt == pytest.approx(2 * BASE.coupling_v, rel=0.05)
    assert scan_kappa(BASE, n=5, refine=False, workers=2).efficiencies.tolist() == \
        scan_kappa(BASE, n=5, refine=False).efficiencies.tolist()


def test_unset_kappa_is_rejected_by_emission_stage():
    with pytest.raises(ConfigError):
        emission_efficiency(BASE.with_(cavity_kappa=None))


def test_zero_widths_give_full_coherence():
    cfg = BASE.with_(opt_inhom_width=0.0, spin_inhom_width=0.0, T2e=math.inf, t_shelf=1e-6)
    res = run_protocol(cfg, 11)
    assert res.collective_coherence == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("F,x", [(1.0, 1.0), (0.9, 1.4), (0.6, 2.0)])
def test_symmetric_three_class_oracle(F, x):
    cfg = BASE.with_(opt_inhom_width=3e6, spin_inhom_width=3e6, t_dephase=0.4e-6, t_shelf=0.25e-6, T2e=2e-6,
                     x=x, pulse_fidelity=F)
    res = run_protocol(cfg, 3, emit=False)
    t_total = cfg.t_dephase + cfg.t_shelf
    assert res.rephase_time == pytest.approx(2 * t_total, rel=1e-14)
    assert res.collective_coherence == pytest.approx(math.exp(-((2 * t_total / cfg.T2e) ** x)) * F**3, rel=1e-12)


def test_zero_fidelity_kills_efficiency():
    res = run_protocol(BASE.with_(pulse_fidelity=0.0), 21)
    assert res.eta_total == 0.0


@settings(max_examples=40, deadline=None)
@given(st.fractions(Fraction(1, 10), Fraction(10)), st.fractions(Fraction(0), Fraction(10)),
       st.fractions(Fraction(0), Fraction(3)), st.fractions(Fraction(0), Fraction(3)),
       st.fractions(Fraction(0), Fraction(1, 2)))
def test_rephasing_time_matches_exact_phase_integrals(opt, spin, td, ts, eps):
    # widths in MHz, times in us; phases of 3 arbitrary classes cancel at the exact rephasing delay
    t_exact = (opt * td + spin * ts) / ((1 - eps) * opt)
    for u in (Fraction(-1, 3), Fraction(1, 7), Fraction(1, 2)):
        phase_opt = u * opt * td - u * (1 - eps) * opt * t_exact
        assert phase_opt + u * spin * ts == 0
    cfg = BASE.with_(opt_inhom_width=float(opt) * 1e6, spin_inhom_width=float(spin) * 1e6,
                     t_dephase=float(td) * 1e-6, t_shelf=float(ts) * 1e-6, reversal_error=float(eps))
    assert rephasing_delay(cfg) == pytest.approx(float(t_exact) * 1e-6, rel=1e-12, abs=1e-21)


def test_storage_trajectory_peaks_at_rephasing():
    cfg = BASE.with_(opt_inhom_width=2e6, spin_inhom_width=5e6, t_dephase=1e-6, t_shelf=0.3e-6, T2e=math.inf,
                     t_rephase=4e-6)
    res = run_protocol(cfg, 401, samples_per_step=2001, emit=False)
    sel = np.array([s == "rephase" for s in res.step])
    t_peak = res.times[sel][np.argmax(res.coherence[sel])]
    expected = cfg.t_dephase + cfg.t_shelf + rephasing_delay(cfg)
    assert t_peak == pytest.approx(expected, abs=4e-6 / 2000)
    assert res.coherence[sel].max() == pytest.approx(1.0, abs=1e-3)


def test_rephasing_outside_window_is_config_error():
    cfg = BASE.with_(opt_inhom_width=1e6, spin_inhom_width=1e6, t_dephase=1e-6, t_shelf=1e-6, t_rephase=1e-6)
    with pytest.raises(ConfigError):
        run_protocol(cfg, 11, emit=False)
    with pytest.raises(ConfigError):
        rephasing_delay(cfg.with_(opt_inhom_width=0.0))


def test_reversibility_with_losses_off():
    cfg = BASE.with_(opt_inhom_width=4e6, spin_inhom_width=1.5e6, t_dephase=0.7e-6, t_shelf=0.2e-6,
                     reversal_error=0.1)
    u = class_positions(17)
    rng = np.random.default_rng(0)
    psi = rng.normal(size=(17, 2)) + 1j * rng.normal(size=(17, 2))
    fwd = apply_storage(psi, cfg, u, t_rephase=0.37e-6)
    back = apply_storage(fwd, cfg, u, t_rephase=0.37e-6, reverse=True)
    np.testing.assert_allclose(back, psi, atol=1e-13)
    assert not np.allclose(fwd, psi)


def test_storage_decay_and_breakdown():
    assert storage_decay(BASE.with_(T2e=math.inf), 1.0) == 1.0
    res = run_protocol(BASE.with_(optical_depth=3.0), 21)
    b = res.efficiency_breakdown
    assert b["absorb"] == pytest.approx(1 - math.exp(-3.0))
    assert res.summary()["eta_total"] == pytest.approx(b["absorb"] * b["coherence"] * b["emit"])


def test_bandwidth_report():
    r = bandwidth_report(BASE.with_(opt_inhom_width=1e6, spin_inhom_width=2e6))
    assert r["absorption_window_s"] == pytest.approx(1e-6)
    assert not r["rate_matched"]
    r2 = bandwidth_report(BASE.with_(opt_inhom_width=2e6, spin_inhom_width=2e6))
    assert r2["absorption_window_s"] == pytest.approx(0.5e-6)
    assert r2["rate_matched"]


def test_config_json_and_validation(tmp_path):
    doc = {"opt_inhom_width": 1e6, "spin_inhom_width": 2e6, "coupling_v": 2e8, "T2e": None,
           "timings": {"t_dephase": 1e-6, "t_shelf": 0.5e-6, "t_rephase": None}}
    cfg = ProtocolConfig.from_dict(doc)
    assert math.isinf(cfg.T2e) and cfg.cavity_kappa is None and cfg.t_shelf == 0.5e-6
    assert ProtocolConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        ProtocolConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        ProtocolConfig(pulse_fidelity=1.2)
    with pytest.raises(ConfigError):
        ProtocolConfig(t_dephase=-1.0)


def test_trajectory_csv_header():
    import io
    buf = io.StringIO()
    write_trajectory_csv(emission_efficiency(BASE, trajectory=True, n_out=5), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t_s,spin_norm,cavity_norm,emitted"
    assert len(lines) == 6
