"""Acceptance checks, one per criterion.

Each test prints a single ``[criterion N] PASS|FAIL`` line and then asserts.
Run standalone with ``python tests/test_acceptance.py`` to see all lines
without pytest.
"""

import json
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from erspin import synthetic
from erspin.blochsim import (EnsembleSpec, RecordWindow, class_states_after_pulses, hahn_sequence,
                             simulate_sequence)
from erspin.echodecay import extract_T2e
from erspin.fitkit import SD_NAMES, fit_mims, fit_spectral_diffusion
from erspin.relaxation import SDParams, crossover_temperature, suppression_factor
from erspin.transducer import ProtocolConfig, emission_efficiency, scan_kappa
from erspin.zeeman import transition_frequency

P = SDParams.reference_fit()
_capsys = None


def report(n: int, ok: bool, detail: str) -> None:
    line = f"[criterion {n:2d}] {'PASS' if ok else 'FAIL'}: {detail}"
    if _capsys is not None:
        with _capsys.disabled():
            print("\n" + line)
    else:
        print(line)
    assert ok, line


@pytest.fixture(autouse=True)
def _uncaptured(capsys):
    global _capsys
    _capsys = capsys
    yield
    _capsys = None


def test_c01_zeeman_drive_frequency():
    t0 = time.perf_counter()
    f = transition_frequency(3.27, 8.7e-3)
    dt = time.perf_counter() - t0
    report(1, 390e6 <= f <= 410e6 and dt < 1.0, f"nu(g=3.27, 8.7 mT) = {f / 1e6:.2f} MHz in [390, 410]; {dt:.2e} s")


def test_c02_mims_round_trip():
    t0 = time.perf_counter()
    hits = 0
    for seed in range(100):
        fit = fit_mims(synthetic.mims_trace(1.6e-6, 1.4, noise=0.05, seed=seed))
        hits += abs(fit.params["T2e"] - 1.6e-6) <= 0.2e-6 and abs(fit.params["x"] - 1.4) <= 0.2
    dt = time.perf_counter() - t0
    report(2, hits >= 90 and dt < 30, f"{hits}/100 seeds within +-0.2 us and +-0.2 (need >= 90); {dt:.1f} s")


def test_c03_spectral_diffusion_joint_fit():
    tol = {"gamma0": 0.15, "gamma_sd": 0.15, "r_ff": 0.15, "alpha_orbach": 0.30, "delta_orbach": 0.30}
    seeds = range(10)
    t0 = time.perf_counter()
    errs = {k: [] for k in SD_NAMES}
    good = 0
    for seed in seeds:
        fit = fit_spectral_diffusion(synthetic.sd_family(P, noise=0.05, seed=seed), seed=seed)
        ok = True
        for k in SD_NAMES:
            e = fit.params[k] / getattr(P, k) - 1
            errs[k].append(e)
            ok &= abs(e) <= tol[k]
        good += ok
    dt = time.perf_counter() - t0
    med = ", ".join(f"{k} {np.median(np.abs(v)) * 100:.0f}%" for k, v in errs.items())
    report(3, good >= 0.9 * len(seeds) and dt < 300,
           f"{good}/{len(seeds)} seeds with all five parameters in tolerance (need >= 90%); "
           f"median |error|: {med}; {dt:.1f} s")


def test_c04_model_vs_measured_T2e():
    T2e = extract_T2e(P, 1.9, 8.7e-3).T2e
    report(4, 1.6e-6 / 1.5 <= T2e <= 1.6e-6 * 1.5, f"T2e(1.9 K, 8.7 mT) = {T2e * 1e6:.3f} us, within x1.5 of 1.6 us")


def test_c05_low_temperature_prediction():
    est = extract_T2e(P.with_(gamma0=0.0), 0.02, 0.05, scale_sd=True)
    report(5, 1e-3 <= est.T2e <= 5e-3, f"T2e(20 mK, 50 mT) = {est.T2e * 1e3:.3f} ms in [1, 5] ms")


def test_c06_crossover_temperature():
    Tc = crossover_temperature(P)
    report(6, 2.1 <= Tc <= 2.6, f"Orbach = flip-flop at {Tc:.3f} K, in [2.1, 2.6] K")


def test_c07_suppression_factor():
    factor = 1.0 / suppression_factor(4.31, 0.05, 0.02)
    report(7, 200 <= factor <= 500, f"1/sech^2 at (g=4.31, 50 mT, 20 mK) = {factor:.1f}, in [200, 500]")


def _peak_and_phase(t12, ens, dt):
    # short hard pulses; a 10 ns pi/2 shifts the peak by ~2 ns through off-resonant nutation
    tp = 2e-9
    rabi = 1 / (4 * tp)
    centre = tp / 2 + 2 * t12
    rec = RecordWindow(centre - 100 * dt, centre + 100 * dt, dt)
    seq = hahn_sequence(t12, tp, rabi, record=rec)
    times, sig = simulate_sequence(seq, ens)
    k = int(np.argmax(np.abs(sig)))
    return times[k] - tp / 2, float(np.angle(sig[k])), seq


def test_c08_bloch_hahn_echo():
    ens = EnsembleSpec(n_classes=2001, linewidth_fwhm=10e6)
    dt = 1e-9
    timing_ok, phase_ok, norm_ok = True, True, True
    worst_t, worst_phase, worst_norm = 0.0, 0.0, 0.0
    for t12 in (0.5e-6, 1e-6, 2e-6, 4e-6):
        t_echo, phase, seq = _peak_and_phase(t12, ens, dt)
        worst_t = max(worst_t, abs(t_echo - 2 * t12))
        # drive phase 0: echo expected at +-pi
        dphi = abs(abs(phase) - math.pi)
        worst_phase = max(worst_phase, dphi)
        for M in class_states_after_pulses(seq, ens):
            worst_norm = max(worst_norm, float(np.max(np.abs(np.linalg.norm(M, axis=1) - 1))))
    timing_ok = worst_t <= dt * (1 + 1e-9)
    phase_ok = worst_phase <= 0.05
    norm_ok = worst_norm <= 1e-10
    report(8, timing_ok and phase_ok and norm_ok,
           f"max |t_echo - 2 t12| = {worst_t * 1e9:.3g} ns (<= 1 ns), max |phase - pi| = {worst_phase:.2e} rad, "
           f"max norm drift per step = {worst_norm:.1e}")


def test_c09_simulator_vs_closed_form():
    T2 = 1e-6
    ens = EnsembleSpec(n_classes=2001, linewidth_fwhm=1e6, T2=T2)
    tp = 1e-12
    rabi = 1 / (4 * tp)
    t12s = np.linspace(0.1e-6, 2.6e-6, 8)  # echo falls from 0.82 to 0.0055: over two decades
    worst = 0.0
    amps = []
    for t12 in t12s:
        centre = tp / 2 + 2 * t12
        seq = hahn_sequence(t12, tp, rabi, record=RecordWindow(centre, centre, 1e-9))
        _, sig = simulate_sequence(seq, ens)
        a = abs(sig[0])
        amps.append(a)
        worst = max(worst, abs(a / math.exp(-2 * t12 / T2) - 1))
    span = amps[0] / amps[-1]
    report(9, worst <= 0.01 and span >= 100,
           f"max relative deviation from exp(-2 t12/T2) = {worst:.1e} over a {span:.0f}x amplitude range")


def test_c10_transducer_efficiency():
    t0 = time.perf_counter()
    cfg = ProtocolConfig(coupling_v=2 * math.pi * 34e6, T2e=1.6e-6)
    sc = scan_kappa(cfg, 2 * math.pi * 0.1e6, 2 * math.pi * 1000e6)
    best = cfg.with_(cavity_kappa=sc.kappa_opt)
    em = emission_efficiency(best, trajectory=True)
    etas = [emission_efficiency(best.with_(T2e=t)) for t in np.geomspace(0.1e-6, 100e-6, 10)]
    monotone = all(b >= a for a, b in zip(etas, etas[1:]))
    dt = time.perf_counter() - t0
    report(10, sc.eta_opt >= 0.99 and em.conservation_error <= 1e-6 and monotone and dt < 120,
           f"eta = {sc.eta_opt:.4f} at kappa/2pi = {sc.kappa_opt / 2 / math.pi / 1e6:.1f} MHz (>= 0.99); "
           f"bookkeeping error {em.conservation_error:.1e}; monotone in T2e: {monotone}; {dt:.1f} s")


def _cli(out: Path, *argv) -> None:
    env = dict(os.environ, SOURCE_DATE_EPOCH="1700000000")
    r = subprocess.run([sys.executable, "-m", "erspin", "--out-dir", str(out), *argv], env=env,
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr


def test_c11_determinism(tmp_path):
    inputs = tmp_path / "inputs"
    inputs.mkdir()
    seq = hahn_sequence(0.5e-6, 20e-9, 12.5e6, dt=5e-9)
    (inputs / "seq.json").write_text(json.dumps(seq.to_dict()))
    (inputs / "ens.json").write_text(json.dumps(EnsembleSpec(n_classes=501, linewidth_fwhm=5e6).to_dict()))
    (inputs / "cfg.json").write_text(json.dumps({"coupling_v": 2.136283e8, "T2e": 1.6e-6}))
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        _cli(out, "--seed", "7", "synth", "sd")
        _cli(out, "--seed", "7", "synth", "mims")
        _cli(out, "--seed", "7", "fit-sd", "--trace", *sorted(str(p) for p in (tmp_path / "a").glob("synth_sd_*.csv")))
        _cli(out, "fit-mims", "--trace", str(tmp_path / "a" / "synth_mims.csv"))
        _cli(out, "echo-sim", "--seq", str(inputs / "seq.json"), "--ensemble", str(inputs / "ens.json"),
             "--workers", "3" if name == "b" else "1")
        _cli(out, "transduce", "--config", str(inputs / "cfg.json"), "--scan", "kappa=1e6:1e9:log:9")
        _cli(out, "spectrum", "--Bmax", "20e-3")
        _cli(out, "predict-t2", "--T", "0.02", "--B", "0.05")
        runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    a, b = runs
    differing = [k for k in a if a[k] != b.get(k)]
    same_set = set(a) == set(b)
    report(11, same_set and not differing,
           f"{len(a)} output files compared byte-for-byte across two runs; differing: {differing or 'none'}")


if __name__ == "__main__":
    import tempfile

    failures = 0
    for name, fn in sorted(globals().items()):
        if not name.startswith("test_c"):
            continue
        try:
            if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as d:
                    fn(Path(d))
            else:
                fn()
        except AssertionError:
            failures += 1
    sys.exit(1 if failures else 0)
