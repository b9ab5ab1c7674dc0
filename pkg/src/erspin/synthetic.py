"""Seeded synthetic echo traces for round-trip checks of the fitters."""

from __future__ import annotations

import numpy as np

from erspin.echodecay import EchoTrace, MimsFitParams, mims_amplitude, three_pulse_amplitude, two_pulse_amplitude
from erspin.relaxation import SDParams

# Default delay grids
MIMS_T12 = np.linspace(0.05e-6, 2.0e-6, 40)
SD_T12_TWO_PULSE = np.linspace(0.05e-6, 1.5e-6, 30)
SD_T23 = np.concatenate([[0.0], np.geomspace(0.1e-6, 1e-3, 59)])
SD_T12_FIXED = 0.3e-6
SD_TEMPERATURES = (1.6, 1.9, 2.2, 2.5, 2.8, 3.0)


def _noisy(clean: np.ndarray, noise: float, scale: float, rng: np.random.Generator) -> np.ndarray:
    if noise <= 0:
        return clean
    return clean + rng.normal(0.0, noise * scale, size=clean.shape)


def mims_trace(T2e: float = 1.6e-6, x: float = 1.4, A: float = 1.0, *, t12=MIMS_T12, noise: float = 0.0,
               seed: int | None = 0, temperature: float = 1.9, field: float = 8.7e-3) -> EchoTrace:
    """Two-pulse trace following the Mims shape, with additive Gaussian noise of ``noise * A``."""
    rng = np.random.default_rng(seed)
    t12 = np.asarray(t12, dtype=float)
    clean = np.asarray(mims_amplitude(MimsFitParams(A, T2e, x), t12))
    sigma = np.full(t12.size, noise * A) if noise > 0 else None
    return EchoTrace("two_pulse", t12, 0.0, _noisy(clean, noise, A, rng), temperature, field, sigma=sigma)


def sd_two_pulse_trace(p: SDParams, T: float, B: float = 8.7e-3, *, A0: float = 1.0, t12=SD_T12_TWO_PULSE,
                       noise: float = 0.0, rng: np.random.Generator | None = None) -> EchoTrace:
    rng = rng or np.random.default_rng(0)
    t12 = np.asarray(t12, dtype=float)
    clean = np.asarray(two_pulse_amplitude(p, A0, T, B, t12))
    sigma = np.full(t12.size, noise * A0) if noise > 0 else None
    return EchoTrace("two_pulse", t12, 0.0, _noisy(clean, noise, A0, rng), T, B, sigma=sigma)


def sd_three_pulse_trace(p: SDParams, T: float, T1e: float, B: float = 8.7e-3, *, A0: float = 1.0,
                         t12: float = SD_T12_FIXED, t23=SD_T23, noise: float = 0.0,
                         rng: np.random.Generator | None = None) -> EchoTrace:
    rng = rng or np.random.default_rng(0)
    t23 = np.asarray(t23, dtype=float)
    clean = np.asarray(three_pulse_amplitude(p, A0, T1e, T, B, t12, t23))
    sigma = np.full(t23.size, noise * A0) if noise > 0 else None
    return EchoTrace("three_pulse", t12, t23, _noisy(clean, noise, A0, rng), T, B, sigma=sigma,
                     meta={"T1e_s": T1e})


def sd_family(p: SDParams | None = None, temperatures=SD_TEMPERATURES, *, T1e: float = 1.2e-3,
              B: float = 8.7e-3, noise: float = 0.0, seed: int = 0,
              two_pulse: bool = True) -> list[EchoTrace]:
    """One three-pulse (and optionally one two-pulse) trace per temperature.

    Noise draws come from a single generator in a fixed order, so a seed
    fully determines the family.
    """
    p = p or SDParams.reference_fit()
    rng = np.random.default_rng(seed)
    traces = []
    for T in temperatures:
        traces.append(sd_three_pulse_trace(p, T, T1e, B, noise=noise, rng=rng))
        if two_pulse:
            traces.append(sd_two_pulse_trace(p, T, B, noise=noise, rng=rng))
    return traces
