"""Closed-form spin-echo decay models.

Conventions: ``t12`` is the delay between the first two pulses and ``t23``
the delay between the second and third.  The "1/e coherence lifetime"
T2e is always quoted on the echo time 2*t12, so a Mims decay
exp[-(2 t12 / T2e)^x] reaches 1/e at 2*t12 = T2e.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from erspin._numerics import bisect_increasing
from erspin.errors import DomainError
from erspin.relaxation import SITE2_G, SDParams, polarization_ratio, relaxation_rate, suppression_factor

# Below this site-2 polarization factor the site-2 bath is frozen and the
# residual linewidth it produces is dropped.
SITE2_FROZEN = 1e-3

SEQUENCES = ("two_pulse", "three_pulse")


@dataclass(frozen=True)
class MimsFitParams:
    amplitude: float
    T2e: float
    x: float

    def __post_init__(self):
        if not self.amplitude > 0:
            raise DomainError("amplitude must be > 0")
        if not self.T2e > 0:
            raise DomainError("T2e must be > 0")
        if not 1.0 <= self.x <= 3.0:
            raise DomainError(f"stretch exponent x must lie in [1, 3], got {self.x}")


@dataclass
class EchoTrace:
    """Echo amplitudes versus delay, with the conditions they were taken at."""

    sequence: str
    t12: np.ndarray
    t23: np.ndarray
    amplitude: np.ndarray
    temperature: float
    field: float
    sigma: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sequence not in SEQUENCES:
            raise DomainError(f"unknown sequence {self.sequence!r}")
        amp = np.asarray(self.amplitude, dtype=float)
        n = amp.size
        self.t12 = np.broadcast_to(np.asarray(self.t12, dtype=float), (n,)).copy()
        self.t23 = np.broadcast_to(np.asarray(self.t23, dtype=float), (n,)).copy()
        self.amplitude = amp
        if self.sigma is not None:
            self.sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), (n,)).copy()
            if np.any(self.sigma <= 0):
                raise DomainError("sigma must be positive")
        if np.any(self.t12 < 0) or np.any(self.t23 < 0):
            raise DomainError("delays must be non-negative")
        if not np.all(np.isfinite(amp)):
            raise DomainError("amplitudes must be finite")
        if self.sequence == "two_pulse" and np.any(self.t23 != 0):
            raise DomainError("two-pulse traces must have t23 = 0")
        swept = self.swept_delay
        if np.any(np.diff(swept) < 0):
            raise DomainError("points must be sorted by the swept delay")

    @property
    def swept_delay(self) -> np.ndarray:
        return self.t12 if self.sequence == "two_pulse" else self.t23

    def __len__(self):
        return self.amplitude.size


def mims_amplitude(p: MimsFitParams, t12):
    """A exp[-(2 t12 / T2e)^x]."""
    t12 = np.asarray(t12, dtype=float)
    if np.any(t12 < 0):
        raise DomainError("t12 must be >= 0")
    out = p.amplitude * np.exp(-((2 * t12 / p.T2e) ** p.x))
    return float(out) if out.ndim == 0 else out


def residual_linewidth(p: SDParams, T: float, B: float) -> float:
    """Gamma_0, or zero once the site-2 bath is polarized at (T, B)."""
    if suppression_factor(SITE2_G, B, T) < SITE2_FROZEN:
        return 0.0
    return p.gamma0


def sd_linewidth(p: SDParams, T: float, B: float, scale_sd: bool = True) -> float:
    """Gamma_SD at (T, B); scaled with the bath polarization when ``scale_sd``."""
    return p.gamma_sd * polarization_ratio(p, T, B) if scale_sd else p.gamma_sd


def effective_linewidth(p: SDParams, T: float, B: float, t12, t23, scale_sd: bool = True):
    """Gamma_eff = Gamma_0 + Gamma_SD/2 * (R t12 + 1 - exp(-R t23)), in Hz."""
    t12 = np.asarray(t12, dtype=float)
    t23 = np.asarray(t23, dtype=float)
    if np.any(t12 < 0) or np.any(t23 < 0):
        raise DomainError("delays must be >= 0")
    R = relaxation_rate(p, T, B)
    g0 = residual_linewidth(p, T, B)
    gsd = sd_linewidth(p, T, B, scale_sd)
    out = g0 + 0.5 * gsd * (R * t12 - np.expm1(-R * t23))
    return float(out) if out.ndim == 0 else out


def three_pulse_amplitude(p: SDParams, A0: float, T1e: float, T: float, B: float, t12, t23,
                          scale_sd: bool = True):
    """Stimulated-echo amplitude A0 exp(-t23/T1e) exp(-2 pi t12 Gamma_eff)."""
    if not T1e > 0:
        raise DomainError("T1e must be > 0")
    t12 = np.asarray(t12, dtype=float)
    t23 = np.asarray(t23, dtype=float)
    geff = effective_linewidth(p, T, B, t12, t23, scale_sd)
    out = A0 * np.exp(-t23 / T1e) * np.exp(-2 * np.pi * t12 * geff)
    return float(out) if np.ndim(out) == 0 else out


def two_pulse_amplitude(p: SDParams, A0: float, T: float, B: float, t12, scale_sd: bool = True):
    """Hahn-echo amplitude: the stimulated-echo expression at t23 = 0.

    The exponent is 2 pi Gamma_0 t12 + pi Gamma_SD R t12^2.
    """
    t12 = np.asarray(t12, dtype=float)
    geff = effective_linewidth(p, T, B, t12, np.zeros_like(t12), scale_sd)
    out = A0 * np.exp(-2 * np.pi * t12 * geff)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class CoherenceEstimate:
    T2e: float
    x_eff: float
    infinite: bool = False
    conditions: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "T2e_s": None if self.infinite else self.T2e,
            "x_eff": self.x_eff,
            "infinite": self.infinite,
            "conditions": dict(self.conditions),
        }


def _decay_coefficients(p: SDParams, T: float, B: float, scale_sd: bool) -> tuple[float, float]:
    """(a, b) with the Hahn-echo exponent a t12 + b t12^2."""
    R = relaxation_rate(p, T, B)
    a = 2 * math.pi * residual_linewidth(p, T, B)
    b = math.pi * sd_linewidth(p, T, B, scale_sd) * R
    return a, b


def extract_T2e(p: SDParams, T: float, B: float, scale_sd: bool = True) -> CoherenceEstimate:
    """1/e echo time of the Hahn-echo model and its local stretch exponent.

    The crossing is found by bisection on the echo time 2*t12; ``x_eff`` is
    d ln(-ln A) / d ln t12 evaluated there.
    """
    a, b = _decay_coefficients(p, T, B, scale_sd)
    conditions = {"temperature_K": T, "field_T": B, "scale_sd": scale_sd}
    if a == 0 and b == 0:
        return CoherenceEstimate(math.inf, float("nan"), True, conditions)

    def excess(tau):
        t12 = 0.5 * tau
        return a * t12 + b * t12 * t12 - 1.0

    guess = 2.0 / a if a > 0 else 2.0 / math.sqrt(b)
    tau = bisect_increasing(excess, 0.5 * guess, 2.0 * guess, rtol=1e-6, max_iter=200)
    t12 = 0.5 * tau
    lin, quad = a * t12, b * t12 * t12
    x_eff = (lin + 2 * quad) / (lin + quad)
    return CoherenceEstimate(tau, x_eff, False, conditions)


def model_curve(p: SDParams, sequence: str, T: float, B: float, delays, *, A0: float = 1.0,
                T1e: float | None = None, t12: float | None = None) -> np.ndarray:
    """Model amplitudes over a delay grid (t12 for two-pulse, t23 for three-pulse)."""
    delays = np.asarray(delays, dtype=float)
    if sequence == "two_pulse":
        return np.asarray(two_pulse_amplitude(p, A0, T, B, delays))
    if sequence == "three_pulse":
        if T1e is None or t12 is None:
            raise DomainError("three-pulse curves need T1e and a fixed t12")
        return np.asarray(three_pulse_amplitude(p, A0, T1e, T, B, t12, delays))
    raise DomainError(f"unknown sequence {sequence!r}")
