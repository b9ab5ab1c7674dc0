"""Spin-lattice and spin-bath rate models.

Rates are in s^-1, linewidths in Hz, temperatures in kelvin and fields in
tesla.  The bath relaxation rate combines flip-flops (scaled by the
bath polarization factor sech^2(g mu_B B / 2kT)), a resonant Orbach
process, and optional Raman (T^9) and direct (B^4 T) terms.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from erspin._numerics import bisect_increasing
from erspin.constants import HBAR, MU_0, MU_B, MU_B_OVER_K
from erspin.errors import DomainError

# Y3+ density in Y2SiO5 (C2/c, Z = 8, V = 852.5 A^3); half of it on each site.
Y_DENSITY_YSO = 1.877e28  # m^-3

# Site-2 ground-state g factor for the field orientation used in the analysis.
SITE2_G = 14.0


@dataclass(frozen=True)
class SDParams:
    """Spectral-diffusion and bath-relaxation parameters.

    ``r_ff`` and ``gamma_sd`` are the values at (``ref_T``, ``ref_B``);
    extrapolation to other conditions scales them by the ratio of bath
    polarization factors for ``g_bath``.
    """

    gamma0: float
    gamma_sd: float
    r_ff: float
    alpha_orbach: float
    delta_orbach: float
    alpha_raman: float = 0.0
    alpha_direct: float = 0.0
    ref_T: float = 2.0
    ref_B: float = 8.7e-3
    g_bath: float = 4.0

    def __post_init__(self):
        for name in ("gamma0", "gamma_sd", "r_ff", "alpha_orbach", "alpha_raman", "alpha_direct", "ref_B"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise DomainError(f"{name} must be finite and >= 0, got {v}")
        if not self.delta_orbach > 0:
            raise DomainError(f"delta_orbach must be > 0, got {self.delta_orbach}")
        if not self.ref_T > 0:
            raise DomainError(f"ref_T must be > 0, got {self.ref_T}")
        if not self.g_bath > 0:
            raise DomainError(f"g_bath must be > 0, got {self.g_bath}")

    @classmethod
    def reference_fit(cls) -> "SDParams":
        """Values fitted to the 1.6-3 K, 8.7 mT echo data of Er3+:Y2SiO5 site 1."""
        return cls(gamma0=2.7e5, gamma_sd=4.3e5, r_ff=2.1e4, alpha_orbach=50e10, delta_orbach=40.0)

    def with_(self, **changes) -> "SDParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "SDParams":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise DomainError(f"unknown SDParams keys: {sorted(unknown)}")
        try:
            return cls(**{k: float(v) for k, v in doc.items()})
        except TypeError as exc:
            raise DomainError(f"malformed SDParams document: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "SDParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _check_T(T: float) -> None:
    if not (T > 0 and math.isfinite(T)):
        raise DomainError(f"temperature must be finite and > 0, got {T}")


def orbach_rate(alpha: float, delta: float, T: float) -> float:
    """alpha / (exp(delta/T) - 1)."""
    _check_T(T)
    if not delta > 0:
        raise DomainError(f"delta must be > 0, got {delta}")
    if alpha == 0:
        return 0.0
    ratio = delta / T
    if ratio > 700:
        return 0.0
    return alpha / math.expm1(ratio)


def suppression_factor(g: float, B: float, T: float) -> float:
    """Bath flip-flop suppression sech^2(g mu_B B / 2kT)."""
    _check_T(T)
    x = abs(g * MU_B_OVER_K * B / (2.0 * T))
    e = math.exp(-2.0 * x)
    return min(4.0 * e / (1.0 + e) ** 2, 1.0)  # rounding can exceed 1 by an ulp near x = 0


def polarization_ratio(p: SDParams, T: float, B: float) -> float:
    """Suppression at (T, B) relative to the reference conditions of ``p``."""
    return suppression_factor(p.g_bath, B, T) / suppression_factor(p.g_bath, p.ref_B, p.ref_T)


def flip_flop_rate(p: SDParams, T: float, B: float) -> float:
    return p.r_ff * polarization_ratio(p, T, B)


def relaxation_rate(p: SDParams, T: float, B: float) -> float:
    """Total bath-spin relaxation rate R(T, B) in s^-1."""
    _check_T(T)
    rate = flip_flop_rate(p, T, B) + orbach_rate(p.alpha_orbach, p.delta_orbach, T)
    if p.alpha_raman:
        rate += p.alpha_raman * T**9
    if p.alpha_direct:
        rate += p.alpha_direct * B**4 * T
    return rate


def crossover_temperature(p: SDParams, B: float | None = None, T_guess: float = 2.0) -> float:
    """Temperature at which the Orbach term equals the flip-flop term."""
    B = p.ref_B if B is None else B

    def diff(T):
        ob = orbach_rate(p.alpha_orbach, p.delta_orbach, T)
        ff = flip_flop_rate(p, T, B)
        return math.log(ob) - math.log(ff) if ob > 0 else -math.inf

    return bisect_increasing(diff, 0.5 * T_guess, 2.0 * T_guess, rtol=1e-9)


def flip_flop_scaling(g_a: float, g_b: float) -> float:
    """Flip-flop rate ratio (g_b / g_a)^4 between two spin species."""
    if not (g_a > 0 and g_b > 0):
        raise DomainError("g factors must be positive")
    return (g_b / g_a) ** 4


def motional_narrowed_linewidth(delta_omega: float, R_fast: float) -> float:
    """Residual linewidth (Hz) of a coupling of width ``delta_omega`` (Hz)
    averaged by a bath fluctuating at ``R_fast`` (s^-1).

    Gamma = (2 pi delta_omega)^2 / R_fast, converted back to Hz.
    """
    if not R_fast > 0:
        raise DomainError(f"R_fast must be > 0, got {R_fast}")
    if delta_omega < 0:
        raise DomainError(f"delta_omega must be >= 0, got {delta_omega}")
    w = 2 * math.pi * delta_omega
    if delta_omega > 0 and R_fast < w:
        warnings.warn(
            f"R_fast={R_fast:.3g} s^-1 is not fast compared with 2*pi*delta_omega={w:.3g} s^-1; "
            "motional-narrowing limit is not valid",
            RuntimeWarning,
            stacklevel=2,
        )
    return w * w / R_fast / (2 * math.pi)


def dipolar_sd_linewidth(g_probe: float, g_bath: float, n_bath: float) -> float:
    """Spectral-diffusion linewidth (Hz) from a dilute dipolar spin bath.

    mu_0 g_probe g_bath mu_B^2 n_bath / (9 sqrt(3) hbar), with ``n_bath`` in m^-3.
    """
    if g_probe < 0 or g_bath < 0 or n_bath < 0:
        raise DomainError("g factors and density must be non-negative")
    return MU_0 * g_probe * g_bath * MU_B**2 * n_bath / (9 * math.sqrt(3) * HBAR)


def bath_density(concentration_ppm: float, site_fraction: float = 0.5) -> float:
    """Dopant density (m^-3) on one Y site of Y2SiO5 for a doping level in ppm."""
    return concentration_ppm * 1e-6 * Y_DENSITY_YSO * site_fraction


# Continuous-wave excitation rates giving a 1.2 ms plateau with an 8 ms optical lifetime.
DEFAULT_SPONT_RATE = 1 / 8e-3
DEFAULT_PUMP_RATE = 1 / 1.2e-3 - DEFAULT_SPONT_RATE


def excited_population_rate(pump_rate: float = DEFAULT_PUMP_RATE, spont_rate: float = DEFAULT_SPONT_RATE,
                            spin_terms: SDParams | None = None, T: float = 1.0) -> float:
    """Excited-state spin population decay rate 1/T1e.

    Sum of optical pumping, optical decay, and the excited-state Orbach and
    Raman spin-lattice terms taken from ``spin_terms`` (flip-flop and
    linewidth fields of ``spin_terms`` are ignored).
    """
    if pump_rate < 0 or spont_rate < 0:
        raise DomainError("rates must be non-negative")
    rate = pump_rate + spont_rate
    if spin_terms is not None:
        _check_T(T)
        rate += orbach_rate(spin_terms.alpha_orbach, spin_terms.delta_orbach, T)
        rate += spin_terms.alpha_raman * T**9
    return rate
