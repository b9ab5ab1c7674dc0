"""Excited-state optical-to-microwave transduction protocol.

Storage stage: a photon absorbed on |1>-|4> is spread over frequency
classes labelled by their position ``u`` in [-1/2, 1/2] along the applied
field gradient.  The gradient detunes the |1>-|4> coherence by
``opt_inhom_width * u`` and the |3>-|4> coherence by ``spin_inhom_width * u``;
reversing the gradient flips both signs.  pi-pulses on |1>-|3> move the
excitation between the two coherences.

Emission stage: the rephased |3>-|4> collective spin mode S exchanges the
excitation with a single cavity mode a,

    dS/dt = -(1/T2e + i delta) S - i v a
    da/dt = -(kappa/2) a - i v S,

and the emitted fraction is kappa * integral |a|^2 dt.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import solve_continuous_lyapunov
from scipy.optimize import minimize_scalar

from erspin.errors import ConfigError, NumericError

STEPS = ("absorb", "dephase", "shelve", "shelved", "unshelve_reverse", "rephase", "final_pulse", "coupling")


@dataclass(frozen=True)
class ProtocolConfig:
    opt_inhom_width: float = 1e6  # Hz, gradient-induced width of the |1>-|4> feature
    spin_inhom_width: float = 1e6  # Hz, gradient-induced width of the |3>-|4> coherence
    coupling_v: float = 2 * math.pi * 34e6  # rad/s, ensemble-enhanced spin-cavity coupling
    cavity_kappa: float | None = None  # rad/s; None: impedance-matched value from a kappa scan
    T2e: float = 1.6e-6  # s; math.inf (null in JSON) disables spin decoherence
    x: float = 1.0  # stretch exponent of the storage decay
    pulse_fidelity: float = 1.0
    t_dephase: float = 1e-6
    t_shelf: float = 0.0
    t_rephase: float | None = None  # None: end step 5 exactly at the rephasing time
    reversal_error: float = 0.0  # fractional mismatch of the reversed gradient
    cavity_detuning: float = 0.0  # rad/s
    optical_depth: float | None = None  # None: the photon is fully absorbed

    def __post_init__(self):
        for name in ("opt_inhom_width", "spin_inhom_width", "coupling_v", "cavity_kappa", "t_dephase", "t_shelf"):
            v = getattr(self, name)
            if v is None and name == "cavity_kappa":
                continue
            if not (v >= 0 and math.isfinite(v)):
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
        if not self.T2e > 0:
            raise ConfigError("T2e must be > 0")
        if not self.x > 0:
            raise ConfigError("x must be > 0")
        if not 0.0 <= self.pulse_fidelity <= 1.0:
            raise ConfigError("pulse_fidelity must lie in [0, 1]")
        if self.t_rephase is not None and not self.t_rephase >= 0:
            raise ConfigError("t_rephase must be >= 0")
        if not 0.0 <= self.reversal_error < 1.0:
            raise ConfigError("reversal_error must lie in [0, 1)")
        if self.optical_depth is not None and not self.optical_depth >= 0:
            raise ConfigError("optical_depth must be >= 0")

    def with_(self, **changes) -> "ProtocolConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(self.T2e):
            d["T2e"] = None
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ProtocolConfig":
        known = {f.name for f in fields(cls)}
        doc = dict(doc)
        timings = doc.pop("timings", None) or {}
        doc.update(timings)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown protocol keys: {sorted(unknown)}")
        if "T2e" in doc and doc["T2e"] is None:
            doc["T2e"] = math.inf
        try:
            return cls(**{k: (None if v is None else float(v)) for k, v in doc.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed protocol config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "ProtocolConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def class_positions(n_classes: int) -> np.ndarray:
    """Equal-weight gradient coordinates on [-1/2, 1/2] (cell midpoints)."""
    if n_classes < 1:
        raise ConfigError("n_classes must be >= 1")
    return (np.arange(n_classes) + 0.5) / n_classes - 0.5


def rephasing_delay(cfg: ProtocolConfig) -> float:
    """Time after the gradient reversal at which all class phases cancel.

    opt * t_dephase + spin * t_shelf = (1 - reversal_error) * opt * t.
    """
    opt, spin = cfg.opt_inhom_width, cfg.spin_inhom_width
    accumulated = opt * cfg.t_dephase + spin * cfg.t_shelf
    if accumulated == 0:
        return 0.0
    if opt == 0:
        raise ConfigError("spin-stage dephasing cannot be undone without an optical gradient")
    return accumulated / ((1.0 - cfg.reversal_error) * opt)


def _pi_pulse(fidelity: float) -> np.ndarray:
    """|1>-|3> pi-pulse acting on the (|1>-|4>, |3>-|4>) coherence pair."""
    return math.sqrt(fidelity) * np.array([[0.0, -1j], [-1j, 0.0]])


def storage_decay(cfg: ProtocolConfig, t: float) -> float:
    """Stretched-exponential survival exp[-(t/T2e)^x] of the stored excitation."""
    if math.isinf(cfg.T2e):
        return 1.0
    return math.exp(-((t / cfg.T2e) ** cfg.x))


def _segments(cfg: ProtocolConfig, t_rephase: float):
    """(name, duration, opt_rate, spin_rate, pulse_after) for the storage stage.

    Rates are multipliers of u giving detunings in Hz for each coherence.
    """
    rev = -(1.0 - cfg.reversal_error)
    return [
        ("dephase", cfg.t_dephase, cfg.opt_inhom_width, cfg.spin_inhom_width, True),
        ("shelved", cfg.t_shelf, cfg.opt_inhom_width, cfg.spin_inhom_width, True),
        ("rephase", t_rephase, rev * cfg.opt_inhom_width, rev * cfg.spin_inhom_width, True),
    ]


def apply_storage(amps: np.ndarray, cfg: ProtocolConfig, u: np.ndarray, *, t_rephase: float | None = None,
                  reverse: bool = False) -> np.ndarray:
    """Propagate per-class coherence pairs (n, 2) through the three storage segments.

    ``reverse=True`` applies the inverse steps in reverse order with
    conjugated phases; with unit fidelity it undoes the forward run.
    """
    t_r = rephasing_delay(cfg) if t_rephase is None else t_rephase
    P = _pi_pulse(cfg.pulse_fidelity)
    ops = []
    for _, dur, ro, rs, pulse in _segments(cfg, t_r):
        phase = np.stack([np.exp(2j * np.pi * ro * u * dur), np.exp(2j * np.pi * rs * u * dur)], axis=-1)
        ops.append(("phase", phase))
        if pulse:
            ops.append(("pulse", P))
    state = np.array(amps, dtype=complex)
    if not reverse:
        for kind, op in ops:
            state = state * op if kind == "phase" else state @ op.T
    else:
        for kind, op in reversed(ops):
            state = state * np.conj(op) if kind == "phase" else state @ np.conj(op)
    return state


@dataclass
class ProtocolResult:
    times: np.ndarray
    coherence: np.ndarray
    step: list
    rephase_time: float
    coupling_start: float
    collective_coherence: float
    efficiency_breakdown: dict
    emission: "EmissionResult | None" = None
    cavity_kappa: float | None = None

    @property
    def eta_total(self) -> float:
        b = self.efficiency_breakdown
        return b["absorb"] * b["coherence"] * b["emit"]

    def summary(self) -> dict:
        return {
            "eta_total": float(self.eta_total),
            "eta_breakdown": {k: float(v) for k, v in self.efficiency_breakdown.items()},
            "cavity_kappa": self.cavity_kappa,
            "rephase_time_s": self.rephase_time,
            "coupling_start_s": self.coupling_start,
        }


def run_protocol(cfg: ProtocolConfig, n_classes: int = 101, *, samples_per_step: int = 200,
                 emit: bool = True) -> ProtocolResult:
    """Execute absorb -> dephase -> pi -> shelved evolution -> pi + reversal -> rephase -> pi -> coupling.

    The trajectory records the collective coherence |sum_k w_k s_k|^2 of the
    coherence that carries the excitation in each step (|1>-|4> while the
    population sits in |1>, |3>-|4> while shelved), including pulse
    fidelities and the storage decay.
    """
    t_star = rephasing_delay(cfg)
    t_r = t_star if cfg.t_rephase is None else cfg.t_rephase
    if t_star > t_r * (1 + 1e-9) + 1e-15:
        raise ConfigError(f"rephasing at {t_star:.6g} s after reversal falls outside the "
                          f"{t_r:.6g} s rephasing window")
    u = class_positions(n_classes)
    w = 1.0 / n_classes
    state = np.zeros((n_classes, 2), dtype=complex)
    state[:, 0] = 1.0
    carrier = 0
    P = _pi_pulse(cfg.pulse_fidelity)
    times, coh, labels = [0.0], [1.0], ["absorb"]
    t0 = 0.0
    for name, dur, ro, rs, pulse in _segments(cfg, t_r):
        rates = np.stack([ro * u, rs * u], axis=-1)
        ts = np.linspace(0.0, dur, samples_per_step)[1:] if dur > 0 else np.empty(0)
        for t in ts:
            amp = np.sum(state[:, carrier] * np.exp(2j * np.pi * rates[:, carrier] * t)) * w
            times.append(t0 + t)
            coh.append(abs(amp) ** 2 * storage_decay(cfg, t0 + t))
            labels.append(name)
        state = state * np.exp(2j * np.pi * rates * dur)
        t0 += dur
        if pulse:
            state = state @ P.T
            carrier = 1 - carrier
            amp = np.sum(state[:, carrier]) * w
            times.append(t0)
            coh.append(abs(amp) ** 2 * storage_decay(cfg, t0))
            labels.append(name + "_pulse")
    # Three pulses leave the excitation on |3>-|4>.
    collective = abs(np.sum(state[:, 1]) * w) ** 2 * storage_decay(cfg, t0)
    absorb = 1.0 if cfg.optical_depth is None else -math.expm1(-cfg.optical_depth)
    emission = None
    if emit:
        if cfg.cavity_kappa is None:
            cfg = cfg.with_(cavity_kappa=scan_kappa(cfg).kappa_opt)
        emission = emission_efficiency(cfg, 1.0, trajectory=True)
    breakdown = {"absorb": absorb, "coherence": collective,
                 "emit": emission.efficiency if emission is not None else float("nan")}
    return ProtocolResult(np.array(times), np.array(coh), labels, cfg.t_dephase + cfg.t_shelf + t_star, t0,
                          float(collective), breakdown, emission, cfg.cavity_kappa)


@dataclass
class EmissionResult:
    efficiency: float
    times: np.ndarray
    spin_norm: np.ndarray
    cavity_norm: np.ndarray
    emitted: np.ndarray
    lost: np.ndarray

    @property
    def conservation_error(self) -> float:
        total = self.spin_norm + self.cavity_norm + self.emitted + self.lost
        return float(np.max(np.abs(total - 1.0)))


def _coupling_matrix(cfg: ProtocolConfig) -> np.ndarray:
    if cfg.cavity_kappa is None:
        raise ConfigError("cavity_kappa is unset; pick one with scan_kappa")
    gamma = 0.0 if math.isinf(cfg.T2e) else 1.0 / cfg.T2e
    v = cfg.coupling_v
    return np.array([[-(gamma + 1j * cfg.cavity_detuning), -1j * v], [-1j * v, -0.5 * cfg.cavity_kappa]])


def _horizon(cfg: ProtocolConfig) -> float:
    rates = -np.linalg.eigvals(_coupling_matrix(cfg)).real
    slow = float(np.min(rates))
    if slow > 1e-300:
        return 40.0 / slow
    return 50.0 / max(cfg.coupling_v, cfg.cavity_kappa, 1.0)


def emission_efficiency(cfg: ProtocolConfig, collective_coherence: float = 1.0, *, trajectory: bool = False,
                        rtol: float = 1e-8, n_out: int = 400):
    """Fraction of a stored spin excitation leaving through the cavity, times ``collective_coherence``.

    Integrates spin and cavity amplitudes together with the emitted
    (kappa |a|^2) and dephased (2 |S|^2 / T2e) accumulators by an adaptive
    8th-order Runge-Kutta scheme until less than 1e-12 of the excitation
    remains.  Returns a float, or an :class:`EmissionResult` with
    ``trajectory=True``.
    """
    if not 0.0 <= collective_coherence <= 1.0:
        raise ConfigError("collective_coherence must lie in [0, 1]")
    if cfg.cavity_kappa is None:
        raise ConfigError("cavity_kappa is unset; pick one with scan_kappa")
    gamma = 0.0 if math.isinf(cfg.T2e) else 1.0 / cfg.T2e
    v, kappa, delta = cfg.coupling_v, cfg.cavity_kappa, cfg.cavity_detuning

    def rhs(t, y):
        S = y[0] + 1j * y[1]
        a = y[2] + 1j * y[3]
        dS = -(gamma + 1j * delta) * S - 1j * v * a
        da = -0.5 * kappa * a - 1j * v * S
        return [dS.real, dS.imag, da.real, da.imag, kappa * abs(a) ** 2, 2 * gamma * abs(S) ** 2]

    def drained(t, y):
        return y[0] ** 2 + y[1] ** 2 + y[2] ** 2 + y[3] ** 2 - 1e-12

    drained.terminal = True
    drained.direction = -1

    t_end = _horizon(cfg)
    sol = solve_ivp(rhs, (0.0, t_end), [1.0, 0.0, 0.0, 0.0, 0.0, 0.0], method="DOP853", rtol=rtol,
                    atol=1e-14, events=drained, dense_output=trajectory)
    if sol.status < 0:
        raise NumericError(f"emission integration failed: {sol.message}")
    # Integration error can push a lossless run a hair above unity.
    eta = min(float(sol.y[4, -1]), 1.0)
    if not trajectory:
        return eta * collective_coherence
    t_stop = float(sol.t[-1])
    ts = np.linspace(0.0, t_stop, n_out)
    y = sol.sol(ts)
    return EmissionResult(
        efficiency=eta * collective_coherence,
        times=ts,
        spin_norm=y[0] ** 2 + y[1] ** 2,
        cavity_norm=y[2] ** 2 + y[3] ** 2,
        emitted=y[4],
        lost=y[5],
    )


def emission_efficiency_exact(cfg: ProtocolConfig) -> float:
    """Closed-form emitted fraction: kappa * P_aa with M P + P M^H = -x0 x0^H."""
    M = _coupling_matrix(cfg)
    if cfg.cavity_kappa == 0 or cfg.coupling_v == 0:
        return 0.0
    if np.max(np.linalg.eigvals(M).real) >= 0:
        raise NumericError("undamped mode: emitted fraction is not defined")
    x0 = np.array([[1.0], [0.0]], dtype=complex)
    P = solve_continuous_lyapunov(M, -x0 @ x0.conj().T)
    return float(cfg.cavity_kappa * P[1, 1].real)


@dataclass
class KappaScan:
    kappas: np.ndarray
    efficiencies: np.ndarray
    kappa_opt: float
    eta_opt: float


def _eta_at(args) -> float:
    cfg, kappa = args
    return emission_efficiency(cfg.with_(cavity_kappa=float(kappa)))


def scan_kappa(cfg: ProtocolConfig, kappa_min: float = 2 * math.pi * 0.1e6, kappa_max: float = 2 * math.pi * 1e9,
               n: int = 41, refine: bool = True, workers: int = 1) -> KappaScan:
    """Emission efficiency on a log grid of cavity linewidths (rad/s), refined around the best point.

    Grid points are independent jobs; results are gathered in grid order,
    so the outcome does not depend on ``workers``.
    """
    if not 0 < kappa_min <= kappa_max or n < 1:
        raise ConfigError("kappa scan needs 0 < kappa_min <= kappa_max and n >= 1")
    kappas = np.geomspace(kappa_min, kappa_max, n)
    jobs = [(cfg, k) for k in kappas]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            etas = np.array(list(pool.map(_eta_at, jobs)))
    else:
        etas = np.array([_eta_at(j) for j in jobs])
    k = int(np.argmax(etas))
    k_opt, eta_opt = float(kappas[k]), float(etas[k])
    if refine and n > 2:
        lo = math.log(kappas[max(k - 1, 0)])
        hi = math.log(kappas[min(k + 1, n - 1)])
        res = minimize_scalar(lambda lk: -emission_efficiency(cfg.with_(cavity_kappa=math.exp(lk))),
                              bounds=(lo, hi), method="bounded", options={"xatol": 1e-4})
        if -res.fun > eta_opt:
            k_opt, eta_opt = math.exp(res.x), float(-res.fun)
    return KappaScan(kappas, etas, k_opt, eta_opt)


def bandwidth_report(cfg: ProtocolConfig) -> dict:
    """Accepted photon bandwidth set by the gradient, and the matching absorption window."""
    width = cfg.opt_inhom_width
    return {
        "photon_bandwidth_Hz": width,
        "absorption_window_s": (1.0 / width) if width > 0 else math.inf,
        "rate_matched": bool(width > 0 and math.isclose(width, cfg.spin_inhom_width, rel_tol=1e-9)),
    }


def write_trajectory_csv(em: EmissionResult, fh) -> None:
    fh.write("t_s,spin_norm,cavity_norm,emitted\n")
    for row in zip(em.times, em.spin_norm, em.cavity_norm, em.emitted):
        fh.write(",".join(f"{v:.12g}" for v in row) + "\n")
