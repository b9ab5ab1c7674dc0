"""Least-squares estimation of echo-decay parameters.

All fits run a Levenberg-Marquardt iteration in log-parameter space (every
fitted quantity is strictly positive) with analytic Jacobians.  Residuals
are ``(model - data) / sigma`` with unit sigma unless the trace carries
one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from erspin.echodecay import SITE2_FROZEN, EchoTrace
from erspin.errors import DomainError
from erspin.relaxation import SITE2_G, SDParams, polarization_ratio, suppression_factor

SD_NAMES = ("gamma0", "gamma_sd", "r_ff", "alpha_orbach", "delta_orbach")
SD_UNITS = {"gamma0": "Hz", "gamma_sd": "Hz", "r_ff": "s^-1", "alpha_orbach": "Hz", "delta_orbach": "K"}
DELTA_BOUNDS = (1.0, 1000.0)


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    jac: np.ndarray
    n_iter: int
    converged: bool
    message: str
    grad_cosine: float
    cost_history: list = field(default_factory=list)


def _grad_cosine(J: np.ndarray, r: np.ndarray) -> float:
    rn = np.linalg.norm(r)
    if rn == 0:
        return 0.0
    cn = np.linalg.norm(J, axis=0)
    g = np.abs(J.T @ r)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(cn > 0, g / (cn * rn), 0.0)
    return float(np.max(c)) if c.size else 0.0


def levenberg_marquardt(residual: Callable[[np.ndarray], np.ndarray],
                        jacobian: Callable[[np.ndarray], np.ndarray],
                        x0, *, max_iter: int = 500, xtol: float = 1e-10,
                        gtol: float = 1e-10, ftol: float = 1e-15,
                        accept_gtol: float = 1e-5) -> LMResult:
    """Minimize 0.5*|residual(x)|^2.

    Steps solve (J^T J + lam D) dx = -J^T r with D the running maximum of
    diag(J^T J).  Only steps that lower the cost are accepted, so the cost
    history is monotone.  The run counts as converged when the relative step
    falls below ``xtol`` (or the gradient cosine below ``gtol``) and the
    final gradient cosine is below ``accept_gtol``.
    """
    x = np.array(x0, dtype=float)
    r = residual(x)
    cost = 0.5 * float(r @ r)
    J = jacobian(x)
    D = np.maximum(np.einsum("ij,ij->j", J, J), 1e-300)
    lam = 1e-3
    nu = 2.0
    history = [cost]
    message = "maximum iterations reached"
    stopped = False
    it = 0
    for it in range(1, max_iter + 1):
        g = J.T @ r
        if cost == 0.0 or _grad_cosine(J, r) <= gtol:
            message = "gradient tolerance reached"
            stopped = True
            break
        A = J.T @ J
        D = np.maximum(D, np.diag(A))
        while True:
            M = A + lam * np.diag(D)
            try:
                dx = np.linalg.solve(M, -g)
            except np.linalg.LinAlgError:
                dx = np.linalg.lstsq(M, -g, rcond=None)[0]
            x_new = x + dx
            r_new = residual(x_new)
            cost_new = 0.5 * float(r_new @ r_new) if np.all(np.isfinite(r_new)) else math.inf
            predicted = -(g @ dx) - 0.5 * dx @ (A @ dx)
            if cost_new < cost:
                rho = (cost - cost_new) / predicted if predicted > 0 else 0.0
                lam *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
                nu = 2.0
                break
            lam *= nu
            nu *= 2.0
            if lam > 1e20:
                message = "damping diverged; no further decrease possible"
                stopped = True
                break
        if stopped:
            break
        small_step = np.linalg.norm(dx) <= xtol * (np.linalg.norm(x) + xtol)
        small_reduction = (cost - cost_new) <= ftol * cost
        x, r, cost = x_new, r_new, cost_new
        history.append(cost)
        J = jacobian(x)
        if small_step:
            message = "relative step tolerance reached"
            stopped = True
            break
        if small_reduction:
            message = "relative cost reduction tolerance reached"
            stopped = True
            break
    gcos = _grad_cosine(J, r)
    converged = stopped and (gcos <= accept_gtol or cost <= 1e-28)
    return LMResult(x, cost, J, it, converged, message, gcos, history)


@dataclass
class FitResult:
    params: dict
    stderrs: dict
    residual_norm: float
    n_iter: int
    converged: bool
    units: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "params": dict(self.params),
            "stderrs": dict(self.stderrs),
            "units": dict(self.units),
            "residual_norm": self.residual_norm,
            "n_iter": self.n_iter,
            "converged": self.converged,
            "diagnostics": dict(self.diagnostics),
        }


def _log_space_stderrs(lm: LMResult, names: Sequence[str], n_data: int) -> dict:
    J = lm.jac
    n = J.shape[1]
    scale = np.linalg.norm(J, axis=0)
    if np.any(scale == 0) or n_data <= n:
        return {}
    Js = J / scale
    if np.linalg.matrix_rank(Js) < n:
        return {}
    s2 = 2.0 * lm.cost / (n_data - n)
    cov = np.linalg.inv(Js.T @ Js) / np.outer(scale, scale) * s2
    values = np.exp(lm.x)
    return {name: float(v * math.sqrt(max(c, 0.0))) for name, v, c in zip(names, values, np.diag(cov))}


def _sigma(trace: EchoTrace, weighted: bool) -> np.ndarray:
    if weighted and trace.sigma is not None:
        return trace.sigma
    return np.ones(len(trace))


# ---------------------------------------------------------------- Mims


def _mims_model(theta, t12):
    lnA, lnT2, lnx = theta
    xexp = math.exp(lnx)
    with np.errstate(divide="ignore"):
        lnratio = np.log(2 * t12) - lnT2
    y = np.where(t12 > 0, np.exp(xexp * np.where(t12 > 0, lnratio, 0.0)), 0.0)
    return np.exp(lnA - y), y, np.where(t12 > 0, lnratio, 0.0), xexp


def mims_jacobian(theta, t12, sigma):
    A, y, lnratio, xexp = _mims_model(theta, t12)
    J = np.empty((t12.size, 3))
    J[:, 0] = A
    J[:, 1] = A * xexp * y
    J[:, 2] = -A * xexp * lnratio * y
    return J / sigma[:, None]


def _mims_initial(t12, amp):
    A0 = float(np.max(amp)) if np.max(amp) > 0 else 1.0
    echo = 2 * t12
    below = np.nonzero(amp < A0 / math.e)[0]
    if below.size:
        T2 = float(echo[below[0]])
    else:
        T2 = 2.0 * float(echo[-1]) if echo[-1] > 0 else 1.0
    return np.log([A0, max(T2, 1e-300), 1.5])


def fit_mims(trace: EchoTrace, *, weighted: bool = True, max_iter: int = 500) -> FitResult:
    """Fit A exp[-(2 t12 / T2e)^x] to a two-pulse trace."""
    if trace.sequence != "two_pulse":
        raise DomainError("Mims fits need a two-pulse trace")
    if len(trace) < 5:
        raise DomainError("Mims fits need at least 5 points")
    t12, amp = trace.t12, trace.amplitude
    sigma = _sigma(trace, weighted)

    def residual(theta):
        return (_mims_model(theta, t12)[0] - amp) / sigma

    lm = levenberg_marquardt(residual, lambda th: mims_jacobian(th, t12, sigma), _mims_initial(t12, amp),
                             max_iter=max_iter)
    A, T2e, x = np.exp(lm.x)
    diagnostics = {"message": lm.message, "grad_cosine": lm.grad_cosine, "flags": []}
    converged = lm.converged
    if T2e > 1e3 * 2 * float(t12.max()):
        diagnostics["flags"].append("non-decaying: T2e far beyond the sampled echo times")
        converged = False
    if not 1.0 <= x <= 3.0:
        diagnostics["flags"].append("stretch exponent outside [1, 3]")
    names = ("A", "T2e", "x")
    return FitResult(
        params={"A": float(A), "T2e": float(T2e), "x": float(x)},
        stderrs=_log_space_stderrs(lm, names, len(trace)) if converged else {},
        residual_norm=math.sqrt(2 * lm.cost),
        n_iter=lm.n_iter,
        converged=converged,
        units={"A": "a.u.", "T2e": "s", "x": "1"},
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------- T1e tail


def fit_tail_T1e(trace: EchoTrace, tail_start: float, *, weighted: bool = True) -> FitResult:
    """Exponential fit A exp(-t23/T1e) to the points with t23 >= tail_start."""
    if trace.sequence != "three_pulse":
        raise DomainError("T1e tail fits need a three-pulse trace")
    mask = trace.t23 >= tail_start
    if mask.sum() < 4:
        raise DomainError(f"need at least 4 points beyond tail_start={tail_start:g} s, got {int(mask.sum())}")
    t = trace.t23[mask]
    y = trace.amplitude[mask]
    sigma = _sigma(trace, weighted)[mask]
    pos = y > 0
    if pos.sum() >= 2 and np.ptp(t[pos]) > 0:
        slope, icpt = np.polyfit(t[pos], np.log(y[pos]), 1)
    else:
        slope, icpt = -1.0 / np.ptp(t), math.log(max(float(np.max(np.abs(y))), 1e-300))
    slope = min(slope, -1e-3 / max(np.ptp(t), 1e-300))
    theta0 = np.array([icpt, math.log(-1.0 / slope)])

    def model(theta):
        return np.exp(theta[0] - t / math.exp(theta[1]))

    def residual(theta):
        return (model(theta) - y) / sigma

    def jacobian(theta):
        m = model(theta)
        return np.column_stack([m, m * t / math.exp(theta[1])]) / sigma[:, None]

    lm = levenberg_marquardt(residual, jacobian, theta0)
    A, T1e = np.exp(lm.x)
    return FitResult(
        params={"A": float(A), "T1e": float(T1e)},
        stderrs=_log_space_stderrs(lm, ("A", "T1e"), t.size) if lm.converged else {},
        residual_norm=math.sqrt(2 * lm.cost),
        n_iter=lm.n_iter,
        converged=lm.converged,
        units={"A": "a.u.", "T1e": "s"},
        diagnostics={"message": lm.message, "grad_cosine": lm.grad_cosine, "tail_start": tail_start,
                     "n_tail": int(t.size)},
    )


# ---------------------------------------------------------------- joint spectral diffusion


class _SDProblem:
    """Stacked residuals of the three-pulse echo model over several traces.

    theta = [ln Gamma0, ln Gamma_SD, ln R_ff, ln alpha_O, ln Delta, ln A0_1 .. ln A0_n]
    """

    def __init__(self, traces, T1e, template: SDParams, scale_sd: bool, weighted: bool):
        self.traces = traces
        self.template = template
        self.n = len(traces)
        self.blocks = []
        for tr, t1 in zip(traces, T1e):
            pol = polarization_ratio(template, tr.temperature, tr.field)
            self.blocks.append({
                "t12": tr.t12,
                "t23": tr.t23,
                "y": tr.amplitude,
                "sigma": _sigma(tr, weighted),
                "pop": tr.t23 / t1 if t1 is not None else np.zeros(len(tr)),
                "T": tr.temperature,
                "s_ff": pol,
                "s_sd": pol if scale_sd else 1.0,
                "k0": 0.0 if suppression_factor(SITE2_G, tr.field, tr.temperature) < SITE2_FROZEN else 1.0,
                "fixed_R": (template.alpha_raman * tr.temperature**9
                            + template.alpha_direct * tr.field**4 * tr.temperature),
            })
        self.n_data = sum(len(tr) for tr in traces)

    def _pieces(self, theta):
        # Wild trial steps may overflow; the optimizer rejects non-finite costs.
        with np.errstate(over="ignore", invalid="ignore"):
            return self._pieces_raw(theta)

    def _pieces_raw(self, theta):
        g0, gsd, rff, alpha, delta = np.exp(np.clip(theta[:5], -700.0, 700.0))
        out = []
        for i, b in enumerate(self.blocks):
            T = b["T"]
            x = delta / T
            q = 1.0 / math.expm1(x) if 0 < x < 700 else (0.0 if x >= 700 else math.inf)
            R = rff * b["s_ff"] + alpha * q + b["fixed_R"]
            sat = R * b["t12"] - np.expm1(-R * b["t23"])
            geff = g0 * b["k0"] + 0.5 * gsd * b["s_sd"] * sat
            lnm = theta[5 + i] - b["pop"] - 2 * np.pi * b["t12"] * geff
            out.append((np.exp(lnm), R, q, sat))
        return (g0, gsd, rff, alpha, delta), out

    def model(self, theta):
        return [m for m, *_ in self._pieces(theta)[1]]

    def residual(self, theta):
        _, pieces = self._pieces(theta)
        return np.concatenate([(m - b["y"]) / b["sigma"] for (m, *_), b in zip(pieces, self.blocks)])

    @np.errstate(over="ignore", invalid="ignore")
    def jacobian(self, theta):
        (g0, gsd, rff, alpha, delta), pieces = self._pieces(theta)
        J = np.zeros((self.n_data, 5 + self.n))
        row = 0
        for i, ((m, R, q, sat), b) in enumerate(zip(pieces, self.blocks)):
            t12, t23, T = b["t12"], b["t23"], b["T"]
            k = m.size
            w = m / b["sigma"]
            dlnm_dR = -np.pi * t12 * gsd * b["s_sd"] * (t12 + t23 * np.exp(-R * t23))
            J[row:row + k, 0] = w * (-2 * np.pi * t12 * g0 * b["k0"])
            J[row:row + k, 1] = w * (-np.pi * t12 * gsd * b["s_sd"] * sat)
            J[row:row + k, 2] = w * dlnm_dR * rff * b["s_ff"]
            J[row:row + k, 3] = w * dlnm_dR * alpha * q
            J[row:row + k, 4] = w * dlnm_dR * (-alpha * (delta / T) * (q + q * q))
            J[row:row + k, 5 + i] = w
            row += k
        return J

    def amplitude_guess(self, theta_phys):
        """ln A0 per trace so that the model matches each trace's largest point."""
        theta = np.concatenate([theta_phys, np.zeros(self.n)])
        out = []
        for (m, *_), b in zip(self._pieces(theta)[1], self.blocks):
            j = int(np.argmax(b["y"]))
            y = b["y"][j] if b["y"][j] > 0 else 1.0
            out.append(math.log(y) - math.log(max(m[j], 1e-300)))
        return np.array(out)


def _robust_mean(v):
    return float(np.mean(v)) if len(v) else float("nan")


def sd_initial_guess(traces: Sequence[EchoTrace], T1e: Sequence[float | None]) -> np.ndarray:
    """Data-driven starting point (linear values) for the five rate parameters."""
    g0_est, gsd_est, R_est = [], [], []
    for tr, t1 in zip(traces, T1e):
        y = tr.amplitude
        if tr.sequence == "two_pulse":
            keep = y > 0.3 * np.max(y)
            if keep.sum() >= 2 and np.ptp(tr.t12[keep]) > 0:
                slope = np.polyfit(tr.t12[keep], np.log(y[keep]), 1)[0]
                if slope < 0:
                    g0_est.append(-slope / (2 * np.pi))
        elif t1 is not None and len(tr) >= 8:
            pos = y > 0
            t23 = tr.t23[pos]
            z = np.log(y[pos]) + t23 / t1
            t12 = float(np.median(tr.t12))
            early, late = _robust_mean(z[:3]), _robust_mean(z[-5:])
            drop = early - late
            if drop > 0 and t12 > 0:
                gsd_est.append(drop / (np.pi * t12))
                half = np.nonzero(z < early - 0.5 * drop)[0]
                if half.size and t23[half[0]] > 0:
                    R_est.append((tr.temperature, math.log(2) / t23[half[0]]))
    g0 = float(np.median(g0_est)) if g0_est else 1e5
    gsd = float(np.median(gsd_est)) if gsd_est else 1e5
    if R_est:
        R_est.sort()
        rff = min(r for _, r in R_est)
        hot = [(T, r - 0.9 * rff) for T, r in R_est if r > 2 * rff]
        if len(hot) >= 2:
            invT = np.array([1 / T for T, _ in hot])
            slope, icpt = np.polyfit(invT, np.log([r for _, r in hot]), 1)
            delta = float(np.clip(-slope, 5.0, 200.0))
            alpha = float(math.exp(icpt)) if -slope == delta else float(hot[-1][1] * math.expm1(delta / hot[-1][0]))
        else:
            delta = 40.0
            Tmax, rmax = R_est[-1]
            alpha = max(rmax - rff, 0.1 * rff) * math.expm1(delta / Tmax)
    else:
        rff, delta = 1e4, 40.0
        alpha = 1e4 * math.expm1(delta / 3.0)
    return np.array([g0, gsd, rff, alpha, delta])


def fit_spectral_diffusion(traces: Sequence[EchoTrace], T1e: Sequence[float | None] | None = None, *,
                           template: SDParams | None = None, n_starts: int = 8, seed: int = 0,
                           scale_sd: bool = True, weighted: bool = True, max_iter: int = 500) -> FitResult:
    """Joint fit of Gamma0, Gamma_SD, R_ff, alpha_O, Delta to two- and three-pulse traces.

    Each trace gets its own amplitude A0; ``T1e`` gives the fixed population
    lifetime per trace (ignored for two-pulse traces; a missing value for a
    three-pulse trace is taken from a tail fit over its last third).
    Non-fitted fields (reference conditions, bath g, Raman/direct terms) come
    from ``template``.
    """
    traces = list(traces)
    if not traces:
        raise DomainError("no traces given")
    template = template or SDParams.reference_fit()
    T1e = list(T1e) if T1e is not None else [tr.meta.get("T1e_s") for tr in traces]
    if len(T1e) != len(traces):
        raise DomainError("need one T1e entry per trace")
    for i, (tr, t1) in enumerate(zip(traces, T1e)):
        if tr.sequence == "three_pulse" and t1 is None:
            start = float(tr.t23[(2 * len(tr)) // 3])
            T1e[i] = fit_tail_T1e(tr, start, weighted=weighted).params["T1e"]
        elif tr.sequence == "two_pulse":
            T1e[i] = None

    problem = _SDProblem(traces, T1e, template, scale_sd, weighted)
    center = np.log(sd_initial_guess(traces, T1e))
    rng = np.random.default_rng(seed)
    starts = [center] + [center + math.log(10) * rng.uniform(-1, 1, size=5) for _ in range(n_starts - 1)]

    best = None
    start_costs = []
    for phys in starts:
        theta0 = np.concatenate([phys, problem.amplitude_guess(phys)])
        r0 = problem.residual(theta0)
        start_costs.append(0.5 * float(r0 @ r0) if np.all(np.isfinite(r0)) else math.inf)
        lm = levenberg_marquardt(problem.residual, problem.jacobian, theta0, max_iter=max_iter)
        if best is None or lm.cost < best.cost:
            best = lm

    values = np.exp(best.x)
    names = list(SD_NAMES) + [f"A0_{i}" for i in range(len(traces))]
    params = {k: float(v) for k, v in zip(names, values)}
    flags = []
    temps = {round(tr.temperature, 9) for tr in traces}
    if len(temps) < 2:
        flags.append("degenerate: single temperature, alpha_orbach/delta_orbach unidentifiable")
    if not DELTA_BOUNDS[0] <= params["delta_orbach"] <= DELTA_BOUNDS[1]:
        flags.append("parameter collapse: delta_orbach at plausibility bound")
    if not any(tr.sequence == "two_pulse" for tr in traces):
        flags.append("no two-pulse traces: gamma0 only constrained through amplitudes")
    stderrs = _log_space_stderrs(best, names, problem.n_data) if best.converged else {}
    units = dict(SD_UNITS)
    units.update({f"A0_{i}": "a.u." for i in range(len(traces))})
    return FitResult(
        params=params,
        stderrs=stderrs,
        residual_norm=math.sqrt(2 * best.cost),
        n_iter=best.n_iter,
        converged=best.converged,
        units=units,
        diagnostics={
            "message": best.message,
            "grad_cosine": best.grad_cosine,
            "flags": flags,
            "start_costs": start_costs,
            "T1e_s": T1e,
            "n_data": problem.n_data,
        },
    )


def sd_params_from_fit(fit: FitResult, template: SDParams | None = None) -> SDParams:
    template = template or SDParams.reference_fit()
    return template.with_(**{k: fit.params[k] for k in SD_NAMES})
