"""Command-line front end.

    erspin [--version] [--seed N] [--out-dir DIR] <command> [options]

Commands write their data files atomically into ``--out-dir`` together with
``<command>.manifest.json``.  Exit status: 0 success, 1 bad or missing
input, 2 numerical failure or a fit that did not converge.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from erspin import __version__
from erspin import blochsim, echodecay, fitkit, io, synthetic, transducer, zeeman
from erspin.errors import ConfigError, DomainError, NumericError
from erspin.relaxation import SDParams

PARAMS_ENV = "ERSPIN_PARAMS"
COMMANDS = ("spectrum", "echo-sim", "fit-mims", "fit-t1e", "fit-sd", "predict-t2", "transduce", "synth")


def bundled(name: str) -> Path:
    return Path(str(resources.files("erspin") / "data" / name))


def default_params_path() -> Path:
    env = os.environ.get(PARAMS_ENV)
    return Path(env) if env else bundled("reference_fit.json")


def _require(path: str | Path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    return path


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


@dataclass
class RunManifest:
    command: str
    inputs: list[str] = field(default_factory=list)
    seed: int | None = None
    outputs: list[str] = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    def digest(self) -> str:
        """sha256 over input file contents (in order) and the canonical settings."""
        h = hashlib.sha256()
        for p in self.inputs:
            h.update(Path(p).read_bytes())
            h.update(b"\0")
        h.update(json.dumps(io._clean(self.settings), sort_keys=True).encode())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "version": __version__,
            "inputs": list(self.inputs),
            "params_digest": self.digest(),
            "seed": self.seed,
            "settings": self.settings,
            "outputs": list(self.outputs),
            "timestamp": _timestamp(),
        }


class Run:
    """Collects outputs of one command under the output directory."""

    def __init__(self, command: str, out_dir: Path, seed: int | None):
        self.out_dir = out_dir
        self.manifest = RunManifest(command, seed=seed)

    def input(self, path: str | Path) -> Path:
        p = _require(path)
        self.manifest.inputs.append(str(p))
        return p

    def text(self, name: str, text: str) -> Path:
        io.atomic_write_text(self.out_dir / name, text)
        self.manifest.outputs.append(name)
        return self.out_dir / name

    def json(self, name: str, doc) -> Path:
        return self.text(name, io.dumps_json(doc))

    def table(self, name: str, columns: dict) -> Path:
        return self.text(name, io.table_csv(columns))

    def finish(self) -> None:
        io.write_json(self.out_dir / f"{self.manifest.command}.manifest.json", self.manifest.to_dict())


# -- commands ---------------------------------------------------------------


def cmd_spectrum(args, run: Run) -> int:
    if args.g == "default":
        gset = zeeman.GTensorSet.load(bundled("default_gtensors.json"))
    else:
        gset = _load(zeeman.GTensorSet.load, run.input(args.g))
    B = np.linspace(args.Bmin, args.Bmax, args.n)
    points = zeeman.sweep_spectrum(gset, B, args.fmax)
    buf = _StringSink()
    zeeman.write_spectrum_csv(points, buf)
    run.text("spectrum.csv", buf.value)
    run.json("spectrum.plot.json", io.plot_spec(
        "Zeeman transition frequencies", "spectrum.csv",
        {"column": "B_T", "label": "B (T)", "scale": "linear"},
        {"column": "freq_Hz", "label": "frequency (Hz)", "scale": "linear"},
        [{"kind": "line", "x": "B_T", "y": "freq_Hz", "group_by": "branch"}]))
    run.manifest.settings = {"g": args.g, "Bmin": args.Bmin, "Bmax": args.Bmax, "n": args.n, "fmax": args.fmax}
    return 0


def cmd_echo_sim(args, run: Run) -> int:
    seq = _load(blochsim.PulseSequence.load, run.input(args.seq))
    ens = _load(blochsim.EnsembleSpec.load, run.input(args.ensemble))
    times, signal = blochsim.simulate_sequence(seq, ens, workers=args.workers)
    buf = _StringSink()
    blochsim.write_series_csv(times, signal, buf)
    run.text("echo_sim.csv", buf.value)
    run.json("echo_sim.plot.json", io.plot_spec(
        "Ensemble transverse signal", "echo_sim.csv",
        {"column": "t_s", "label": "time (s)", "scale": "linear"},
        {"column": "re", "label": "signal (arb.)", "scale": "linear"},
        [{"kind": "line", "x": "t_s", "y": "re"}, {"kind": "line", "x": "t_s", "y": "im"}]))
    return 0


def _fit_status(fit: fitkit.FitResult) -> int:
    return 0 if fit.converged else 2


def cmd_fit_mims(args, run: Run) -> int:
    trace = io.read_trace(run.input(args.trace))
    run.manifest.inputs.append(str(io.sidecar_path(args.trace)))
    fit = fitkit.fit_mims(trace, weighted=not args.unweighted)
    run.json("fit_mims.json", fit.to_dict())
    p = fit.params
    grid = np.linspace(0.0, float(trace.t12.max()), 200)
    curve = p["A"] * np.exp(-((2 * grid / p["T2e"]) ** p["x"]))
    run.table("fit_mims_curve.csv", {"delay_s": grid, "amplitude": curve})
    run.json("fit_mims.plot.json", _fit_plot("Two-pulse echo decay", "fit_mims_curve.csv", "t12 (s)"))
    run.manifest.settings = {"weighted": not args.unweighted}
    return _fit_status(fit)


def cmd_fit_t1e(args, run: Run) -> int:
    trace = io.read_trace(run.input(args.trace))
    run.manifest.inputs.append(str(io.sidecar_path(args.trace)))
    tail = args.tail_start
    if tail is None:
        t = trace.t23
        tail = float(t[-max(4, t.size // 3)])
    fit = fitkit.fit_tail_T1e(trace, tail, weighted=not args.unweighted)
    run.json("fit_t1e.json", fit.to_dict())
    grid = np.geomspace(max(tail, 1e-12), float(trace.t23.max()), 200)
    curve = fit.params["A"] * np.exp(-grid / fit.params["T1e"])
    run.table("fit_t1e_curve.csv", {"delay_s": grid, "amplitude": curve})
    run.json("fit_t1e.plot.json", _fit_plot("Stimulated-echo tail", "fit_t1e_curve.csv", "t23 (s)", "log"))
    run.manifest.settings = {"tail_start": tail, "weighted": not args.unweighted}
    return _fit_status(fit)


def cmd_fit_sd(args, run: Run) -> int:
    template = _load(SDParams.load, run.input(args.params or default_params_path()))
    traces = []
    for path in args.trace:
        traces.append(io.read_trace(run.input(path)))
        run.manifest.inputs.append(str(io.sidecar_path(path)))
    fit = fitkit.fit_spectral_diffusion(traces, template=template, n_starts=args.starts, seed=args.seed,
                                        scale_sd=not args.no_sd_scaling, weighted=not args.unweighted)
    run.json("fit_sd.json", fit.to_dict())
    fitted = fitkit.sd_params_from_fit(fit, template)
    run.json("fit_sd_params.json", fitted.to_dict())
    cols = {"trace_index": [], "temperature_K": [], "delay_s": [], "amplitude": []}
    T1e = fit.diagnostics.get("T1e_s", [None] * len(traces))
    for i, tr in enumerate(traces):
        A0 = fit.params.get(f"A0_{i}", 1.0)
        d = tr.swept_delay
        grid = np.linspace(d.min(), d.max(), 100) if tr.sequence == "two_pulse" else \
            np.concatenate([[0.0], np.geomspace(max(d[d > 0].min(), 1e-12), d.max(), 99)])
        curve = echodecay.model_curve(fitted, tr.sequence, tr.temperature, tr.field, grid, A0=A0,
                                      T1e=T1e[i], t12=float(tr.t12[0]))
        cols["trace_index"] += [i] * grid.size
        cols["temperature_K"] += [tr.temperature] * grid.size
        cols["delay_s"] += list(grid)
        cols["amplitude"] += list(curve)
    run.table("fit_sd_curves.csv", {k: np.asarray(v, dtype=float) for k, v in cols.items()})
    spec = _fit_plot("Spectral-diffusion model curves", "fit_sd_curves.csv", "delay (s)", "log")
    spec["series"][0]["group_by"] = "trace_index"
    run.json("fit_sd.plot.json", spec)
    run.manifest.settings = {"starts": args.starts, "scale_sd": not args.no_sd_scaling,
                             "weighted": not args.unweighted}
    return _fit_status(fit)


def cmd_predict_t2(args, run: Run) -> int:
    p = _load(SDParams.load, run.input(args.params or default_params_path()))
    if args.gamma0 is not None:
        p = p.with_(gamma0=args.gamma0)
    est = echodecay.extract_T2e(p, args.T, args.B, scale_sd=not args.no_sd_scaling)
    doc = est.to_dict()
    doc["params"] = p.to_dict()
    run.json("predict_t2.json", doc)
    run.manifest.settings = {"T": args.T, "B": args.B, "gamma0": args.gamma0, "scale_sd": not args.no_sd_scaling}
    return 0


def parse_scan(text: str) -> tuple[float, float, int]:
    """``kappa=lo:hi:log:n`` with lo, hi given as kappa/2pi in Hz."""
    try:
        name, rng = text.split("=", 1)
        lo, hi, kind, n = rng.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise ConfigError(f"bad scan spec {text!r}; expected kappa=lo:hi:log:n") from None
    if name.strip() != "kappa" or kind != "log":
        raise ConfigError(f"only log scans of kappa are supported, got {text!r}")
    if not 0 < lo <= hi or n < 1:
        raise ConfigError(f"bad scan range in {text!r}")
    return lo, hi, n


def cmd_transduce(args, run: Run) -> int:
    cfg = _load(transducer.ProtocolConfig.load, run.input(args.config))
    scan = None
    if args.scan or cfg.cavity_kappa is None:
        lo, hi, n = parse_scan(args.scan or "kappa=0.1e6:1e9:log:41")
        scan = transducer.scan_kappa(cfg, 2 * math.pi * lo, 2 * math.pi * hi, n, workers=args.workers)
        cfg = cfg.with_(cavity_kappa=scan.kappa_opt)
        run.table("transduce_scan.csv", {"kappa_over_2pi_Hz": scan.kappas / (2 * math.pi),
                                         "eta_emit": scan.efficiencies})
    result = transducer.run_protocol(cfg, args.classes)
    em = result.emission
    summary = result.summary()
    summary["bandwidth"] = transducer.bandwidth_report(cfg)
    summary["conservation_error"] = em.conservation_error
    if scan is not None:
        summary["kappa_scan"] = {"kappa_opt_over_2pi_Hz": scan.kappa_opt / (2 * math.pi), "eta_opt": scan.eta_opt}
    run.json("transduce_summary.json", summary)
    run.table("transduce_trajectory.csv", {"t_s": em.times, "spin_norm": em.spin_norm,
                                           "cavity_norm": em.cavity_norm, "emitted": em.emitted})
    run.table("transduce_storage.csv", {"t_s": result.times, "coherence": result.coherence})
    run.json("transduce.plot.json", io.plot_spec(
        "Emission stage", "transduce_trajectory.csv",
        {"column": "t_s", "label": "time (s)", "scale": "linear"},
        {"column": "emitted", "label": "fraction", "scale": "linear"},
        [{"kind": "line", "x": "t_s", "y": c} for c in ("spin_norm", "cavity_norm", "emitted")]))
    run.manifest.settings = {"classes": args.classes, "scan": args.scan}
    if em.conservation_error > 1e-6:
        print(f"error: excitation bookkeeping drifted by {em.conservation_error:.3g}", file=sys.stderr)
        return 2
    return 0


def cmd_synth(args, run: Run) -> int:
    if args.kind == "mims":
        tr = synthetic.mims_trace(args.T2e, args.x, noise=args.noise, seed=args.seed)
        _save_trace(run, "synth_mims.csv", tr)
    else:
        p = _load(SDParams.load, run.input(args.params or default_params_path()))
        fam = synthetic.sd_family(p, noise=args.noise, seed=args.seed)
        for k, tr in enumerate(fam):
            _save_trace(run, f"synth_sd_{k:02d}_{tr.sequence}_{tr.temperature:g}K.csv", tr)
    run.manifest.settings = {"kind": args.kind, "noise": args.noise, "T2e": args.T2e, "x": args.x}
    return 0


def _save_trace(run: Run, name: str, tr) -> None:
    csv_path, side = io.write_trace(run.out_dir / name, tr)
    run.manifest.outputs += [csv_path.name, side.name]


def _fit_plot(title: str, data: str, xlabel: str, xscale: str = "linear") -> dict:
    return io.plot_spec(title, data, {"column": "delay_s", "label": xlabel, "scale": xscale},
                        {"column": "amplitude", "label": "echo amplitude (arb.)", "scale": "log"},
                        [{"kind": "line", "x": "delay_s", "y": "amplitude"}])


def _load(loader, path: Path):
    try:
        return loader(path)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from exc
    except (ConfigError, DomainError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


class _StringSink:
    def __init__(self):
        self.parts = []

    def write(self, s):
        self.parts.append(s)

    @property
    def value(self) -> str:
        return "".join(self.parts)


# -- argument parsing -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for stochastic steps")
    common.add_argument("--out-dir", type=Path, default=argparse.SUPPRESS, help="output directory")

    ap = argparse.ArgumentParser(prog="erspin", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"erspin {__version__}")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", type=Path, default=Path("."))
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", parents=[common], help="Zeeman transition frequencies vs field")
    p.add_argument("--g", default="default", help="'default' or a g-tensor JSON file")
    p.add_argument("--Bmin", type=float, default=0.0)
    p.add_argument("--Bmax", type=float, required=True)
    p.add_argument("--n", type=int, default=201)
    p.add_argument("--fmax", type=float, default=10e9)

    p = sub.add_parser("echo-sim", parents=[common], help="Bloch simulation of a pulse sequence")
    p.add_argument("--seq", required=True)
    p.add_argument("--ensemble", required=True)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("fit-mims", parents=[common], help="stretched-exponential fit of a two-pulse trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--unweighted", action="store_true")

    p = sub.add_parser("fit-t1e", parents=[common], help="exponential fit of a stimulated-echo tail")
    p.add_argument("--trace", required=True)
    p.add_argument("--tail-start", type=float, default=None)
    p.add_argument("--unweighted", action="store_true")

    p = sub.add_parser("fit-sd", parents=[common], help="joint spectral-diffusion fit")
    p.add_argument("--trace", nargs="+", required=True)
    p.add_argument("--params", default=None, help="template parameter file")
    p.add_argument("--starts", type=int, default=8)
    p.add_argument("--no-sd-scaling", action="store_true")
    p.add_argument("--unweighted", action="store_true")

    p = sub.add_parser("predict-t2", parents=[common], help="coherence time from the decay model")
    p.add_argument("--params", default=None)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--B", type=float, required=True)
    p.add_argument("--gamma0", type=float, default=None, help="override the residual linewidth (Hz)")
    p.add_argument("--no-sd-scaling", action="store_true")

    p = sub.add_parser("transduce", parents=[common], help="transduction protocol and efficiency")
    p.add_argument("--config", required=True)
    p.add_argument("--scan", default=None, help="kappa=lo:hi:log:n, kappa/2pi in Hz")
    p.add_argument("--classes", type=int, default=101)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("synth", parents=[common], help="seeded synthetic echo traces")
    p.add_argument("kind", choices=("mims", "sd"))
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--T2e", type=float, default=1.6e-6)
    p.add_argument("--x", type=float, default=1.4)
    p.add_argument("--params", default=None)
    return ap


HANDLERS = {
    "spectrum": cmd_spectrum, "echo-sim": cmd_echo_sim, "fit-mims": cmd_fit_mims, "fit-t1e": cmd_fit_t1e,
    "fit-sd": cmd_fit_sd, "predict-t2": cmd_predict_t2, "transduce": cmd_transduce, "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    run = Run(args.command, args.out_dir, args.seed)
    try:
        status = HANDLERS[args.command](args, run)
        run.finish()
        return status
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc.args[0]}", file=sys.stderr)
        return 1
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
