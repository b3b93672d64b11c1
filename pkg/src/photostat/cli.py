"""Command line: simulate, correlate, analyze, heterodyne and scaling.

Every subcommand writes plain CSV (one header line) plus a JSON run
manifest.  Exit codes: 0 success, 2 usage or configuration error, 3 data
error, 4 accuracy or band-separability error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .exceptions import ConfigError, PhotostatError

log = logging.getLogger("photostat")

SCENARIOS = ("mcwf", "chaotic", "coherent_mix", "fixture", "heterodyne")

# key -> (default, type); a default of None marks a required key
_COMMON = {
    "scenario": (None, str),
    "rabi": (None, float),
    "shots": (None, int),
    "seed": (None, int),
    "gamma_hz": (6e6, float),
    "detuning": (0.0, float),
    "shot_duration_ns": (400.0, float),
    "bin_ns": (1.0, float),
    "efficiency": (1.0, float),
    "dead_time_ns": (0.0, float),
}
_FIELD = {
    "n_emitters": (None, int),
    "mean_rate_per_ns": (0.1, float),
    "rate_per_emitter_per_ns": (0.0, float),
    "dt_ps": (0.0, float),
}
SCHEMA = {
    "mcwf": {},
    "chaotic": _FIELD,
    "coherent_mix": {**_FIELD, "coherent_fraction": (None, float)},
    "fixture": {**_FIELD, "delete_prob": (None, float), "tau_c_ns": (5.0, float)},
    "heterodyne": {**_FIELD, "omega_lo_mhz": (110.0, float), "i_lo": (1.0, float), "i_sc": (0.1, float)},
}


@dataclass
class RunManifest:
    """Provenance of one command: config hash, seed, version, files, timing."""

    command: str
    config_hash: str
    seed: int | None
    tool_version: str = __version__
    input_paths: list = field(default_factory=list)
    output_paths: list = field(default_factory=list)
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------- config

def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: not valid JSON/YAML ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return validate_config(raw)


def validate_config(raw: dict) -> dict:
    """Fill defaults and check a simulate config; errors name the offending keys."""
    scenario = raw.get("scenario")
    if scenario is None:
        raise ConfigError("missing required key: scenario")
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; choose one of {', '.join(SCENARIOS)}")
    schema = {**_COMMON, **SCHEMA[scenario]}
    unknown = sorted(set(raw) - set(schema))
    missing = sorted(k for k, (d, _) in schema.items() if d is None and k not in raw)
    if unknown or missing:
        parts = []
        if missing:
            parts.append("missing required key(s): " + ", ".join(missing))
        if unknown:
            parts.append("unknown key(s): " + ", ".join(unknown))
        raise ConfigError("; ".join(parts))
    cfg, bad = {}, []
    for key, (default, typ) in schema.items():
        value = raw.get(key, default)
        try:
            if typ is int and (isinstance(value, bool) or float(value) != int(value)):
                raise ValueError
            cfg[key] = typ(value)
        except (TypeError, ValueError):
            bad.append(key)
    if bad:
        raise ConfigError("invalid value for key(s): " + ", ".join(bad))
    return cfg


def _ps(ns) -> int:
    return int(round(float(ns) * 1000))


def _field_rate(cfg, extra_intensity=0.0):
    if cfg["rate_per_emitter_per_ns"] > 0:
        return cfg["rate_per_emitter_per_ns"] * (cfg["n_emitters"] + extra_intensity)
    return cfg["mean_rate_per_ns"]


def simulate_from_config(cfg: dict):
    """Run the simulator a validated config describes and return the stream."""
    from .heterodyne import HeterodyneConfig, beat_stream
    from .qsim.bloch import TwoLevelParams
    from .qsim.streams import chaotic_stream, mcwf_photon_stream, nongaussian_fixture

    p = TwoLevelParams(cfg["rabi"], cfg["gamma_hz"], cfg["detuning"])
    duration, bin_ps, dead = _ps(cfg["shot_duration_ns"]), _ps(cfg["bin_ns"]), _ps(cfg["dead_time_ns"])
    sc = cfg["scenario"]
    if sc == "mcwf":
        return mcwf_photon_stream(p, duration, cfg["shots"], cfg["seed"], cfg["efficiency"], dead, bin_ps)
    dt = cfg["dt_ps"] or None
    if sc == "heterodyne":
        c = HeterodyneConfig(cfg["omega_lo_mhz"] * 1e6, cfg["i_lo"], cfg["i_sc"])
        return beat_stream(p, cfg["n_emitters"], c, cfg["shots"], cfg["seed"], _field_rate(cfg), duration,
                           dt, cfg["efficiency"], bin_ps)
    amplitude = 0.0
    if sc == "coherent_mix":
        f = cfg["coherent_fraction"]
        if not 0 <= f < 1:
            raise ConfigError("coherent_fraction must lie in [0, 1)")
        amplitude = np.sqrt(f / (1 - f) * cfg["n_emitters"])
    s = chaotic_stream(p, cfg["n_emitters"], cfg["shots"], cfg["seed"], _field_rate(cfg, amplitude ** 2),
                       duration, dt, cfg["efficiency"], amplitude, dead, bin_ps)
    if sc == "fixture":
        s = nongaussian_fixture(s, cfg["delete_prob"], _ps(cfg["tau_c_ns"]), cfg["seed"])
    s.metadata["scenario"] = sc
    return s


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    from .tagstore import write_stream

    t0 = time.perf_counter()
    cfg = load_config(args.config)
    out = Path(args.out) if args.out else Path(args.config).with_suffix(".ptag")
    out.parent.mkdir(parents=True, exist_ok=True)
    stream = simulate_from_config(cfg)
    write_stream(stream, out)
    manifest_path = out.with_name(out.name + ".manifest.json")
    RunManifest("simulate", config_hash(cfg), cfg["seed"], input_paths=[str(args.config)],
                output_paths=[str(out)], wall_time=time.perf_counter() - t0, config=cfg).write(manifest_path)
    print(f"wrote {out} ({stream.n_tags} tags, {stream.shot_count} shots)")
    return 0


def _correlate_outputs(out: Path):
    return out / "g2_matrix.csv", out / "g2_tau.csv", out / "intensity.csv"


def cmd_correlate(args) -> int:
    from ._csv import write_columns
    from .correlator import G2Estimator
    from .tagstore import read_stream

    t0 = time.perf_counter()
    stream = read_stream(args.stream)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    matrix_path, tau_path, inten_path = _correlate_outputs(out)
    settings = {
        "bin_width_ps": _ps(args.bin_ns),
        "window_start_ps": None if args.window_start_ns is None else _ps(args.window_start_ns),
        "window_end_ps": None if args.window_end_ns is None else _ps(args.window_end_ns),
        "tau_max_ps": _ps(args.tau_max_ns),
        "n_bootstrap": args.bootstrap,
        "n_blocks": args.blocks,
        "random_state": args.seed,
    }
    outputs = [str(matrix_path), str(tau_path), str(inten_path)]
    if stream.n_tags == 0:
        log.warning("stream %s has no tags; writing empty outputs", args.stream)
        matrix_path.write_text("t1_ps\\t2_ps\n")
        write_columns(tau_path, ["tau_ps", "g2", "stderr"], [[], [], []])
        write_columns(inten_path, ["t_ps", "intensity"], [[], []])
    else:
        est = G2Estimator(n_workers=args.workers, **settings).fit(stream)
        from .correlator import write_g2_matrix

        write_g2_matrix(matrix_path, est.grid_)
        est.g2_.to_csv(tau_path)
        est.intensity_.to_csv(inten_path)
        if args.save_replicates and est.g2_.replicates is not None:
            rep_path = tau_path.with_name("g2_tau_replicates.npy")
            np.save(rep_path, est.g2_.replicates)
            outputs.append(str(rep_path))
        g0, g0e = est.g2_at_zero()
        print(f"g2(0) over |tau| <= 2 ns: {g0:.4f} +/- {g0e:.4f}")
    RunManifest("correlate", config_hash(settings), args.seed, input_paths=[str(args.stream)],
                output_paths=outputs, wall_time=time.perf_counter() - t0,
                config=settings).write(out / "correlate_manifest.json")
    return 0


def _load_g2(path):
    from .series import CoherenceSeries

    g2 = CoherenceSeries.from_csv(path, "g2", "g2")
    if not len(g2):
        raise ConfigError(f"{path}: no lags")
    rep_path = Path(path).with_name(Path(path).stem + "_replicates.npy")
    if rep_path.exists():
        reps = np.load(rep_path)
        if reps.ndim == 2 and reps.shape[1] == len(g2):
            g2.replicates = reps
    return g2


def _grid_step(tau_ps):
    steps = np.diff(np.asarray(tau_ps))
    return int(steps.min()) if len(steps) else None


def cmd_analyze(args) -> int:
    from .coherence import GaussianDecomposition, connected_correlation, oracle_g1_series, siegert_verdict
    from .qsim.bloch import TwoLevelParams
    from .series import CoherenceSeries

    t0 = time.perf_counter()
    g2 = _load_g2(args.g2_tau)
    if args.g1_csv:
        g1 = CoherenceSeries.from_csv(args.g1_csv, "g1", "g1")
        source = {"g1_csv": str(args.g1_csv)}
    else:
        p = TwoLevelParams(args.rabi, args.gamma_hz)
        g1 = oracle_g1_series(p, g2.tau_ps, _grid_step(g2.tau_ps))
        source = {"rabi": args.rabi, "gamma_hz": args.gamma_hz}
    d = GaussianDecomposition(g1, 0.0, args.mean_field_ratio)
    res = connected_correlation(g2, d, args.mean_field_threshold)
    verdict = siegert_verdict(g2, res.bound, _ps(args.half_width_ns), args.sigma)
    from .coherence import average_near_zero

    c0, c0e = average_near_zero(res.connected, _ps(args.half_width_ns))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res.siegert.to_csv(out / "siegert.csv", "siegert")
    res.to_csv(out / "connected.csv")
    summary = {
        "g2_zero": verdict.g2_zero, "g2_zero_stderr": verdict.g2_zero_stderr,
        "bound_zero": verdict.bound_zero, "bound_zero_stderr": verdict.bound_zero_stderr,
        "C_zero": c0, "C_zero_stderr": c0e,
        "n_sigma": verdict.n_sigma, "verdict": verdict.label,
        "half_width_ps": _ps(args.half_width_ns),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"g2(0) = {verdict.g2_zero:.4f} +/- {verdict.g2_zero_stderr:.4f}")
    print(f"C(0) = {c0:.4f} +/- {c0e:.4f}")
    print(f"1 + |g1(0)|^2 - g2(0) = {verdict.bound_zero:.4f} +/- {verdict.bound_zero_stderr:.4f} "
          f"({verdict.n_sigma:.1f} sigma): {verdict.label}")
    settings = {**source, "mean_field_ratio": args.mean_field_ratio,
                "mean_field_threshold": args.mean_field_threshold, "half_width_ns": args.half_width_ns}
    RunManifest("analyze", config_hash(settings), None, input_paths=[str(args.g2_tau)],
                output_paths=[str(out / n) for n in ("siegert.csv", "connected.csv", "summary.json")],
                wall_time=time.perf_counter() - t0, config=settings).write(out / "analyze_manifest.json")
    return 0


def cmd_heterodyne(args) -> int:
    from ._csv import write_columns
    from .heterodyne import HeterodyneConfig, demodulate_g1, g2_hd_model, spectrum_from_hd
    from .qsim.bloch import TwoLevelParams, bin_average, single_atom_g1, single_atom_g2
    from .series import CoherenceSeries, symmetric_lags

    t0 = time.perf_counter()
    c = HeterodyneConfig(args.lo_mhz * 1e6, args.i_lo, args.i_sc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.g2_hd:
        g2_hd = _load_g2(args.g2_hd)
        bin_width = _grid_step(g2_hd.tau_ps)
        inputs = [str(args.g2_hd)]
    else:
        if args.rabi is None:
            raise ConfigError("give --g2-hd or model parameters (--rabi)")
        p = TwoLevelParams(args.rabi, args.gamma_hz)
        tau = symmetric_lags(_ps(args.tau_max_ns), int(args.step_ps))
        t = p.to_gamma_units(tau)
        vals = g2_hd_model(np.real(single_atom_g1(p, t)), single_atom_g2(p, t), c, tau)
        g2_hd = CoherenceSeries(tau, vals, None, "g2")
        bin_width = None
        inputs = []
    g2_hd.to_csv(out / "g2_hd.csv", "g2_hd")
    g1 = demodulate_g1(g2_hd, c, args.cutoff_fraction, bin_width)
    g1.to_csv(out / "g1.csv", "g1_recovered")
    spec = spectrum_from_hd(g2_hd, c, window=None if args.window == "none" else args.window)
    spec.to_csv(out / "spectrum.csv")
    peaks = spec.peaks(args.peak_height) / (2 * np.pi * args.gamma_hz)
    print("spectral peaks (units of Gamma): " + ", ".join(f"{x:+.2f}" for x in peaks))
    settings = {"omega_lo_hz": c.omega_lo_hz, "i_lo": c.i_lo, "i_sc": c.i_sc,
                "cutoff_fraction": args.cutoff_fraction, "window": args.window}
    RunManifest("heterodyne", config_hash(settings), None, input_paths=inputs,
                output_paths=[str(out / n) for n in ("g2_hd.csv", "g1.csv", "spectrum.csv")],
                wall_time=time.perf_counter() - t0, config=settings).write(out / "heterodyne_manifest.json")
    return 0


def _scaling_points_from_manifests(paths):
    from .tagstore import read_stream

    n, inten = [], []
    for path in paths:
        m = json.loads(Path(path).read_text())
        cfg = m.get("config", {})
        if "n_emitters" not in cfg:
            raise ConfigError(f"{path}: manifest has no n_emitters")
        s = read_stream(m["output_paths"][0])
        if not s.shot_count:
            raise ConfigError(f"{path}: stream has no shots")
        rate = s.n_tags / (s.shot_count * s.shot_duration_ps * 1e-3) / cfg.get("efficiency", 1.0)
        n.append(cfg["n_emitters"])
        inten.append(rate)
    return np.array(n, float), np.array(inten, float)


def cmd_scaling(args) -> int:
    from ._csv import read_columns
    from .coherence import intensity_scaling_fit

    t0 = time.perf_counter()
    if args.manifests:
        n, inten = _scaling_points_from_manifests(args.manifests)
        inputs = list(args.manifests)
    elif args.csv:
        cols = read_columns(args.csv)
        if "N" not in cols or "intensity" not in cols:
            raise ConfigError(f"{args.csv}: need columns N and intensity")
        n, inten = cols["N"], cols["intensity"]
        inputs = [str(args.csv)]
    else:
        raise ConfigError("give an (N, intensity) CSV or --manifests")
    fit = intensity_scaling_fit(n, inten, args.n_sigma)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fit.to_csv(out / "scaling_residuals.csv")
    report = {"exponent": fit.exponent, "exponent_stderr": fit.exponent_stderr,
              "linear": fit.linear, "quadratic": fit.quadratic, "quadratic_stderr": fit.quadratic_stderr,
              "coherent_bound": fit.coherent_bound, "n_points": int(len(n))}
    (out / "scaling.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"exponent {fit.exponent:.3f} +/- {fit.exponent_stderr:.3f}; coherent bound {fit.coherent_bound:.3f}")
    RunManifest("scaling", config_hash({"n_sigma": args.n_sigma}), None, input_paths=inputs,
                output_paths=[str(out / "scaling_residuals.csv"), str(out / "scaling.json")],
                wall_time=time.perf_counter() - t0, config={"n_sigma": args.n_sigma}).write(
        out / "scaling_manifest.json")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="photostat", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a photon stream from a JSON/YAML config")
    s.add_argument("config")
    s.add_argument("-o", "--out", help="output .ptag path (default: config path with .ptag)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("correlate", help="steady-state g2 of a PTAG stream")
    s.add_argument("stream")
    s.add_argument("-o", "--out", default=".")
    s.add_argument("--bin-ns", type=float, default=1.0)
    s.add_argument("--window-start-ns", type=float)
    s.add_argument("--window-end-ns", type=float)
    s.add_argument("--tau-max-ns", type=float, default=50.0)
    s.add_argument("--bootstrap", type=int, default=200)
    s.add_argument("--blocks", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--save-replicates", action="store_true",
                   help="also write the bootstrap draws (g2_tau_replicates.npy)")
    s.set_defaults(func=cmd_correlate)

    s = sub.add_parser("analyze", help="Siegert test and connected correlation from g2_tau.csv")
    s.add_argument("g2_tau")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--rabi", type=float, help="use the single-atom g1 at this Rabi frequency (units of Gamma)")
    src.add_argument("--g1-csv", help="measured or demodulated g1 (tau_ps, g1[, stderr])")
    s.add_argument("--gamma-hz", type=float, default=6e6)
    s.add_argument("--mean-field-ratio", type=float, default=0.0)
    s.add_argument("--mean-field-threshold", type=float, default=0.05)
    s.add_argument("--half-width-ns", type=float, default=2.0)
    s.add_argument("--sigma", type=float, default=5.0, help="violation threshold in standard errors")
    s.add_argument("-o", "--out", default=".")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("heterodyne", help="demodulate g1 and the spectrum from a heterodyne g2")
    s.add_argument("--g2-hd", help="measured heterodyne g2 (g2_tau.csv from correlate)")
    s.add_argument("--rabi", type=float, help="model input: single-atom g1/g2 at this Rabi frequency")
    s.add_argument("--gamma-hz", type=float, default=6e6)
    s.add_argument("--tau-max-ns", type=float, default=150.0)
    s.add_argument("--step-ps", type=int, default=250)
    s.add_argument("--lo-mhz", type=float, default=110.0)
    s.add_argument("--i-lo", type=float, default=1.0)
    s.add_argument("--i-sc", type=float, default=0.1)
    s.add_argument("--cutoff-fraction", type=float, default=0.25)
    s.add_argument("--window", choices=("hann", "none"), default="hann")
    s.add_argument("--peak-height", type=float, default=0.05)
    s.add_argument("-o", "--out", default=".")
    s.set_defaults(func=cmd_heterodyne)

    s = sub.add_parser("scaling", help="intensity vs atom number: exponent and coherent bound")
    s.add_argument("csv", nargs="?", help="CSV with columns N, intensity")
    s.add_argument("--manifests", nargs="+", help="simulate manifests (N from config, intensity from stream)")
    s.add_argument("--n-sigma", type=float, default=2.0)
    s.add_argument("-o", "--out", default=".")
    s.set_defaults(func=cmd_scaling)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except PhotostatError as exc:
        print(f"photostat {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"photostat {args.command}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
