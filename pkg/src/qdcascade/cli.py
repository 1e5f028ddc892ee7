"""Command-line entry point: ``qdcascade run CONFIG [key=value ...]``.

The config is an INI file with a ``[run]`` section (experiment, seed, output),
an optional ``[params]`` section overriding the default emitter parameters, and
an optional section named after the experiment. Unknown sections or keys abort
before any computation. Exit codes: 0 success, 1 configuration error, 2
numerical or statistical failure.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import dynamics as dyn
from . import photon_statistics as ps
from . import pulse_sequences as pseq
from . import timebin as tb
from . import tomography as tomo
from .csvio import table_text
from .errors import (ConfigurationError, ConvergenceError, DomainError, InsufficientStatisticsError,
                     NumericalInstabilityError)
from .linalg import ghz_to_rad_per_ps, trace_distance

EXPERIMENTS = ("rabi", "ramsey", "echo", "g2", "efficiency", "timebin", "tomography")


def _float(s: str) -> float:
    v = float(s)
    if math.isnan(v):
        raise ValueError("NaN is not allowed")
    return v


def _int(s: str) -> int:
    return int(s)


def _floats(s: str) -> list:
    return [_float(x) for x in s.split(",") if x.strip()]


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _choice(*options):
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"expected one of {options}")
        return s
    return parse


_REQUIRED = object()

_RUN = {"experiment": (_choice(*EXPERIMENTS), _REQUIRED), "seed": (_int, 0), "output": (str, None)}

_PARAMS = {"tau_xx_ps": (_float, 405.0), "tau_x_ps": (_float, 771.0), "tau_dxx_ps": (_float, 211.0),
           "tau_dx_ps": (_float, 119.0), "delta_x_ghz": (_float, 335.0), "delta_xx_ghz": (_float, 0.0),
           "gamma_inc_ps": (_float, 0.0)}

_SEQUENCE = {"pulse_area_rad": (_float, None), "delays_ps": (_floats, [40.0, 80.0, 160.0, 240.0, 320.0, 400.0]),
             "n_phases": (_int, 8), "fwhm_ps": (_float, 4.0), "dt_ps": (_float, dyn.DEFAULT_DT),
             "noise_sigma_ghz": (_float, 0.0), "noise_samples": (_int, 1),
             "readout": (_choice(*pseq.READOUTS), "emission"), "channel": (_choice("xx", "x"), "xx")}

_SECTIONS = {
    "rabi": {"area_min_rad": (_float, 0.0), "area_max_rad": (_float, 30.0), "n_areas": (_int, 50),
             "detunings_ghz": (_floats, [0.0]), "fwhm_ps": (_float, 4.0), "dt_ps": (_float, dyn.DEFAULT_DT)},
    "ramsey": dict(_SEQUENCE),
    "echo": dict(_SEQUENCE, pi_area_rad=(_float, None)),
    "g2": {"mode": (_choice(*ps.MODES), "resonant"), "p_excite": (_float, 1.0), "p_recapture": (_float, 0.0),
           "blink_off_per_cycle": (_float, 0.0), "blink_on_per_cycle": (_float, 0.0),
           "detection_efficiency": (_float, 1.0), "n_cycles": (_int, 20000), "max_lag": (_int, 10),
           "channel": (_choice(*ps.CHANNEL_NAMES), "XX"), "pulse_area_rad": (_float, None),
           "fwhm_ps": (_float, 4.0), "period_ps": (_float, ps.DEFAULT_PERIOD), "write_clicks": (_bool, False)},
    "efficiency": {"powers": (_floats, [0.0, 0.5, 1.0, 2.0, 5.0, 10.0]), "p_sat": (_float, 1.0),
                   "p_recapture": (_float, 0.1), "n_cycles": (_int, 20000), "pulse_area_rad": (_float, None),
                   "fwhm_ps": (_float, 4.0)},
    "timebin": {"p_excite": (_float, 0.06), "coherence": (_float, 0.63), "phi_pump_rad": (_float, 0.0),
                "bin_separation_ps": (_float, 10000.0), "gate_window_ps": (_float, 2000.0),
                "phi_xx_rad": (_float, 0.0), "phi_x_rad": (_float, 0.0), "n_cycles": (_int, 10**6),
                "n_phases": (_int, 16)},
    "tomography": {"source": (_choice("timebin", "ideal"), "timebin"), "p_excite": (_float, 0.06),
                   "coherence": (_float, 0.63), "phi_pump_rad": (_float, 0.0),
                   "bin_separation_ps": (_float, 10000.0), "n_cycles": (_int, 10**6),
                   "n_per_setting": (_int, 10**5), "target_phase_rad": (_float, 0.0), "bootstrap": (_int, 100)},
}


def _parse_section(name: str, raw: dict, schema: dict) -> dict:
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigurationError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    out = {}
    for key, (parse, default) in schema.items():
        if key in raw:
            try:
                out[key] = parse(raw[key])
            except ValueError as exc:
                raise ConfigurationError(f"[{name}] {key} = {raw[key]!r}: {exc}") from None
        elif default is _REQUIRED:
            raise ConfigurationError(f"missing required key '{key}' in [{name}]")
        else:
            out[key] = default
    return out


def load_config(path, overrides=()) -> dict:
    """Parse and validate a config file plus ``key=value`` overrides."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse config {path}: {exc}") from None
    raw = {s: dict(cp.items(s)) for s in cp.sections()}
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not key=value")
        key, value = (x.strip() for x in item.split("=", 1))
        if key == "seed":
            section, key = "run", "seed"
        elif key == "out":
            section, key = "run", "output"
        elif "." in key:
            section, key = key.split(".", 1)
        else:
            raise ConfigurationError(f"override {item!r} needs section.key (or seed=, out=)")
        raw.setdefault(section, {})[key] = value
    if "run" not in raw:
        raise ConfigurationError("missing required section [run]")
    run = _parse_section("run", raw["run"], _RUN)
    exp = run["experiment"]
    allowed = {"run", "params", exp}
    extra = sorted(set(raw) - allowed)
    if extra:
        raise ConfigurationError(f"unknown section(s) for experiment {exp!r}: {', '.join(extra)}")
    cfg = {"run": run, "params": _parse_section("params", raw.get("params", {}), _PARAMS),
           exp: _parse_section(exp, raw.get(exp, {}), _SECTIONS[exp])}
    if not -(2**63) <= run["seed"] < 2**64:
        raise ConfigurationError("seed must fit in 64 bits")
    if run["output"] is None:
        run["output"] = f"{exp}.csv"
    return cfg


def system_params(p: dict) -> dyn.SystemParams:
    return dyn.SystemParams.from_lifetimes(p["tau_xx_ps"], p["tau_x_ps"], p["tau_dxx_ps"], p["tau_dx_ps"],
                                           p["delta_x_ghz"], p["delta_xx_ghz"], p["gamma_inc_ps"])


# Experiments: each returns ({suffix: text}, results) where suffix "" is the main CSV.

def _rabi(cfg, params, seed):
    c = cfg["rabi"]
    if c["n_areas"] < 1:
        raise ConfigurationError("n_areas must be >= 1")
    areas = np.linspace(c["area_min_rad"], c["area_max_rad"], c["n_areas"])
    det = [ghz_to_rad_per_ps(d) for d in c["detunings_ghz"]]
    pts = dyn.rabi_sweep(params, dyn.GaussianPulse(1.0, 0.0, c["fwhm_ps"]), areas, det, c["dt_ps"])
    # detuning column in rad/ps, like the sweep table itself
    rows = [(p.area, p.detuning, p.p_emit_xx, p.p_emit_x) for p in pts]
    return {"": table_text(["area", "detuning", "p_emit_xx", "p_emit_x"], rows)}, {}


def _sequence(cfg, params, seed, kind):
    c = cfg[kind]
    if c["n_phases"] < 4:
        raise ConfigurationError("n_phases must be >= 4")
    area, pi_area = c["pulse_area_rad"], c.get("pi_area_rad")
    if area is None:
        cal = pseq.calibrate_pulses(params, c["fwhm_ps"], c["dt_ps"])
        area = cal.half_pi
        if kind == "echo" and pi_area is None:
            pi_area = cal.pi
    noise = pseq.QuasiStaticNoise(ghz_to_rad_per_ps(c["noise_sigma_ghz"]), c["noise_samples"], seed)
    phases = pseq.fringe_phases(c["n_phases"])
    if kind == "ramsey":
        scans = pseq.ramsey_scans(params, area, c["delays_ps"], phases, noise, c["fwhm_ps"], c["readout"],
                                  c["dt_ps"])
    else:
        scans = pseq.echo_scans(params, area, c["delays_ps"], phases, noise, c["fwhm_ps"], c["readout"],
                                c["dt_ps"], pi_area)
    files = {"": table_text(["delay_ps", "phase_rad", "p_emit_xx", "p_emit_x"], pseq.scan_table(scans))}
    results = {"pulse_area_rad": area}
    if kind == "echo":
        results["pi_area_rad"] = pi_area
    if len(scans) >= 4:
        decay = pseq.visibility_decay(scans, c["channel"])
        rows, tau = pseq.fit_table(decay)
        files["_fit"] = table_text(["delay_ps", "visibility", "fit_error"], rows)
        results["tau_ps"] = tau
    return files, results


def _click_model(c, seed, mode=None, p_excite=None, p_recapture=None):
    return ps.EmitterStatModel(mode or c.get("mode", "resonant"),
                               c.get("p_excite", 1.0) if p_excite is None else p_excite,
                               c["p_recapture"] if p_recapture is None else p_recapture,
                               (c.get("blink_off_per_cycle", 0.0), c.get("blink_on_per_cycle", 0.0)),
                               c.get("detection_efficiency", 1.0), seed, c["pulse_area_rad"], c["fwhm_ps"],
                               c.get("period_ps", ps.DEFAULT_PERIOD))


def _g2(cfg, params, seed):
    c = cfg["g2"]
    stream = ps.simulate_clicks(params, _click_model(c, seed), c["n_cycles"])
    hist = ps.g2_pulsed(stream, c["channel"], c["max_lag"])
    files = {"": table_text(["lag", "counts"], zip(hist.lags, hist.counts)),
             "_g2": table_text(["g2_zero", "stat_error"], [(hist.g2_zero, hist.statistical_error)])}
    if c["write_clicks"]:
        files["_clicks"] = stream.to_csv()
    return files, {"g2_zero": hist.g2_zero, "statistical_error": hist.statistical_error,
                   "clicks": len(stream)}


def _efficiency(cfg, params, seed):
    c = cfg["efficiency"]
    resonant = _click_model(c, seed, mode="resonant", p_recapture=0.0)
    above = _click_model(c, seed + 1, mode="above_band", p_excite=1.0)
    rows = ps.efficiency_compare(params, resonant, above, c["powers"], c["n_cycles"], c["p_sat"])
    return {"": table_text(["power", "p_excite_above", "pair_above", "pair_resonant"], rows)}, {}


def _timebin(cfg, params, seed):
    c = cfg["timebin"]
    src = tb.TimeBinSource(c["p_excite"], c["coherence"], c["phi_pump_rad"], bin_separation=c["bin_separation_ps"],
                           seed=seed)
    an = tb.AnalyzerPair(c["phi_xx_rad"], c["phi_x_rad"], c["bin_separation_ps"], c["gate_window_ps"])
    rec = tb.simulate_coincidences(src, an, c["n_cycles"])
    phases = 2 * np.pi * np.arange(c["n_phases"]) / c["n_phases"]
    scan = tb.fringe_scan(src, an, phases, c["n_cycles"], stream=1)
    vis = tb.visibilities(src, an, c["n_cycles"], c["n_phases"])
    files = {"": rec.to_csv(), "_fringe": scan.to_csv(),
             "_visibilities": table_text(["basis", "visibility"], zip(("time", "energy1", "energy2"), vis)),
             "_state.txt": tb.effective_state(src).to_text()}
    return files, {"v_time": vis.time, "v_energy1": vis.energy1, "v_energy2": vis.energy2}


def _tomography(cfg, params, seed):
    c = cfg["tomography"]
    if c["source"] == "timebin":
        src = tb.TimeBinSource(c["p_excite"], c["coherence"], c["phi_pump_rad"],
                               bin_separation=c["bin_separation_ps"], seed=seed)
        counts = tb.tomography_counts(src, tb.AnalyzerPair(path_imbalance=c["bin_separation_ps"]), c["n_cycles"])
        truth = tb.effective_state(src)
    else:
        truth = tb.ideal_state(c["phi_pump_rad"], c["coherence"])
        counts = tomo.generate_counts(truth, n_per_setting=c["n_per_setting"], seed=seed)
    rho = tomo.mle_reconstruct(counts)
    if c["bootstrap"] >= 2:
        report = tomo.bootstrap_report(counts, c["target_phase_rad"], c["bootstrap"], seed)
    else:
        report = tomo.entanglement_report(rho, c["target_phase_rad"])
    files = {"": counts.to_csv(), "_report": report.to_csv(), "_state.txt": rho.to_text()}
    return files, {"concurrence": report.concurrence, "tangle": report.tangle, "fidelity": report.fidelity,
                   "trace_distance_to_model": trace_distance(rho.matrix, truth.matrix)}


_RUNNERS = {"rabi": _rabi, "ramsey": lambda c, p, s: _sequence(c, p, s, "ramsey"),
            "echo": lambda c, p, s: _sequence(c, p, s, "echo"), "g2": _g2, "efficiency": _efficiency,
            "timebin": _timebin, "tomography": _tomography}


def _output_paths(main: Path, suffixes):
    out = {}
    for s in suffixes:
        if s == "":
            out[s] = main
        elif "." in s:
            out[s] = main.with_name(main.stem + s)
        else:
            out[s] = main.with_name(main.stem + s + (main.suffix or ".csv"))
    return out


def _canonical(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def execute(cfg: dict) -> dict:
    """Run a parsed config, write its files and manifest; returns the manifest."""
    run = cfg["run"]
    params = system_params(cfg["params"])
    files, results = _RUNNERS[run["experiment"]](cfg, params, run["seed"])
    paths = _output_paths(Path(run["output"]), files)
    paths[""].parent.mkdir(parents=True, exist_ok=True)
    digests = {}
    for key, text in files.items():
        data = text.encode("utf-8")
        paths[key].write_bytes(data)
        digests[paths[key].name] = hashlib.sha256(data).hexdigest()
    hashed = {k: v for k, v in cfg.items()}
    hashed["run"] = {k: v for k, v in run.items() if k != "output"}
    manifest = {"tool": "qdcascade", "version": __version__, "experiment": run["experiment"],
                "seed": run["seed"], "config_sha256": hashlib.sha256(_canonical(hashed).encode()).hexdigest(),
                "config": hashed, "outputs": digests,
                "results": {k: (None if v is None else float(v) if isinstance(v, (float, np.floating)) else v)
                            for k, v in results.items()}}
    mpath = paths[""].with_name(paths[""].stem + ".manifest.json")
    mpath.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8", newline="\n")
    return manifest


def run(config_path, overrides=()) -> int:
    """Execute one experiment; returns the process exit code."""
    try:
        cfg = load_config(config_path, overrides)
    except (ConfigurationError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        execute(cfg)
    except (ConfigurationError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (NumericalInstabilityError, InsufficientStatisticsError, ConvergenceError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qdcascade", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qdcascade {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the experiment described by a config file")
    p_run.add_argument("config", help="INI config path")
    p_run.add_argument("overrides", nargs="*", help="seed=N, out=PATH or section.key=value")
    args = parser.parse_args(argv)
    return run(args.config, args.overrides)


if __name__ == "__main__":
    sys.exit(main())
