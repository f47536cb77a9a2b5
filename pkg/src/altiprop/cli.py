"""Command-line entry point.

Subcommands: ``fspl``, ``fit``, ``stats``, ``synth``, ``report`` and
``rerun``. Exit codes: 0 success, 2 unknown station/site, 3 fit-quality
warning, 4 input error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .analysis import (
    bin_statistics,
    calibration_offset,
    detect_peaks,
    estimate_global_calibration,
    partition_los_nlos,
    stats_arrays,
    write_plot_csv,
    STD_DDOF,
)
from .errors import FitDegenerateError, InvalidArgumentError, NotFoundError, ParseError
from .fitting import H0_GRID_M, fit_joint, fit_station
from .geodesy import FM_BAND_HZ, bundled_station_path, load_stations, lookup_station
from .propagation import LinkGeometry, Model, PathLossParams, fspl_db, predicted_rx_power_dbm, wavelength
from .sweeps import (
    DEFAULT_MAX_GAP_S,
    FM_HALF_CHANNEL_HZ,
    align,
    apply_calibration,
    channel_bins,
    extract_station_series,
    parse_gps,
    parse_sweeps,
)
from .synth import load_scenario, run_scenario, rural_scenario, scenario_from_dict, urban_scenario

logger = logging.getLogger("altiprop")

EXIT_OK = 0
EXIT_NOT_FOUND = 2
EXIT_FIT_WARNING = 3
EXIT_INPUT = 4

# presets mimic an uncalibrated receiver reading 34 dB high
PRESET_BIAS_DB = 34.0
PRESETS = {"urban": urban_scenario, "rural": rural_scenario}


class InputError(Exception):
    """Bad configuration or unusable input files (exit code 4)."""


# -- configuration -------------------------------------------------------------


@dataclass
class RunConfig:
    station_db_path: Optional[str] = None
    sweep_path: Optional[str] = None
    gps_path: Optional[str] = None
    site_name: Optional[str] = None
    band_hz: tuple = FM_BAND_HZ
    calibration_db: float = 0.0
    h0_mode: str = "estimate"
    output_dir: Optional[str] = None
    seed: Optional[int] = None
    max_gap_s: float = DEFAULT_MAX_GAP_S
    half_window_hz: float = FM_HALF_CHANNEL_HZ
    intercept_free: bool = False
    refine: bool = False
    stats_h0_m: float = 50.0
    min_prominence_db: float = 15.0
    min_separation_hz: float = 200e3
    domain: str = "db"
    dataset: Optional[str] = None
    offset_exclusions: tuple = ()

    def validate(self):
        lo, hi = self.band_hz
        if not lo < hi:
            raise InputError(f"band lower edge {lo} must be below upper edge {hi}")
        self.h0_fixed  # parses h0_mode
        if self.domain not in ("db", "linear"):
            raise InputError(f"domain must be 'db' or 'linear', got {self.domain!r}")
        return self

    @property
    def h0_fixed(self) -> Optional[float]:
        mode = str(self.h0_mode).strip().lower()
        if mode == "estimate":
            return None
        if mode.startswith("fixed"):
            mode = mode[5:].lstrip(":=( ").rstrip(")")
        try:
            value = float(mode)
        except ValueError:
            raise InputError(f"h0_mode must be 'estimate' or 'fixed:<meters>', got {self.h0_mode!r}") from None
        if not value > 0:
            raise InputError("fixed h0 must be > 0")
        return value

    def resolve_paths(self, base: Path):
        for name in ("station_db_path", "sweep_path", "gps_path", "output_dir"):
            value = getattr(self, name)
            if value is not None:
                p = Path(value).expanduser()
                setattr(self, name, str((base / p).resolve() if not p.is_absolute() else p))
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["band_hz"] = list(self.band_hz)
        d["offset_exclusions"] = list(self.offset_exclusions)
        return d


_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


def _coerce(name: str, raw):
    ftype = {f.name: f for f in dataclasses.fields(RunConfig)}[name]
    default = ftype.default
    if raw is None:
        return None
    if name == "band_hz":
        parts = raw if isinstance(raw, (list, tuple)) else str(raw).replace(";", " ").replace(",", " ").split()
        if len(parts) != 2:
            raise InputError("band_hz needs two values: lower,upper")
        return tuple(float(p) for p in parts)
    if name == "offset_exclusions":
        parts = raw if isinstance(raw, (list, tuple)) else str(raw).split(",")
        return tuple(p.strip().upper() for p in parts if p.strip())
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        try:
            return _BOOL[str(raw).strip().lower()]
        except KeyError:
            raise InputError(f"{name}: expected a boolean, got {raw!r}") from None
    if isinstance(default, float):
        return float(raw)
    if name == "seed":
        return int(raw)
    return str(raw)


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    known = {f.name for f in dataclasses.fields(RunConfig)}
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise InputError(f"config line {lineno}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, value)
        except ValueError as exc:
            raise InputError(f"config line {lineno}: {exc}") from None
    return out


def build_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            values = parse_config_text(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc}") from None
        for k, v in values.items():
            setattr(cfg, k, v)
        cfg.resolve_paths(path.resolve().parent)
    overrides = {
        "station_db_path": args.stations, "sweep_path": args.sweeps, "gps_path": args.gps,
        "site_name": args.site, "calibration_db": args.calibration_db,
        "output_dir": args.output_dir, "seed": args.seed, "max_gap_s": args.max_gap_s,
        "dataset": getattr(args, "dataset", None),
    }
    if args.band is not None:
        overrides["band_hz"] = tuple(args.band)
    if getattr(args, "h0_fixed", None) is not None:
        overrides["h0_mode"] = f"fixed:{args.h0_fixed}"
    if getattr(args, "h0_estimate", False):
        overrides["h0_mode"] = "estimate"
    if getattr(args, "intercept_free", False):
        overrides["intercept_free"] = True
    if getattr(args, "refine", False):
        overrides["refine"] = True
    if getattr(args, "linear_domain", False):
        overrides["domain"] = "linear"
    if getattr(args, "stats_h0", None) is not None:
        overrides["stats_h0_m"] = args.stats_h0
    if getattr(args, "min_prominence_db", None) is not None:
        overrides["min_prominence_db"] = args.min_prominence_db
    if getattr(args, "exclude", None):
        overrides["offset_exclusions"] = tuple(s.upper() for s in args.exclude)
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    cfg.resolve_paths(Path.cwd())
    if cfg.station_db_path is None:
        cfg.station_db_path = str(bundled_station_path())
    return cfg.validate()


def config_from_dict(d: dict) -> RunConfig:
    cfg = RunConfig()
    for k, v in d.items():
        if hasattr(cfg, k):
            setattr(cfg, k, _coerce(k, v) if k in ("band_hz", "offset_exclusions") else v)
    return cfg.validate()


# -- output helpers -----------------------------------------------------------


def sig6(x):
    """Round floats (recursively) to six significant digits for stable files."""
    if isinstance(x, dict):
        return {k: sig6(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [sig6(v) for v in x]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if not math.isfinite(x) else float(f"{x:.6g}")
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def dump_json(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")


def file_digest(path) -> Optional[str]:
    if path is None or not Path(path).exists():
        return None
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_json(out: Path, command: str, config: dict, inputs: dict, extra: Optional[dict] = None):
    record = {
        "tool": "altiprop",
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": {k: {"path": v, "sha256": file_digest(v)} for k, v in inputs.items()},
        "created_utc": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
    }
    if extra:
        record.update(extra)
    dump_json(record, out / "run.json")


def _output_dir(cfg: RunConfig) -> Path:
    if cfg.output_dir is None:
        raise InputError("an output directory is required (--output-dir or output_dir)")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- ingestion shared by fit and stats ----------------------------------------------


@dataclass
class Ingested:
    stations: dict
    aligned: list
    dropped: int
    n_sweeps: int
    sweeps_raw: list = field(default_factory=list)


def ingest(cfg: RunConfig) -> Ingested:
    for name in ("sweep_path", "gps_path"):
        if getattr(cfg, name) is None:
            raise InputError(f"{name} is required")
    try:
        stations = load_stations(cfg.station_db_path)
        sweeps = parse_sweeps(cfg.sweep_path)
        gps = parse_gps(cfg.gps_path)
    except (OSError, ParseError, InvalidArgumentError) as exc:
        raise InputError(str(exc)) from None
    if not sweeps:
        raise InputError(f"{cfg.sweep_path}: no sweeps")
    if not gps:
        raise InputError(f"{cfg.gps_path}: no GPS samples")
    alignment = align(sweeps, gps, cfg.max_gap_s)
    if len(alignment) == 0:
        raise InputError(f"no sweep could be aligned to GPS ({alignment.dropped} dropped)")
    raw = list(alignment.aligned)
    calibrated = apply_calibration(raw, cfg.calibration_db)
    lo, hi = cfg.band_hz
    in_band = {k: s for k, s in stations.items() if lo <= s.frequency_hz <= hi}
    return Ingested(in_band, calibrated, alignment.dropped, len(sweeps), raw)


def _check_site(cfg: RunConfig, stations: dict):
    if cfg.site_name is None:
        if any(s.location is None for s in stations.values()):
            raise InputError("site_name is required for stations without coordinates")
        return
    for s in stations.values():
        if s.location is None:
            s.horizontal_distance_to(None, cfg.site_name)  # raises NotFoundError


# -- fspl ------------------------------------------------------------------------


def cmd_fspl(args) -> int:
    db = args.stations or str(bundled_station_path())
    try:
        stations = load_stations(db)
    except (OSError, InvalidArgumentError) as exc:
        raise InputError(str(exc)) from None
    st = lookup_station(stations, args.call_sign)
    if args.distance is not None:
        d = args.distance
    else:
        if args.site is None:
            raise InputError("--site or --distance is required")
        d = st.horizontal_distance_to(None, args.site) if st.location is None else None
        if d is None:
            raise InputError(f"{st.call_sign} has coordinates; pass --distance for a site")
    if args.rx_altitude is not None:
        d = math.hypot(d, st.tower_height_m - args.rx_altitude)
    freq = args.frequency if args.frequency is not None else st.frequency_hz
    params = PathLossParams(g_tx_db=args.g_tx, g_rx_db=args.g_rx)
    geom = LinkGeometry(d, 0.0, wavelength(freq))
    loss = float(fspl_db(geom, params))
    offset = st.pattern_offset_at(args.site) if args.apply_pattern_offset else st.pattern_offset_db
    station = dataclasses.replace(st, frequency_hz=freq)
    analytical = float(predicted_rx_power_dbm(station, geom, params, Model.FSPL, offset))
    loss_out = -loss if args.paper_convention else loss
    row = {
        "call_sign": st.call_sign,
        "site": args.site,
        "frequency_hz": freq,
        "distance_m": d,
        "fspl_db": round(loss_out, 2),
        "analytical_dbm": round(analytical, 2),
        "convention": "negated loss" if args.paper_convention else "positive loss",
    }
    if args.measured is not None:
        row["measured_dbm"] = args.measured
        row["offset_db"] = round(args.measured - analytical, 2)
    if args.json:
        print(json.dumps(row, sort_keys=True))
    else:
        cols = ["call_sign", "site", "fspl_db", "analytical_dbm"] + (
            ["measured_dbm", "offset_db"] if args.measured is not None else [])
        print("\t".join(cols))
        print("\t".join(f"{row[c]:.2f}" if isinstance(row[c], float) else str(row[c]) for c in cols))
    if args.output_dir:
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        dump_json(sig6(row), out / "fspl.json")
        write_run_json(out, "fspl", {k: v for k, v in vars(args).items() if k != "func"},
                       {"station_db": str(Path(db).resolve())})
    return EXIT_OK


# -- fit -------------------------------------------------------------------------


def run_fit(cfg: RunConfig) -> int:
    out = _output_dir(cfg)
    data = ingest(cfg)
    _check_site(cfg, data.stations)
    h0_fixed = cfg.h0_fixed
    report = {
        "tool_version": __version__,
        "site": cfg.site_name,
        "h0_mode": "estimate" if h0_fixed is None else f"fixed:{h0_fixed:g}",
        "h0_grid_m": list(H0_GRID_M),
        "calibration_db": cfg.calibration_db,
        "intercept_free": cfg.intercept_free,
        "n_sweeps": data.n_sweeps,
        "n_aligned": len(data.aligned),
        "n_dropped": data.dropped,
        "median_convention": "ceil(n/2)-th order statistic of |error|",
        "stations": {},
    }
    warn = False
    cdf_rows = []
    for name in sorted(data.stations):
        st = data.stations[name]
        try:
            channel_bins(data.aligned[0].sweep, st.frequency_hz, cfg.half_window_hz)
        except InvalidArgumentError as exc:
            logger.warning("skipping %s: %s", name, exc)
            continue
        series = extract_station_series(data.aligned, st, cfg.site_name, cfg.half_window_hz)
        try:
            sf = fit_station(series, h0_fixed, intercept_free=cfg.intercept_free)
        except FitDegenerateError as exc:
            logger.warning("%s: %s", name, exc)
            report["stations"][name] = {"call_sign": name, "error": str(exc)}
            warn = True
            continue
        entry = sf.to_dict()
        if cfg.refine and sf.breakpoint.n_points:
            mask = ["alpha"] + (["h0"] if h0_fixed is None else []) + (["offset"] if cfg.intercept_free else [])
            try:
                lm = fit_joint(series, sf.breakpoint.params, mask,
                               initial_offset_db=sf.breakpoint.offset_hat_db)
                entry["refined_fit"] = lm.to_dict()
                if not lm.converged:
                    warn = True
            except FitDegenerateError as exc:
                entry["refined_fit"] = {"error": str(exc)}
                warn = True
        if not sf.breakpoint.converged:
            warn = True
        report["stations"][name] = entry
        for model, cdf in (("breakpoint", sf.bp_errors), ("fspl", sf.fspl_errors)):
            for rank, (e, p) in enumerate(zip(cdf.errors_db, cdf.cdf), start=1):
                cdf_rows.append((name, model, rank, e, p))
    dump_json(sig6(report), out / "fit_report.json")
    with open(out / "error_cdf.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["station", "model", "rank", "abs_error_db", "cdf"])
        for name, model, rank, e, p in cdf_rows:
            w.writerow([name, model, rank, f"{e:.6g}", f"{p:.6g}"])
    write_run_json(out, "fit", cfg.to_dict(), _inputs(cfg))
    for name, entry in report["stations"].items():
        if "error" in entry:
            print(f"{name}: fit failed ({entry['error']})")
        else:
            bp = entry["breakpoint_fit"]
            print(f"{name}: {entry['model_selected']:<10} alpha={bp['alpha']:.4g} "
                  f"h0={bp['h0_m']:.4g} m  median|err| bp={entry['median_abs_error_db']['breakpoint']:.3g} "
                  f"fspl={entry['median_abs_error_db']['fspl']:.3g} dB")
    return EXIT_FIT_WARNING if warn else EXIT_OK


def _inputs(cfg: RunConfig) -> dict:
    return {"station_db": cfg.station_db_path, "sweeps": cfg.sweep_path, "gps": cfg.gps_path}


# -- stats -------------------------------------------------------------------------


def _bin_records(stats) -> list:
    cols = stats_arrays(stats)
    n = [len(s.ecdf) for s in stats]
    return [{"freq_hz": cols["freq_hz"][k], "mean_dbm": cols["mean_dbm"][k],
             "std_db": cols["std_db"][k], "median_dbm": cols["median_dbm"][k],
             "p05_dbm": cols["p05_dbm"][k], "p95_dbm": cols["p95_dbm"][k], "n": n[k]}
            for k in range(len(stats))]


def run_stats(cfg: RunConfig) -> int:
    out = _output_dir(cfg)
    data = ingest(cfg)
    h0 = cfg.h0_fixed if cfg.h0_fixed is not None else cfg.stats_h0_m
    los, nlos = partition_los_nlos(data.aligned, h0)
    los_raw, _ = partition_los_nlos(data.sweeps_raw, h0)
    warnings = []
    report = {
        "tool_version": __version__,
        "site": cfg.site_name,
        "h0_m": h0,
        "calibration_db": cfg.calibration_db,
        "domain": cfg.domain,
        "std_ddof": STD_DDOF,
        "n_aligned": len(data.aligned),
        "n_dropped": data.dropped,
        "n_los": len(los),
        "n_nlos": len(nlos),
        "los": [],
        "nlos": [],
        "peaks": [],
        "offsets": [],
    }
    for label, part in (("los", los), ("nlos", nlos)):
        if not part:
            msg = f"{label.upper()} partition is empty at h0={h0:g} m"
            logger.warning(msg)
            warnings.append(msg)
            continue
        stats = bin_statistics(part, cfg.domain)
        report[label] = _bin_records(stats)
        write_plot_csv(stats, out / f"{label}_plot.csv")
    ref = los if los else nlos
    ref_stats = bin_statistics(ref, cfg.domain)
    cols = stats_arrays(ref_stats)
    report["peaks_from"] = "los" if los else "nlos"
    report["peaks"] = [{"freq_hz": f, "mean_dbm": p} for f, p in detect_peaks(
        cols["freq_hz"], cols["mean_dbm"], cfg.min_prominence_db, cfg.min_separation_hz)]

    if los and cfg.site_name is not None:
        raw_cols = stats_arrays(bin_statistics(los_raw, cfg.domain))
        year = cfg.dataset or str(data.aligned[0].sweep.timestamp.year)
        offsets = []
        for name in sorted(data.stations):
            st = data.stations[name]
            if cfg.site_name.lower().replace(" ", "") not in st.distances_m:
                continue
            try:
                idx = channel_bins(los_raw[0].sweep, st.frequency_hz, cfg.half_window_hz)
            except InvalidArgumentError:
                continue
            measured = float(np.max(raw_cols["mean_dbm"][idx]))
            offsets.append(calibration_offset(st, cfg.site_name, measured, dataset=year))
        report["offsets"] = [o.to_dict() for o in offsets]
        try:
            report["global_calibration_db"] = estimate_global_calibration(offsets, cfg.offset_exclusions)
            report["offset_exclusions"] = list(cfg.offset_exclusions)
        except InvalidArgumentError as exc:
            warnings.append(str(exc))
    report["warnings"] = warnings
    dump_json(sig6(report), out / "stats.json")
    write_run_json(out, "stats", cfg.to_dict(), _inputs(cfg))
    print(f"aligned {len(data.aligned)} sweeps: {len(los)} LoS, {len(nlos)} NLoS (h0={h0:g} m)")
    for p in report["peaks"]:
        print(f"peak {p['freq_hz'] / 1e6:.1f} MHz  {p['mean_dbm']:.2f} dBm")
    return EXIT_OK


# -- synth -------------------------------------------------------------------------


def run_synth(scenario, output_dir: Path, source: str) -> int:
    bundle = run_scenario(scenario)
    paths = bundle.write(output_dir)
    cfg_lines = [
        "# fit/stats configuration for this synthetic bundle",
        "station_db_path = stations.json",
        "sweep_path = sweeps.csv",
        "gps_path = gps.csv",
        f"site_name = {scenario.site}",
        f"calibration_db = {0.0 - scenario.receiver_bias_db!r}",
    ]
    (Path(output_dir) / "run.cfg").write_text("\n".join(cfg_lines) + "\n", encoding="utf-8")
    write_run_json(Path(output_dir), "synth", {"scenario_source": source, "output_dir": str(Path(output_dir).resolve())},
                   {k: str(v.resolve()) for k, v in paths.items()},
                   {"scenario": scenario.to_dict()})
    print(f"wrote {len(bundle.sweeps)} sweeps (seed {scenario.seed}) to {output_dir}")
    return EXIT_OK


def cmd_synth(args) -> int:
    src = args.scenario
    try:
        if src in PRESETS:
            sc = PRESETS[src](seed=args.seed if args.seed is not None else 0,
                              receiver_bias_db=PRESET_BIAS_DB)
        else:
            sc = load_scenario(src)
            if args.seed is not None:
                sc = dataclasses.replace(sc, seed=args.seed, seed_recorded=True)
    except (OSError, ValueError, InvalidArgumentError) as exc:
        raise InputError(f"invalid scenario {src}: {exc}") from None
    try:
        return run_synth(sc, Path(args.output_dir), src)
    except InvalidArgumentError as exc:
        raise InputError(f"invalid scenario {src}: {exc}") from None


# -- report -------------------------------------------------------------------------


def cmd_report(args) -> int:
    try:
        fit = json.loads((Path(args.fit_dir) / "fit_report.json").read_text(encoding="utf-8"))
        stats = json.loads((Path(args.stats_dir) / "stats.json").read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from None
    summary = {
        "site": fit.get("site"),
        "stations": {
            name: {
                "model_selected": e.get("model_selected"),
                "alpha": e.get("breakpoint_fit", {}).get("alpha"),
                "h0_m": e.get("breakpoint_fit", {}).get("h0_m"),
                "median_abs_error_db": e.get("median_abs_error_db"),
                "error": e.get("error"),
            }
            for name, e in fit.get("stations", {}).items()
        },
        "los_nlos": {"h0_m": stats.get("h0_m"), "n_los": stats.get("n_los"), "n_nlos": stats.get("n_nlos")},
        "peaks_hz": [p["freq_hz"] for p in stats.get("peaks", [])],
        "offsets": stats.get("offsets", []),
        "global_calibration_db": stats.get("global_calibration_db"),
    }
    out = Path(args.output) if args.output else Path(args.fit_dir) / "summary.json"
    dump_json(summary, out)
    for name, s in summary["stations"].items():
        print(f"{name}: {s['model_selected']} alpha={s['alpha']} h0={s['h0_m']}")
    print(f"summary written to {out}")
    return EXIT_OK


# -- rerun ------------------------------------------------------------------------


def cmd_rerun(args) -> int:
    try:
        record = json.loads(Path(args.run_json).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read {args.run_json}: {exc}") from None
    command = record.get("command")
    for name, info in record.get("inputs", {}).items():
        if command != "synth" and info.get("sha256") and file_digest(info["path"]) != info["sha256"]:
            logger.warning("input %s (%s) changed since the recorded run", name, info["path"])
    if command == "synth":
        sc = scenario_from_dict(record["scenario"])
        out = Path(args.output_dir or record["config"]["output_dir"])
        return run_synth(sc, out, record["config"].get("scenario_source", "run.json"))
    if command in ("fit", "stats"):
        cfg = config_from_dict(record["config"])
        if args.output_dir:
            cfg.output_dir = str(Path(args.output_dir).resolve())
        return run_fit(cfg) if command == "fit" else run_stats(cfg)
    raise InputError(f"cannot rerun command {command!r}")


# -- argument parsing -------------------------------------------------------------


def _add_run_options(p, fit: bool):
    p.add_argument("-c", "--config", help="key = value configuration file")
    p.add_argument("--stations", help="station database JSON (default: bundled Raleigh stations)")
    p.add_argument("--sweeps", help="sweep CSV")
    p.add_argument("--gps", help="GPS CSV")
    p.add_argument("--site", help="site name for tabulated station distances")
    p.add_argument("--band", nargs=2, type=float, metavar=("LO_HZ", "HI_HZ"))
    p.add_argument("--calibration-db", type=float, help="dB added to every measured power")
    p.add_argument("-o", "--output-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-gap-s", type=float)
    p.add_argument("--h0-fixed", type=float, metavar="M", help="use a fixed LoS threshold")
    p.add_argument("--dataset", help="dataset label for the offset table (default: sweep year)")
    if fit:
        p.add_argument("--h0-estimate", action="store_true", help="estimate the threshold (default)")
        p.add_argument("--intercept-free", action="store_true", help="fit a constant dB offset too")
        p.add_argument("--refine", action="store_true", help="refine with Levenberg-Marquardt")
    else:
        p.add_argument("--stats-h0", type=float, help="LoS threshold for the partition (default 50 m)")
        p.add_argument("--linear-domain", action="store_true", help="mean/std over milliwatts")
        p.add_argument("--min-prominence-db", type=float)
        p.add_argument("--exclude", nargs="*", help="stations left out of the global calibration")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="altiprop", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"altiprop {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fspl", help="free-space received power for a station at a site")
    p.add_argument("call_sign")
    p.add_argument("--site")
    p.add_argument("--stations", help="station database JSON")
    p.add_argument("--frequency", type=float, help="override the station frequency (Hz)")
    p.add_argument("--distance", type=float, help="override the link distance (m)")
    p.add_argument("--rx-altitude", type=float, help="receiver height; uses the slant distance")
    p.add_argument("--g-tx", type=float, default=0.0)
    p.add_argument("--g-rx", type=float, default=0.0)
    p.add_argument("--measured", type=float, help="measured power (dBm) to compute an offset")
    p.add_argument("--paper-convention", action="store_true", help="print path loss as a negative number")
    p.add_argument("--apply-pattern-offset", action="store_true",
                   help="include the station's site-specific antenna pattern offset")
    p.add_argument("--json", action="store_true")
    p.add_argument("-o", "--output-dir")
    p.set_defaults(func=cmd_fspl)

    p = sub.add_parser("fit", help="fit the break-point model per station")
    _add_run_options(p, fit=True)
    p.set_defaults(func=lambda a: run_fit(build_config(a)))

    p = sub.add_parser("stats", help="LoS/NLoS spectrum statistics, peaks and offsets")
    _add_run_options(p, fit=False)
    p.set_defaults(func=lambda a: run_stats(build_config(a)))

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("scenario", help="scenario JSON, or a preset: " + ", ".join(PRESETS))
    p.add_argument("-o", "--output-dir", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="merge fit and stats outputs into one summary")
    p.add_argument("--fit-dir", required=True)
    p.add_argument("--stats-dir", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("rerun", help="repeat a recorded run from its run.json")
    p.add_argument("run_json")
    p.add_argument("-o", "--output-dir")
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except NotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_FOUND
    except (InputError, InvalidArgumentError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
