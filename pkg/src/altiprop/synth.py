"""Synthetic tethered-balloon flights and FM sweep datasets with a known truth.

Randomness comes from numpy's PCG64 bit generator seeded directly with the
64-bit scenario seed, drawn in a fixed order (documented on each function),
so a (scenario, seed) pair always reproduces the same files.
"""

from __future__ import annotations

import json
import math
import secrets
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .errors import InvalidArgumentError
from .geodesy import (
    GeoPoint,
    StationRecord,
    bundled_station_path,
    destination_point,
    load_stations,
    offset_point,
    save_stations,
    slant_distance,
    station_from_dict,
    station_to_dict,
)
from .propagation import LinkGeometry, Model, PathLossParams, predicted_rx_power_dbm, wavelength
from .sweeps import (
    FM_HALF_CHANNEL_HZ,
    ReceiverSample,
    SweepRecord,
    format_timestamp,
    parse_timestamp,
    write_gps,
    write_sweeps,
)

SEED_MASK = (1 << 64) - 1
DEFAULT_START = datetime(2023, 8, 18, 12, 0, 0, tzinfo=timezone.utc)
# NC State main campus, close enough for synthetic geometry
DEFAULT_LAUNCH = GeoPoint(35.7847, -78.6821, 0.0)
DEFAULT_BEARINGS_DEG = {"WKNC": 0.0, "WNCB": 225.0, "WQDR": 135.0, "WBBB": 180.0}


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & SEED_MASK))


@dataclass(frozen=True)
class FlightProfile:
    """Hold low, climb, hold at peak, descend. The defaults give 364 samples."""

    hold_low_alt_m: float = 5.0
    hold_low_duration_s: float = 2700.0
    peak_alt_m: float = 140.0
    ascent_rate_mps: float = 0.1125
    hold_peak_duration_s: float = 160.0
    descent_rate_mps: float = 0.1
    final_alt_m: float = 0.0
    sample_period_s: float = 15.0

    def __post_init__(self):
        if min(self.hold_low_alt_m, self.peak_alt_m, self.final_alt_m) < 0:
            raise InvalidArgumentError("altitudes must be >= 0")
        if self.peak_alt_m < max(self.hold_low_alt_m, self.final_alt_m):
            raise InvalidArgumentError("peak altitude must be the highest point of the flight")
        if not (self.ascent_rate_mps > 0 and self.descent_rate_mps > 0):
            raise InvalidArgumentError("climb and descent rates must be > 0")
        if not self.sample_period_s > 0:
            raise InvalidArgumentError("sample period must be > 0")
        if min(self.hold_low_duration_s, self.hold_peak_duration_s) < 0:
            raise InvalidArgumentError("hold durations must be >= 0")

    def breakpoints(self):
        """(time_s, altitude_m) corners of the piecewise-linear profile."""
        t1 = self.hold_low_duration_s
        t2 = t1 + (self.peak_alt_m - self.hold_low_alt_m) / self.ascent_rate_mps
        t3 = t2 + self.hold_peak_duration_s
        t4 = t3 + (self.peak_alt_m - self.final_alt_m) / self.descent_rate_mps
        return [(0.0, self.hold_low_alt_m), (t1, self.hold_low_alt_m), (t2, self.peak_alt_m),
                (t3, self.peak_alt_m), (t4, self.final_alt_m)]

    @property
    def duration_s(self) -> float:
        return self.breakpoints()[-1][0]

    @property
    def n_samples(self) -> int:
        return int(math.ceil(self.duration_s / self.sample_period_s - 1e-9))

    def sample_times(self) -> np.ndarray:
        return self.sample_period_s * np.arange(self.n_samples)

    def altitude(self, t):
        ts, hs = zip(*self.breakpoints())
        return np.interp(t, ts, hs)


@dataclass(frozen=True)
class NoiseModel:
    sigma_los_db: float = 1.5
    sigma_nlos_db: float = 4.0
    noise_floor_dbm: float = -90.0
    floor_sigma_db: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.sigma_nlos_db >= self.sigma_los_db >= 0:
            raise InvalidArgumentError("need sigma_nlos_db >= sigma_los_db >= 0")
        if self.floor_sigma_db < 0:
            raise InvalidArgumentError("floor_sigma_db must be >= 0")


@dataclass(frozen=True)
class DriftModel:
    """Horizontal wander around the launch point.

    Each of east/north is a stationary AR(1) process with standard deviation
    ``rayleigh_scale_m``, so the radial offset is Rayleigh distributed with
    that scale. ``correlation_time_s`` sets how slowly it wanders.
    """

    rayleigh_scale_m: float = 15.0
    correlation_time_s: float = 60.0
    seed: int = 0

    def __post_init__(self):
        if self.rayleigh_scale_m < 0:
            raise InvalidArgumentError("rayleigh_scale_m must be >= 0")
        if not self.correlation_time_s > 0:
            raise InvalidArgumentError("correlation_time_s must be > 0")


@dataclass(frozen=True)
class SweepGrid:
    freq_start_hz: float = 87e6
    freq_step_hz: float = 100e3
    n_bins: int = 211

    @property
    def freq_stop_hz(self) -> float:
        return self.freq_start_hz + self.freq_step_hz * (self.n_bins - 1)

    def nearest_bin(self, f_hz: float) -> int:
        return int(round((f_hz - self.freq_start_hz) / self.freq_step_hz))


@dataclass(frozen=True)
class StationTruth:
    model: Model = Model.BREAKPOINT
    params: PathLossParams = field(default_factory=PathLossParams)

    def to_dict(self) -> dict:
        return {"model": self.model.value, **asdict(self.params)}

    @classmethod
    def from_dict(cls, obj: Mapping) -> "StationTruth":
        keys = ("h0_m", "alpha", "g_tx_db", "g_rx_db")
        params = PathLossParams(**{k: float(obj[k]) for k in keys if k in obj})
        return cls(Model.parse(obj.get("model", "breakpoint")), params)


def gen_trajectory(profile: FlightProfile, drift: DriftModel, launch: GeoPoint = DEFAULT_LAUNCH,
                   start_time: datetime = DEFAULT_START) -> list[ReceiverSample]:
    """Sample the flight every ``sample_period_s``.

    Draw order: one ``(n, 2)`` standard-normal block, column 0 east and
    column 1 north; row 0 seeds the stationary state.
    """
    t = profile.sample_times()
    alt = profile.altitude(t)
    n = t.size
    z = _rng(drift.seed).standard_normal((n, 2))
    sigma = drift.rayleigh_scale_m
    rho = math.exp(-profile.sample_period_s / drift.correlation_time_s)
    innov = math.sqrt(1.0 - rho * rho)
    xy = np.empty((n, 2))
    if n:
        xy[0] = sigma * z[0]
    for k in range(1, n):
        xy[k] = rho * xy[k - 1] + innov * sigma * z[k]
    if sigma == 0:
        xy[:] = 0.0
    out = []
    for k in range(n):
        pos = offset_point(launch, float(xy[k, 0]), float(xy[k, 1]), float(alt[k]))
        out.append(ReceiverSample(start_time + timedelta(seconds=float(t[k])), pos))
    return out


@dataclass
class SynthBundle:
    sweeps: list
    gps: list
    stations: list
    manifest: dict

    def write(self, output_dir) -> dict[str, Path]:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "sweeps": out / "sweeps.csv",
            "gps": out / "gps.csv",
            "stations": out / "stations.json",
            "truth": out / "truth.json",
        }
        write_sweeps(self.sweeps, paths["sweeps"])
        write_gps(self.gps, paths["gps"])
        save_stations(self.stations, paths["stations"])
        paths["truth"].write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n",
                                  encoding="utf-8")
        return paths


def _check_grid(stations: Sequence[StationRecord], grid: SweepGrid, half_window_hz: float):
    used = {}
    for st in stations:
        lo, hi = st.frequency_hz - half_window_hz, st.frequency_hz + half_window_hz
        if lo < grid.freq_start_hz or hi > grid.freq_stop_hz:
            raise InvalidArgumentError(
                f"{st.call_sign} channel {lo:.0f}-{hi:.0f} Hz is outside the sweep grid"
            )
        for other, f in used.items():
            if abs(f - st.frequency_hz) < 2 * half_window_hz:
                raise InvalidArgumentError(f"{st.call_sign} and {other} channels overlap")
        used[st.call_sign] = st.frequency_hz


def synth_sweeps(trajectory: Sequence[ReceiverSample], stations: Sequence[StationRecord],
                 truths: Mapping[str, StationTruth], noise: NoiseModel = NoiseModel(),
                 grid: SweepGrid = SweepGrid(), *, site: Optional[str] = None,
                 receiver_bias_db: float = 0.0,
                 half_window_hz: float = FM_HALF_CHANNEL_HZ) -> SynthBundle:
    """One sweep per trajectory sample.

    Every bin gets ``noise_floor + N(0, floor_sigma)``; the bin nearest each
    station carries the model prediction plus ``N(0, sigma)`` shadowing,
    where sigma is the NLoS value below that station's threshold (break-point
    truth only) and the LoS value otherwise. ``receiver_bias_db`` is then
    added to every bin, standing in for an uncalibrated receiver.

    Draw order per sweep: ``n_bins`` floor normals, then one normal per
    station in the given order.
    """
    _check_grid(stations, grid, half_window_hz)
    missing = [s.call_sign for s in stations if s.call_sign not in truths]
    if missing:
        raise InvalidArgumentError(f"no truth given for {missing}")
    rng = _rng(noise.seed)
    bins = [grid.nearest_bin(s.frequency_hz) for s in stations]
    lams = [wavelength(s.frequency_hz) for s in stations]
    sweeps = []
    for smp in trajectory:
        h = max(smp.position.altitude_m, 0.0)
        powers = noise.noise_floor_dbm + noise.floor_sigma_db * rng.standard_normal(grid.n_bins)
        shadow = rng.standard_normal(len(stations))
        for k, st in enumerate(stations):
            truth = truths[st.call_sign]
            d = slant_distance(smp.position, st, site)
            p = predicted_rx_power_dbm(st, LinkGeometry(d, h, lams[k]), truth.params, truth.model,
                                       st.pattern_offset_at(site))
            nlos = truth.model is Model.BREAKPOINT and h < truth.params.h0_m
            sigma = noise.sigma_nlos_db if nlos else noise.sigma_los_db
            powers[bins[k]] = p + sigma * shadow[k]
        sweeps.append(SweepRecord(smp.timestamp, grid.freq_start_hz, grid.freq_step_hz,
                                  powers + receiver_bias_db))
    manifest = {
        "generator": f"altiprop.synth {__version__}",
        "prng": "numpy PCG64, seeded with the 64-bit seed directly",
        "site": site,
        "noise": asdict(noise),
        "grid": asdict(grid),
        "receiver_bias_db": receiver_bias_db,
        "n_sweeps": len(sweeps),
        "stations": {s.call_sign: {**station_to_dict(s), "truth": truths[s.call_sign].to_dict()}
                     for s in stations},
    }
    return SynthBundle(sweeps, list(trajectory), list(stations), manifest)


# -- scenarios ---------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    stations: tuple
    truths: Mapping[str, StationTruth]
    seed: int
    site: str = "packapalooza"
    launch: GeoPoint = DEFAULT_LAUNCH
    start_time: datetime = DEFAULT_START
    profile: FlightProfile = FlightProfile()
    drift_scale_m: float = 15.0
    drift_correlation_s: float = 60.0
    noise: NoiseModel = NoiseModel()
    grid: SweepGrid = SweepGrid()
    receiver_bias_db: float = 0.0
    seed_recorded: bool = True

    @property
    def drift(self) -> DriftModel:
        return DriftModel(self.drift_scale_m, self.drift_correlation_s, self.seed)

    @property
    def noise_model(self) -> NoiseModel:
        n = self.noise
        return NoiseModel(n.sigma_los_db, n.sigma_nlos_db, n.noise_floor_dbm, n.floor_sigma_db,
                          (self.seed + 1) & SEED_MASK)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "site": self.site,
            "launch": asdict(self.launch),
            "start_time": format_timestamp(self.start_time),
            "profile": asdict(self.profile),
            "drift": {"rayleigh_scale_m": self.drift_scale_m,
                      "correlation_time_s": self.drift_correlation_s},
            "noise": {k: v for k, v in asdict(self.noise).items() if k != "seed"},
            "grid": asdict(self.grid),
            "receiver_bias_db": self.receiver_bias_db,
            "stations": [{**station_to_dict(s), **self.truths[s.call_sign].to_dict()}
                         for s in self.stations],
        }


def place_stations(stations: Sequence[StationRecord], launch: GeoPoint, site: str,
                   bearings_deg: Optional[Mapping[str, float]] = None) -> list[StationRecord]:
    """Give coordinate-less stations a location at their tabulated distance from ``launch``."""
    bearings = dict(DEFAULT_BEARINGS_DEG)
    bearings.update(bearings_deg or {})
    out = []
    for st in stations:
        if st.location is None:
            d = st.horizontal_distance_to(launch, site)
            loc = destination_point(launch, bearings.get(st.call_sign, 0.0), d)
            st = StationRecord(st.call_sign, st.frequency_hz, st.tower_height_m, st.erp_w, loc,
                               st.pattern_offset_db, st.distances_m, st.site_pattern_offsets_db)
        out.append(st)
    return out


def scenario_from_dict(obj: Mapping) -> Scenario:
    """Build a scenario from its JSON form. A missing seed is drawn from the OS."""
    try:
        seed = obj.get("seed")
        recorded = seed is not None
        if seed is None:
            seed = secrets.randbits(64)
        site = str(obj.get("site", "packapalooza"))
        launch = GeoPoint(**obj["launch"]) if "launch" in obj else DEFAULT_LAUNCH
        start = parse_timestamp(obj["start_time"]) if "start_time" in obj else DEFAULT_START
        profile = FlightProfile(**obj.get("profile", {}))
        drift = obj.get("drift", {})
        noise = NoiseModel(**obj.get("noise", {}))
        grid_obj = dict(obj.get("grid", {}))
        if "n_bins" in grid_obj:
            grid_obj["n_bins"] = int(grid_obj["n_bins"])
        grid = SweepGrid(**grid_obj)
        raw = obj.get("stations")
        if raw is None:
            raise InvalidArgumentError("scenario lists no stations")
        bearings = {s["call_sign"]: float(s["bearing_deg"]) for s in raw if "bearing_deg" in s}
        stations = place_stations([station_from_dict(s) for s in raw], launch, site, bearings)
        truths = {s["call_sign"]: StationTruth.from_dict(s) for s in raw}
        return Scenario(tuple(stations), truths, int(seed), site, launch, start, profile,
                        float(drift.get("rayleigh_scale_m", 15.0)),
                        float(drift.get("correlation_time_s", 60.0)), noise, grid,
                        float(obj.get("receiver_bias_db", 0.0)), recorded)
    except (KeyError, TypeError) as exc:
        raise InvalidArgumentError(f"invalid scenario: {exc}") from None


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


def run_scenario(sc: Scenario) -> SynthBundle:
    traj = gen_trajectory(sc.profile, sc.drift, sc.launch, sc.start_time)
    bundle = synth_sweeps(traj, sc.stations, sc.truths, sc.noise_model, sc.grid, site=sc.site,
                          receiver_bias_db=sc.receiver_bias_db)
    bundle.manifest.update({
        "seed": sc.seed,
        "seed_drawn": not sc.seed_recorded,
        "scenario": sc.to_dict(),
        "drift": {**asdict(sc.drift), "family": "rayleigh (stand-in, not fitted to data)"},
    })
    return bundle


def table_stations(site: str = "packapalooza", launch: GeoPoint = DEFAULT_LAUNCH) -> list[StationRecord]:
    """The bundled FM stations, placed around ``launch`` at their tabulated distances."""
    return place_stations(list(load_stations(bundled_station_path()).values()), launch, site)


def uniform_scenario(alpha: float, h0_m: float, seed: int = 0, *, noise: NoiseModel = NoiseModel(),
                     site: str = "packapalooza", **kwargs) -> Scenario:
    """All four bundled stations sharing one break-point truth."""
    stations = table_stations(site)
    truth = StationTruth(Model.BREAKPOINT, PathLossParams(h0_m=h0_m, alpha=alpha))
    return Scenario(tuple(stations), {s.call_sign: truth for s in stations}, seed, site,
                    noise=noise, **kwargs)


def urban_scenario(seed: int = 0, **kwargs) -> Scenario:
    """Four stations, threshold 50 m, alpha 2.5 except 3 for WBBB."""
    stations = table_stations("packapalooza")
    alphas = {"WKNC": 2.5, "WNCB": 2.5, "WQDR": 2.5, "WBBB": 3.0}
    truths = {s.call_sign: StationTruth(Model.BREAKPOINT, PathLossParams(50.0, alphas[s.call_sign]))
              for s in stations}
    return Scenario(tuple(stations), truths, seed, "packapalooza", **kwargs)


def rural_scenario(seed: int = 0, **kwargs) -> Scenario:
    """WNCB and WBBB in free space from the ground; WQDR (80 m) and WKNC (120 m) break-point."""
    stations = table_stations("lakewheeler")
    truths = {
        "WNCB": StationTruth(Model.FSPL, PathLossParams()),
        "WBBB": StationTruth(Model.FSPL, PathLossParams()),
        "WQDR": StationTruth(Model.BREAKPOINT, PathLossParams(h0_m=80.0, alpha=6.0)),
        "WKNC": StationTruth(Model.BREAKPOINT, PathLossParams(h0_m=120.0, alpha=4.5)),
    }
    return Scenario(tuple(stations), truths, seed, "lakewheeler", **kwargs)
