"""Sweep and GPS log ingestion, time alignment, calibration and per-station series.

File formats (one header line, then one record per row):

* sweeps: ``timestamp,freq_start_hz,freq_step_hz,n_bins,p0,p1,...,p{n-1}``
  with powers in dBm and bin ``k`` centred at ``freq_start_hz + k*freq_step_hz``;
* GPS: ``timestamp,lat_deg,lon_deg,alt_m`` with altitude above the launch
  ground level.

Timestamps are ISO-8601 in UTC; a trailing ``Z`` or explicit offset is
accepted, naive values are read as UTC.
"""

from __future__ import annotations

import bisect
import csv
import dataclasses
import logging
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, ParseError
from .geodesy import GeoPoint, StationRecord, slant_distance

logger = logging.getLogger(__name__)

SWEEP_HEADER = ("timestamp", "freq_start_hz", "freq_step_hz", "n_bins")
GPS_HEADER = ("timestamp", "lat_deg", "lon_deg", "alt_m")

DEFAULT_MAX_GAP_S = 10.0
FM_HALF_CHANNEL_HZ = 100e3


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        return dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_timestamp(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def format_float(x: float) -> str:
    # shortest repr round-trips exactly, so synthetic files reload bit-identical
    return repr(float(x))


@dataclass(frozen=True, eq=False)
class SweepRecord:
    timestamp: datetime
    freq_start_hz: float
    freq_step_hz: float
    powers_dbm: np.ndarray

    def __post_init__(self):
        powers = np.array(self.powers_dbm, dtype=float)
        if powers.ndim != 1 or powers.size == 0:
            raise InvalidArgumentError("powers_dbm must be a non-empty vector")
        if not np.all(np.isfinite(powers)):
            raise InvalidArgumentError("powers_dbm must be finite")
        if not self.freq_step_hz > 0:
            raise InvalidArgumentError("freq_step_hz must be > 0")
        powers.setflags(write=False)
        object.__setattr__(self, "powers_dbm", powers)

    @property
    def n_bins(self) -> int:
        return self.powers_dbm.size

    @property
    def frequencies_hz(self) -> np.ndarray:
        return self.freq_start_hz + self.freq_step_hz * np.arange(self.n_bins)

    @property
    def freq_stop_hz(self) -> float:
        return self.freq_start_hz + self.freq_step_hz * (self.n_bins - 1)

    def same_grid(self, other: "SweepRecord") -> bool:
        return (
            self.n_bins == other.n_bins
            and self.freq_start_hz == other.freq_start_hz
            and self.freq_step_hz == other.freq_step_hz
        )

    def shifted(self, offset_db: float) -> "SweepRecord":
        return dataclasses.replace(self, powers_dbm=self.powers_dbm + offset_db)


@dataclass(frozen=True)
class ReceiverSample:
    timestamp: datetime
    position: GeoPoint


@dataclass(frozen=True)
class AlignedSweep:
    sweep: SweepRecord
    position: GeoPoint
    alignment_gap_s: float

    @property
    def altitude_m(self) -> float:
        return self.position.altitude_m


@dataclass(frozen=True)
class Alignment:
    """Sweeps joined to positions, plus how many sweeps were dropped."""

    aligned: tuple
    dropped: int

    def __iter__(self):
        return iter(self.aligned)

    def __len__(self):
        return len(self.aligned)

    def __getitem__(self, i):
        return self.aligned[i]


@dataclass(frozen=True, eq=False)
class StationSeries:
    """Power-vs-altitude samples for one station, one per aligned sweep."""

    station: StationRecord
    altitude_m: np.ndarray
    distance_m: np.ndarray
    power_dbm: np.ndarray
    site: Optional[str] = None
    pattern_offset_db: float = 0.0

    def __post_init__(self):
        arrays = [np.array(a, dtype=float) for a in (self.altitude_m, self.distance_m, self.power_dbm)]
        if len({a.shape for a in arrays}) != 1 or arrays[0].ndim != 1:
            raise InvalidArgumentError("series arrays must be 1-D and equally long")
        for name, a in zip(("altitude_m", "distance_m", "power_dbm"), arrays):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def __len__(self):
        return self.power_dbm.size

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.altitude_m.tolist(), self.distance_m.tolist(), self.power_dbm.tolist()))

    def subset(self, mask) -> "StationSeries":
        mask = np.asarray(mask)
        return dataclasses.replace(
            self,
            altitude_m=self.altitude_m[mask],
            distance_m=self.distance_m[mask],
            power_dbm=self.power_dbm[mask],
        )


# -- parsing ----------------------------------------------------------------


def _float_field(value, path, line, column):
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise ParseError(f"non-numeric value {value!r}", path, line, column) from None
    if not math.isfinite(x):
        raise ParseError(f"non-finite value {value!r}", path, line, column)
    return x


def _timestamp_field(value, path, line):
    try:
        return parse_timestamp(value)
    except (TypeError, ValueError):
        raise ParseError(f"bad ISO-8601 timestamp {value!r}", path, line, "timestamp") from None


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            yield lineno, [cell.strip() for cell in row]


def parse_sweeps(path) -> list[SweepRecord]:
    """Read a sweep CSV; records come back sorted by timestamp."""
    rows = _rows(path)
    try:
        lineno, header = next(rows)
    except StopIteration:
        raise ParseError("missing header", path, 1) from None
    if tuple(header[:4]) != SWEEP_HEADER:
        raise ParseError(f"header must start with {','.join(SWEEP_HEADER)}", path, lineno)
    power_cols = header[4:]
    if power_cols != [f"p{k}" for k in range(len(power_cols))]:
        raise ParseError("power columns must be p0,p1,... in order", path, lineno)

    records = []
    for lineno, row in rows:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", path, lineno)
        ts = _timestamp_field(row[0], path, lineno)
        start = _float_field(row[1], path, lineno, "freq_start_hz")
        step = _float_field(row[2], path, lineno, "freq_step_hz")
        if step <= 0:
            raise ParseError("freq_step_hz must be > 0", path, lineno, "freq_step_hz")
        try:
            n_bins = int(row[3])
        except ValueError:
            raise ParseError(f"non-integer n_bins {row[3]!r}", path, lineno, "n_bins") from None
        if n_bins != len(power_cols):
            raise ParseError(f"n_bins={n_bins} but {len(power_cols)} power columns", path, lineno, "n_bins")
        powers = [_float_field(v, path, lineno, power_cols[k]) for k, v in enumerate(row[4:])]
        records.append(SweepRecord(ts, start, step, np.array(powers)))
    records.sort(key=lambda r: r.timestamp)
    return records


def parse_gps(path) -> list[ReceiverSample]:
    """Read a GPS CSV; timestamps must be strictly increasing."""
    rows = _rows(path)
    try:
        lineno, header = next(rows)
    except StopIteration:
        raise ParseError("missing header", path, 1) from None
    if tuple(header) != GPS_HEADER:
        raise ParseError(f"header must be {','.join(GPS_HEADER)}", path, lineno)

    samples = []
    for lineno, row in rows:
        if len(row) != len(GPS_HEADER):
            raise ParseError(f"expected {len(GPS_HEADER)} fields, found {len(row)}", path, lineno)
        ts = _timestamp_field(row[0], path, lineno)
        lat, lon, alt = (_float_field(v, path, lineno, c) for v, c in zip(row[1:], GPS_HEADER[1:]))
        if samples and ts <= samples[-1].timestamp:
            raise ParseError(
                f"timestamp {row[0]} does not increase on the previous sample", path, lineno, "timestamp"
            )
        try:
            pos = GeoPoint(lat, lon, alt)
        except InvalidArgumentError as exc:
            raise ParseError(str(exc), path, lineno) from None
        samples.append(ReceiverSample(ts, pos))
    return samples


def write_sweeps(sweeps: Sequence[SweepRecord], path) -> None:
    n = sweeps[0].n_bins if sweeps else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(SWEEP_HEADER) + [f"p{k}" for k in range(n)])
        for s in sweeps:
            if s.n_bins != n:
                raise InvalidArgumentError("all sweeps in one file must share a bin count")
            w.writerow(
                [format_timestamp(s.timestamp), format_float(s.freq_start_hz),
                 format_float(s.freq_step_hz), s.n_bins]
                + [format_float(p) for p in s.powers_dbm]
            )


def write_gps(samples: Sequence[ReceiverSample], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GPS_HEADER)
        for s in samples:
            p = s.position
            w.writerow([format_timestamp(s.timestamp), format_float(p.latitude_deg),
                        format_float(p.longitude_deg), format_float(p.altitude_m)])


# -- alignment and calibration ----------------------------------------------


def align(sweeps: Sequence[SweepRecord], gps: Sequence[ReceiverSample],
          max_gap_s: float = DEFAULT_MAX_GAP_S) -> Alignment:
    """Pair each sweep with the GPS position linearly interpolated at its timestamp.

    The gap is the time to the nearer of the two bracketing fixes. Sweeps
    outside the GPS time span, or with a gap above ``max_gap_s``, are dropped.
    """
    times = [s.timestamp.timestamp() for s in gps]
    out = []
    dropped = 0
    for sw in sweeps:
        t = sw.timestamp.timestamp()
        i = bisect.bisect_left(times, t)
        if i < len(times) and times[i] == t:
            out.append(AlignedSweep(sw, gps[i].position, 0.0))
            continue
        if i == 0 or i == len(times):
            dropped += 1
            continue
        t0, t1 = times[i - 1], times[i]
        gap = min(t - t0, t1 - t)
        if gap > max_gap_s:
            dropped += 1
            continue
        w = (t - t0) / (t1 - t0)
        a, b = gps[i - 1].position, gps[i].position
        pos = GeoPoint(
            a.latitude_deg + w * (b.latitude_deg - a.latitude_deg),
            a.longitude_deg + w * (b.longitude_deg - a.longitude_deg),
            a.altitude_m + w * (b.altitude_m - a.altitude_m),
        )
        out.append(AlignedSweep(sw, pos, gap))
    if dropped:
        logger.info("alignment dropped %d of %d sweeps", dropped, len(sweeps))
    return Alignment(tuple(out), dropped)


def apply_calibration(sweeps: Iterable, offset_db: float) -> list:
    """Shift every power by ``offset_db``. Works on sweeps or aligned sweeps."""
    if not math.isfinite(offset_db):
        raise InvalidArgumentError("calibration offset must be finite")
    out = []
    for s in sweeps:
        if isinstance(s, AlignedSweep):
            out.append(dataclasses.replace(s, sweep=s.sweep.shifted(offset_db)))
        else:
            out.append(s.shifted(offset_db))
    return out


# -- per-station extraction --------------------------------------------------


def channel_bins(sweep: SweepRecord, frequency_hz: float, half_window_hz: float) -> np.ndarray:
    """Indices of the bins within ``frequency_hz +/- half_window_hz``."""
    tol = 1e-6 * sweep.freq_step_hz
    lo, hi = frequency_hz - half_window_hz, frequency_hz + half_window_hz
    if lo < sweep.freq_start_hz - tol or hi > sweep.freq_stop_hz + tol:
        raise InvalidArgumentError(
            f"channel {lo:.0f}-{hi:.0f} Hz is not inside the sweep grid "
            f"{sweep.freq_start_hz:.0f}-{sweep.freq_stop_hz:.0f} Hz"
        )
    f = sweep.frequencies_hz
    idx = np.flatnonzero(np.abs(f - frequency_hz) <= half_window_hz + tol)
    if idx.size == 0:
        raise InvalidArgumentError(f"no bin within {half_window_hz} Hz of {frequency_hz} Hz")
    return idx


def extract_station_series(aligned: Sequence[AlignedSweep], station: StationRecord,
                           site: Optional[str] = None,
                           half_window_hz: float = FM_HALF_CHANNEL_HZ) -> StationSeries:
    """Per sweep: the strongest bin in the station's channel, and the link geometry."""
    alts, dists, powers = [], [], []
    cache = {}
    for a in aligned:
        sw = a.sweep
        key = (sw.freq_start_hz, sw.freq_step_hz, sw.n_bins)
        if key not in cache:
            cache[key] = channel_bins(sw, station.frequency_hz, half_window_hz)
        powers.append(float(np.max(sw.powers_dbm[cache[key]])))
        dists.append(slant_distance(a.position, station, site))
        # GPS altitude may dip a little below the launch datum; the model needs h >= 0
        alts.append(max(a.position.altitude_m, 0.0))
    return StationSeries(
        station=station,
        altitude_m=np.array(alts),
        distance_m=np.array(dists),
        power_dbm=np.array(powers),
        site=site,
        pattern_offset_db=station.pattern_offset_at(site),
    )
