"""LoS/NLoS partitioning, per-bin spectrum statistics, carrier detection and
analytical-vs-measured calibration offsets."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, NotFoundError
from .geodesy import StationRecord
from .propagation import LinkGeometry, Model, PathLossParams, dbm_to_mw, mw_to_dbm, predicted_rx_power_dbm, wavelength
from .sweeps import AlignedSweep

STD_DDOF = 1


class ECDF:
    """Empirical CDF over a sample.

    ``quantile(p)`` is the smallest sample value whose CDF reaches ``p``, so
    the median is the ceil(n/2)-th order statistic.
    """

    def __init__(self, samples):
        x = np.sort(np.asarray(samples, dtype=float).ravel())
        if x.size == 0:
            raise InvalidArgumentError("ECDF needs at least one sample")
        x.setflags(write=False)
        self.samples = x

    def __len__(self):
        return self.samples.size

    def __call__(self, x):
        out = np.searchsorted(self.samples, x, side="right") / self.samples.size
        return float(out) if np.ndim(out) == 0 else out

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        if np.any((p < 0) | (p > 1)):
            raise InvalidArgumentError("quantile probability must be in [0, 1]")
        n = self.samples.size
        # the small slack keeps p = k/n from rounding up to the next order statistic
        idx = np.clip(np.ceil(p * n - 1e-9).astype(int) - 1, 0, n - 1)
        out = self.samples[idx]
        return float(out) if out.ndim == 0 else out

    @property
    def median(self) -> float:
        return self.quantile(0.5)


@dataclass(frozen=True, eq=False)
class BinStatistics:
    freq_hz: float
    mean_dbm: float
    std_db: float
    median_dbm: float
    ecdf: ECDF


@dataclass(frozen=True)
class OffsetReport:
    station: str
    site: str
    analytical_dbm: float
    measured_dbm: float
    offset_db: float
    dataset: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "station": self.station,
            "site": self.site,
            "dataset": self.dataset,
            "analytical_dbm": self.analytical_dbm,
            "measured_dbm": self.measured_dbm,
            "offset_db": self.offset_db,
        }


def partition_los_nlos(aligned: Iterable[AlignedSweep], h0_m: float):
    """Split sweeps at ``h0_m``; a sweep exactly at the threshold counts as LoS."""
    if not h0_m > 0:
        raise InvalidArgumentError("h0_m must be > 0")
    los, nlos = [], []
    for a in aligned:
        (los if a.position.altitude_m >= h0_m else nlos).append(a)
    return los, nlos


def _power_matrix(sweeps: Sequence) -> tuple[np.ndarray, np.ndarray]:
    recs = [getattr(s, "sweep", s) for s in sweeps]
    if not recs:
        raise InvalidArgumentError("bin statistics need at least one sweep")
    first = recs[0]
    for r in recs[1:]:
        if not r.same_grid(first):
            raise InvalidArgumentError("sweeps do not share a frequency grid")
    return first.frequencies_hz, np.vstack([r.powers_dbm for r in recs])


def bin_statistics(sweeps: Sequence, domain: str = "db", ddof: int = STD_DDOF) -> list[BinStatistics]:
    """Mean, standard deviation, median and ECDF of power in every bin.

    With ``domain="db"`` (default) mean and std are taken over the dBm
    values directly. With ``domain="linear"`` they are taken over milliwatts
    and both reported back in dBm. Order statistics do not depend on the
    domain. A single sweep has std 0.
    """
    freqs, p = _power_matrix(sweeps)
    n = p.shape[0]
    if domain == "db":
        mean = p.mean(axis=0)
        std = p.std(axis=0, ddof=ddof) if n > ddof else np.zeros(p.shape[1])
    elif domain == "linear":
        mw = dbm_to_mw(p)
        mean = mw_to_dbm(mw.mean(axis=0))
        with np.errstate(divide="ignore"):
            std = mw_to_dbm(mw.std(axis=0, ddof=ddof)) if n > ddof else np.full(p.shape[1], -np.inf)
    else:
        raise InvalidArgumentError(f"unknown domain {domain!r}")
    out = []
    for k in range(p.shape[1]):
        e = ECDF(p[:, k])
        out.append(BinStatistics(float(freqs[k]), float(mean[k]), float(std[k]), e.median, e))
    return out


def stats_arrays(stats: Sequence[BinStatistics]) -> dict[str, np.ndarray]:
    return {
        "freq_hz": np.array([s.freq_hz for s in stats]),
        "mean_dbm": np.array([s.mean_dbm for s in stats]),
        "std_db": np.array([s.std_db for s in stats]),
        "median_dbm": np.array([s.median_dbm for s in stats]),
        "p05_dbm": np.array([s.ecdf.quantile(0.05) for s in stats]),
        "p95_dbm": np.array([s.ecdf.quantile(0.95) for s in stats]),
    }


def detect_peaks(freqs_hz, powers_dbm, min_prominence_db: float = 15.0,
                 min_separation_hz: float = 200e3, floor_window_hz: float = 1e6):
    """Dominant carriers in a (mean) spectrum.

    A peak is a local maximum standing at least ``min_prominence_db`` above
    the median of the spectrum within ``floor_window_hz`` on either side.
    Peaks are taken strongest first; any peak closer than
    ``min_separation_hz`` to an already accepted one is discarded.

    Returns:
        list of ``(freq_hz, power_dbm)`` sorted by power, strongest first.
    """
    f = np.asarray(freqs_hz, dtype=float)
    p = np.asarray(powers_dbm, dtype=float)
    if f.shape != p.shape or p.ndim != 1 or p.size == 0:
        raise InvalidArgumentError("frequencies and powers must be non-empty, equal-length vectors")
    padded = np.concatenate(([-np.inf], p, [-np.inf]))
    # >= on the left, > on the right: a flat top yields one candidate
    is_max = (padded[1:-1] >= padded[:-2]) & (padded[1:-1] > padded[2:])
    candidates = []
    for i in np.flatnonzero(is_max):
        window = p[np.abs(f - f[i]) <= floor_window_hz]
        if p[i] - np.median(window) >= min_prominence_db:
            candidates.append(i)
    candidates.sort(key=lambda i: (-p[i], f[i]))
    accepted = []
    for i in candidates:
        if all(abs(f[i] - f[j]) >= min_separation_hz for j in accepted):
            accepted.append(i)
    return [(float(f[i]), float(p[i])) for i in accepted]


def calibration_offset(station: StationRecord, site: str, measured_dbm: float, *,
                       distance_m: Optional[float] = None,
                       params: Optional[PathLossParams] = None,
                       pattern_offset_db: Optional[float] = None,
                       dataset: Optional[str] = None) -> OffsetReport:
    """Offset between a measured LoS mean power and the free-space prediction.

    The tabulated station-to-site distance is used directly as the link
    distance unless ``distance_m`` is given.
    """
    if distance_m is None:
        distance_m = station.distances_m.get(site.strip().lower().replace(" ", ""))
        if distance_m is None:
            raise NotFoundError(f"{station.call_sign} has no distance for site {site!r}")
    geom = LinkGeometry(distance_m, 0.0, wavelength(station.frequency_hz))
    analytical = float(predicted_rx_power_dbm(station, geom, params or PathLossParams(),
                                              Model.FSPL, pattern_offset_db))
    return OffsetReport(station.call_sign, site, analytical, float(measured_dbm),
                        float(measured_dbm) - analytical, dataset)


def estimate_global_calibration(offsets: Sequence[OffsetReport], exclusions=()) -> float:
    """Mean offset over the reports not excluded.

    ``exclusions`` holds call signs, or ``(call_sign, site)`` pairs, of
    stations whose offset is distorted by their antenna pattern.
    """
    def excluded(r):
        for e in exclusions:
            if isinstance(e, str):
                if e.upper() == r.station.upper():
                    return True
            elif (e[0].upper(), e[1].lower()) == (r.station.upper(), r.site.lower()):
                return True
        return False

    kept = [r.offset_db for r in offsets if not excluded(r)]
    if not kept:
        raise InvalidArgumentError("no offsets left after exclusions")
    return math.fsum(kept) / len(kept)


def write_plot_csv(stats: Sequence[BinStatistics], path) -> None:
    """freq, mean, std, median, p05, p95 per bin, six significant digits."""
    cols = stats_arrays(stats)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["freq_hz", "mean_dbm", "std_db", "median_dbm", "p05_dbm", "p95_dbm"])
        for k in range(len(stats)):
            w.writerow([f"{cols[c][k]:.6g}" for c in cols])
