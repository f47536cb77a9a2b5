"""Positions, FM station records and the distances that feed path loss.

Distances use a spherical earth. At the ranges of interest (tens of km at
most) the ellipsoidal correction is far below measurement noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, NotFoundError

EARTH_RADIUS_M = 6371008.8

FM_BAND_HZ = (87e6, 108e6)


def _normalize_longitude(lon):
    lon = math.fmod(lon + 180.0, 360.0)
    if lon < 0:
        lon += 360.0
    return lon - 180.0


@dataclass(frozen=True)
class GeoPoint:
    """A WGS84-style position with altitude above the launch ground level."""

    latitude_deg: float
    longitude_deg: float
    altitude_m: float = 0.0

    def __post_init__(self):
        lat = float(self.latitude_deg)
        lon = float(self.longitude_deg)
        alt = float(self.altitude_m)
        if not all(math.isfinite(v) for v in (lat, lon, alt)):
            raise InvalidArgumentError(f"non-finite coordinate in {(lat, lon, alt)}")
        if not -90.0 <= lat <= 90.0:
            raise InvalidArgumentError(f"latitude {lat} outside [-90, 90]")
        if alt < -500.0:
            raise InvalidArgumentError(f"altitude {alt} below -500 m")
        object.__setattr__(self, "latitude_deg", lat)
        object.__setattr__(self, "longitude_deg", _normalize_longitude(lon))
        object.__setattr__(self, "altitude_m", alt)

    def with_altitude(self, altitude_m: float) -> "GeoPoint":
        return GeoPoint(self.latitude_deg, self.longitude_deg, altitude_m)


@dataclass(frozen=True)
class StationRecord:
    """One FM transmitter.

    ``location`` may be omitted when the per-site horizontal distances are
    known instead (``distances_m``, keyed by lower-case site name).
    ``site_pattern_offsets_db`` overrides ``pattern_offset_db`` at named
    sites, for directional antennas whose gain toward a site is known to
    deviate from the nominal ERP.
    """

    call_sign: str
    frequency_hz: float
    tower_height_m: float
    erp_w: float
    location: Optional[GeoPoint] = None
    pattern_offset_db: float = 0.0
    distances_m: Mapping[str, float] = field(default_factory=dict)
    site_pattern_offsets_db: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.call_sign:
            raise InvalidArgumentError("call_sign must be non-empty")
        if not self.frequency_hz > 0:
            raise InvalidArgumentError(f"{self.call_sign}: frequency_hz must be > 0")
        if not self.erp_w > 0:
            raise InvalidArgumentError(f"{self.call_sign}: erp_w must be > 0")
        if not self.tower_height_m >= 0:
            raise InvalidArgumentError(f"{self.call_sign}: tower_height_m must be >= 0")
        if not math.isfinite(self.pattern_offset_db):
            raise InvalidArgumentError(f"{self.call_sign}: pattern_offset_db must be finite")
        dists = {_site_key(k): float(v) for k, v in dict(self.distances_m).items()}
        for site, d in dists.items():
            if not d >= 0:
                raise InvalidArgumentError(f"{self.call_sign}: distance to {site} must be >= 0")
        object.__setattr__(self, "distances_m", dists)
        offsets = {_site_key(k): float(v) for k, v in dict(self.site_pattern_offsets_db).items()}
        object.__setattr__(self, "site_pattern_offsets_db", offsets)

    def in_band(self, band_hz: tuple[float, float] = FM_BAND_HZ) -> bool:
        return band_hz[0] <= self.frequency_hz <= band_hz[1]

    def pattern_offset_at(self, site: Optional[str]) -> float:
        if site is not None and _site_key(site) in self.site_pattern_offsets_db:
            return self.site_pattern_offsets_db[_site_key(site)]
        return self.pattern_offset_db

    def horizontal_distance_to(self, rx: GeoPoint, site: Optional[str] = None) -> float:
        """Ground distance from the tower to ``rx``.

        Coordinates win when present; otherwise the tabulated distance for
        ``site`` is used and the receiver's own horizontal position ignored.
        """
        if self.location is not None:
            return horizontal_distance(rx, self.location)
        if site is None:
            raise InvalidArgumentError(
                f"{self.call_sign} has no coordinates; a site name is required"
            )
        try:
            return self.distances_m[_site_key(site)]
        except KeyError:
            known = ", ".join(sorted(self.distances_m)) or "none"
            raise NotFoundError(
                f"{self.call_sign} has no distance for site {site!r} (known: {known})"
            ) from None


def _site_key(site: str) -> str:
    return site.strip().lower().replace(" ", "")


def haversine_m(lat1, lon1, lat2, lon2, radius_m=EARTH_RADIUS_M):
    """Great-circle distance between points given in degrees. Broadcasts over arrays."""
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dphi = phi2 - phi1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2.0) ** 2
    return 2.0 * radius_m * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def horizontal_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters, ignoring altitude."""
    return float(haversine_m(a.latitude_deg, a.longitude_deg, b.latitude_deg, b.longitude_deg))


def slant_distance(rx: GeoPoint, station: StationRecord, site: Optional[str] = None) -> float:
    """3D distance from the top of the station's tower to the receiver."""
    horiz = station.horizontal_distance_to(rx, site)
    return math.hypot(horiz, station.tower_height_m - rx.altitude_m)


def launch_displacement(samples: Sequence, launch: GeoPoint) -> list[float]:
    """2D distance of every receiver sample from the launch point.

    ``samples`` holds objects with a ``position`` attribute (receiver
    samples) or bare GeoPoints.
    """
    if len(samples) == 0:
        return []
    pts = [getattr(s, "position", s) for s in samples]
    lat = np.array([p.latitude_deg for p in pts])
    lon = np.array([p.longitude_deg for p in pts])
    return haversine_m(launch.latitude_deg, launch.longitude_deg, lat, lon).tolist()


def offset_point(origin: GeoPoint, east_m: float, north_m: float, altitude_m: Optional[float] = None) -> GeoPoint:
    """Displace ``origin`` by a local east/north offset (small-offset approximation)."""
    lat = origin.latitude_deg + math.degrees(north_m / EARTH_RADIUS_M)
    coslat = math.cos(math.radians(origin.latitude_deg))
    lon = origin.longitude_deg + math.degrees(east_m / (EARTH_RADIUS_M * coslat))
    return GeoPoint(lat, lon, origin.altitude_m if altitude_m is None else altitude_m)


def destination_point(origin: GeoPoint, bearing_deg: float, distance_m: float) -> GeoPoint:
    """Point reached travelling ``distance_m`` along a great circle from ``origin``."""
    delta = distance_m / EARTH_RADIUS_M
    theta = math.radians(bearing_deg)
    phi1 = math.radians(origin.latitude_deg)
    lmb1 = math.radians(origin.longitude_deg)
    phi2 = math.asin(
        math.sin(phi1) * math.cos(delta) + math.cos(phi1) * math.sin(delta) * math.cos(theta)
    )
    lmb2 = lmb1 + math.atan2(
        math.sin(theta) * math.sin(delta) * math.cos(phi1),
        math.cos(delta) - math.sin(phi1) * math.sin(phi2),
    )
    return GeoPoint(math.degrees(phi2), math.degrees(lmb2), 0.0)


# -- station database -------------------------------------------------------


def station_from_dict(obj: Mapping) -> StationRecord:
    try:
        lat = obj.get("latitude_deg")
        lon = obj.get("longitude_deg")
        location = None if lat is None or lon is None else GeoPoint(lat, lon, 0.0)
        return StationRecord(
            call_sign=str(obj["call_sign"]),
            frequency_hz=float(obj["frequency_hz"]),
            tower_height_m=float(obj["tower_height_m"]),
            erp_w=float(obj["erp_w"]),
            location=location,
            pattern_offset_db=float(obj.get("pattern_offset_db", 0.0)),
            distances_m=obj.get("distances_m") or {},
            site_pattern_offsets_db=obj.get("pattern_offsets_db") or {},
        )
    except KeyError as exc:
        raise InvalidArgumentError(f"station record missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"bad station record {obj!r}: {exc}") from None


def station_to_dict(station: StationRecord) -> dict:
    out = {
        "call_sign": station.call_sign,
        "frequency_hz": station.frequency_hz,
        "tower_height_m": station.tower_height_m,
        "erp_w": station.erp_w,
        "latitude_deg": None if station.location is None else station.location.latitude_deg,
        "longitude_deg": None if station.location is None else station.location.longitude_deg,
        "pattern_offset_db": station.pattern_offset_db,
    }
    if station.distances_m:
        out["distances_m"] = dict(sorted(station.distances_m.items()))
    if station.site_pattern_offsets_db:
        out["pattern_offsets_db"] = dict(sorted(station.site_pattern_offsets_db.items()))
    return out


def load_stations(path) -> dict[str, StationRecord]:
    """Read a station database JSON array keyed by call sign."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise InvalidArgumentError(f"{path}: station database must be a JSON array")
    stations = {}
    for obj in data:
        st = station_from_dict(obj)
        if st.call_sign in stations:
            raise InvalidArgumentError(f"{path}: duplicate call sign {st.call_sign}")
        stations[st.call_sign] = st
    return stations


def save_stations(stations: Iterable[StationRecord], path) -> None:
    payload = [station_to_dict(s) for s in stations]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def bundled_station_path() -> Path:
    """Path of the shipped fixture with the four Raleigh FM stations."""
    return Path(__file__).with_name("data") / "fm_stations_raleigh.json"


def lookup_station(stations: Mapping[str, StationRecord], call_sign: str) -> StationRecord:
    key = call_sign.strip().upper()
    for name, st in stations.items():
        if name.upper() == key:
            return st
    raise NotFoundError(
        f"unknown station {call_sign!r}; available: {', '.join(sorted(stations))}"
    )
