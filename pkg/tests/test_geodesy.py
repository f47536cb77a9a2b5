import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from altiprop.errors import InvalidArgumentError, NotFoundError
from altiprop.geodesy import (
    EARTH_RADIUS_M,
    GeoPoint,
    StationRecord,
    destination_point,
    horizontal_distance,
    launch_displacement,
    load_stations,
    lookup_station,
    offset_point,
    save_stations,
    slant_distance,
)
from altiprop.sweeps import ReceiverSample
from altiprop.synth import DEFAULT_LAUNCH, DriftModel, FlightProfile, gen_trajectory


def chord_oracle(a, b):
    """Great-circle distance via the chord between unit vectors."""
    def unit(p):
        la, lo = math.radians(p.latitude_deg), math.radians(p.longitude_deg)
        return np.array([math.cos(la) * math.cos(lo), math.cos(la) * math.sin(lo), math.sin(la)])
    chord = np.linalg.norm(unit(a) - unit(b))
    return 2.0 * EARTH_RADIUS_M * math.asin(min(chord / 2.0, 1.0))


lats = st.floats(-89.0, 89.0)
lons = st.floats(-180.0, 179.999)
points = st.builds(GeoPoint, lats, lons, st.floats(0.0, 500.0))


def test_geopoint_normalizes_longitude():
    assert GeoPoint(10.0, 190.0).longitude_deg == pytest.approx(-170.0)
    assert GeoPoint(10.0, 180.0).longitude_deg == -180.0
    with pytest.raises(InvalidArgumentError):
        GeoPoint(91.0, 0.0)
    with pytest.raises(InvalidArgumentError):
        GeoPoint(0.0, 0.0, -600.0)


def test_identity_distance_is_zero():
    p = GeoPoint(35.78, -78.68, 12.0)
    assert horizontal_distance(p, p) == 0.0


def test_matches_chord_oracle_on_random_pairs():
    rng = np.random.default_rng(42)
    for _ in range(100):
        a = GeoPoint(rng.uniform(-80, 80), rng.uniform(-180, 180))
        b = GeoPoint(rng.uniform(-80, 80), rng.uniform(-180, 180))
        expected = chord_oracle(a, b)
        assert horizontal_distance(a, b) == pytest.approx(expected, rel=1e-6, abs=1e-6)


@settings(max_examples=200, deadline=None)
@given(points, points)
def test_symmetric(a, b):
    assert horizontal_distance(a, b) == pytest.approx(horizontal_distance(b, a), rel=1e-12, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(points, points, points)
def test_triangle_inequality(a, b, c):
    ab, bc, ac = horizontal_distance(a, b), horizontal_distance(b, c), horizontal_distance(a, c)
    assert ac <= (ab + bc) * (1 + 1e-6) + 1e-6


def _station(height, location=None, dist=None):
    return StationRecord("TEST", 90e6, height, 1000.0, location, distances_m={"here": dist} if dist else {})


def test_slant_distance_examples():
    rx = GeoPoint(35.0, -78.0, 59.0)
    assert slant_distance(rx, _station(59.0, dist=358.0), "here") == 358.0
    assert slant_distance(GeoPoint(35, -78, 0.0), _station(4.0, dist=3.0), "here") == pytest.approx(5.0)
    d = slant_distance(GeoPoint(35, -78, 100.0), _station(414.0, dist=15835.0), "here")
    assert d == pytest.approx(15838.113, abs=0.05)


@settings(max_examples=100, deadline=None)
@given(points, points, st.floats(0.0, 600.0))
def test_slant_not_shorter_than_horizontal(rx, tower, height):
    s = StationRecord("T", 90e6, height, 1.0, tower.with_altitude(0.0))
    assert slant_distance(rx, s) >= horizontal_distance(rx, tower) - 1e-9


def test_station_needs_site_or_coordinates():
    s = _station(10.0, dist=100.0)
    with pytest.raises(NotFoundError):
        s.horizontal_distance_to(GeoPoint(0, 0), "elsewhere")
    with pytest.raises(InvalidArgumentError):
        s.horizontal_distance_to(GeoPoint(0, 0))


def test_launch_displacement():
    launch = GeoPoint(35.7847, -78.6821)
    assert launch_displacement([], launch) == []
    at_launch = [ReceiverSample(None, launch.with_altitude(h)) for h in (5.0, 50.0)]
    assert launch_displacement(at_launch, launch) == [0.0, 0.0]
    east = offset_point(launch, 100.0, 0.0)
    (d,) = launch_displacement([ReceiverSample(None, east)], launch)
    assert d == pytest.approx(chord_oracle(launch, east), abs=1e-6)
    assert d == pytest.approx(100.0, abs=0.1)


def test_destination_point_round_trip():
    o = GeoPoint(35.7847, -78.6821)
    for bearing, dist in [(0, 358.0), (135, 17026.0), (225, 15835.0)]:
        assert horizontal_distance(o, destination_point(o, bearing, dist)) == pytest.approx(dist, rel=1e-9)


def test_drift_displacement_follows_rayleigh():
    scale = 15.0
    profile = FlightProfile(hold_low_duration_s=400_000.0)
    traj = gen_trajectory(profile, DriftModel(scale, 60.0, seed=11))
    r = np.array(launch_displacement(traj, DEFAULT_LAUNCH))
    # thinning to every 20th sample removes the AR(1) correlation (rho^20 < 0.01)
    thinned = r[::20]
    assert thinned.size > 1000
    p = sps.kstest(thinned, "rayleigh", args=(0.0, scale)).pvalue
    assert p > 0.01


def test_station_db_round_trip(tmp_path, stations):
    path = tmp_path / "db.json"
    save_stations(stations.values(), path)
    again = load_stations(path)
    assert again == stations
    raw = json.loads(path.read_text())
    assert set(raw[0]) >= {"call_sign", "frequency_hz", "tower_height_m", "erp_w",
                           "latitude_deg", "longitude_deg", "pattern_offset_db"}


def test_bundled_fixture_matches_station_table(stations):
    wknc = lookup_station(stations, "wknc")
    assert (wknc.frequency_hz, wknc.tower_height_m, wknc.erp_w) == (88.1e6, 59.0, 25000.0)
    assert wknc.distances_m == {"packapalooza": 358.0, "lakewheeler": 7121.0}
    assert wknc.pattern_offset_at("Lake Wheeler") == -4.0
    assert wknc.pattern_offset_at("packapalooza") == 0.0
    assert all(s.in_band() for s in stations.values())
    with pytest.raises(NotFoundError, match="WBBB"):
        lookup_station(stations, "KXYZ")
