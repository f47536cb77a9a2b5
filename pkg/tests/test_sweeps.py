from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from altiprop.errors import InvalidArgumentError, ParseError
from altiprop.geodesy import GeoPoint, StationRecord
from altiprop.sweeps import (
    AlignedSweep,
    ReceiverSample,
    SweepRecord,
    align,
    apply_calibration,
    extract_station_series,
    parse_gps,
    parse_sweeps,
    write_gps,
    write_sweeps,
)

DATA = Path(__file__).with_name("data")
T0 = datetime(2023, 8, 18, 12, 0, 0, tzinfo=timezone.utc)


def sweep(t_s, powers, start=87e6, step=100e3):
    return SweepRecord(T0 + timedelta(seconds=t_s), start, step, np.asarray(powers, dtype=float))


def fix(t_s, alt, lat=35.0, lon=-78.0):
    return ReceiverSample(T0 + timedelta(seconds=t_s), GeoPoint(lat, lon, alt))


def header(n):
    return "timestamp,freq_start_hz,freq_step_hz,n_bins," + ",".join(f"p{k}" for k in range(n))


class TestParseSweeps:
    def test_golden_fixture(self):
        recs = parse_sweeps(DATA / "golden_sweeps.csv")
        assert len(recs) == 3
        assert all(r.n_bins == 211 for r in recs)
        assert recs[0].powers_dbm[11] == 40.93
        assert recs[0].frequencies_hz[11] == 88.1e6
        assert recs[-1].freq_stop_hz == 108e6
        assert [r.timestamp for r in recs] == sorted(r.timestamp for r in recs)

    def test_empty_data_section(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text(header(3) + "\n")
        assert parse_sweeps(p) == []

    def test_non_numeric_power_cites_line(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text(header(3) + "\n2023-08-18T12:00:00Z,87e6,1e5,3,1,2,3\n"
                     "2023-08-18T12:00:15Z,87e6,1e5,3,1,abc,3\n")
        with pytest.raises(ParseError, match="line 3") as err:
            parse_sweeps(p)
        assert err.value.line == 3 and err.value.column == "p1"

    def test_bin_count_mismatch(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text(header(3) + "\n2023-08-18T12:00:00Z,87e6,1e5,4,1,2,3\n")
        with pytest.raises(ParseError, match="n_bins"):
            parse_sweeps(p)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("time,start,step,n,p0\n")
        with pytest.raises(ParseError, match="header"):
            parse_sweeps(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            parse_sweeps(tmp_path / "nope.csv")

    def test_sorted_by_time(self, tmp_path):
        p = tmp_path / "s.csv"
        write_sweeps([sweep(30, [1.0, 2.0]), sweep(0, [3.0, 4.0])], p)
        recs = parse_sweeps(p)
        assert [r.powers_dbm[0] for r in recs] == [3.0, 1.0]

    def test_write_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        orig = [sweep(15 * k, rng.normal(-80, 10, 211)) for k in range(4)]
        p = tmp_path / "s.csv"
        write_sweeps(orig, p)
        back = parse_sweeps(p)
        for a, b in zip(orig, back):
            assert a.timestamp == b.timestamp
            assert np.array_equal(a.powers_dbm, b.powers_dbm)


class TestParseGps:
    def test_golden_profile(self):
        gps = parse_gps(DATA / "golden_gps.csv")
        alts = np.array([g.position.altitude_m for g in gps])
        assert len(gps) == 364
        assert alts[0] == 5.0
        assert alts.max() == 140.0
        assert alts.min() >= 0.0
        assert np.all(alts[: 2700 // 15] == 5.0)

    def test_monotone_order_kept(self, tmp_path):
        p = tmp_path / "g.csv"
        samples = [fix(k, float(k)) for k in range(5)]
        write_gps(samples, p)
        assert [s.position.altitude_m for s in parse_gps(p)] == [0.0, 1.0, 2.0, 3.0, 4.0]

    def test_out_of_order_names_first_inversion(self, tmp_path):
        p = tmp_path / "g.csv"
        p.write_text("timestamp,lat_deg,lon_deg,alt_m\n"
                     "2023-08-18T12:00:00Z,35,-78,5\n"
                     "2023-08-18T12:00:02Z,35,-78,5\n"
                     "2023-08-18T12:00:01Z,35,-78,5\n"
                     "2023-08-18T12:00:00Z,35,-78,5\n")
        with pytest.raises(ParseError, match="line 4"):
            parse_gps(p)

    def test_bad_latitude(self, tmp_path):
        p = tmp_path / "g.csv"
        p.write_text("timestamp,lat_deg,lon_deg,alt_m\n2023-08-18T12:00:00Z,95,-78,5\n")
        with pytest.raises(ParseError, match="line 2"):
            parse_gps(p)


class TestAlign:
    def test_exact_timestamp(self):
        gps = [fix(0, 10.0), fix(10, 20.0, lat=35.001)]
        (a,) = align([sweep(10, [0.0])], gps)
        assert a.position == gps[1].position and a.alignment_gap_s == 0.0

    def test_midpoint_interpolates(self):
        (a,) = align([sweep(5, [0.0])], [fix(0, 10.0), fix(10, 20.0)])
        assert a.position.altitude_m == pytest.approx(15.0)
        assert a.alignment_gap_s == pytest.approx(5.0)

    def test_outside_coverage_dropped(self):
        res = align([sweep(-5, [0.0]), sweep(100, [0.0])], [fix(0, 1.0), fix(10, 2.0)])
        assert len(res) == 0 and res.dropped == 2

    def test_gap_limit(self):
        gps = [fix(0, 1.0), fix(60, 2.0)]
        res = align([sweep(5, [0.0]), sweep(30, [0.0])], gps, max_gap_s=10.0)
        assert len(res) == 1 and res.dropped == 1

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 200), min_size=1, max_size=30), st.floats(0.5, 20))
    def test_gap_never_exceeds_limit(self, times, max_gap):
        gps = [fix(20.0 * k, float(k)) for k in range(11)]
        res = align([sweep(t, [0.0]) for t in sorted(times)], gps, max_gap)
        assert all(a.alignment_gap_s <= max_gap for a in res)
        assert len(res) + res.dropped == len(times)


class TestCalibration:
    def test_zero_offset_identity(self):
        s = sweep(0, [1.0, 2.0, 3.0])
        (out,) = apply_calibration([s], 0.0)
        assert np.array_equal(out.powers_dbm, s.powers_dbm)

    def test_shift(self):
        (out,) = apply_calibration([sweep(0, [74.93])], -34.0)
        assert out.powers_dbm[0] == pytest.approx(40.93, abs=1e-12)

    def test_aligned_sweeps_shift(self):
        a = AlignedSweep(sweep(0, [1.0]), GeoPoint(0, 0, 1.0), 0.0)
        (out,) = apply_calibration([a], 2.5)
        assert out.sweep.powers_dbm[0] == 3.5 and out.position == a.position

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-150, 50), min_size=1, max_size=20), st.floats(-60, 60))
    def test_inverse_and_rank(self, powers, x):
        s = sweep(0, powers)
        (up,) = apply_calibration([s], x)
        (back,) = apply_calibration([up], -x)
        assert np.allclose(back.powers_dbm, s.powers_dbm, rtol=0, atol=1e-12)
        # float addition is monotone, so order is preserved weakly (ties may merge)
        order = np.argsort(s.powers_dbm, kind="stable")
        assert np.all(np.diff(up.powers_dbm[order]) >= 0)

    def test_non_finite_offset(self):
        with pytest.raises(InvalidArgumentError):
            apply_calibration([], float("nan"))


class TestExtract:
    station = StationRecord("WTST", 88.1e6, 59.0, 25000.0, distances_m={"site": 358.0})

    def aligned(self, powers_list, alts):
        return [AlignedSweep(sweep(15 * k, p), GeoPoint(35, -78, h), 0.0)
                for k, (p, h) in enumerate(zip(powers_list, alts))]

    def test_single_bin_window(self):
        p = np.full(211, -90.0)
        p[11] = -20.0
        p[12] = -10.0
        s = extract_station_series(self.aligned([p], [59.0]), self.station, "site", half_window_hz=0.0)
        assert s.power_dbm.tolist() == [-20.0]
        assert s.distance_m.tolist() == [358.0]

    def test_window_max(self):
        p = np.full(211, -90.0)
        p[12] = -10.0
        s = extract_station_series(self.aligned([p], [5.0]), self.station, "site")
        assert s.power_dbm[0] == -10.0
        assert s.points[0] == (5.0, pytest.approx(np.hypot(358.0, 54.0)), -10.0)

    def test_window_straddling_edge(self):
        st_edge = StationRecord("WEDG", 87.05e6, 10.0, 1.0, distances_m={"site": 100.0})
        with pytest.raises(InvalidArgumentError):
            extract_station_series(self.aligned([np.zeros(211)], [1.0]), st_edge, "site")

    def test_outside_grid(self):
        st_out = StationRecord("WOUT", 120e6, 10.0, 1.0, distances_m={"site": 100.0})
        with pytest.raises(InvalidArgumentError):
            extract_station_series(self.aligned([np.zeros(211)], [1.0]), st_out, "site")

    def test_length_matches_aligned(self):
        al = self.aligned([np.zeros(211)] * 7, [float(h) for h in range(7)])
        assert len(extract_station_series(al, self.station, "site")) == 7
        assert len(extract_station_series([], self.station, "site")) == 0
