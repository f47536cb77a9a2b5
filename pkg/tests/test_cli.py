import json

import pytest

from altiprop.cli import InputError, RunConfig, build_config, build_parser, main, parse_config_text
from altiprop.synth import urban_scenario
from reference_values import CARRIER_FREQS_HZ, LINK_BUDGET_ROWS


def fspl_json(capsys, *argv):
    assert main(["fspl", *argv, "--json"]) == 0
    return json.loads(capsys.readouterr().out)


@pytest.fixture(scope="module")
def urban_bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("urban")
    assert main(["synth", "urban", "-o", str(out), "--seed", "7"]) == 0
    return out


def write_scenario(path, **changes):
    obj = urban_scenario(seed=1).to_dict()
    for k, v in changes.items():
        obj[k] = v
    path.write_text(json.dumps(obj))
    return path


class TestFspl:
    @pytest.mark.parametrize("row", LINK_BUDGET_ROWS, ids=lambda r: f"{r[0]}-{r[1]}")
    def test_table_rows(self, capsys, row):
        call, site, fspl, analytical = row[:4]
        out = fspl_json(capsys, call, "--site", site, "--paper-convention")
        assert out["fspl_db"] == pytest.approx(fspl, abs=0.1)
        assert out["analytical_dbm"] == pytest.approx(analytical, abs=0.1)

    def test_wqdr_lake_wheeler(self, capsys):
        assert fspl_json(capsys, "WQDR", "--site", "lakewheeler", "--paper-convention")["fspl_db"] == pytest.approx(-95.83, abs=0.1)

    def test_positive_convention_and_offset(self, capsys):
        out = fspl_json(capsys, "WKNC", "--site", "packapalooza", "--measured", "40.93")
        assert out["fspl_db"] == pytest.approx(62.42, abs=0.01)
        assert out["offset_db"] == pytest.approx(29.37, abs=0.02)

    def test_pattern_offset_flag(self, capsys):
        base = fspl_json(capsys, "WKNC", "--site", "lakewheeler")
        adj = fspl_json(capsys, "WKNC", "--site", "lakewheeler", "--apply-pattern-offset")
        assert adj["analytical_dbm"] - base["analytical_dbm"] == pytest.approx(-4.0, abs=0.011)

    def test_table_output(self, capsys):
        assert main(["fspl", "WNCB", "--site", "packapalooza", "--paper-convention"]) == 0
        header, row = capsys.readouterr().out.strip().splitlines()
        assert header.split("\t") == ["call_sign", "site", "fspl_db", "analytical_dbm"]
        assert row.split("\t")[2] == "-95.89"

    def test_unknown_station(self, capsys):
        assert main(["fspl", "KXYZ", "--site", "packapalooza"]) == 2
        err = capsys.readouterr().err
        for call in ("WKNC", "WNCB", "WQDR", "WBBB"):
            assert call in err

    def test_unknown_site(self, capsys):
        assert main(["fspl", "WKNC", "--site", "nowhere"]) == 2


class TestSynth:
    def test_same_invocation_identical(self, tmp_path):
        for d in ("a", "b"):
            assert main(["synth", "rural", "-o", str(tmp_path / d), "--seed", "3"]) == 0
        for name in ("sweeps.csv", "gps.csv", "stations.json", "truth.json", "run.cfg"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_missing_seed_recorded(self, tmp_path):
        obj = urban_scenario().to_dict()
        del obj["seed"]
        src = tmp_path / "sc.json"
        src.write_text(json.dumps(obj))
        assert main(["synth", str(src), "-o", str(tmp_path / "out")]) == 0
        truth = json.loads((tmp_path / "out" / "truth.json").read_text())
        assert truth["seed_drawn"] is True and isinstance(truth["seed"], int)
        run = json.loads((tmp_path / "out" / "run.json").read_text())
        assert run["scenario"]["seed"] == truth["seed"]

    def test_station_outside_grid(self, tmp_path):
        obj = urban_scenario().to_dict()
        obj["stations"][0]["frequency_hz"] = 120e6
        src = tmp_path / "sc.json"
        src.write_text(json.dumps(obj))
        assert main(["synth", str(src), "-o", str(tmp_path / "out")]) == 4

    def test_invalid_scenario(self, tmp_path):
        src = tmp_path / "sc.json"
        src.write_text("{not json")
        assert main(["synth", str(src), "-o", str(tmp_path / "out")]) == 4
        assert main(["synth", str(tmp_path / "missing.json"), "-o", str(tmp_path / "out")]) == 4


class TestFit:
    def test_report_matches_truth(self, urban_bundle, tmp_path):
        out = tmp_path / "fit"
        assert main(["fit", "-c", str(urban_bundle / "run.cfg"), "-o", str(out)]) == 0
        rep = json.loads((out / "fit_report.json").read_text())
        truth = json.loads((urban_bundle / "truth.json").read_text())
        for call, entry in rep["stations"].items():
            t = truth["stations"][call]["truth"]
            assert abs(entry["breakpoint_fit"]["h0_m"] - t["h0_m"]) <= 5.0
            assert entry["breakpoint_fit"]["alpha"] == pytest.approx(t["alpha"], rel=0.1)
        lines = (out / "error_cdf.csv").read_text().splitlines()
        assert lines[0] == "station,model,rank,abs_error_db,cdf"
        assert len(lines) == 1 + 4 * 2 * 364
        run = json.loads((out / "run.json").read_text())
        assert run["command"] == "fit" and len(run["inputs"]["sweeps"]["sha256"]) == 64

    def test_fixed_threshold_matches_estimate(self, urban_bundle, tmp_path):
        assert main(["fit", "-c", str(urban_bundle / "run.cfg"), "-o", str(tmp_path / "e")]) == 0
        assert main(["fit", "-c", str(urban_bundle / "run.cfg"), "-o", str(tmp_path / "f"), "--h0-fixed", "50"]) == 0
        est = json.loads((tmp_path / "e" / "fit_report.json").read_text())["stations"]
        fix = json.loads((tmp_path / "f" / "fit_report.json").read_text())["stations"]
        for call in est:
            if est[call]["breakpoint_fit"]["h0_m"] == 50.0:
                assert fix[call]["breakpoint_fit"]["alpha"] == est[call]["breakpoint_fit"]["alpha"]

    def test_refine(self, urban_bundle, tmp_path):
        code = main(["fit", "-c", str(urban_bundle / "run.cfg"), "-o", str(tmp_path), "--refine"])
        assert code in (0, 3)
        rep = json.loads((tmp_path / "fit_report.json").read_text())
        assert all("refined_fit" in e for e in rep["stations"].values())

    def test_empty_sweep_file(self, urban_bundle, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text((urban_bundle / "sweeps.csv").read_text().splitlines()[0] + "\n")
        code = main(["fit", "-c", str(urban_bundle / "run.cfg"), "--sweeps", str(empty), "-o", str(tmp_path / "o")])
        assert code == 4

    def test_malformed_sweep_file(self, urban_bundle, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        lines = (urban_bundle / "sweeps.csv").read_text().splitlines()
        lines[2] = lines[2].replace(",", ",x", 5)
        bad.write_text("\n".join(lines) + "\n")
        code = main(["fit", "-c", str(urban_bundle / "run.cfg"), "--sweeps", str(bad), "-o", str(tmp_path / "o")])
        assert code == 4
        assert "line 3" in capsys.readouterr().err


class TestStats:
    def test_peaks_and_counts(self, urban_bundle, tmp_path):
        assert main(["stats", "-c", str(urban_bundle / "run.cfg"), "-o", str(tmp_path), "--exclude", "WKNC"]) == 0
        rep = json.loads((tmp_path / "stats.json").read_text())
        assert sorted(p["freq_hz"] for p in rep["peaks"]) == pytest.approx(list(CARRIER_FREQS_HZ))
        assert rep["n_los"] + rep["n_nlos"] == rep["n_aligned"] == 364
        assert rep["warnings"] == []
        assert abs(rep["global_calibration_db"] - 34.0) < 1.0
        assert (tmp_path / "los_plot.csv").exists() and (tmp_path / "nlos_plot.csv").exists()

    def test_all_below_threshold(self, tmp_path, caplog):
        src = write_scenario(tmp_path / "low.json", profile={"peak_alt_m": 30.0})
        assert main(["synth", str(src), "-o", str(tmp_path / "b")]) == 0
        assert main(["stats", "-c", str(tmp_path / "b" / "run.cfg"), "-o", str(tmp_path / "s")]) == 0
        rep = json.loads((tmp_path / "s" / "stats.json").read_text())
        assert rep["los"] == [] and rep["n_los"] == 0
        assert any("LOS partition is empty" in w for w in rep["warnings"])
        assert "empty" in caplog.text

    def test_report(self, urban_bundle, tmp_path):
        assert main(["fit", "-c", str(urban_bundle / "run.cfg"), "-o", str(tmp_path / "f")]) == 0
        assert main(["stats", "-c", str(urban_bundle / "run.cfg"), "-o", str(tmp_path / "s")]) == 0
        assert main(["report", "--fit-dir", str(tmp_path / "f"), "--stats-dir", str(tmp_path / "s")]) == 0
        summary = json.loads((tmp_path / "f" / "summary.json").read_text())
        assert set(summary["stations"]) == {"WKNC", "WNCB", "WQDR", "WBBB"}
        assert len(summary["peaks_hz"]) == 4

    def test_report_missing_inputs(self, tmp_path):
        assert main(["report", "--fit-dir", str(tmp_path), "--stats-dir", str(tmp_path)]) == 4


class TestConfig:
    def test_parse_text(self):
        d = parse_config_text("# comment\nsite_name = lakewheeler\ncalibration_db = -34\n\nband_hz = 87e6 108e6\n")
        assert d["site_name"] == "lakewheeler"
        assert d["calibration_db"] == -34.0
        assert tuple(d["band_hz"]) == (87e6, 108e6)

    def test_bad_lines(self):
        with pytest.raises(InputError):
            parse_config_text("no equals sign here\n")
        with pytest.raises(InputError):
            parse_config_text("unknown_key = 1\n")

    def test_flags_override_config(self, tmp_path):
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text("sweep_path = s.csv\ngps_path = g.csv\nsite_name = a\ncalibration_db = 1\n")
        args = build_parser().parse_args(["fit", "-c", str(cfg_path), "--site", "b", "--h0-fixed", "40"])
        cfg = build_config(args)
        assert cfg.site_name == "b" and cfg.calibration_db == 1.0 and cfg.h0_fixed == 40.0
        assert cfg.sweep_path == str((tmp_path / "s.csv").resolve())

    def test_validation(self):
        with pytest.raises(InputError):
            RunConfig(band_hz=(108e6, 87e6)).validate()
        with pytest.raises(InputError):
            RunConfig(h0_mode="guess").validate()
        assert RunConfig(h0_mode="fixed:50").h0_fixed == 50.0
