import numpy as np
import pytest

from altiprop.geodesy import load_stations, bundled_station_path
from altiprop.propagation import LinkGeometry, Model, PathLossParams, predicted_rx_power_dbm, wavelength
from altiprop.sweeps import StationSeries
from altiprop.synth import FlightProfile


@pytest.fixture(scope="session")
def stations():
    return load_stations(bundled_station_path())


def make_series(station, truth: PathLossParams, model=Model.BREAKPOINT, *, distance_m=None,
                profile=None, sigma_db=0.0, seed=0, bias_db=0.0):
    """A station series straight from the forward model, without files or drift."""
    profile = profile or FlightProfile()
    h = profile.altitude(profile.sample_times())
    d0 = distance_m if distance_m is not None else station.distances_m["packapalooza"]
    d = np.hypot(d0, station.tower_height_m - h)
    p = predicted_rx_power_dbm(station, LinkGeometry(d, h, wavelength(station.frequency_hz)), truth, model)
    noise = sigma_db * np.random.default_rng(seed).standard_normal(h.size)
    return StationSeries(station, h, d, p + noise + bias_db)


def aligned_bundle(scenario):
    """Synthesize a scenario and align it in memory."""
    from altiprop.sweeps import align
    from altiprop.synth import run_scenario

    bundle = run_scenario(scenario)
    return bundle, align(bundle.sweeps, bundle.gps).aligned


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
