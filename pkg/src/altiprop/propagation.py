"""Altitude-dependent break-point path loss and free-space path loss.

All losses are positive numbers (received = ERP - loss). Functions accept
floats or numpy arrays and broadcast.

The break-point model: below the LoS altitude threshold ``h0`` the link
behaves like a log-distance model anchored at the free-space loss at
``d0 = 1 m``, with an exponent that decays from ``2*exp(1/alpha)`` at the
ground to exactly 2 at ``h0``. At and above ``h0`` it is free space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError
from .geodesy import StationRecord

SPEED_OF_LIGHT = 299792458.0


class Model(str, Enum):
    FSPL = "fspl"
    BREAKPOINT = "breakpoint"

    @classmethod
    def parse(cls, value) -> "Model":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidArgumentError(f"unknown model {value!r}; use 'fspl' or 'breakpoint'") from None


@dataclass(frozen=True)
class PathLossParams:
    h0_m: float = 50.0
    alpha: float = 2.5
    d0_m: float = 1.0
    g_tx_db: float = 0.0
    g_rx_db: float = 0.0

    def __post_init__(self):
        if not self.h0_m > 0:
            raise InvalidArgumentError(f"h0_m must be > 0, got {self.h0_m}")
        if not self.alpha > 0:
            raise InvalidArgumentError(f"alpha must be > 0, got {self.alpha}")
        if self.d0_m != 1.0:
            raise InvalidArgumentError("the reference distance d0 is fixed at 1 m")

    def replace(self, **changes) -> "PathLossParams":
        fields = dict(h0_m=self.h0_m, alpha=self.alpha, d0_m=self.d0_m,
                      g_tx_db=self.g_tx_db, g_rx_db=self.g_rx_db)
        fields.update(changes)
        return PathLossParams(**fields)


@dataclass(frozen=True)
class LinkGeometry:
    """Distance ``d``, receiver height ``h`` and wavelength of a link.

    Fields may be numpy arrays of a common (broadcastable) shape.
    """

    distance_m: float
    altitude_m: float
    wavelength_m: float

    def __post_init__(self):
        if not np.all(np.asarray(self.distance_m) > 0):
            raise InvalidArgumentError("distance_m must be > 0")
        if not np.all(np.asarray(self.altitude_m) >= 0):
            raise InvalidArgumentError("altitude_m must be >= 0")
        if not np.all(np.asarray(self.wavelength_m) > 0):
            raise InvalidArgumentError("wavelength_m must be > 0")

    @classmethod
    def at_frequency(cls, distance_m, altitude_m, frequency_hz) -> "LinkGeometry":
        return cls(distance_m, altitude_m, wavelength(frequency_hz))


def wavelength(frequency_hz):
    """Free-space wavelength in meters."""
    f = np.asarray(frequency_hz, dtype=float)
    if not np.all(f > 0):
        raise InvalidArgumentError(f"frequency must be > 0, got {frequency_hz}")
    lam = SPEED_OF_LIGHT / f
    return float(lam) if lam.ndim == 0 else lam


def _scalar_or_array(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def fspl_db(geom: LinkGeometry, params: Optional[PathLossParams] = None):
    """20*log10(4*pi*d/lambda) minus the antenna gains."""
    params = params or PathLossParams()
    d = np.asarray(geom.distance_m, dtype=float)
    loss = 20.0 * np.log10(4.0 * math.pi * d / np.asarray(geom.wavelength_m, dtype=float))
    return _scalar_or_array(loss - params.g_tx_db - params.g_rx_db)


def path_loss_exponent(h_m, params: PathLossParams):
    """Exponent n(h): ``2*exp((1 - h/h0)/alpha)`` below h0, exactly 2 from h0 up."""
    h = np.asarray(h_m, dtype=float)
    if not np.all(h >= 0):
        raise InvalidArgumentError("altitude must be >= 0")
    below = h < params.h0_m
    # the clamp keeps exp() finite for the LoS branch that np.where discards
    arg = np.where(below, (1.0 - h / params.h0_m) / params.alpha, 0.0)
    n = np.where(below, 2.0 * np.exp(arg), 2.0)
    return _scalar_or_array(n)


def breakpoint_path_loss_db(geom: LinkGeometry, params: PathLossParams):
    d = np.asarray(geom.distance_m, dtype=float)
    if not np.all(d >= params.d0_m):
        raise InvalidArgumentError(
            f"break-point model undefined below the reference distance {params.d0_m} m"
        )
    h = np.asarray(geom.altitude_m, dtype=float)
    pl0 = np.asarray(fspl_db(LinkGeometry(params.d0_m, 0.0, geom.wavelength_m), params))
    n = np.asarray(path_loss_exponent(h, params))
    nlos = pl0 + 10.0 * n * np.log10(d / params.d0_m)
    loss = np.where(h < params.h0_m, nlos, fspl_db(geom, params))
    return _scalar_or_array(loss)


def path_loss_db(geom: LinkGeometry, params: PathLossParams, model=Model.BREAKPOINT):
    if Model.parse(model) is Model.FSPL:
        return fspl_db(geom, params)
    return breakpoint_path_loss_db(geom, params)


def erp_to_dbm(erp_w):
    p = np.asarray(erp_w, dtype=float)
    if not np.all(p > 0):
        raise InvalidArgumentError(f"ERP must be > 0 W, got {erp_w}")
    return _scalar_or_array(10.0 * np.log10(p) + 30.0)


def dbm_to_mw(dbm):
    return np.power(10.0, np.asarray(dbm, dtype=float) / 10.0)


def mw_to_dbm(mw):
    return 10.0 * np.log10(np.asarray(mw, dtype=float))


def predicted_rx_power_dbm(
    station: StationRecord,
    geom: LinkGeometry,
    params: PathLossParams,
    model=Model.FSPL,
    pattern_offset_db: Optional[float] = None,
):
    """Received power ``ERP_dBm - PL + pattern offset``.

    ``pattern_offset_db`` defaults to the station's nominal offset; pass
    ``station.pattern_offset_at(site)`` to use a site-specific value.
    """
    offset = station.pattern_offset_db if pattern_offset_db is None else pattern_offset_db
    p = erp_to_dbm(station.erp_w) - np.asarray(path_loss_db(geom, params, model)) + offset
    return _scalar_or_array(p)
