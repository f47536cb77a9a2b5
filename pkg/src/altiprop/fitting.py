"""Estimating break-point model parameters from power-vs-altitude series.

Three estimators are provided:

* :func:`fit_alpha` - alpha with the LoS threshold fixed, by a log-spaced
  scan followed by golden-section refinement (optionally profiling out a
  constant intercept);
* :func:`fit_joint` - Levenberg-Marquardt over any subset of alpha, h0 and
  the intercept;
* :func:`estimate_h0` - an SSE profile of :func:`fit_alpha` over a grid of
  candidate thresholds.

Residuals are ``measured - predicted`` in dB throughout.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .analysis import ECDF
from .errors import FitDegenerateError, InvalidArgumentError
from .propagation import (
    LinkGeometry,
    Model,
    PathLossParams,
    erp_to_dbm,
    fspl_db,
    path_loss_exponent,
    wavelength,
)
from .sweeps import StationSeries

logger = logging.getLogger(__name__)

ALPHA_RANGE = (0.1, 1000.0)
H0_GRID_M = tuple(float(h) for h in np.arange(5.0, 151.0, 5.0))
MIN_NLOS_POINTS = 5
MODEL_TIE_DB = 0.1
# an SSE profile spread below this many dB^2 per point has no detectable threshold
FLAT_PROFILE_DB2 = 1.0

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_PARAM_NAMES = ("alpha", "h0", "offset")


@dataclass(frozen=True)
class FitResult:
    alpha_hat: float
    h0_hat_m: float
    offset_hat_db: float
    sse_db2: float
    n_points: int
    converged: bool
    iterations: int
    intercept_free: bool = False
    base_params: PathLossParams = field(default_factory=PathLossParams)

    @property
    def params(self) -> PathLossParams:
        return self.base_params.replace(alpha=self.alpha_hat, h0_m=self.h0_hat_m)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha_hat,
            "h0_m": self.h0_hat_m,
            "offset_db": self.offset_hat_db,
            "intercept_free": self.intercept_free,
            "sse_db2": self.sse_db2,
            "n_points": self.n_points,
            "converged": self.converged,
            "iterations": self.iterations,
        }


@dataclass(frozen=True, eq=False)
class ModelErrorCdf:
    model_name: str
    errors_db: np.ndarray
    median_abs_error_db: float

    def __len__(self):
        return self.errors_db.size

    @property
    def cdf(self) -> np.ndarray:
        n = self.errors_db.size
        return np.arange(1, n + 1) / n


@dataclass(frozen=True)
class ThresholdProfile:
    candidates_m: tuple
    sse_db2: tuple
    fits: tuple
    detectable: bool

    def to_dict(self) -> dict:
        return {
            "candidates_m": list(self.candidates_m),
            "sse_db2": list(self.sse_db2),
            "alpha": [None if f is None else f.alpha_hat for f in self.fits],
            "detectable": self.detectable,
        }


class _SeriesModel:
    """Precomputed per-point terms so that repeated evaluation is cheap."""

    def __init__(self, series: StationSeries, base: PathLossParams):
        if len(series) == 0:
            raise InvalidArgumentError("series is empty")
        st = series.station
        lam = wavelength(st.frequency_hz)
        self.base = base
        self.h = series.altitude_m
        self.y = series.power_dbm
        d = series.distance_m
        if not np.all(d >= base.d0_m):
            raise InvalidArgumentError("break-point model undefined below the reference distance")
        self.ten_log_d = 10.0 * np.log10(d / base.d0_m)
        self.fspl = np.asarray(fspl_db(LinkGeometry(d, self.h, lam), base))
        self.pl0 = float(fspl_db(LinkGeometry(base.d0_m, 0.0, lam), base))
        self.eirp = erp_to_dbm(st.erp_w) + series.pattern_offset_db

    def loss(self, alpha, h0, model=Model.BREAKPOINT):
        if model is Model.FSPL:
            return self.fspl
        n = np.asarray(path_loss_exponent(self.h, self.base.replace(alpha=alpha, h0_m=h0)))
        return np.where(self.h < h0, self.pl0 + n * self.ten_log_d, self.fspl)

    def residuals(self, alpha, h0, offset=0.0, model=Model.BREAKPOINT):
        return self.y - (self.eirp + offset - self.loss(alpha, h0, model))

    def sse(self, alpha, h0, intercept_free=False, offset=0.0, model=Model.BREAKPOINT):
        r = self.residuals(alpha, h0, offset, model)
        if intercept_free:
            c = r.mean()
            r = r - c
            return float(r @ r), offset + c
        return float(r @ r), offset

    def jacobian(self, alpha, h0, free):
        """d(residual)/d(param) for the free parameters, one column each."""
        below = self.h < h0
        n = np.where(below, 2.0 * np.exp(np.where(below, (1.0 - self.h / h0) / alpha, 0.0)), 2.0)
        cols = []
        for name in free:
            if name == "alpha":
                dn = -n * (1.0 - self.h / h0) / alpha**2
                cols.append(np.where(below, dn * self.ten_log_d, 0.0))
            elif name == "h0":
                dn = n * self.h / (h0**2 * alpha)
                cols.append(np.where(below, dn * self.ten_log_d, 0.0))
            else:
                cols.append(np.full(self.h.shape, -1.0))
        return np.column_stack(cols)


def _base_params(params: Optional[PathLossParams]) -> PathLossParams:
    return params if params is not None else PathLossParams()


def residuals(series: StationSeries, params: PathLossParams, model=Model.BREAKPOINT,
              offset_db: float = 0.0) -> np.ndarray:
    """Measured minus predicted power, per point."""
    m = _SeriesModel(series, params)
    return m.residuals(params.alpha, params.h0_m, offset_db, Model.parse(model))


def _golden_section(f, lo, hi, tol):
    """Minimize a unimodal ``f`` on [lo, hi] until the bracket is narrower than ``tol``."""
    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc, fd = f(c), f(d)
    iters = 0
    while hi - lo > tol:
        iters += 1
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - _GOLDEN * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _GOLDEN * (hi - lo)
            fd = f(d)
    return (c, fc, iters) if fc <= fd else (d, fd, iters)


def fit_alpha(series: StationSeries, h0_m: float, search_range=ALPHA_RANGE, *,
              intercept_free: bool = False, params: Optional[PathLossParams] = None,
              min_nlos_points: int = MIN_NLOS_POINTS, tol: float = 1e-4,
              scan_points: int = 64) -> FitResult:
    """Least-squares alpha for a fixed LoS threshold.

    The SSE is scanned on a log-spaced grid over ``search_range`` and the
    best grid cell is refined by golden-section search until the bracket is
    below ``tol``. With ``intercept_free`` the best constant offset is
    solved in closed form at every alpha.

    Raises:
        FitDegenerateError: fewer than ``min_nlos_points`` points lie below
            ``h0_m``, so alpha is not constrained.
    """
    base = _base_params(params).replace(h0_m=h0_m)
    lo, hi = float(search_range[0]), float(search_range[1])
    if not 0 < lo < hi:
        raise InvalidArgumentError(f"bad alpha search range {search_range}")
    m = _SeriesModel(series, base)
    n_nlos = int(np.count_nonzero(m.h < h0_m))
    if n_nlos < min_nlos_points:
        raise FitDegenerateError(
            f"{series.station.call_sign}: {n_nlos} points below h0={h0_m} m, need {min_nlos_points}"
        )

    def objective(a):
        return m.sse(a, h0_m, intercept_free)[0]

    grid = np.geomspace(lo, hi, scan_points)
    values = [objective(a) for a in grid]
    i = int(np.argmin(values))
    a_lo, a_hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    a_best, f_best, iters = _golden_section(objective, a_lo, a_hi, tol)
    if values[i] < f_best:
        a_best, f_best = float(grid[i]), values[i]
    sse, offset = m.sse(a_best, h0_m, intercept_free)
    return FitResult(float(a_best), float(h0_m), float(offset), sse, len(series), True,
                     iters + scan_points, intercept_free, base)


def fit_joint(series: StationSeries, initial: PathLossParams, fit_mask=("alpha",), *,
              initial_offset_db: float = 0.0, max_iter: int = 200,
              rel_tol: float = 1e-10, damping: float = 1e-3) -> FitResult:
    """Levenberg-Marquardt over the parameters named in ``fit_mask``.

    ``fit_mask`` is any subset of ``{"alpha", "h0", "offset"}``. The damped
    normal equations use Marquardt's diagonal scaling, so parameters with very
    different units need no manual rescaling. A step is accepted only if it
    lowers the SSE; the damping is divided by 10 on acceptance and multiplied
    by 10 on rejection.

    Returns a result with ``converged=False`` if ``max_iter`` is reached.
    """
    free = [p for p in _PARAM_NAMES if p in set(fit_mask)]
    unknown = set(fit_mask) - set(_PARAM_NAMES)
    if unknown:
        raise InvalidArgumentError(f"unknown fit parameters {sorted(unknown)}")
    m = _SeriesModel(series, initial)
    theta = {"alpha": initial.alpha, "h0": initial.h0_m, "offset": float(initial_offset_db)}

    def sse_of(t):
        r = m.residuals(t["alpha"], t["h0"], t["offset"])
        return float(r @ r), r

    sse, r = sse_of(theta)
    intercept_free = "offset" in free
    if not free:
        return FitResult(theta["alpha"], theta["h0"], theta["offset"], sse, len(series),
                         True, 0, False, initial)
    if len(series) < len(free):
        raise FitDegenerateError(f"{len(series)} points cannot constrain {len(free)} parameters")

    lam = damping
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        J = m.jacobian(theta["alpha"], theta["h0"], free)
        JTJ = J.T @ J
        g = J.T @ r
        diag = np.diag(JTJ)
        if np.any(diag <= 0) or np.linalg.cond(JTJ) > 1e14:
            raise FitDegenerateError(
                f"{series.station.call_sign}: normal equations singular for {free} "
                f"at alpha={theta['alpha']:.4g}, h0={theta['h0']:.4g}"
            )
        if sse == 0.0:
            converged = True
            break
        accepted = False
        while not accepted:
            try:
                step = np.linalg.solve(JTJ + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                raise FitDegenerateError("damped normal equations are singular") from None
            trial = dict(theta)
            for name, s in zip(free, step):
                trial[name] += s
            if trial["alpha"] > 0 and trial["h0"] > 0:
                sse_new, r_new = sse_of(trial)
                if sse_new < sse:
                    accepted = True
                    break
            lam *= 10.0
            if lam > 1e16:
                break
        if not accepted:
            # no descent direction left at working precision
            converged = True
            break
        rel = (sse - sse_new) / sse
        theta, sse, r = trial, sse_new, r_new
        lam = max(lam / 10.0, 1e-12)
        if rel < rel_tol or sse == 0.0:
            converged = True
            break
    if not converged:
        logger.warning("%s: LM did not converge in %d iterations", series.station.call_sign, max_iter)
    return FitResult(float(theta["alpha"]), float(theta["h0"]), float(theta["offset"]), sse,
                     len(series), converged, it, intercept_free,
                     initial.replace(alpha=theta["alpha"], h0_m=theta["h0"]))


def estimate_h0(series: StationSeries, candidate_grid: Sequence[float] = H0_GRID_M, *,
                search_range=ALPHA_RANGE, intercept_free: bool = False,
                params: Optional[PathLossParams] = None,
                flat_db2_per_point: float = FLAT_PROFILE_DB2):
    """Choose the LoS threshold from a grid by the SSE of the alpha fit at each candidate.

    A candidate with no points below it reduces to free space on every
    point. Exact SSE ties go to the smaller threshold. If the whole profile
    spans less than ``flat_db2_per_point * n`` the data show no threshold;
    the smallest candidate is returned and the profile marked not detectable.

    Returns:
        ``(h0_m, ThresholdProfile)``
    """
    grid = sorted(float(h) for h in candidate_grid)
    if not grid:
        raise InvalidArgumentError("candidate grid is empty")
    if grid[0] <= 0:
        raise InvalidArgumentError("threshold candidates must be > 0")
    base = _base_params(params)
    m = _SeriesModel(series, base)
    sses, fits = [], []
    for h0 in grid:
        if np.any(m.h < h0):
            fit = fit_alpha(series, h0, search_range, intercept_free=intercept_free,
                            params=base, min_nlos_points=1)
            fits.append(fit)
            sses.append(fit.sse_db2)
        else:
            fits.append(None)
            sses.append(m.sse(1.0, h0, intercept_free, model=Model.FSPL)[0])
    spread = max(sses) - min(sses)
    detectable = spread >= flat_db2_per_point * len(series)
    h0_hat = grid[int(np.argmin(sses))] if detectable else grid[0]
    return h0_hat, ThresholdProfile(tuple(grid), tuple(sses), tuple(fits), bool(detectable))


def _sorted_abs_errors(r):
    e = np.sort(np.abs(np.asarray(r, dtype=float)))
    e.setflags(write=False)
    return e


def model_error_cdf(series: StationSeries, params: PathLossParams, model=Model.BREAKPOINT,
                    offset_db: float = 0.0) -> ModelErrorCdf:
    """Sorted absolute modeling errors and their median (ceil(n/2)-th order statistic)."""
    model = Model.parse(model)
    e = _sorted_abs_errors(residuals(series, params, model, offset_db))
    return ModelErrorCdf(model.value, e, ECDF(e).median)


def select_model(series: StationSeries, fitted_bp: FitResult,
                 fspl_params: Optional[PathLossParams] = None, *,
                 fspl_offset_db: Optional[float] = None, tie_db: float = MODEL_TIE_DB) -> Model:
    """Pick the model with the smaller median absolute error.

    Differences within ``tie_db`` go to free space. When the break-point fit
    had a free intercept and ``fspl_offset_db`` is not given, free space
    gets its own least-squares intercept so both are compared on equal terms.
    """
    bp_cdf = model_error_cdf(series, fitted_bp.params, Model.BREAKPOINT, fitted_bp.offset_hat_db)
    fs_cdf = _fspl_cdf(series, fitted_bp, fspl_params, fspl_offset_db)
    return _choose(bp_cdf, fs_cdf, tie_db)


def _fspl_cdf(series, fitted_bp, fspl_params, fspl_offset_db):
    fspl_params = fspl_params or fitted_bp.base_params
    if fspl_offset_db is None:
        fspl_offset_db = 0.0
        if fitted_bp.intercept_free:
            fspl_offset_db = float(np.mean(residuals(series, fspl_params, Model.FSPL)))
    return model_error_cdf(series, fspl_params, Model.FSPL, fspl_offset_db)


def _choose(bp_cdf: ModelErrorCdf, fs_cdf: ModelErrorCdf, tie_db: float) -> Model:
    if bp_cdf.median_abs_error_db < fs_cdf.median_abs_error_db - tie_db:
        return Model.BREAKPOINT
    return Model.FSPL


@dataclass(frozen=True, eq=False)
class StationFit:
    """Everything fitted for one station: threshold, alpha, both error CDFs, the choice."""

    call_sign: str
    selected: Model
    breakpoint: FitResult
    profile: Optional[ThresholdProfile]
    bp_errors: ModelErrorCdf
    fspl_errors: ModelErrorCdf
    fspl_offset_db: float

    def to_dict(self) -> dict:
        return {
            "call_sign": self.call_sign,
            "model_selected": self.selected.value,
            "breakpoint_fit": self.breakpoint.to_dict(),
            "fspl_offset_db": self.fspl_offset_db,
            "median_abs_error_db": {
                "breakpoint": self.bp_errors.median_abs_error_db,
                "fspl": self.fspl_errors.median_abs_error_db,
            },
            "h0_profile": None if self.profile is None else self.profile.to_dict(),
            "error_cdf": {
                "breakpoint": self.bp_errors.errors_db.tolist(),
                "fspl": self.fspl_errors.errors_db.tolist(),
            },
        }


def fit_station(series: StationSeries, h0_fixed_m: Optional[float] = None, *,
                candidate_grid: Sequence[float] = H0_GRID_M, search_range=ALPHA_RANGE,
                intercept_free: bool = False, params: Optional[PathLossParams] = None,
                tie_db: float = MODEL_TIE_DB) -> StationFit:
    """Threshold (fixed or estimated), alpha, error CDFs and model choice for one station."""
    base = _base_params(params)
    profile = None
    if h0_fixed_m is None:
        h0, profile = estimate_h0(series, candidate_grid, search_range=search_range,
                                  intercept_free=intercept_free, params=base)
    else:
        h0 = float(h0_fixed_m)
    n_below = int(np.count_nonzero(series.altitude_m < h0))
    min_pts = MIN_NLOS_POINTS if h0_fixed_m is not None else 1
    if n_below >= min_pts:
        bp = fit_alpha(series, h0, search_range, intercept_free=intercept_free, params=base,
                       min_nlos_points=min_pts)
    elif h0_fixed_m is not None:
        raise FitDegenerateError(
            f"{series.station.call_sign}: {n_below} points below h0={h0} m, need {MIN_NLOS_POINTS}"
        )
    else:
        # no point below the threshold: alpha is irrelevant, the model is free space
        sse, off = _SeriesModel(series, base).sse(1.0, h0, intercept_free, model=Model.FSPL)
        bp = FitResult(search_range[1], h0, off, sse, len(series), True, 0, intercept_free,
                       base.replace(h0_m=h0))
    bp_cdf = model_error_cdf(series, bp.params, Model.BREAKPOINT, bp.offset_hat_db)
    fs_cdf = _fspl_cdf(series, bp, base, None)
    fs_offset = float(np.mean(residuals(series, base, Model.FSPL))) if intercept_free else 0.0
    return StationFit(series.station.call_sign, _choose(bp_cdf, fs_cdf, tie_db), bp, profile,
                      bp_cdf, fs_cdf, fs_offset)
