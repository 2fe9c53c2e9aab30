"""Minimum-volume outer ellipsoids for the reachable set under per-channel bounds.

For a decay rate ``a`` in (0, 1) the ellipsoid ``{x : x' P x <= m}`` bounds
every state reachable from the origin whenever::

    [[a P - F' P F,   -F' P G          ],
     [-G' P F,        (1-a) R - G' P G ]]  >= 0,     R = diag(1/gamma)

The volume is minimized by maximizing ``log det P`` at each ``a`` of a grid
and keeping the smallest ellipsoid.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .affine import Variable, bmat, pd, psd
from .model import (
    Boundedness,
    Ellipsoid,
    InputBounds,
    LtiSystem,
    ModelError,
    boundedness_diagnostic,
    input_weight,
    log_volume,
)
from .sdp import NegLogDet, SolverConfig, Status, check_constraints, solve

log = logging.getLogger(__name__)

TIE_RTOL = 1e-9


class AllInfeasible(RuntimeError):
    """No grid value of ``a`` produced a solution."""

    def __init__(self, msg, log_entries=()):
        super().__init__(msg)
        self.log = list(log_entries)


def make_grid(start: float = 0.01, stop: float = 0.99, step: float = 0.01) -> np.ndarray:
    """Inclusive grid ``start, start+step, ..., stop`` (rounded to suppress drift)."""
    if step <= 0:
        raise ValueError("grid step must be positive")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    grid = np.round(start + step * np.arange(count), 12)
    check_grid(grid)
    return grid


def check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("the grid for a needs at least two points")
    if np.any(grid <= 0) or np.any(grid >= 1):
        raise ValueError("grid values of a must lie strictly between 0 and 1")
    return np.unique(grid)


DEFAULT_GRID = make_grid()


@dataclass(frozen=True)
class GridPoint:
    a: float
    status: Status
    volume: float = math.nan


@dataclass
class AnalysisResult:
    P: np.ndarray
    level: float
    a_star: float
    volume: float
    log: list[GridPoint] = field(default_factory=list)

    @property
    def ellipsoid(self) -> Ellipsoid:
        return Ellipsoid(self.P, self.level)


def assemble_analysis_lmi(sys: LtiSystem, R, a: float, P: Variable | None = None):
    """Return ``(P, Q >= 0, P > 0)`` for the analysis inequality at ``a``."""
    if not 0 < a < 1:
        raise ValueError(f"a must lie in (0, 1), got {a}")
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if R.shape != (sys.m, sys.m):
        raise ModelError(f"input weight has shape {R.shape}, expected {(sys.m, sys.m)}")
    F, G = sys.F, sys.G
    if P is None:
        P = Variable("P", sys.n)
    Q = bmat([
        [a * P - F.T @ P @ F, -(F.T @ P @ G)],
        [-(G.T @ P @ F), (1 - a) * R - G.T @ P @ G],
    ])
    return P, psd(Q, "analysis"), pd(P.expr, "P")


@dataclass
class AnalysisPoint:
    status: Status
    P: np.ndarray | None
    volume: float


def _solve_weighted(sys, R, a, config) -> AnalysisPoint:
    P, Q, side = assemble_analysis_lmi(sys, R, a)
    rep = solve([P], [Q, side], NegLogDet(P), config)
    if not rep.ok:
        return AnalysisPoint(rep.status, None, math.nan)
    Pv = rep.values["P"]
    vol = math.exp(log_volume(Ellipsoid(Pv, sys.m)))
    return AnalysisPoint(rep.status, Pv, vol)


def solve_analysis_at(sys: LtiSystem, bounds: InputBounds, a: float,
                      config: SolverConfig | None = None) -> AnalysisPoint:
    """Maximize ``log det P`` subject to the analysis LMI at a fixed ``a``."""
    _check_dims(sys, bounds)
    return _solve_weighted(sys, input_weight(bounds), a, config)


def _check_dims(sys, bounds):
    if bounds.m != sys.m:
        raise ModelError(f"gamma has {bounds.m} entries but the system has {sys.m} inputs")


def _sweep(sys, R, grid, config, threads):
    grid = check_grid(grid)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            points = list(pool.map(lambda a: _solve_weighted(sys, R, a, config), grid))
    else:
        points = [_solve_weighted(sys, R, a, config) for a in grid]
    return grid, points


def _select(grid, points):
    """Index of the smallest volume; ties within TIE_RTOL go to the smaller a."""
    best = None
    for i, p in enumerate(points):
        if p.P is None:
            continue
        if best is None or p.volume < points[best].volume * (1 - TIE_RTOL):
            best = i
    return best


def _warn_unbounded(sys):
    diag = boundedness_diagnostic(sys)
    if diag.verdict is not Boundedness.BOUNDED:
        log.warning("reachable set may be unbounded: %s (spectral radius %.6g)",
                    diag.verdict.value, diag.spectral_radius)
    return diag


def grid_search_weighted(sys: LtiSystem, R, grid=None, config=None, threads: int = 1,
                         scale: float = 1.0) -> AnalysisResult:
    """Grid search with an explicit input weight; the result's P is divided by ``scale``."""
    _warn_unbounded(sys)
    grid, points = _sweep(sys, R, DEFAULT_GRID if grid is None else grid, config, threads)
    m = sys.m
    entries = []
    for a, p in zip(grid, points):
        vol = p.volume * scale ** (sys.n / 2) if p.P is not None else math.nan
        entries.append(GridPoint(float(a), p.status, vol))
    best = _select(grid, points)
    if best is None:
        raise AllInfeasible("no value of a on the grid gives a feasible ellipsoid", entries)
    P = points[best].P / scale
    return AnalysisResult(P, float(m), float(grid[best]), entries[best].volume, entries)


def grid_search(sys: LtiSystem, bounds: InputBounds, grid=None,
                config: SolverConfig | None = None, threads: int = 1) -> AnalysisResult:
    """Sweep ``a`` over ``grid`` and return the minimum-volume ellipsoid ``E(P, m)``.

    Infeasible grid points are kept in ``result.log``. Raises AllInfeasible
    when every point fails.
    """
    _check_dims(sys, bounds)
    return grid_search_weighted(sys, input_weight(bounds), grid, config, threads)


def common_bound_analysis(sys: LtiSystem, gamma: float, grid=None,
                          config: SolverConfig | None = None, threads: int = 1) -> AnalysisResult:
    """Analysis for a bound shared by every channel.

    The LMI is solved once with unit weight and the shape matrix is divided
    by ``gamma`` afterwards, so the optimizer never sees the bound.
    """
    gamma = float(gamma)
    if not (math.isfinite(gamma) and gamma > 0):
        raise ModelError(f"gamma must be positive, got {gamma}")
    return grid_search_weighted(sys, np.eye(sys.m), grid, config, threads, scale=gamma)


def certify(sys: LtiSystem, bounds: InputBounds, P, a: float) -> tuple[float, float]:
    """Worst eigenvalue of the analysis LMI (and of P) at a given point, with its tolerance."""
    Pv, Q, side = assemble_analysis_lmi(sys, input_weight(bounds), a)
    return check_constraints([Q, side], {Pv: np.asarray(P, dtype=float)})
