"""Design of tightened actuator bounds that keep the reachable set out of a danger set.

Working with ``Y = P^{-1}`` and ``Rhat = diag(1/gamma_hat)`` the analysis
condition becomes the linear block inequality::

    [[a Y,   0,            Y F'],
     [0,     (1-a) Rhat,   G'  ],
     [F Y,   G,            Y   ]]  >= 0

(a Schur complement of the analysis LMI followed by the congruence
``diag(Y, I, Y)``), and the ellipsoid ``E(Y^{-1}, m)`` stays on the safe side of
``c' x = b`` exactly when ``c' Y c <= b**2 / m``. Minimizing ``trace(Rhat)``
subject to ``Rhat >= R`` pushes the new bounds as high as the danger set
allows.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import analysis
from .affine import DIAGONAL, Variable, bmat, pd, psd
from .analysis import AllInfeasible, GridPoint, check_grid
from .model import (
    DangerSet,
    Ellipsoid,
    InputBounds,
    LtiSystem,
    ModelError,
    hyperplane_distance,
    input_weight,
    log_volume,
)
from .sdp import LinearTrace, SolverConfig, Status, check_constraints, solve

log = logging.getLogger(__name__)

ACTIVE_TOL = 1e-6
SELECTIONS = ("analysis", "volume")


class SynthesisError(RuntimeError):
    """A synthesized bound failed its post-solve safety verification."""


@dataclass
class SynthesisResult:
    gamma_hat: np.ndarray
    Y: np.ndarray
    a_star: float
    active: list[int]
    level: float
    log: list[GridPoint] = field(default_factory=list)
    method: str = "trace"
    P_hat: np.ndarray | None = None

    @property
    def ellipsoid(self) -> Ellipsoid:
        return Ellipsoid(np.linalg.inv(self.Y), self.level)

    @property
    def bounds(self) -> InputBounds:
        return InputBounds(self.gamma_hat)

    @property
    def volume(self) -> float:
        return math.exp(log_volume(self.ellipsoid))


@dataclass
class SynthesisLmi:
    Y: Variable
    Rhat: Variable
    block: object
    Y_pos: object
    floors: list
    halfspaces: list

    @property
    def constraints(self):
        return [self.block, self.Y_pos, *self.floors, *self.halfspaces]


def assemble_synthesis_lmi(sys: LtiSystem, bounds: InputBounds, a: float,
                           danger: DangerSet | None = None) -> SynthesisLmi:
    """Block LMI in ``(Y, Rhat)`` plus ``Y > 0``, ``Rhat >= R`` and the half-space limits."""
    if not 0 < a < 1:
        raise ValueError(f"a must lie in (0, 1), got {a}")
    if bounds.m != sys.m:
        raise ModelError(f"gamma has {bounds.m} entries but the system has {sys.m} inputs")
    n, m = sys.n, sys.m
    F, G = sys.F, sys.G
    Y = Variable("Y", n)
    Rhat = Variable("Rhat", m, DIAGONAL)
    block = psd(bmat([
        [a * Y, None, Y @ F.T],
        [None, (1 - a) * Rhat, G.T],
        [F @ Y, G, Y],
    ]), "synthesis")
    R = input_weight(bounds)
    eye = np.eye(m)
    floors = [psd(eye[i:i + 1] @ Rhat @ eye[:, i:i + 1] - R[i, i], f"Rhat[{i}]") for i in range(m)]
    cuts = []
    if danger is not None:
        if len(danger) and danger.normals.shape[1] != n:
            raise ModelError("danger set dimension does not match the system")
        for i, (c, b) in enumerate(danger):
            cuts.append(psd(b * b / m - c[None, :] @ Y @ c[:, None], f"halfspace[{i}]"))
    return SynthesisLmi(Y, Rhat, block, pd(Y.expr, "Y"), floors, cuts)


@dataclass
class SynthesisPoint:
    status: Status
    Y: np.ndarray | None
    Rhat: np.ndarray | None


def solve_synthesis_at(sys: LtiSystem, bounds: InputBounds, danger: DangerSet, a: float,
                       config: SolverConfig | None = None) -> SynthesisPoint:
    """Minimize ``trace(Rhat)`` at a fixed ``a``."""
    lmi = assemble_synthesis_lmi(sys, bounds, a, danger)
    rep = solve([lmi.Y, lmi.Rhat], lmi.constraints, LinearTrace({lmi.Rhat: 1.0}), config)
    if not rep.ok:
        return SynthesisPoint(rep.status, None, None)
    return SynthesisPoint(rep.status, rep.values["Y"], rep.values["Rhat"])


def _extract_bounds(Rhat, bounds: InputBounds, feas_tol: float) -> np.ndarray:
    r = np.diag(Rhat).copy()
    floor = 1.0 / bounds.gamma
    # Entries sitting on the R-hat >= R floor are snapped back to the physical bound.
    r = np.where(r - floor <= feas_tol, floor, r)
    return np.where(r == floor, bounds.gamma, 1.0 / r)


def _active(Y, danger, m) -> list[int]:
    out = []
    for i, (c, b) in enumerate(danger):
        lim = b * b / m
        if c @ Y @ c >= lim - ACTIVE_TOL * max(1.0, lim):
            out.append(i)
    return out


def _verify(result: SynthesisResult, sys, bounds, danger):
    e = result.ellipsoid
    tol = 1e-8 * (1.0 + float(np.max(np.abs(result.Y))))
    for i, (c, b) in enumerate(danger):
        d = hyperplane_distance(e, c, b)
        if d < -max(tol, 1e-6):
            raise SynthesisError(f"ellipsoid crosses half-space {i} (distance {d:.3g})")
    if np.any(result.gamma_hat > bounds.gamma * (1 + 1e-12)) or np.any(result.gamma_hat <= 0):
        raise SynthesisError("synthesized bounds are not within (0, gamma]")


def synthesize(sys: LtiSystem, bounds: InputBounds, danger: DangerSet, grid=None,
               config: SolverConfig | None = None, selection: str = "analysis",
               threads: int = 1) -> SynthesisResult:
    """Largest per-channel bounds whose reachable-set ellipsoid avoids ``danger``.

    Parameters
    ----------
    selection : {"analysis", "volume"}
        How the decay rate ``a`` is chosen. ``"analysis"`` (default) reuses the
        ``a`` of the minimum-volume analysis ellipsoid for the physical bounds
        and solves the synthesis problem there. ``"volume"`` solves at every
        grid point and keeps the largest ``E(Y^{-1}, m)``, breaking ties by the
        largest sum of bounds and then the smallest ``a``.
    """
    if selection not in SELECTIONS:
        raise ValueError(f"selection must be one of {SELECTIONS}")
    grid = analysis.DEFAULT_GRID if grid is None else grid
    m = sys.m

    base = analysis.grid_search(sys, bounds, grid, config, threads)
    if len(danger) == 0:
        Y = np.linalg.inv(base.P)
        return SynthesisResult(bounds.gamma.copy(), Y, base.a_star, [], float(m), base.log)

    if selection == "analysis":
        pt = solve_synthesis_at(sys, bounds, danger, base.a_star, config)
        if pt.Y is None:
            raise AllInfeasible(f"synthesis failed at a = {base.a_star}: {pt.status.value}", base.log)
        a_star, Y, Rhat, entries = base.a_star, pt.Y, pt.Rhat, base.log
    else:
        grid = check_grid(grid)
        entries, best, key = [], None, None
        for a in grid:
            pt = solve_synthesis_at(sys, bounds, danger, float(a), config)
            if pt.Y is None:
                entries.append(GridPoint(float(a), pt.status))
                continue
            lv = log_volume(Ellipsoid(np.linalg.inv(pt.Y), m))
            entries.append(GridPoint(float(a), pt.status, math.exp(lv)))
            k = (lv, float(np.sum(1.0 / np.diag(pt.Rhat))))
            if key is None or k[0] > key[0] + 1e-9 * abs(key[0]) or (
                    abs(k[0] - key[0]) <= 1e-9 * abs(key[0]) and k[1] > key[1]):
                best, key = (float(a), pt.Y, pt.Rhat), k
        if best is None:
            raise AllInfeasible("synthesis is infeasible at every grid point", entries)
        a_star, Y, Rhat = best

    lmi = assemble_synthesis_lmi(sys, bounds, a_star, danger)
    _, feas_tol = check_constraints(lmi.constraints, {lmi.Y: Y, lmi.Rhat: Rhat})
    gamma_hat = _extract_bounds(Rhat, bounds, feas_tol)
    result = SynthesisResult(gamma_hat, Y, a_star, _active(Y, danger, m), float(m), entries)
    _verify(result, sys, bounds, danger)
    return result


def equal_bound_synthesis(sys: LtiSystem, bounds: InputBounds, danger: DangerSet, grid=None,
                          config: SolverConfig | None = None, threads: int = 1) -> SynthesisResult:
    """Common bound for every channel via the unit-weight analysis problem.

    With ``P_hat`` the minimum-volume solution for ``R = I``, the bound is
    ``min(min_i b_i**2 / (m c_i' P_hat^{-1} c_i), min(gamma))`` and the
    ellipsoid is ``E(P_hat / gamma_hat, m)``.
    """
    m = sys.m
    base = analysis.grid_search_weighted(sys, np.eye(m), grid, config, threads)
    P_hat = base.P
    Pinv = np.linalg.inv(P_hat)
    g = float(np.min(bounds.gamma))
    for c, b in danger:
        g = min(g, b * b / (m * float(c @ Pinv @ c)))
    Y = g * Pinv
    result = SynthesisResult(np.full(m, g), Y, base.a_star, _active(Y, danger, m), float(m),
                             base.log, method="equal", P_hat=P_hat)
    _verify(result, sys, bounds, danger)
    return result


def certify(sys: LtiSystem, result: SynthesisResult, bounds: InputBounds,
            danger: DangerSet) -> tuple[float, float]:
    """Worst eigenvalue over every synthesis constraint at the reported point."""
    lmi = assemble_synthesis_lmi(sys, bounds, result.a_star, danger)
    values = {lmi.Y: result.Y, lmi.Rhat: np.diag(1.0 / result.gamma_hat)}
    return check_constraints(lmi.constraints, values)
