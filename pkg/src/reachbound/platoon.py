"""Vehicle platoon case study.

State (deviations from the set-point)::

    x = [d~_1, ..., d~_{n-1}, v~_1, ..., v~_n]

with ``d~_i = d_i - d*_i`` the gap between vehicles ``i+1`` and ``i`` and
``v~_j = v_j - v*``. Vehicle ``n`` leads, vehicle 1 is last. The forward and
reverse looking PD law is folded into F; the secondary (cooperative) command
``w`` enters through ``G = [0; dt I]`` and is the only saturated signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import solve_discrete_are

from .model import DangerSet, InputBounds, LtiSystem, ModelError

KMH = 1 / 3.6

NOMINAL_GAMMA = (1.2, 0.8, 1.1)
SAFE_GAMMA = (0.03, 0.05, 0.03)


def kmh(v: float) -> float:
    """km/h to m/s."""
    return v * KMH


def _per(value, count, what):
    arr = np.broadcast_to(np.asarray(value, dtype=float), (count,)).copy()
    arr.setflags(write=False)
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{what} must be finite")
    return arr


@dataclass(frozen=True)
class PlatoonParams:
    """Platoon model parameters (SI units; speeds in m/s).

    ``v_init`` is the common speed every vehicle starts from, with all gaps at
    their desired values.
    """

    n_vehicles: int = 3
    dt: float = 0.5
    beta: np.ndarray = -0.1
    kp: np.ndarray = 0.2
    kd: np.ndarray = 0.3
    d_star: np.ndarray = 1.0
    v_star: float = kmh(60.0)
    v_init: float = kmh(50.0)

    def __post_init__(self):
        n = self.n_vehicles
        if n < 2:
            raise ModelError("a platoon needs at least two vehicles")
        if not self.dt > 0:
            raise ModelError("dt must be positive")
        object.__setattr__(self, "beta", _per(self.beta, n, "beta"))
        object.__setattr__(self, "kp", _per(self.kp, n, "kp"))
        object.__setattr__(self, "kd", _per(self.kd, n, "kd"))
        object.__setattr__(self, "d_star", _per(self.d_star, n - 1, "d_star"))
        if np.any(self.beta >= 0):
            raise ModelError("friction coefficients beta must be negative")
        if np.any(self.d_star <= 0):
            raise ModelError("desired gaps must be positive")

    @classmethod
    def nominal(cls) -> "PlatoonParams":
        return cls()

    @property
    def n_states(self) -> int:
        return 2 * self.n_vehicles - 1

    def initial_state(self) -> np.ndarray:
        x = np.zeros(self.n_states)
        x[self.n_vehicles - 1:] = self.v_init - self.v_star
        return x


def build_matrices(params: PlatoonParams) -> LtiSystem:
    n = params.n_vehicles
    g = n - 1
    dt, kp, kd, beta = params.dt, params.kp, params.kd, params.beta
    F = np.zeros((2 * n - 1, 2 * n - 1))
    for i in range(g):
        F[i, i] = 1.0
        F[i, g + i] = -dt
        F[i, g + i + 1] = dt
    for j in range(n):
        row = g + j
        F[row, row] = 1.0 + beta[j]
        if j < g:
            # gap and relative speed to the vehicle ahead
            F[row, j] += kp[j]
            F[row, row] -= kd[j]
            F[row, row + 1] += kd[j]
        if j > 0:
            # gap and relative speed to the vehicle behind
            F[row, j - 1] -= kp[j]
            F[row, row] -= kd[j]
            F[row, row - 1] += kd[j]
    G = np.vstack([np.zeros((g, n)), dt * np.eye(n)])
    return LtiSystem(F, G)


def danger_set(params: PlatoonParams) -> DangerSet:
    """Collisions: ``-d~_i >= d*_i`` for every gap."""
    g = params.n_vehicles - 1
    C = np.zeros((g, params.n_states))
    C[np.arange(g), np.arange(g)] = -1.0
    return DangerSet(C, params.d_star)


class GainError(RuntimeError):
    pass


def riccati(F, G, Q, R) -> np.ndarray:
    """Stabilizing solution of the discrete algebraic Riccati equation."""
    try:
        P = solve_discrete_are(F, G, Q, R)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise GainError(f"no stabilizing Riccati solution: {exc}") from exc
    if not np.all(np.isfinite(P)):
        raise GainError("Riccati solution is not finite")
    return 0.5 * (P + P.T)


def secondary_gain(sys: LtiSystem, Q=None, R=None) -> np.ndarray:
    """Infinite-horizon LQR gain in the ``w = K x`` sign convention.

    Defaults to identity state and input weights.
    """
    Q = np.eye(sys.n) if Q is None else np.asarray(Q, dtype=float)
    R = np.eye(sys.m) if R is None else np.asarray(R, dtype=float)
    F, G = sys.F, sys.G
    P = riccati(F, G, Q, R)
    return -np.linalg.solve(R + G.T @ P @ G, G.T @ P @ F)


@dataclass(frozen=True)
class AttackSpec:
    """False-data injection replacing the secondary command from ``start`` seconds on.

    ``signal(k)`` returns the injected command vector at step ``k``; it is
    saturated by the bounds in force before it reaches the actuators.
    """

    start: float
    signal: Callable[[int], np.ndarray]
    label: str = ""


def square_wave_attack(m: int = 3, start: float = 25.0, period: float = 4.0, dt: float = 0.5,
                       phases=(0.0, 0.5, 0.5), amplitude: float = 1e3) -> AttackSpec:
    """Full-authority square wave per channel; ``phases`` are fractions of a period."""
    ph = _per(phases, m, "phases")

    def signal(k):
        tau = k * dt - start
        frac = np.mod(tau / period + ph, 1.0)
        return np.where(frac < 0.5, amplitude, -amplitude)

    return AttackSpec(start, signal, f"square period={period} phases={tuple(ph)}")


def random_attack(seed: int, m: int = 3, start: float = 25.0, switch_prob: float = 0.2,
                  amplitude: float = 1e3) -> AttackSpec:
    """Random full-authority bang-bang injection, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    cache: list[np.ndarray] = [np.where(rng.random(m) < 0.5, -amplitude, amplitude)]

    def signal(k):
        while len(cache) <= k:
            flip = rng.random(m) < switch_prob
            cache.append(np.where(flip, -cache[-1], cache[-1]))
        return cache[k]

    return AttackSpec(start, signal, f"random seed={seed}")


@dataclass
class SimTrace:
    t: np.ndarray
    gaps: np.ndarray
    speeds: np.ndarray
    inputs: np.ndarray
    states: np.ndarray
    crashed: bool = False
    crash_time: float | None = None
    crash_pair: tuple[int, int] | None = None
    crash_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def simulate(params: PlatoonParams, bounds: InputBounds, attack: AttackSpec | None = None,
             duration: float = 200.0, K=None, x0=None) -> SimTrace:
    """Closed-loop run with saturated secondary control.

    The secondary command is ``w = K x`` until the attack starts and the
    attack signal afterwards; either way it is clipped to ``+-sqrt(gamma_i)``.
    Integration stops at the first sample with a gap ``<= 0``.
    """
    sys = build_matrices(params)
    if bounds.m != sys.m:
        raise ModelError(f"gamma has {bounds.m} entries but the platoon has {sys.m} vehicles")
    K = secondary_gain(sys) if K is None else np.asarray(K, dtype=float)
    amp = bounds.amplitude
    g = params.n_vehicles - 1
    steps = int(round(duration / params.dt))
    x = params.initial_state() if x0 is None else np.array(x0, dtype=float)

    xs, us = [], []
    crashed, crash_k, pair = False, None, None
    for k in range(steps + 1):
        xs.append(x)
        if attack is not None and k * params.dt >= attack.start - 1e-12:
            w = np.asarray(attack.signal(k), dtype=float)
        else:
            w = K @ x
        if not np.all(np.isfinite(w)):
            raise ModelError(f"non-finite secondary command at step {k}")
        u = np.clip(w, -amp, amp)
        us.append(u)
        gaps = x[:g] + params.d_star
        if np.any(gaps <= 0):
            crashed, crash_k = True, k
            i = int(np.argmax(gaps <= 0))
            pair = (i + 1, i + 2)
            break
        if k < steps:
            x = sys.F @ x + sys.G @ u
    X = np.array(xs)
    t = params.dt * np.arange(len(xs))
    rows = np.any(X[:, :g] + params.d_star <= 0, axis=1)
    return SimTrace(
        t=t,
        gaps=X[:, :g] + params.d_star,
        speeds=X[:, g:] + params.v_star,
        inputs=np.array(us),
        states=X,
        crashed=crashed,
        crash_time=None if crash_k is None else float(t[crash_k]),
        crash_pair=pair,
        crash_rows=rows,
    )


def write_trace_csv(trace: SimTrace, path) -> None:
    g = trace.gaps.shape[1]
    n = trace.speeds.shape[1]
    m = trace.inputs.shape[1]
    header = (["t"] + [f"d_{i + 1}" for i in range(g)] + [f"v_{j + 1}" for j in range(n)]
              + [f"u_{i + 1}" for i in range(m)] + ["crash"])
    data = np.column_stack([trace.t, trace.gaps, trace.speeds, trace.inputs,
                            trace.crash_rows.astype(float)])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row[:-1]) + f",{int(row[-1])}\n")


def settling_step(trace: SimTrace, tol: float = 1e-3) -> int | None:
    """First step after which the deviation norm stays below ``tol``."""
    norms = np.linalg.norm(trace.states, axis=1)
    above = np.nonzero(norms >= tol)[0]
    if above.size == 0:
        return 0
    k = int(above[-1]) + 1
    return k if k < len(norms) else None


def nominal_case() -> tuple[PlatoonParams, LtiSystem, DangerSet]:
    p = PlatoonParams()
    return p, build_matrices(p), danger_set(p)


__all__ = [
    "AttackSpec", "GainError", "NOMINAL_GAMMA", "SAFE_GAMMA", "PlatoonParams", "SimTrace",
    "build_matrices", "danger_set", "kmh", "nominal_case", "random_attack", "riccati",
    "secondary_gain", "settling_step", "simulate", "square_wave_attack", "write_trace_csv",
]
