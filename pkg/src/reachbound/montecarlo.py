"""Monte-Carlo reachable sets: simulate many bounded-input trajectories from the origin.

Every trajectory has its own random stream derived from ``(seed, index)``, so
results do not depend on chunking or on the order trajectories are run in.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .model import (
    Boundedness,
    DangerSet,
    Ellipsoid,
    InputBounds,
    LtiSystem,
    ModelError,
    boundedness_diagnostic,
)

log = logging.getLogger(__name__)

POLICIES = ("uniform", "bangbang", "mixed")
MAX_POINTS = 20_000_000
CONTAIN_RTOL = 1e-9


@dataclass(frozen=True)
class SampleConfig:
    """Sampling plan.

    ``policy`` is ``"uniform"`` (each input uniform on ``[-sqrt(gamma_i), sqrt(gamma_i)]``),
    ``"bangbang"`` (inputs at ``+-sqrt(gamma_i)``, each channel flipping sign with
    probability ``switch_prob`` per step) or ``"mixed"`` (a fraction
    ``mixed_ratio`` of the trajectories is bang-bang, spread evenly over the
    index range).
    """

    n_traj: int = 10_000
    horizon: int = 1000
    seed: int = 0
    policy: str = "uniform"
    mixed_ratio: float = 0.5
    switch_prob: float = 0.1
    chunk: int = 500

    def __post_init__(self):
        if self.n_traj < 1 or self.horizon < 1:
            raise ModelError("n_traj and horizon must be at least 1")
        if self.policy not in POLICIES:
            raise ModelError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if not 0 <= self.mixed_ratio <= 1 or not 0 <= self.switch_prob <= 1:
            raise ModelError("mixed_ratio and switch_prob must lie in [0, 1]")
        if not 0 <= self.seed < 2**64:
            raise ModelError("seed must be a 64-bit unsigned integer")

    def is_bangbang(self, idx: int) -> bool:
        if self.policy == "mixed":
            r = self.mixed_ratio
            return math.floor((idx + 1) * r + 1e-12) > math.floor(idx * r + 1e-12)
        return self.policy == "bangbang"

    def describe(self) -> str:
        s = f"seed={self.seed} n_traj={self.n_traj} horizon={self.horizon} policy={self.policy}"
        if self.policy == "mixed":
            s += f" mixed_ratio={self.mixed_ratio!r}"
        if self.policy != "uniform":
            s += f" switch_prob={self.switch_prob!r}"
        return s


def input_sequence(bounds: InputBounds, config: SampleConfig, idx: int) -> np.ndarray:
    """Inputs ``u_1 .. u_{horizon-1}`` for trajectory ``idx``, shape ``(horizon-1, m)``."""
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(idx,)))
    steps, m = config.horizon - 1, bounds.m
    amp = bounds.amplitude
    if config.is_bangbang(idx):
        sign0 = np.where(rng.random(m) < 0.5, -1.0, 1.0)
        flips = rng.random((steps, m)) < config.switch_prob
        flips[:1] = False
        parity = np.cumsum(flips, axis=0) % 2
        return sign0 * (1.0 - 2.0 * parity) * amp
    return rng.uniform(-1.0, 1.0, (steps, m)) * amp


def trajectories(sys: LtiSystem, bounds: InputBounds, config: SampleConfig):
    """Yield ``(first_index, states)`` chunks; ``states`` has shape ``(k, horizon, n)``."""
    if bounds.m != sys.m:
        raise ModelError(f"gamma has {bounds.m} entries but the system has {sys.m} inputs")
    if boundedness_diagnostic(sys).verdict is Boundedness.UNBOUNDED:
        log.warning("open-loop unstable system: sampled states will diverge")
    Ft, Gt = sys.F.T, sys.G.T
    for start in range(0, config.n_traj, config.chunk):
        stop = min(start + config.chunk, config.n_traj)
        U = np.stack([input_sequence(bounds, config, i) for i in range(start, stop)])
        X = np.zeros((stop - start, config.horizon, sys.n))
        x = np.zeros((stop - start, sys.n))
        for k in range(config.horizon - 1):
            x = x @ Ft + U[:, k] @ Gt
            X[:, k + 1] = x
        yield start, X


@dataclass
class PointCloud:
    """Visited states in trajectory order (thinned uniformly beyond ``MAX_POINTS``)."""

    states: np.ndarray
    config: SampleConfig
    total: int
    stride: int = 1

    @property
    def thinned(self) -> bool:
        return self.stride > 1


def sample(sys: LtiSystem, bounds: InputBounds, config: SampleConfig,
           max_points: int = MAX_POINTS) -> PointCloud:
    total = config.n_traj * config.horizon
    stride = max(1, math.ceil(total / max_points))
    parts = []
    for start, X in trajectories(sys, bounds, config):
        flat = X.reshape(-1, sys.n)
        if stride > 1:
            offset = start * config.horizon
            first = (-offset) % stride
            flat = flat[first::stride]
        parts.append(flat)
    return PointCloud(np.concatenate(parts), config, total, stride)


def _states(cloud) -> np.ndarray:
    return cloud.states if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)


def containment(cloud, e: Ellipsoid) -> tuple[float, float]:
    """Fraction of states inside ``e`` and the largest ``x' P x / alpha``."""
    X = _states(cloud)
    if X.shape[-1] != e.n:
        raise ModelError(f"cloud dimension {X.shape[-1]} does not match ellipsoid dimension {e.n}")
    lv = e.level(X)
    return float(np.mean(lv <= 1 + CONTAIN_RTOL)), float(np.max(lv))


def danger_violations(cloud, danger: DangerSet) -> int:
    X = _states(cloud)
    if len(danger) and X.shape[-1] != danger.normals.shape[1]:
        raise ModelError("cloud dimension does not match the danger set")
    return int(np.count_nonzero(danger.contains(X)))


@dataclass
class MonteCarloStats:
    n_states: int
    inside: int = 0
    max_level: float = 0.0
    violations: int = 0
    max_abs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def fraction_inside(self) -> float:
        return self.inside / self.n_states


def validate(sys: LtiSystem, bounds: InputBounds, config: SampleConfig,
             ellipsoid: Ellipsoid | None = None, danger: DangerSet | None = None) -> MonteCarloStats:
    """Stream every sampled state through the containment and danger checks.

    Nothing is stored, so a 10,000 x 1,000 sample fits in memory.
    ``max_level`` is the largest ``x' P x / alpha`` along all trajectories.
    """
    stats = MonteCarloStats(config.n_traj * config.horizon, max_abs=np.zeros(sys.n))
    for _, X in trajectories(sys, bounds, config):
        flat = X.reshape(-1, sys.n)
        stats.max_abs = np.maximum(stats.max_abs, np.max(np.abs(flat), axis=0))
        if ellipsoid is not None:
            lv = ellipsoid.level(flat)
            stats.inside += int(np.count_nonzero(lv <= 1 + CONTAIN_RTOL))
            stats.max_level = max(stats.max_level, float(np.max(lv)))
        if danger is not None:
            stats.violations += danger_violations(flat, danger)
    return stats


def write_cloud_csv(cloud: PointCloud, path) -> None:
    n = cloud.states.shape[1]
    cols = ",".join(f"x_{i + 1}" for i in range(n))
    meta = f"# {cloud.config.describe()} total={cloud.total} stride={cloud.stride} columns={cols}"
    with open(path, "w", newline="") as fh:
        fh.write(meta + "\n")
        np.savetxt(fh, cloud.states, fmt="%.17g", delimiter=",")


def read_cloud_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
