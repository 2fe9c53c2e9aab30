"""Core types: LTI systems, input bounds, ellipsoids and dangerous half-spaces.

Everything here is immutable after construction. Matrices are stored as
read-only float64 arrays so they can be shared between threads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

SYMMETRY_RTOL = 1e-10
SPECTRAL_TOL = 1e-9


class ModelError(ValueError):
    """Raised when a model object violates one of its invariants."""


class InvalidDangerSet(ModelError):
    """Raised for half-spaces that contain the origin or have a zero normal."""


class DiagnosticError(RuntimeError):
    """Raised when the eigenvalue computation does not converge."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def symmetrize(M, what: str = "matrix") -> np.ndarray:
    """Return ``(M + M.T) / 2`` after checking that M is symmetric.

    M is accepted when ``max|M - M.T| <= 1e-10 * max|M|``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ModelError(f"{what} must be square, got shape {M.shape}")
    scale = np.max(np.abs(M)) if M.size else 0.0
    if np.max(np.abs(M - M.T), initial=0.0) > SYMMETRY_RTOL * scale:
        raise ModelError(f"{what} is not symmetric")
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class LtiSystem:
    """Discrete-time system ``x[k+1] = F x[k] + G u[k]``."""

    F: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        G = np.asarray(self.G, dtype=float)
        if G.ndim == 0:
            G = G.reshape(1, 1)
        elif G.ndim == 1:
            G = G.reshape(-1, 1)
        if F.ndim != 2 or F.shape[0] != F.shape[1] or F.shape[0] < 1:
            raise ModelError(f"F must be square, got shape {F.shape}")
        if G.ndim != 2 or G.shape[0] != F.shape[0] or G.shape[1] < 1:
            raise ModelError(
                f"G must have {F.shape[0]} rows and at least one column, got shape {G.shape}"
            )
        if not (np.all(np.isfinite(F)) and np.all(np.isfinite(G))):
            raise ModelError("system matrices must be finite")
        object.__setattr__(self, "F", _frozen(F))
        object.__setattr__(self, "G", _frozen(G))

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def m(self) -> int:
        return self.G.shape[1]


@dataclass(frozen=True)
class InputBounds:
    """Per-channel squared magnitude limits, ``u_i**2 <= gamma_i``."""

    gamma: np.ndarray

    def __post_init__(self):
        g = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if g.ndim != 1 or g.size < 1:
            raise ModelError("gamma must be a non-empty vector")
        for i, gi in enumerate(g):
            if not (np.isfinite(gi) and gi > 0):
                raise ModelError(f"gamma[{i}] must be positive and finite, got {gi}")
        object.__setattr__(self, "gamma", _frozen(g))

    @classmethod
    def common(cls, gamma: float, m: int) -> "InputBounds":
        return cls(np.full(m, float(gamma)))

    @property
    def m(self) -> int:
        return self.gamma.size

    @property
    def amplitude(self) -> np.ndarray:
        """Largest admissible magnitude per channel, ``sqrt(gamma)``."""
        return np.sqrt(self.gamma)


def input_weight(bounds: InputBounds) -> np.ndarray:
    """Diagonal weight ``R = diag(1/gamma_1, ..., 1/gamma_m)``."""
    return np.diag(1.0 / bounds.gamma)


@dataclass(frozen=True)
class Ellipsoid:
    """Origin-centred ellipsoid ``{x : x' P x <= alpha}``."""

    P: np.ndarray
    alpha: float = 1.0

    def __post_init__(self):
        P = symmetrize(np.atleast_2d(self.P), "P")
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ModelError(f"alpha must be positive, got {self.alpha}")
        if not np.all(np.isfinite(P)) or np.linalg.eigvalsh(P)[0] <= 0:
            raise ModelError("P must be positive definite")
        object.__setattr__(self, "P", _frozen(P))
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def n(self) -> int:
        return self.P.shape[0]

    def level(self, x) -> np.ndarray:
        """``x' P x / alpha`` for a single point or an (N, n) array of points."""
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, self.P, x) / self.alpha

    def contains(self, x, rtol: float = 0.0):
        return self.level(x) <= 1.0 + rtol

    def shape_inverse(self) -> np.ndarray:
        return np.linalg.inv(self.P)


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def log_volume(e: Ellipsoid) -> float:
    """Natural log of the ellipsoid volume (safe for badly scaled P)."""
    sign, logdet = np.linalg.slogdet(e.P)
    n = e.n
    return math.log(unit_ball_volume(n)) + 0.5 * n * math.log(e.alpha) - 0.5 * logdet


def ellipsoid_volume(e: Ellipsoid) -> float:
    return math.exp(log_volume(e))


def hyperplane_distance(e: Ellipsoid, c, b: float) -> float:
    """Signed distance from the ellipsoid to the hyperplane ``c' x = b``.

    Negative when the hyperplane cuts the ellipsoid.
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if c.shape != (e.n,):
        raise ModelError(f"normal has shape {c.shape}, expected ({e.n},)")
    if not np.any(c):
        raise ModelError("normal must be nonzero")
    cPc = float(c @ np.linalg.solve(e.P, c))
    return (abs(b) - math.sqrt(e.alpha * cPc)) / math.sqrt(float(c @ c))


def support(e: Ellipsoid, c) -> float:
    """Largest value of ``c' x`` over the ellipsoid."""
    c = np.asarray(c, dtype=float)
    return math.sqrt(e.alpha * float(c @ np.linalg.solve(e.P, c)))


def normalize_halfspace(c, b: float, sense: str = ">=") -> tuple[np.ndarray, float]:
    """Rewrite ``c' x >= b`` or ``c' x <= b`` as ``c' x >= b`` with ``b > 0``.

    Raises InvalidDangerSet when the origin lies in the closed half-space,
    since the reachable set always contains the origin.
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    b = float(b)
    if not np.any(c) or not np.all(np.isfinite(c)) or not math.isfinite(b):
        raise InvalidDangerSet("half-space normal must be finite and nonzero")
    if sense in (">=", "ge", "≥"):
        pass
    elif sense in ("<=", "le", "≤"):
        c, b = -c, -b
    else:
        raise InvalidDangerSet(f"unknown sense {sense!r}")
    if b <= 0:
        raise InvalidDangerSet(
            "the origin lies in the dangerous half-space; no input bound can exclude it"
        )
    return c, b


@dataclass(frozen=True)
class DangerSet:
    """Union of half-spaces ``c_i' x >= b_i``, stored normalized (``b_i > 0``)."""

    normals: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    offsets: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        C = np.asarray(self.normals, dtype=float)
        b = np.atleast_1d(np.asarray(self.offsets, dtype=float))
        if C.size == 0:
            C = C.reshape(0, C.shape[1] if C.ndim == 2 else 0)
        if C.ndim != 2 or C.shape[0] != b.size:
            raise InvalidDangerSet("normals must be a (k, n) array matching k offsets")
        for i in range(b.size):
            normalize_halfspace(C[i], b[i], ">=")
        object.__setattr__(self, "normals", _frozen(C))
        object.__setattr__(self, "offsets", _frozen(b))

    @classmethod
    def from_halfspaces(cls, halfspaces, n: int | None = None) -> "DangerSet":
        """Build from ``(c, b)`` or ``(c, b, sense)`` tuples."""
        cs, bs = [], []
        for h in halfspaces:
            c, b = normalize_halfspace(*h)
            cs.append(c)
            bs.append(b)
        if not cs:
            return cls(np.zeros((0, n or 0)), np.zeros(0))
        if len({c.size for c in cs}) != 1 or (n is not None and cs[0].size != n):
            raise InvalidDangerSet("half-space normals have inconsistent dimensions")
        return cls(np.array(cs), np.array(bs))

    def __len__(self) -> int:
        return self.offsets.size

    def __iter__(self):
        return iter(zip(self.normals, self.offsets))

    def contains(self, x) -> np.ndarray:
        """True for points inside at least one half-space."""
        x = np.asarray(x, dtype=float)
        if len(self) == 0:
            return np.zeros(x.shape[:-1], dtype=bool)
        return np.any(x @ self.normals.T >= self.offsets, axis=-1)


class Boundedness(enum.Enum):
    BOUNDED = "Bounded"
    POSSIBLY_UNBOUNDED = "PossiblyUnbounded"
    UNBOUNDED = "Unbounded"


@dataclass(frozen=True)
class BoundednessVerdict:
    verdict: Boundedness
    spectral_radius: float


def spectral_radius(F) -> float:
    try:
        eig = np.linalg.eigvals(np.asarray(F, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise DiagnosticError(f"eigenvalue iteration failed: {exc}") from exc
    return float(np.max(np.abs(eig)))


def boundedness_diagnostic(sys: LtiSystem, tol: float = SPECTRAL_TOL) -> BoundednessVerdict:
    """Classify the reachable set by the spectral radius of F.

    Unit-modulus eigenvalues are reported as possibly unbounded; their
    multiplicity structure is not examined.
    """
    rho = spectral_radius(sys.F)
    if rho > 1 + tol:
        v = Boundedness.UNBOUNDED
    elif rho < 1 - tol:
        v = Boundedness.BOUNDED
    else:
        v = Boundedness.POSSIBLY_UNBOUNDED
    return BoundednessVerdict(v, rho)
