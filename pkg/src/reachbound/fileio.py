"""Problem and result files, and plot-data emission.

Both file kinds are JSON objects. Problem files give matrices as nested
row-major lists; result files store every matrix as
``{"rows": r, "cols": c, "data": [row-major values]}``. Floats are written
with Python's shortest round-trip repr, so reading a result back reproduces
every number bit for bit. Unknown keys are rejected and error messages name
the offending field (``bounds.gamma[0]``, ``danger[1].c`` ...).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from numbers import Real
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import AnalysisResult, GridPoint, make_grid
from .analysis import certify as certify_analysis
from .model import DangerSet, Ellipsoid, InputBounds, LtiSystem, ModelError, normalize_halfspace
from .montecarlo import SampleConfig
from .platoon import (
    NOMINAL_GAMMA,
    AttackSpec,
    PlatoonParams,
    build_matrices,
    danger_set,
    kmh,
    random_attack,
    square_wave_attack,
)
from .synthesis import SynthesisResult
from .synthesis import certify as certify_synthesis

TOOL = "reachbound"
PRESETS = ("3-vehicle", "paper-3-vehicle")


class ProblemError(ModelError):
    """Malformed problem or result file; the message starts with the field path."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}" if path else msg)
        self.path = path


class VerificationError(RuntimeError):
    """A stored result no longer satisfies its certificate."""


# ---------------------------------------------------------------- parsing helpers


def _obj(value, path, allowed, required=()):
    if not isinstance(value, dict):
        raise ProblemError(path, "expected an object")
    for k in value:
        if k not in allowed:
            raise ProblemError(_join(path, k), "unknown key")
    for k in required:
        if k not in value:
            raise ProblemError(_join(path, k), "missing")
    return value


def _join(path, key):
    return f"{path}.{key}" if path else str(key)


def _num(value, path, positive=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, Real):
        raise ProblemError(path, f"expected a number, got {value!r}")
    x = float(value)
    if not math.isfinite(x):
        raise ProblemError(path, "must be finite")
    if integer and (x != int(x)):
        raise ProblemError(path, f"expected an integer, got {value!r}")
    if positive and x <= 0:
        raise ProblemError(path, f"must be positive, got {value!r}")
    return int(x) if integer else x


def _vec(value, path, positive=False):
    if not isinstance(value, list) or not value:
        raise ProblemError(path, "expected a non-empty array")
    return np.array([_num(v, f"{path}[{i}]", positive) for i, v in enumerate(value)])


def _rows(value, path):
    if not isinstance(value, list) or not value:
        raise ProblemError(path, "expected a non-empty array of rows")
    rows = [_vec(r, f"{path}[{i}]") if isinstance(r, list) else None for i, r in enumerate(value)]
    if any(r is None for r in rows):
        # a flat list is read as a column
        return _vec(value, path)[:, None]
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise ProblemError(f"{path}[{i}]", f"row has {len(r)} entries, expected {width}")
    return np.array(rows)


def _scalar_or_vec(value, path, positive=False):
    if isinstance(value, list):
        return _vec(value, path, positive)
    return np.array([_num(value, path, positive)])


def _choice(value, path, options):
    if value not in options:
        raise ProblemError(path, f"must be one of {list(options)}, got {value!r}")
    return value


def parse_grid(text: str) -> np.ndarray:
    """``"start:step:stop"`` to an inclusive grid."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ProblemError("grid", f"expected start:step:stop, got {text!r}")
    try:
        start, step, stop = (float(p) for p in parts)
    except ValueError:
        raise ProblemError("grid", f"non-numeric entry in {text!r}") from None
    try:
        return make_grid(start, stop, step)
    except ValueError as exc:
        raise ProblemError("grid", str(exc)) from None


# ---------------------------------------------------------------- problem files


@dataclass
class PlatoonSetup:
    params: PlatoonParams
    attack: AttackSpec | None
    duration: float = 200.0


@dataclass
class Problem:
    system: LtiSystem
    bounds: InputBounds
    danger: DangerSet | None
    grid: np.ndarray = field(default_factory=make_grid)
    equal_bounds: bool = False
    selection: str = "analysis"
    sampling: SampleConfig = field(default_factory=SampleConfig)
    platoon: PlatoonSetup | None = None
    raw: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


_TOP = ("system", "bounds", "danger", "options", "montecarlo", "platoon")
_PARAM_KEYS = ("n_vehicles", "dt", "beta", "kp", "kd", "d_star", "v_star", "v_star_kmh",
               "v_init", "v_init_kmh")


def _platoon(block, path) -> PlatoonSetup:
    _obj(block, path, ("preset", "params", "attack", "duration"))
    kw = {}
    if "preset" in block:
        _choice(block["preset"], _join(path, "preset"), PRESETS)
    if "params" in block:
        pp = _join(path, "params")
        p = _obj(block["params"], pp, _PARAM_KEYS)
        for key in ("v_star", "v_init"):
            if key in p and f"{key}_kmh" in p:
                raise ProblemError(_join(pp, key), f"give either {key} or {key}_kmh")
        for k, v in p.items():
            kp = _join(pp, k)
            if k == "n_vehicles":
                kw[k] = _num(v, kp, integer=True)
            elif k in ("beta", "kp", "kd", "d_star"):
                kw[k] = _scalar_or_vec(v, kp) if isinstance(v, list) else _num(v, kp)
            elif k.endswith("_kmh"):
                kw[k[:-4]] = kmh(_num(v, kp))
            else:
                kw[k] = _num(v, kp)
    try:
        params = PlatoonParams(**kw)
    except (ModelError, ValueError) as exc:
        raise ProblemError(_join(path, "params"), str(exc)) from None
    attack = _attack(block.get("attack"), _join(path, "attack"), params)
    duration = _num(block.get("duration", 200.0), _join(path, "duration"), positive=True)
    return PlatoonSetup(params, attack, duration)


def _attack(spec, path, params: PlatoonParams) -> AttackSpec | None:
    if spec is None:
        return None
    _obj(spec, path, ("kind", "start", "period", "phases", "amplitude", "seed", "switch_prob"),
         ("kind",))
    kind = _choice(spec["kind"], _join(path, "kind"), ("none", "square", "random"))
    m = params.n_vehicles
    start = _num(spec.get("start", 25.0), _join(path, "start"))
    amp = _num(spec.get("amplitude", 1e3), _join(path, "amplitude"), positive=True)
    if kind == "none":
        return None
    if kind == "square":
        for k in ("seed", "switch_prob"):
            if k in spec:
                raise ProblemError(_join(path, k), "not used by a square-wave attack")
        period = _num(spec.get("period", 4.0), _join(path, "period"), positive=True)
        phases = spec.get("phases", [0.0, 0.5, 0.5] if m == 3 else [0.5 * (j % 2) for j in range(m)])
        phases = _scalar_or_vec(phases, _join(path, "phases"))
        if phases.size not in (1, m):
            raise ProblemError(_join(path, "phases"), f"expected 1 or {m} entries")
        return square_wave_attack(m, start, period, params.dt, phases, amp)
    for k in ("period", "phases"):
        if k in spec:
            raise ProblemError(_join(path, k), "not used by a random attack")
    seed = _num(spec.get("seed", 0), _join(path, "seed"), integer=True)
    prob = _num(spec.get("switch_prob", 0.2), _join(path, "switch_prob"))
    if not 0 <= prob <= 1:
        raise ProblemError(_join(path, "switch_prob"), "must lie in [0, 1]")
    return random_attack(seed, m, start, prob, amp)


def parse_problem(raw: dict) -> Problem:
    """Validate a decoded problem object."""
    _obj(raw, "", _TOP)
    platoon = _platoon(raw["platoon"], "platoon") if "platoon" in raw else None

    if "system" in raw:
        s = _obj(raw["system"], "system", ("F", "G"), ("F", "G"))
        F, G = _rows(s["F"], "system.F"), _rows(s["G"], "system.G")
        if F.shape[0] != F.shape[1]:
            raise ProblemError("system.F", f"must be square, got {F.shape[0]}x{F.shape[1]}")
        if G.shape[0] != F.shape[0]:
            raise ProblemError("system.G", f"must have {F.shape[0]} rows, got {G.shape[0]}")
        system = LtiSystem(F, G)
    elif platoon is not None:
        system = build_matrices(platoon.params)
    else:
        raise ProblemError("system", "missing")

    if "bounds" in raw:
        b = _obj(raw["bounds"], "bounds", ("gamma",), ("gamma",))
        gamma = _scalar_or_vec(b["gamma"], "bounds.gamma")
        for i, g in enumerate(gamma):
            if g <= 0:
                name = f"bounds.gamma[{i}]" if isinstance(b["gamma"], list) else "bounds.gamma"
                raise ProblemError(name, f"must be positive, got {g!r}")
        if gamma.size == 1 and system.m > 1:
            gamma = np.full(system.m, gamma[0])
        if gamma.size != system.m:
            raise ProblemError("bounds.gamma", f"has {gamma.size} entries, the system has {system.m} inputs")
        bounds = InputBounds(gamma)
    elif platoon is not None and system.m == len(NOMINAL_GAMMA):
        bounds = InputBounds(NOMINAL_GAMMA)
    else:
        raise ProblemError("bounds", "missing")

    if "danger" in raw:
        if not isinstance(raw["danger"], list):
            raise ProblemError("danger", "expected an array of half-spaces")
        cs, bs = [], []
        for i, h in enumerate(raw["danger"]):
            hp = f"danger[{i}]"
            _obj(h, hp, ("c", "b", "sense"), ("c", "b"))
            c = _vec(h["c"], f"{hp}.c")
            if c.size != system.n:
                raise ProblemError(f"{hp}.c", f"has {c.size} entries, the state has {system.n}")
            sense = _choice(h.get("sense", ">="), f"{hp}.sense", (">=", "<="))
            try:
                c, b = normalize_halfspace(c, _num(h["b"], f"{hp}.b"), sense)
            except ModelError as exc:
                raise ProblemError(hp, str(exc)) from None
            cs.append(c)
            bs.append(b)
        danger = DangerSet(np.array(cs).reshape(len(cs), system.n), np.array(bs))
    elif platoon is not None:
        danger = danger_set(platoon.params)
    else:
        danger = None

    opts = _obj(raw.get("options", {}), "options", ("grid", "equal_bounds", "selection"))
    grid = make_grid()
    if "grid" in opts:
        g = _obj(opts["grid"], "options.grid", ("start", "step", "stop"))
        try:
            grid = make_grid(*(_num(g.get(k, d), f"options.grid.{k}")
                               for k, d in (("start", 0.01), ("stop", 0.99), ("step", 0.01))))
        except ValueError as exc:
            raise ProblemError("options.grid", str(exc)) from None
    eq = opts.get("equal_bounds", False)
    if not isinstance(eq, bool):
        raise ProblemError("options.equal_bounds", "expected true or false")
    selection = _choice(opts.get("selection", "analysis"), "options.selection", ("analysis", "volume"))

    mc = _obj(raw.get("montecarlo", {}), "montecarlo",
              ("n_traj", "horizon", "seed", "policy", "mixed_ratio", "switch_prob"))
    kw = {}
    for k in ("n_traj", "horizon", "seed"):
        if k in mc:
            kw[k] = _num(mc[k], f"montecarlo.{k}", integer=True)
    for k in ("mixed_ratio", "switch_prob"):
        if k in mc:
            kw[k] = _num(mc[k], f"montecarlo.{k}")
    if "policy" in mc:
        kw["policy"] = _choice(mc["policy"], "montecarlo.policy", ("uniform", "bangbang", "mixed"))
    try:
        sampling = SampleConfig(**kw)
    except ModelError as exc:
        raise ProblemError("montecarlo", str(exc)) from None

    return Problem(system, bounds, danger, grid, eq, selection, sampling, platoon, raw)


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ProblemError("", f"{path}: not valid JSON ({exc})") from None


def load_problem(path) -> Problem:
    return parse_problem(_read_json(path))


# ---------------------------------------------------------------- result files


def matrix_to_json(M) -> dict:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return {"rows": M.shape[0], "cols": M.shape[1], "data": [float(v) for v in M.ravel()]}


def matrix_from_json(obj, path) -> np.ndarray:
    _obj(obj, path, ("rows", "cols", "data"), ("rows", "cols", "data"))
    r = _num(obj["rows"], f"{path}.rows", positive=True, integer=True)
    c = _num(obj["cols"], f"{path}.cols", positive=True, integer=True)
    data = _vec(obj["data"], f"{path}.data")
    if data.size != r * c:
        raise ProblemError(f"{path}.data", f"has {data.size} entries, expected {r * c}")
    return data.reshape(r, c)


def _log(entries: list[GridPoint]) -> list[dict]:
    return [{"a": e.a, "status": e.status.value,
             "volume": None if math.isnan(e.volume) else e.volume} for e in entries]


def _header(problem: Problem, kind: str) -> dict:
    return {"tool": TOOL, "version": __version__, "kind": kind,
            "config_hash": problem.config_hash, "problem": problem.raw}


def analysis_record(problem: Problem, result: AnalysisResult) -> dict:
    rec = _header(problem, "analysis")
    rec.update({
        "a_star": result.a_star, "level": result.level, "volume": result.volume,
        "gamma": [float(g) for g in problem.bounds.gamma],
        "P": matrix_to_json(result.P), "grid_log": _log(result.log),
    })
    return rec


def synthesis_record(problem: Problem, result: SynthesisResult) -> dict:
    rec = _header(problem, "synthesis")
    rec.update({
        "method": result.method, "a_star": result.a_star, "level": result.level,
        "volume": result.volume, "gamma": [float(g) for g in problem.bounds.gamma],
        "gamma_hat": [float(g) for g in result.gamma_hat], "active": list(result.active),
        "Y": matrix_to_json(result.Y),
        "P_hat": None if result.P_hat is None else matrix_to_json(result.P_hat),
        "grid_log": _log(result.log),
    })
    return rec


def write_result(path, record: dict) -> None:
    text = json.dumps(record, indent=1, allow_nan=False)
    Path(path).write_text(text + "\n")


_RESULT_KEYS = ("tool", "version", "kind", "config_hash", "problem", "a_star", "level",
                "volume", "gamma", "P", "gamma_hat", "active", "Y", "P_hat", "method",
                "grid_log", "montecarlo")


def load_result(path) -> dict:
    rec = _read_json(path)
    _obj(rec, "", _RESULT_KEYS, ("tool", "kind", "problem", "a_star", "level", "gamma"))
    _choice(rec["kind"], "kind", ("analysis", "synthesis"))
    return rec


def result_bounds(rec: dict) -> InputBounds:
    """Bounds the result certifies: ``gamma_hat`` for synthesis, ``gamma`` otherwise."""
    key = "gamma_hat" if rec["kind"] == "synthesis" else "gamma"
    return InputBounds(_vec(rec[key], key, positive=True))


def result_ellipsoid(rec: dict) -> Ellipsoid:
    level = _num(rec["level"], "level", positive=True)
    if rec["kind"] == "analysis":
        return Ellipsoid(matrix_from_json(rec["P"], "P"), level)
    return Ellipsoid(np.linalg.inv(matrix_from_json(rec["Y"], "Y")), level)


def verify_result(rec: dict) -> tuple[float, float]:
    """Re-check the stored certificate against the echoed problem.

    Returns ``(worst eigenvalue, tolerance)``; raises VerificationError when
    the LMIs fail or the stored hash does not match the echoed problem.
    """
    problem = parse_problem(rec["problem"])
    if rec.get("config_hash") not in (None, problem.config_hash):
        raise VerificationError("config_hash does not match the echoed problem")
    a = _num(rec["a_star"], "a_star")
    if rec["kind"] == "analysis":
        P = matrix_from_json(rec["P"], "P")
        worst, tol = certify_analysis(problem.system, result_bounds(rec), P, a)
    elif rec.get("method") == "equal":
        # E(P_hat / gamma_hat, m) is the analysis ellipsoid for the common bound gamma_hat
        bounds = result_bounds(rec)
        P = np.linalg.inv(matrix_from_json(rec["Y"], "Y"))
        worst, tol = certify_analysis(problem.system, bounds, P, a)
    else:
        res = SynthesisResult(
            gamma_hat=_vec(rec["gamma_hat"], "gamma_hat", positive=True),
            Y=matrix_from_json(rec["Y"], "Y"), a_star=a, active=list(rec.get("active", [])),
            level=_num(rec["level"], "level", positive=True))
        danger = problem.danger if problem.danger is not None else DangerSet.from_halfspaces([], problem.system.n)
        worst, tol = certify_synthesis(problem.system, res, problem.bounds, danger)
    if worst < -tol:
        raise VerificationError(f"stored solution violates its LMIs (min eigenvalue {worst:.3g})")
    return worst, tol


# ---------------------------------------------------------------- ellipse outlines


def ellipse_boundary(e: Ellipsoid, plane: tuple[int, int] = (1, 2), samples: int = 256) -> np.ndarray:
    """Closed outline of the projection of ``e`` onto coordinates ``plane`` (1-based).

    The projection of ``{x' P x <= alpha}`` onto a coordinate plane is the
    ellipse whose shape matrix is the inverse of the matching 2x2 block of
    ``P^{-1}``. Points are in increasing angle order and the first point is
    repeated at the end. Returns an array of shape ``(samples + 1, 2)``.
    """
    i, j = plane
    if not (1 <= i < j <= e.n):
        raise ModelError(f"projection plane ({i}, {j}) needs 1 <= i < j <= {e.n}")
    if samples < 4:
        raise ModelError("at least 4 samples are needed")
    idx = [i - 1, j - 1]
    block = e.shape_inverse()[np.ix_(idx, idx)]
    # x = sqrt(alpha) * block^{1/2} [cos t, sin t] traces {x' block^{-1} x = alpha}
    w, V = np.linalg.eigh(0.5 * (block + block.T))
    root = (V * np.sqrt(w)) @ V.T
    t = 2 * np.pi * np.arange(samples) / samples
    pts = math.sqrt(e.alpha) * np.column_stack([np.cos(t), np.sin(t)]) @ root
    return np.vstack([pts, pts[:1]])


def write_polyline_csv(points, plane: tuple[int, int], path) -> None:
    i, j = plane
    with open(path, "w", newline="") as fh:
        fh.write(f"x_{i},x_{j}\n")
        np.savetxt(fh, np.asarray(points), fmt="%.17g", delimiter=",")
