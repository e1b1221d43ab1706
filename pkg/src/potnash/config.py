"""Experiment configuration: TOML (or a JSON manifest) to validated, fully resolved settings.

Grammar (TOML)::

    seed = 0              # base seed; repetition r uses seed + r
    reps = 1
    out_dir = "runs/x"

    [game]
    id = "cournot"        # cournot | common_pool
    noise_std = 1e-3
    grid_points = 31      # action grid per player for finite / exp_weights

    [game.params]         # see GAME_FIELDS
    beta = [0.95, 1.95]

    [solver]
    id = "finite"         # finite | infinite | exp_weights
    ...                   # see SOLVER_FIELDS

    [solver.line_search]  # infinite only

    [gp]
    output_scale = 1.0
    length_scale = 2.34   # or length_scales = [...]

Every missing key takes its default; unknown keys are errors. Validation
collects all problems before failing, each named by its dotted field path
and, when the source is a TOML file, its line.
"""

from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid config:\n" + "\n".join(f"  {p}" for p in self.problems))


@dataclass(frozen=True)
class Field:
    kind: str  # "num" | "int" | "bool" | "str" | "nums"
    default: Any = None
    gt: float | None = None
    ge: float | None = None
    lt: float | None = None
    le: float | None = None
    choices: tuple | None = None
    required: bool = False
    length: int | None = None

    def bound_text(self) -> str:
        lo = f"({self.gt}" if self.gt is not None else f"[{self.ge}" if self.ge is not None else "(-inf"
        hi = f"{self.lt})" if self.lt is not None else f"{self.le}]" if self.le is not None else "inf)"
        return f"{lo}, {hi}"

    def check_scalar(self, v) -> str | None:
        if self.gt is not None and not v > self.gt or self.ge is not None and not v >= self.ge:
            return f"must lie in {self.bound_text()}, got {v}"
        if self.lt is not None and not v < self.lt or self.le is not None and not v <= self.le:
            return f"must lie in {self.bound_text()}, got {v}"
        return None


def _num(default=None, **kw):
    return Field("num", default, **kw)


def _int(default=None, **kw):
    return Field("int", default, **kw)


def _nums(default=None, **kw):
    return Field("nums", default, **kw)


GAME_FIELDS = {
    "cournot": {
        "a": _num(10.0, gt=0),
        "b": _num(1.0, gt=0),
        "d": _nums([5.0, 5.0], ge=0),
        "beta": _nums([0.95, 1.95], gt=0, lt=2),
        "q_min": _num(1e-3, gt=0),
        "q_max": _num(10.0, gt=0),
    },
    "common_pool": {
        "a": _num(0.9, ge=0),
        "s0": _num(1.0, gt=0),
        "alpha": _nums([0.3, 0.2], gt=0),
        "theta": _nums([0.95, 0.95], ge=0),
        "horizon": _num(4.0, gt=0),
        "n_points": _int(10_000, ge=2),
        "gamma_max": _num(3.0, gt=0),
    },
}

GAME_COMMON = {
    "id": Field("str", required=True, choices=tuple(GAME_FIELDS)),
    "noise_std": _num(1e-3, ge=0),
    "grid_points": _int(31, ge=2),
}

LINE_SEARCH_FIELDS = {
    "c1": _num(1e-4, gt=0, lt=1),
    "c2": _num(0.8, gt=0, le=1),
    "wolfe_threshold": _num(0.3, ge=0, lt=1),
    "max_step": _num(1.0, gt=0),
    "backtrack_factor": _num(0.75, gt=0, lt=1),
    "max_backtracks": _int(30, ge=1),
}

SOLVER_FIELDS = {
    "finite": {
        "n_initial": _int(11, ge=1),
        "ei_termination": _num(5e-2, gt=0),
        "max_iterations": _int(100, ge=1),
        "correlated_noise": Field("bool", False),
        "criterion": Field("str", "ei", choices=("ei", "mean")),
    },
    "infinite": {
        "ei_termination": _num(1e-4, gt=0),
        "max_iterations": _int(100, ge=1),
        "quadrature_order": _int(16, ge=2),
        "warmup_fraction": _num(0.1, gt=0, le=1),
        "correlated_noise": Field("bool", False),
        "x0": _nums(None),
    },
    "exp_weights": {
        "steps": _int(5000, ge=1),
        "eta0": _num(1.0, gt=0),
        "explore_scale": _num(1.0, ge=0),
        "explore_exponent": _num(1.0 / 3.0, gt=0),
        "utility_bounds": _nums(required=True, length=2),
        "track_nash": Field("bool", True),
        "stop_at_target": Field("bool", False),
    },
}

GP_FIELDS = {
    "output_scale": _num(1.0, gt=0),
    "length_scale": _num(None, gt=0),
    "length_scales": _nums(None, gt=0),
    "noise_variance": _num(None, ge=0),
    "jitter": _num(1e-10, ge=0),
    "prior_mean": _num(0.0),
}

TOP_FIELDS = {
    "seed": _int(0, ge=0),
    "reps": _int(1, ge=1),
    "out_dir": Field("str", "runs"),
}

SECTIONS = ("game", "solver", "gp")


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


class _Validator:
    def __init__(self, text: str | None):
        self.lines = text.splitlines() if text else []
        self.problems: list[str] = []

    def line_of(self, path: str) -> int | None:
        """Best-effort source line of a dotted key path in TOML text."""
        parts = re.sub(r"\[\d+\]", "", path).split(".")
        section, key = ".".join(parts[:-1]), parts[-1]
        key_re = re.compile(rf"^\s*{re.escape(key)}\s*=")
        current, header = "", None
        for n, raw in enumerate(self.lines, 1):
            m = re.match(r"^\s*\[([^\[\]]+)\]\s*(#.*)?$", raw)
            if m:
                current = m.group(1).strip()
                if current == ".".join(parts):
                    header = n
            elif current == section and key_re.match(raw):
                return n
        return header

    def error(self, path: str, msg: str):
        line = self.line_of(path)
        where = f" (line {line})" if line else ""
        self.problems.append(f"{path}: {msg}{where}")

    def table(self, raw, fields: dict, path: str, extra_ok=()) -> dict:
        out = {}
        if not isinstance(raw, dict):
            self.error(path, f"must be a table, got {type(raw).__name__}")
            raw = {}
        for key in raw:
            if key not in fields and key not in extra_ok:
                known = ", ".join(sorted([*fields, *extra_ok]))
                self.error(f"{path}.{key}" if path else key, f"unknown key (expected one of: {known})")
        for key, f in fields.items():
            p = f"{path}.{key}" if path else key
            if key not in raw:
                if f.required:
                    self.error(p, "is required")
                out[key] = copy.deepcopy(f.default)
                continue
            out[key] = self.value(raw[key], f, p)
        return out

    def value(self, v, f: Field, path: str):
        if f.kind == "num":
            if not _is_num(v):
                self.error(path, f"must be a finite number, got {v!r}")
                return f.default
            v = float(v)
            msg = f.check_scalar(v)
            if msg:
                self.error(path, msg)
            return v
        if f.kind == "int":
            if isinstance(v, bool) or not isinstance(v, int):
                self.error(path, f"must be an integer, got {v!r}")
                return f.default
            msg = f.check_scalar(v)
            if msg:
                self.error(path, msg)
            return v
        if f.kind == "bool":
            if not isinstance(v, bool):
                self.error(path, f"must be true or false, got {v!r}")
                return f.default
            return v
        if f.kind == "str":
            if not isinstance(v, str):
                self.error(path, f"must be a string, got {v!r}")
                return f.default
            if f.choices and v not in f.choices:
                self.error(path, f"must be one of {', '.join(f.choices)}; got {v!r}")
            return v
        if f.kind == "nums":
            if not isinstance(v, list) or not v:
                self.error(path, f"must be a non-empty list of numbers, got {v!r}")
                return f.default
            if f.length is not None and len(v) != f.length:
                self.error(path, f"must have {f.length} entries, got {len(v)}")
            out = []
            for i, item in enumerate(v):
                if not _is_num(item):
                    self.error(f"{path}[{i}]", f"must be a finite number, got {item!r}")
                    continue
                msg = f.check_scalar(float(item))
                if msg:
                    self.error(f"{path}[{i}]", msg)
                out.append(float(item))
            return out
        raise AssertionError(f.kind)


def _n_players(game: dict) -> int:
    p = game["params"]
    return len(p["d"]) if game["id"] == "cournot" else len(p["alpha"])


def validate(raw: dict, text: str | None = None) -> dict:
    """Validate a parsed config and return it with every default filled in."""
    v = _Validator(text)
    if not isinstance(raw, dict):
        raise ConfigError([f"top level must be a table, got {type(raw).__name__}"])
    cfg = v.table(raw, TOP_FIELDS, "", extra_ok=SECTIONS)
    for s in SECTIONS:
        if s not in raw and s != "gp":
            v.error(s, "section is required")

    game_raw = raw.get("game", {})
    game = v.table(game_raw, GAME_COMMON, "game", extra_ok=("params",))
    gid = game["id"] if game["id"] in GAME_FIELDS else None
    if gid:
        game["params"] = v.table(game_raw.get("params", {}) if isinstance(game_raw, dict) else {}, GAME_FIELDS[gid], "game.params")
        p = game["params"]
        if gid == "cournot":
            if p["d"] and p["beta"] and len(p["d"]) != len(p["beta"]):
                v.error("game.params.beta", f"needs one entry per player ({len(p['d'])} from d), got {len(p['beta'])}")
            if p["q_min"] >= p["q_max"]:
                v.error("game.params.q_max", f"must exceed q_min = {p['q_min']}, got {p['q_max']}")
        else:
            if p["alpha"] and p["theta"] and len(p["alpha"]) != len(p["theta"]):
                v.error("game.params.theta", f"needs one entry per player ({len(p['alpha'])} from alpha), got {len(p['theta'])}")
            for i, t in enumerate(p["theta"] or []):
                if t < p["a"]:
                    v.error(f"game.params.theta[{i}]", f"must be >= a = {p['a']}, got {t}")
    cfg["game"] = game

    solver_raw = raw.get("solver", {})
    if not isinstance(solver_raw, dict):
        v.error("solver", f"must be a table, got {type(solver_raw).__name__}")
        solver_raw = {}
    id_field = Field("str", required=True, choices=tuple(SOLVER_FIELDS))
    sid = v.value(solver_raw["id"], id_field, "solver.id") if "id" in solver_raw else None
    if "solver" in raw and "id" not in solver_raw:
        v.error("solver.id", "is required")
    solver = {"id": sid}
    if sid not in SOLVER_FIELDS:
        sid = None
    if sid:
        extra = ("id", "line_search") if sid == "infinite" else ("id",)
        solver.update(v.table(solver_raw, SOLVER_FIELDS[sid], "solver", extra_ok=extra))
        if sid == "infinite":
            ls = v.table(solver_raw.get("line_search", {}), LINE_SEARCH_FIELDS, "solver.line_search")
            if ls["c1"] >= ls["c2"]:
                v.error("solver.line_search.c2", f"must exceed c1 = {ls['c1']}, got {ls['c2']}")
            solver["line_search"] = ls
        if sid == "exp_weights":
            b = solver["utility_bounds"]
            if b and len(b) == 2 and b[0] >= b[1]:
                v.error("solver.utility_bounds", f"needs lo < hi, got {b}")
    cfg["solver"] = solver

    gp = v.table(raw.get("gp", {}), GP_FIELDS, "gp")
    if gp["length_scale"] is not None and gp["length_scales"] is not None:
        v.error("gp.length_scales", "give either length_scale or length_scales, not both")
    cfg["gp"] = gp

    if gid and not v.problems:
        n = _n_players(game)
        if gp["length_scales"] is None:
            gp["length_scales"] = [gp["length_scale"] if gp["length_scale"] is not None else 1.0] * n
        gp["length_scale"] = None
        if len(gp["length_scales"]) != n:
            v.error("gp.length_scales", f"needs one entry per player ({n}), got {len(gp['length_scales'])}")
        if gp["noise_variance"] is None:
            gp["noise_variance"] = game["noise_std"] ** 2
        if sid == "infinite" and solver["x0"] is not None and len(solver["x0"]) != n:
            v.error("solver.x0", f"needs one entry per player ({n}), got {len(solver['x0'])}")
    if v.problems:
        raise ConfigError(v.problems)
    return cfg


def load_config(path) -> dict:
    """Read and validate a TOML config or a JSON manifest written by a previous run."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc.strerror or exc}"]) from exc
    if path.suffix == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"{path}: JSON syntax error at line {exc.lineno}: {exc.msg}"]) from exc
        if isinstance(raw, dict) and "config" in raw:
            raw = raw["config"]
        return validate(strip_nulls(raw))
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: TOML syntax error: {exc}"]) from exc
    return validate(raw, text)


def strip_nulls(obj):
    # manifests store unset optionals as null; TOML has no null
    if isinstance(obj, dict):
        return {k: strip_nulls(v) for k, v in obj.items() if v is not None}
    return obj
