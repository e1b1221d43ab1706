"""Unilateral-deviation paths and solver traces with their CSV/JSON serialization."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np


def unique_deviator(a, b, atol: float = 0.0) -> int:
    """Index of the single coordinate in which profiles ``a`` and ``b`` differ.

    Raises ``ValueError`` when they differ in zero or several coordinates.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"profiles of different length: {a.shape} vs {b.shape}")
    diff = np.flatnonzero(np.abs(a - b) > atol)
    if diff.size != 1:
        raise ValueError(f"not a unilateral deviation: {a.tolist()} -> {b.tolist()} differs in {diff.size} coordinates")
    return int(diff[0])


@dataclass
class PathHistory:
    """Profiles ``x^0..x^k`` joined by unilateral moves, with measured utilities.

    ``points`` are the real action coordinates used as GP inputs (equal to the
    profiles for continuous games). ``delta_y[k-1]`` is the measured utility
    change of the deviator between steps ``k-1`` and ``k``.
    """

    profiles: list = field(default_factory=list)
    points: list = field(default_factory=list)
    deviators: list = field(default_factory=list)
    delta_y: list = field(default_factory=list)
    raw_y: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.profiles)

    def append(self, profile, point, y) -> int | None:
        """Add a measured profile; returns the deviator (``None`` for the first)."""
        point = np.asarray(point, dtype=float)
        y = np.asarray(y, dtype=float)
        dev = None
        if self.points:
            dev = unique_deviator(self.points[-1], point)
            self.deviators.append(dev)
            self.delta_y.append(float(y[dev] - self.raw_y[-1][dev]))
        self.profiles.append(tuple(profile))
        self.points.append(point)
        self.raw_y.append(y)
        return dev

    @property
    def point_array(self) -> np.ndarray:
        return np.array(self.points, dtype=float)

    @property
    def current(self):
        return self.profiles[-1]

    def noise_covariance(self, noise_variance: float, correlated: bool = False) -> np.ndarray:
        """Noise covariance of ``delta_y``.

        Independent model: ``2 nu^2 I``. Correlated model adds ``-nu^2`` between
        consecutive differences that reuse the same player's measurement.
        """
        n = len(self.delta_y)
        cov = 2.0 * noise_variance * np.eye(n)
        if correlated:
            for k in range(n - 1):
                if self.deviators[k] == self.deviators[k + 1]:
                    cov[k, k + 1] = cov[k + 1, k] = -noise_variance
        return cov

    def validate(self):
        for k in range(1, len(self.points)):
            if unique_deviator(self.points[k - 1], self.points[k]) != self.deviators[k - 1]:
                raise ValueError(f"deviator record inconsistent at step {k}")
        if len(self.delta_y) != max(len(self.points) - 1, 0):
            raise ValueError("delta_y length does not match the path")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


@dataclass
class SolveTrace:
    """Full record of a solver run.

    One row per oracle measurement or search iteration. Row keys follow
    :attr:`columns`; absent values serialize as empty CSV cells.
    """

    solver: str
    n_players: int
    rows: list[dict[str, Any]] = field(default_factory=list)
    path: PathHistory = field(default_factory=PathHistory)
    final_profile: tuple | None = None
    final_point: np.ndarray | None = None
    iterations: int = 0
    stopping_reason: str = ""
    n_oracle_calls: int = 0
    extra: dict[str, Any] = field(default_factory=dict)

    BASE_COLUMNS = ("step", "phase", "deviator")
    TAIL_COLUMNS = ("delta_y", "ei", "step_size", "p_wolfe", "clipped")

    @property
    def columns(self) -> list[str]:
        coords = [f"x_{i + 1}" for i in range(self.n_players)]
        idx = [f"a_{i + 1}" for i in range(self.n_players)] if self.solver == "finite" else []
        ys = [f"y_{i + 1}" for i in range(self.n_players)]
        return [*self.BASE_COLUMNS, *idx, *coords, *ys, *self.TAIL_COLUMNS]

    @property
    def search_rows(self) -> list[dict[str, Any]]:
        return [r for r in self.rows if r.get("phase") == "search"]

    @property
    def ei_values(self) -> list[float]:
        return [r["ei"] for r in self.search_rows if r.get("ei") is not None]

    def add_row(self, **row):
        row.setdefault("step", len(self.rows))
        unknown = set(row) - set(self.columns)
        if unknown:
            raise KeyError(f"unknown trace columns {sorted(unknown)}")
        self.rows.append(row)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        cols = self.columns
        writer.writerow(cols)
        for r in self.rows:
            writer.writerow([_fmt(r.get(c)) for c in cols])
        return buf.getvalue()

    def summary(self) -> dict[str, Any]:
        final = None if self.final_profile is None else [_jsonable(v) for v in self.final_profile]
        point = None if self.final_point is None else [float(v) for v in self.final_point]
        out = {
            "solver": self.solver,
            "final_profile": final,
            "final_point": point,
            "iterations": self.iterations,
            "stopping_reason": self.stopping_reason,
            "n_oracle_calls": self.n_oracle_calls,
        }
        out.update({k: _jsonable(v) for k, v in self.extra.items()})
        return out

    def write(self, csv_path, summary_path=None, **summary_extra):
        Path(csv_path).write_text(self.to_csv())
        if summary_path is not None:
            summary = self.summary()
            summary.update(summary_extra)
            Path(summary_path).write_text(dumps_json(summary))


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"
