"""Declarative scenario runner: ``ghd run <config>`` and ``ghd validate <config>``.

A scenario is a YAML document with five blocks (``model``, ``grid``,
``state``, ``task``, ``output``); see the README for an annotated example.
Every run writes its CSV tables together with a key-value manifest, and all
tables are byte-identical between runs of the same configuration.

Exit codes: 0 success, 2 schema or parameter error, 3 solver failure, 4 I/O
failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import ConfigError, GhdError
from .models import BUILTIN, ModelSpec, Species
from .spectral import Statistics, build_grid

EXIT_OK, EXIT_SCHEMA, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

TBA_TOL = 1e-12
EVOLVE_TOL = 1e-10
CUTOFF_OCC_TOL = 1e-8     # boundary occupation relative to the maximum on the grid
FLAT_TOL = 1e-8           # |beta(x) - beta(end)| below which the profile counts as flat

TASKS = ("gge_averages", "evolve_profile", "two_point_scan", "partitioning", "asymptotics", "free_exact")
PROFILES = ("constant", "wall", "bump", "tabulated")
KINDS = ("density", "current")

_BLOCK_KEYS = {
    "model": {"name", "params", "statistics"},
    "grid": {"rapidity_points", "cutoff", "scheme", "x", "xi"},
    "output": {"directory", "prefix", "precision"},
}
_STATE_KEYS = {
    "constant": {"profile", "beta"},
    "wall": {"profile", "left", "right", "width", "center"},
    "bump": {"profile", "base", "amplitude", "width", "center"},
    "tabulated": {"profile", "file"},
}
_TASK_KEYS = {
    "gge_averages": {"type", "charges", "x"},
    "evolve_profile": {"type", "charges", "times"},
    "two_point_scan": {"type", "observables", "times", "y", "x"},
    "partitioning": {"type", "left", "right", "xi", "theta", "observables", "times", "y", "side"},
    "asymptotics": {"type", "observables", "xi", "y", "times"},
    "free_exact": {"type", "observables", "times", "y", "x"},
}


@dataclass
class Issue:
    level: str  # "error" or "warning"
    message: str

    def __str__(self):
        return f"{self.level}: {self.message}"


class _Schema:
    """Collects schema issues while coercing values."""

    def __init__(self):
        self.issues: list[Issue] = []

    def error(self, msg: str):
        self.issues.append(Issue("error", msg))

    def block(self, cfg: dict, name: str, required: bool = True) -> dict:
        val = cfg.get(name)
        if val is None:
            if required:
                self.error(f"missing block '{name}'")
            return {}
        if not isinstance(val, dict):
            self.error(f"'{name}' must be a mapping")
            return {}
        return val

    def keys(self, d: dict, allowed: set, where: str):
        for k in d:
            if k not in allowed:
                self.error(f"unknown key '{where}.{k}'")

    def number(self, d: dict, key: str, where: str, default=None, *, positive=False,
               nonneg=False, integer=False, lo=None, hi=None):
        if key not in d or d[key] is None:
            if default is None:
                self.error(f"missing '{where}.{key}'")
            return default
        return self._coerce(d[key], f"{where}.{key}", default, positive=positive, nonneg=nonneg,
                            integer=integer, lo=lo, hi=hi)

    def _coerce(self, raw, path, default, *, positive=False, nonneg=False, integer=False, lo=None, hi=None):
        if isinstance(raw, bool):
            self.error(f"'{path}' must be a number")
            return default
        try:
            val = float(raw)
        except (TypeError, ValueError):
            self.error(f"'{path}' must be a number, got {raw!r}")
            return default
        if not np.isfinite(val):
            self.error(f"'{path}' must be finite")
            return default
        if integer:
            if val != int(val):
                self.error(f"'{path}' must be an integer")
                return default
            val = int(val)
        if positive and not val > 0:
            self.error(f"'{path}' must be positive")
        if nonneg and val < 0:
            self.error(f"'{path}' must be non-negative")
        if lo is not None and val < lo:
            self.error(f"'{path}' must be at least {lo}")
        if hi is not None and val > hi:
            self.error(f"'{path}' must be at most {hi}")
        return val

    def numbers(self, d: dict, key: str, where: str, default=None, **kw) -> list | None:
        if key not in d or d[key] is None:
            if default is None:
                self.error(f"missing '{where}.{key}'")
            return default
        raw = d[key]
        if not isinstance(raw, list):
            raw = [raw]
        if not raw:
            self.error(f"'{where}.{key}' must not be empty")
            return default
        return [self._coerce(v, f"{where}.{key}[{k}]", 0.0, **kw) for k, v in enumerate(raw)]

    def betas(self, d: dict, key: str, where: str, model, required=True) -> dict:
        raw = d.get(key)
        if raw is None:
            if required:
                self.error(f"missing '{where}.{key}'")
            return {}
        if not isinstance(raw, dict) or not raw:
            self.error(f"'{where}.{key}' must be a non-empty mapping charge -> coefficient")
            return {}
        out = {}
        for ck, cv in raw.items():
            if model is not None:
                try:
                    model.charge(ck)
                except GhdError as exc:
                    self.error(f"'{where}.{key}': {exc}")
                    continue
            out[ck] = self._coerce(cv, f"{where}.{key}.{ck}", 0.0)
        return out

    def axis(self, d: dict, key: str, where: str, required: bool):
        raw = d.get(key)
        if raw is None:
            if required:
                self.error(f"missing '{where}.{key}'")
            return None
        if not isinstance(raw, dict):
            self.error(f"'{where}.{key}' must be a mapping with min, max, points")
            return None
        self.keys(raw, {"min", "max", "points"}, f"{where}.{key}")
        lo = self.number(raw, "min", f"{where}.{key}", None)
        hi = self.number(raw, "max", f"{where}.{key}", None)
        n = self.number(raw, "points", f"{where}.{key}", None, integer=True, lo=2)
        if lo is None or hi is None or n is None:
            return None
        if not hi > lo:
            self.error(f"'{where}.{key}.max' must exceed '{where}.{key}.min'")
            return None
        return {"min": lo, "max": hi, "points": n}


# ---------------------------------------------------------------------------
# initial-state profiles


@dataclass
class Profile:
    """``beta_k(x)`` for named charges and the driving term they define."""

    kind: str
    model: ModelSpec
    columns: dict  # charge key -> callable beta(x)
    params: dict = field(default_factory=dict)

    def beta(self, x) -> dict:
        return {k: np.asarray(f(np.asarray(x, dtype=float)), dtype=float) for k, f in self.columns.items()}

    def w(self, x, theta, a=0):
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        out = 0.0
        for k, f in self.columns.items():
            out = out + f(x) * self.model.charge(k)(theta, a)
        return out + 0.0 * x + 0.0 * theta

    def at(self, x0: float):
        """Driving term ``w(theta, a)`` frozen at position ``x0``."""
        return lambda theta, a=0: self.w(x0, theta, a)

    def flat_region(self, x: np.ndarray):
        """Nodes where the profile differs from its end values, or ``None``."""
        cols = self.beta(x)
        mask = np.zeros(x.size, dtype=bool)
        for b in cols.values():
            b = np.broadcast_to(b, x.shape)
            scale = max(1.0, float(np.max(np.abs(b))))
            mid = x.size // 2
            mask[:mid] |= np.abs(b[:mid] - b[0]) > FLAT_TOL * scale
            mask[mid:] |= np.abs(b[mid:] - b[-1]) > FLAT_TOL * scale
        if not mask.any():
            return None
        idx = np.flatnonzero(mask)
        return float(x[idx[0]]), float(x[idx[-1]])


def _const(v):
    return lambda x: np.full(np.shape(x), v, dtype=float)


def _wall(l, r, width, center):
    return lambda x: l + (r - l) * 0.5 * (1.0 + np.tanh((x - center) / width))


def _bump(b, amp, width, center):
    return lambda x: b + amp * np.exp(-0.5 * ((x - center) / width) ** 2)


def _table(xs, col):
    return lambda x: np.interp(x, xs, col)


def _read_table(path: Path, sch: _Schema, model) -> dict | None:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        sch.error(f"cannot read tabulated profile {str(path)!r}: {exc.strerror}")
        return None
    if len(rows) < 3 or rows[0][0].strip() != "x" or len(rows[0]) < 2:
        sch.error("tabulated profile needs a header 'x,<charge>,...' and at least two rows")
        return None
    header = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError:
        sch.error("tabulated profile contains non-numeric entries")
        return None
    if data.shape[1] != len(header) or np.any(np.diff(data[:, 0]) <= 0):
        sch.error("tabulated profile must be rectangular with strictly increasing x")
        return None
    cols = {}
    for k, name in enumerate(header[1:], start=1):
        key = int(name) if name.lstrip("-").isdigit() else name
        try:
            model.charge(key)
        except GhdError as exc:
            sch.error(f"tabulated profile: {exc}")
            continue
        cols[key] = _table(data[:, 0], data[:, k])
    return cols


def _profile(state: dict, sch: _Schema, model, base_dir: Path) -> Profile | None:
    kind = state.get("profile", "constant")
    if kind not in PROFILES:
        sch.error(f"'state.profile' must be one of {', '.join(PROFILES)}")
        return None
    sch.keys(state, _STATE_KEYS[kind], "state")
    if kind == "constant":
        b = sch.betas(state, "beta", "state", model)
        return Profile(kind, model, {k: _const(v) for k, v in b.items()}, {"beta": b})
    if kind == "wall":
        left = sch.betas(state, "left", "state", model)
        right = sch.betas(state, "right", "state", model)
        width = sch.number(state, "width", "state", 1.0, positive=True)
        center = sch.number(state, "center", "state", 0.0)
        keys = list(dict.fromkeys(list(left) + list(right)))
        cols = {k: _wall(left.get(k, 0.0), right.get(k, 0.0), width, center) for k in keys}
        return Profile(kind, model, cols, {"left": left, "right": right, "width": width, "center": center})
    if kind == "bump":
        base = sch.betas(state, "base", "state", model)
        amp = sch.betas(state, "amplitude", "state", model)
        width = sch.number(state, "width", "state", 1.0, positive=True)
        center = sch.number(state, "center", "state", 0.0)
        keys = list(dict.fromkeys(list(base) + list(amp)))
        cols = {k: _bump(base.get(k, 0.0), amp.get(k, 0.0), width, center) for k in keys}
        return Profile(kind, model, cols, {"base": base, "amplitude": amp, "width": width, "center": center})
    fname = state.get("file")
    if not isinstance(fname, str):
        sch.error("'state.file' must name a CSV file")
        return None
    path = Path(fname) if os.path.isabs(fname) else base_dir / fname
    cols = _read_table(path, sch, model)
    if cols is None:
        return None
    return Profile(kind, model, cols, {"file": fname})


# ---------------------------------------------------------------------------
# configuration


@dataclass
class Scenario:
    """Schema-validated scenario with defaults filled in."""

    model: ModelSpec
    model_cfg: dict
    grid_cfg: dict
    profile: Profile
    task: dict
    output: dict
    source: Path
    x: np.ndarray | None = None
    xi: np.ndarray | None = None

    def grid(self):
        c = self.grid_cfg["cutoff"]
        return build_grid(self.model.particle_types((-c, c)), self.grid_cfg["rapidity_points"],
                          self.grid_cfg["scheme"])


def _observable(obs, key: str, sch: _Schema, model):
    raw = obs.get(key) if isinstance(obs, dict) else None
    if not isinstance(raw, dict):
        sch.error(f"missing 'task.observables.{key}' with keys charge, kind")
        return None
    sch.keys(raw, {"charge", "kind"}, f"task.observables.{key}")
    charge = raw.get("charge")
    kind = raw.get("kind", "density")
    if kind not in KINDS:
        sch.error(f"'task.observables.{key}.kind' must be density or current")
        return None
    try:
        model.charge(charge)
    except GhdError as exc:
        sch.error(f"'task.observables.{key}.charge': {exc}")
        return None
    return {"charge": charge, "kind": kind}


def _charge_list(task: dict, sch: _Schema, model) -> list:
    raw = task.get("charges")
    if raw is None:
        return list(model.charges)
    if not isinstance(raw, list) or not raw:
        sch.error("'task.charges' must be a non-empty list")
        return []
    out = []
    for c in raw:
        try:
            model.charge(c)
            out.append(c)
        except GhdError as exc:
            sch.error(f"'task.charges': {exc}")
    return out


def _model(mcfg: dict, sch: _Schema):
    name = mcfg.get("name")
    if name not in BUILTIN:
        sch.error(f"'model.name' must be one of {', '.join(sorted(BUILTIN))}")
        return None
    params = mcfg.get("params") or {}
    if not isinstance(params, dict):
        sch.error("'model.params' must be a mapping")
        return None
    clean = {}
    for k, v in params.items():
        clean[k] = sch._coerce(v, f"model.params.{k}", None)
    if any(v is None for v in clean.values()):
        return None
    try:
        model = BUILTIN[name](**clean)
    except TypeError as exc:
        sch.error(f"bad parameters for model {name!r}: {exc}")
        return None
    except GhdError as exc:
        sch.error(f"model {name!r}: {exc}")
        return None
    stat = mcfg.get("statistics")
    if stat is not None:
        try:
            stat = Statistics.parse(stat)
        except ValueError:
            sch.error("'model.statistics' must be fermion, boson, classical or radiative")
            return None
        model = dataclasses.replace(model, species=tuple(Species(s.name, stat) for s in model.species))
    return model


def parse_config(cfg, source: Path | str = "config.yaml") -> tuple[Scenario | None, list[Issue]]:
    """Schema validation; returns the resolved scenario (or ``None``) and the issues found."""
    source = Path(source)
    sch = _Schema()
    if not isinstance(cfg, dict):
        sch.error("configuration must be a mapping with blocks model, grid, state, task, output")
        return None, sch.issues
    for k in cfg:
        if k not in ("model", "grid", "state", "task", "output"):
            sch.error(f"unknown block '{k}'")
    mcfg = sch.block(cfg, "model")
    sch.keys(mcfg, _BLOCK_KEYS["model"], "model")
    gcfg = sch.block(cfg, "grid")
    sch.keys(gcfg, _BLOCK_KEYS["grid"], "grid")
    scfg = sch.block(cfg, "state")
    tcfg = sch.block(cfg, "task")
    ocfg = sch.block(cfg, "output", required=False)
    sch.keys(ocfg, _BLOCK_KEYS["output"], "output")
    model = _model(mcfg, sch) if mcfg else None

    grid = {
        "rapidity_points": sch.number(gcfg, "rapidity_points", "grid", 64, integer=True, lo=8),
        "cutoff": sch.number(gcfg, "cutoff", "grid", model.default_cutoff if model else 1.0, positive=True),
        "scheme": gcfg.get("scheme", "gauss_legendre"),
    }
    if grid["scheme"] not in ("gauss_legendre", "uniform_trapezoid"):
        sch.error("'grid.scheme' must be gauss_legendre or uniform_trapezoid")
    ttype = tcfg.get("type")
    if ttype not in TASKS:
        sch.error(f"'task.type' must be one of {', '.join(TASKS)}")
        ttype = None
    needs_x = ttype in ("evolve_profile", "two_point_scan", "asymptotics")
    grid["x"] = sch.axis(gcfg, "x", "grid", needs_x)
    grid["xi"] = sch.axis(gcfg, "xi", "grid", False)

    output = {
        "directory": str(ocfg.get("directory", "output")),
        "prefix": str(ocfg.get("prefix", "")),
        "precision": sch.number(ocfg, "precision", "output", 17, integer=True, lo=1, hi=17),
    }
    if any(c in output["prefix"] for c in "/\\"):
        sch.error("'output.prefix' must not contain path separators")

    profile = _profile(scfg, sch, model, source.parent) if (model is not None and scfg) else None
    task = {"type": ttype}
    if model is not None and ttype is not None:
        sch.keys(tcfg, _TASK_KEYS[ttype], "task")
        task.update(_task(ttype, tcfg, sch, model, grid, scfg))
    if sch.issues:
        return None, sch.issues
    x = None
    if grid["x"] is not None:
        gx = grid["x"]
        x = np.linspace(gx["min"], gx["max"], gx["points"])
    xi = None
    if grid["xi"] is not None:
        gxi = grid["xi"]
        xi = np.linspace(gxi["min"], gxi["max"], gxi["points"])
    if ttype in ("partitioning", "asymptotics") and task.get("xi") is None:
        if xi is None:
            sch.error(f"task {ttype} needs 'task.xi' or 'grid.xi'")
            return None, sch.issues
        task["xi"] = [float(v) for v in xi]
    sc = Scenario(model, {"name": mcfg["name"], "params": dict(mcfg.get("params") or {}),
                          "statistics": mcfg.get("statistics")},
                  grid, profile, task, output, source, x, xi)
    _check_nodes(sc, sch)
    return (sc if not sch.issues else None), sch.issues


def _task(ttype: str, t: dict, sch: _Schema, model, grid: dict, scfg: dict) -> dict:
    out = {}
    if ttype == "gge_averages":
        out["charges"] = _charge_list(t, sch, model)
        out["x"] = sch.number(t, "x", "task", 0.0)
    elif ttype == "evolve_profile":
        out["charges"] = _charge_list(t, sch, model)
        out["times"] = sch.numbers(t, "times", "task", None, nonneg=True)
    elif ttype in ("two_point_scan", "free_exact"):
        obs = t.get("observables")
        out["A"] = _observable(obs, "A", sch, model)
        out["B"] = _observable(obs, "B", sch, model)
        out["times"] = sch.numbers(t, "times", "task", None, positive=True)
        out["y"] = sch.numbers(t, "y", "task", [0.0])
        out["x"] = sch.numbers(t, "x", "task", None) if "x" in t else None
        if ttype == "free_exact" and out["x"] is None and grid.get("x") is None:
            sch.error("task free_exact needs 'task.x' or 'grid.x'")
    elif ttype == "partitioning":
        for side in ("left", "right"):
            if side in t:
                out[side] = sch.betas(t, side, "task", model)
            elif scfg.get("profile") == "wall":
                out[side] = sch.betas(scfg, side, "state", model)
            else:
                sch.error(f"task partitioning needs 'task.{side}' or a wall profile")
        out["xi"] = sch.numbers(t, "xi", "task", None) if "xi" in t else None
        out["theta"] = sch.numbers(t, "theta", "task", []) if "theta" in t else []
        out["times"] = sch.numbers(t, "times", "task", []) if "times" in t else []
        if out["times"]:
            for v in out["times"]:
                if not v > 0:
                    sch.error("'task.times' must be positive")
            obs = t.get("observables")
            out["A"] = _observable(obs, "A", sch, model)
            out["B"] = _observable(obs, "B", sch, model)
        out["y"] = sch.numbers(t, "y", "task", [0.0])
        side = t.get("side", 1)
        if side not in (1, -1):
            sch.error("'task.side' must be 1 or -1")
        out["side"] = side
    elif ttype == "asymptotics":
        obs = t.get("observables")
        out["A"] = _observable(obs, "A", sch, model)
        out["B"] = _observable(obs, "B", sch, model)
        out["xi"] = sch.numbers(t, "xi", "task", None) if "xi" in t else None
        out["y"] = sch.numbers(t, "y", "task", None)
        out["times"] = sch.numbers(t, "times", "task", [], positive=True) if "times" in t else []
    return out


def _check_nodes(sc: Scenario, sch: _Schema):
    """Positions that must coincide with spatial nodes, or lie inside the grid."""
    t = sc.task
    x = sc.x
    if sc.task["type"] == "two_point_scan":
        for v in t["x"] or []:
            if not np.any(np.abs(x - v) <= 1e-9 * max(1.0, abs(v))):
                sch.error(f"'task.x' value {v:g} is not a node of grid.x")
        for v in t["y"]:
            if not x[0] <= v <= x[-1]:
                sch.error(f"'task.y' value {v:g} lies outside grid.x")
    if sc.task["type"] == "asymptotics" and t["times"]:
        for xi in t["xi"]:
            for tt in t["times"]:
                v = xi * tt
                if not np.any(np.abs(x - v) <= 1e-9 * max(1.0, abs(v))):
                    sch.error(f"xi*t = {v:g} (xi={xi:g}, t={tt:g}) is not a node of grid.x")


# ---------------------------------------------------------------------------
# physical sanity checks


def _sample_positions(sc: Scenario) -> list:
    if sc.task["type"] == "partitioning":
        return []
    if sc.x is None:
        return [float(sc.task.get("x", 0.0))] if sc.task["type"] == "gge_averages" else [0.0]
    idx = sorted({0, sc.x.size // 4, sc.x.size // 2, (3 * sc.x.size) // 4, sc.x.size - 1})
    return [float(sc.x[i]) for i in idx]


def _driving_terms(sc: Scenario) -> list:
    """``(label, w(theta, a))`` pairs covering the states the task will build."""
    if sc.task["type"] == "partitioning":
        from .tba import DrivingTerm
        return [(side, DrivingTerm.from_charges(sc.model, sc.task[side]).func) for side in ("left", "right")]
    return [(f"x={x:.6g}", sc.profile.at(x)) for x in _sample_positions(sc)]


def physical_checks(sc: Scenario, tba_tol: float = TBA_TOL) -> list[Issue]:
    """Boson domain, cutoff adequacy and boundary-stationarity pre-checks."""
    from .tba import solve_gge

    issues = []
    grid = sc.grid()
    cutoff = sc.grid_cfg["cutoff"]
    velocity = 0.0
    dense = np.linspace(-cutoff, cutoff, 401)
    for label, w in _driving_terms(sc):
        bad = False
        for a, sp in enumerate(sc.model.species):
            if sp.statistics in (Statistics.BOSON, Statistics.RADIATIVE):
                vals = np.asarray(w(dense, a), dtype=float) * np.ones_like(dense)
                if np.min(vals) <= 0:
                    k = int(np.argmin(vals))
                    issues.append(Issue("error", f"{sp.statistics.value} driving term is non-positive at "
                                                 f"{label}, theta={dense[k]:.6g}: w={vals[k]:.6g}"))
                    bad = True
        if bad:
            continue
        try:
            st = solve_gge(w, sc.model, grid, tol=tba_tol)
        except GhdError as exc:
            issues.append(Issue("error", f"TBA solve failed at {label}: {type(exc).__name__}: {exc}"))
            continue
        nmax = max(float(np.max(st.n)), 1e-300)
        for a, sp in enumerate(sc.model.species):
            ends = st.occupation_at(np.array([-cutoff, cutoff]), a)
            k = int(np.argmax(ends))
            if ends[k] > CUTOFF_OCC_TOL * nmax:
                issues.append(Issue("warning", f"rapidity cutoff {cutoff:g} may be too small: occupation "
                                               f"n={ends[k]:.3e} at theta={(-cutoff, cutoff)[k]:g} "
                                               f"({label}, species {sp.name})"))
        # only rapidities carrying non-negligible occupation can make the boundary move
        occupied = st.n > CUTOFF_OCC_TOL * nmax
        if occupied.any():
            velocity = max(velocity, float(np.max(np.abs(st.v_eff[occupied]))))
    tmax = _max_pipeline_time(sc)
    if tmax > 0 and sc.x is not None:
        region = sc.profile.flat_region(sc.x)
        if region is not None:
            reach = velocity * tmax
            margin = min(region[0] - sc.x[0], sc.x[-1] - region[1])
            if margin <= reach:
                issues.append(Issue("warning", f"boundary may not stay stationary: inhomogeneity within "
                                               f"{margin:.4g} of the spatial boundary, but signals travel "
                                               f"{reach:.4g} by t={tmax:g} (max |v_eff| {velocity:.4g})"))
    return issues


def _max_pipeline_time(sc: Scenario) -> float:
    if sc.task["type"] in ("evolve_profile", "two_point_scan", "asymptotics"):
        return max(sc.task.get("times") or [0.0])
    return 0.0


def load_config(path) -> dict:
    """Read the YAML file; OSError propagates, YAML errors become :class:`ConfigError`."""
    with open(path) as fh:
        text = fh.read()
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse YAML: {exc}") from None


def validate(path, tolerance_scale: float = 1.0) -> list[Issue]:
    """Schema and physical-sanity issues of a configuration file (empty when valid)."""
    try:
        cfg = load_config(path)
    except ConfigError as exc:
        return [Issue("error", str(exc))]
    sc, issues = parse_config(cfg, path)
    if sc is None:
        return issues
    return issues + physical_checks(sc, TBA_TOL * tolerance_scale)


# ---------------------------------------------------------------------------
# tasks


@dataclass
class Table:
    name: str
    header: list
    rows: list


@dataclass
class RunResult:
    tables: list
    diagnostics: dict
    operations: list


def _obs(spec: dict):
    from .correlators import ObservableSpec
    if spec["kind"] == "current":
        return ObservableSpec.current(spec["charge"])
    return ObservableSpec.density(spec["charge"])


def _label(spec: dict) -> str:
    return ("j_" if spec["kind"] == "current" else "q_") + str(spec["charge"])


def _ordered_map(fn, items, threads: int) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _fluid(sc: Scenario, tol: dict):
    from .characteristics import FluidState
    return FluidState.from_profile(sc.model, sc.grid(), sc.x, sc.profile.w, tol=tol["tba"])


def _task_gge(sc: Scenario, tol: dict, threads: int) -> RunResult:
    from .tba import DrivingTerm, average_current, average_density, solve_gge
    st = solve_gge(DrivingTerm(sc.profile.at(sc.task["x"])), sc.model, sc.grid(), tol=tol["tba"])
    charges = sc.task["charges"]
    header = [f"q_{c}" for c in charges] + [f"j_{c}" for c in charges]
    row = [average_density(st, c) for c in charges] + [average_current(st, c) for c in charges]
    resid = float(np.max(np.abs(st.rho_s * 2 * np.pi - st.dress(st.p_prime, "scalar"))))
    return RunResult([Table("gge_averages", header, [row])],
                     {"rho_s_identity_residual": resid},
                     ["tba.solve_gge", "tba.average_density", "tba.average_current"])


def _trapezoid(x, y) -> float:
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def _task_evolve(sc: Scenario, tol: dict, threads: int) -> RunResult:
    from .characteristics import evolve
    fluid0 = _fluid(sc, tol)
    charges = sc.task["charges"]
    times = sc.task["times"]

    def one(t):
        return evolve(fluid0, t, tol=tol["evolve"])

    results = _ordered_map(one, times, threads)
    rows, diag = [], {}
    totals0, scales, fluxes = [], [], []
    for c in charges:
        q0, j0 = fluid0.density(c), fluid0.current(c)
        totals0.append(_trapezoid(sc.x, q0))
        h = sc.model.charge(c)
        habs = fluid0.density(lambda th, a=0, h=h: np.abs(h(th, a)))
        scales.append(max(_trapezoid(sc.x, np.abs(habs)), 1e-300))
        fluxes.append(j0[-1] - j0[0])  # boundaries are stationary: constant net outflow
    for t, (fl, chars) in zip(times, results):
        dens = [fl.density(c) for c in charges]
        for k, x in enumerate(sc.x):
            rows.append([x, t] + [d[k] for d in dens])
        drift = max(abs(_trapezoid(sc.x, d) - q0 + f * t) / s
                    for d, q0, f, s in zip(dens, totals0, fluxes, scales))
        diag[f"t={t:.17g}.characteristics_residual"] = chars.residual
        diag[f"t={t:.17g}.characteristics_iterations"] = chars.iterations
        diag[f"t={t:.17g}.charge_conservation_rel"] = drift
    header = ["x", "t"] + [f"q_{c}" for c in charges]
    return RunResult([Table("evolve_profile", header, rows)], diag,
                     ["characteristics.FluidState.from_profile", "characteristics.evolve",
                      "characteristics.FluidState.density"])


def _task_two_point(sc: Scenario, tol: dict, threads: int) -> RunResult:
    from .correlators import profile_from_action
    from .propagator import PropagatorContext, apply_propagator
    fluid0 = _fluid(sc, tol)
    A, B = _obs(sc.task["A"]), _obs(sc.task["B"])
    xs = sc.task["x"]
    ixs = list(range(fluid0.nx)) if xs is None else [fluid0.node_index(v) for v in xs]

    def one(t):
        ctx = PropagatorContext(fluid0, t, evolve_tol=tol["evolve"])
        out = []
        for y in sc.task["y"]:
            g = B.source(fluid0.state_at(y))
            action = apply_propagator(y, t, g, ctx)
            out.append((y, profile_from_action(A, action, ctx, ixs)))
        return ctx.chars.residual, out

    results = _ordered_map(one, sc.task["times"], threads)
    li, lj = _label(sc.task["A"]), _label(sc.task["B"])
    rows, diag = [], {}
    for t, (res, per_y) in zip(sc.task["times"], results):
        diag[f"t={t:.17g}.characteristics_residual"] = res
        for y, parts in per_y:
            for ix, p in zip(ixs, parts):
                rows.append([fluid0.x[ix], t, y, li, lj, p.value, p.direct, p.indirect])
    header = ["x", "t", "y", "i", "j", "value", "direct", "indirect"]
    return RunResult([Table("two_point_scan", header, rows)], diag,
                     ["characteristics.FluidState.from_profile", "propagator.PropagatorContext",
                      "propagator.apply_propagator", "correlators.profile_from_action"])


def _task_free(sc: Scenario, tol: dict, threads: int) -> RunResult:
    from .free_exact import FreeScenario, free_two_point
    c = sc.grid_cfg["cutoff"]
    scen = FreeScenario(sc.model, sc.profile.w, (-c, c))
    xs = sc.task["x"] if sc.task["x"] is not None else [float(v) for v in sc.x]
    pts = [(x, t, y) for t in sc.task["times"] for y in sc.task["y"] for x in xs]
    ci, cj = sc.task["A"], sc.task["B"]
    kinds = (ci["kind"], cj["kind"])

    def one(p):
        return free_two_point(ci["charge"], cj["charge"], p[0], p[1], p[2], scen, kinds=kinds)

    vals = _ordered_map(one, pts, threads)
    li, lj = _label(ci), _label(cj)
    rows = [[x, t, y, li, lj, v] for (x, t, y), v in zip(pts, vals)]
    return RunResult([Table("free_exact", ["x", "t", "y", "i", "j", "value"], rows)], {},
                     ["free_exact.FreeScenario", "free_exact.free_two_point"])


def _task_partitioning(sc: Scenario, tol: dict, threads: int) -> RunResult:
    from .partitioning import RaySolution, ray_correlator
    from .tba import DrivingTerm, solve_gge
    grid = sc.grid()
    left = solve_gge(DrivingTerm.from_charges(sc.model, sc.task["left"]), sc.model, grid, tol=tol["tba"])
    right = solve_gge(DrivingTerm.from_charges(sc.model, sc.task["right"]), sc.model, grid, tol=tol["tba"])
    xis = sc.task["xi"]
    # rays are solved sequentially: each solve continues from the previous one
    ray = RaySolution(left, right, xis)
    tables, diag = [], {}
    ops = ["tba.solve_gge", "partitioning.RaySolution"]
    if sc.task["theta"]:
        rows = []
        worst_zero = worst_slope = 0.0
        for a in range(grid.n_types):
            for th in sc.task["theta"]:
                xs = ray.xi_star(th, a)
                V = ray.V(th, a)
                rows.append([th, a, xs, V])
                worst_zero = max(worst_zero, abs(float(ray.u_tilde(xs, th, a))))
                worst_slope = max(worst_slope, abs(ray.du_tilde_dxi(xs, th, a) / V - 1.0))
        tables.append(Table("partitioning_rays", ["theta", "a", "xi_star", "V"], rows))
        diag["u_tilde_at_xi_star_max"] = worst_zero
        diag["du_tilde_dxi_over_V_minus_1_max"] = worst_slope
        ops += ["partitioning.RaySolution.xi_star", "partitioning.RaySolution.V"]
    rows = []
    for xi in xis:
        rs = ray.ray(xi)
        diag[f"xi={xi:.17g}.ray_iterations"] = rs.iterations
        occ = ray.occupation(xi)
        for k in range(grid.size):
            rows.append([xi, grid.theta[k], int(grid.type_of[k]), occ[k]])
    tables.append(Table("partitioning_states", ["xi", "theta", "a", "n"], rows))
    if sc.task["times"]:
        ci, cj = sc.task["A"], sc.task["B"]
        kinds = (ci["kind"], cj["kind"])
        li, lj = _label(ci), _label(cj)
        rows = []
        for t in sc.task["times"]:
            for y in sc.task["y"]:
                for xi in xis:
                    r = ray_correlator(ci["charge"], cj["charge"], xi, t, y, ray, side=sc.task["side"],
                                       kinds=kinds)
                    rows.append([xi, t, y, li, lj, r.value, r.direct, r.indirect])
        tables.append(Table("partitioning", ["xi", "t", "y", "i", "j", "value", "direct", "indirect"], rows))
        ops.append("partitioning.ray_correlator")
    return RunResult(tables, diag, ops)


def _task_asymptotics(sc: Scenario, tol: dict, threads: int) -> RunResult:
    from .asymptotics import AsymptoticContext, richardson
    from .correlators import two_point
    fluid0 = _fluid(sc, tol)
    ctx = AsymptoticContext(fluid0)
    A, B = _obs(sc.task["A"]), _obs(sc.task["B"])
    li, lj = _label(sc.task["A"]), _label(sc.task["B"])
    tables, diag = [], {"asymptotic_states_equal": int(ctx.equal)}
    ops = ["characteristics.FluidState.from_profile", "asymptotics.AsymptoticContext",
           "asymptotics.AsymptoticContext.coefficient_A"]
    rows = []
    # sequential: the shared ray cache makes results order dependent at round-off level
    for xi in sc.task["xi"]:
        for y in sc.task["y"]:
            rows.append([xi, y, li, lj, ctx.coefficient_A(A, B, xi, y)])
    tables.append(Table("asymptotics", ["xi", "y", "i", "j", "A"], rows))
    times = sc.task["times"]
    if times:
        coef = {(r[0], r[1]): r[4] for r in rows}

        def one(t):
            return [(xi, y, t * two_point(A, B, xi * t, t, y, fluid0))
                    for xi in sc.task["xi"] for y in sc.task["y"]]

        per_t = _ordered_map(one, times, threads)
        conv = []
        for t, vals in zip(times, per_t):
            conv += [[xi, y, t, li, lj, v] for xi, y, v in vals]
        tables.append(Table("asymptotics_convergence", ["xi", "y", "t", "i", "j", "tC"], conv))
        ops += ["correlators.two_point", "asymptotics.richardson"]
        if len(times) >= 2:
            for k, (xi, y, _) in enumerate(per_t[0]):
                series = [vals[k][2] for vals in per_t]
                extrap = richardson(times, series, order=1)
                a = coef[(xi, y)]
                key = f"xi={xi:.17g},y={y:.17g}"
                diag[f"{key}.richardson_tC"] = extrap
                diag[f"{key}.richardson_rel_deviation"] = abs(extrap - a) / max(abs(a), 1e-300)
    return RunResult(tables, diag, ops)


_RUNNERS = {
    "gge_averages": _task_gge,
    "evolve_profile": _task_evolve,
    "two_point_scan": _task_two_point,
    "partitioning": _task_partitioning,
    "asymptotics": _task_asymptotics,
    "free_exact": _task_free,
}


# ---------------------------------------------------------------------------
# output


def _fmt(v, precision: int) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.*g" % (precision, float(v))
    return str(v)


def render_table(table: Table, precision: int = 17) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(table.header)
    for row in table.rows:
        wr.writerow([_fmt(v, precision) for v in row])
    return buf.getvalue()


def _flatten(prefix: str, obj, out: list):
    if isinstance(obj, dict):
        for k, v in obj.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, out)
    elif isinstance(obj, (list, tuple)):
        out.append((prefix, ",".join(_fmt(v, 17) for v in obj)))
    elif obj is not None:
        out.append((prefix, _fmt(obj, 17)))


def render_manifest(sc: Scenario, result: RunResult, tol: dict, issues: list, files: list) -> str:
    items = [("package", f"ghdcorr {__version__}"), ("config", sc.source.name)]
    _flatten("model", sc.model_cfg, items)
    grid = {k: v for k, v in sc.grid_cfg.items()}
    _flatten("grid", grid, items)
    _flatten("state", {"profile": sc.profile.kind, **sc.profile.params}, items)
    _flatten("task", sc.task, items)
    _flatten("tolerance", tol, items)
    _flatten("diagnostics", result.diagnostics, items)
    for k, issue in enumerate(issues):
        items.append((f"issue.{k}", str(issue)))
    items.append(("operations", ",".join(result.operations)))
    items.append(("outputs", ",".join(files)))
    return "".join(f"{k} = {v}\n" for k, v in items)


def run(path, output_dir=None, threads: int = 1, tolerance_scale: float = 1.0,
        log=sys.stderr) -> int:
    """Run a scenario; returns the process exit code."""
    try:
        cfg = load_config(path)
    except ConfigError as exc:
        print(f"error: {exc}", file=log)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"error: cannot read {path}: {exc.strerror}", file=log)
        return EXIT_IO
    if not tolerance_scale > 0:
        print("error: --tolerance-scale must be positive", file=log)
        return EXIT_SCHEMA
    sc, issues = parse_config(cfg, path)
    if sc is None:
        for issue in issues:
            print(issue, file=log)
        return EXIT_SCHEMA
    tol = {"tba": TBA_TOL * tolerance_scale, "evolve": EVOLVE_TOL * tolerance_scale,
           "scale": float(tolerance_scale)}
    issues = issues + physical_checks(sc, tol["tba"])
    for issue in issues:
        print(issue, file=log)
    if any(i.level == "error" for i in issues):
        return EXIT_SCHEMA
    try:
        result = _RUNNERS[sc.task["type"]](sc, tol, max(1, int(threads)))
    except GhdError as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=log)
        return EXIT_SOLVER
    out = Path(output_dir) if output_dir is not None else sc.source.parent / sc.output["directory"]
    prefix = sc.output["prefix"]
    files = [f"{prefix}{t.name}.csv" for t in result.tables]
    texts = [render_table(t, sc.output["precision"]) for t in result.tables]
    manifest = render_manifest(sc, result, tol, issues, files)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in zip(files, texts):
            (out / name).write_text(text)
        (out / f"{prefix}manifest.txt").write_text(manifest)
    except OSError as exc:
        print(f"error: cannot write outputs to {out}: {exc.strerror}", file=log)
        return EXIT_IO
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ghd", description="Euler-scale GHD correlation functions")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a scenario")
    p_val = sub.add_parser("validate", help="check a scenario without running it")
    for p in (p_run, p_val):
        p.add_argument("config")
        p.add_argument("--tolerance-scale", type=float, default=1.0,
                       help="multiply all solver tolerances by this factor")
    p_run.add_argument("--output-dir", default=None, help="overrides output.directory")
    p_run.add_argument("--threads", type=int, default=1, help="worker threads for scan tasks")
    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config, args.output_dir, args.threads, args.tolerance_scale)
    try:
        issues = validate(args.config, args.tolerance_scale)
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc.strerror}", file=sys.stderr)
        return EXIT_IO
    for issue in issues:
        print(issue)
    if not issues:
        print("no issues found")
    return EXIT_SCHEMA if any(i.level == "error" for i in issues) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
