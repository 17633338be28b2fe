"""Scenario files, named experiments, CSV output and the solver comparison.

A scenario is a small JSON document::

    {"schema_version": 1, "experiment": "allocate",
     "problem": {"m_total": 800, "n_users": 2},
     "sweep": {"variable": "m_total", "values": [600, 800, 1000]},
     "output": "out.csv", "seed": 0}

Every field but ``experiment`` is optional; missing problem fields take the
defaults below, then the experiment preset.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import re
import time
from dataclasses import dataclass, field

import numpy as np

from . import allocator, fading, region, relay
from .allocator import AllocationProblem, enumeration_count
from .errors import FblError, UsageError, ValidationError
from .fbl import (
    LinkPoint,
    capacity_dispersion,
    channel_w,
    error_linear,
    error_probability,
    error_unit_dispersion,
)

log = logging.getLogger("fblopt")

SCHEMA_VERSION = 1
EXPERIMENTS = (
    "eval", "region_map", "allocate", "fading", "relay", "compare",
    "fig1", "fig2", "fig5", "fig6", "fig8",
)
METHODS = ("joint", "integer", "alternating", "rounded", "all")

# simulation-setup values; gain 1 is the normalized "power equals SNR" convention
DEFAULTS = {
    "n_users": 2,
    "d_bits": 480.0,
    "d_ratio": None,
    "gain": 1.0,
    "m_total": 800.0,
    "e_total": 2400.0,
    "sigma2": 0.01,
    "eps_max": 0.1,
    "gamma_th": 1.0,
    "method": "joint",
    "cap": allocator.DEFAULT_CAP,
    "m": 800.0,
    "p": 1.0,
    "fading": {"kind": "rayleigh-power", "mean": 1.0},
    "phi": 1000,
    "phi_policy": 16,
    "n_samples": 200_000,
    "m_bar": 520.0,
    "e_bar": 10.4,
    "m_bounds": [50.0, 2000.0],
    "p_bounds": [1e-4, 1.0],
    "grid_n": 50,
    "gamma_range": [1.0, 30.0],
    "m_range": [100.0, 2000.0],
    "seeds": 5,
}

PRESETS = {
    "eval": ({}, None),
    "region_map": ({}, None),
    "allocate": ({}, None),
    "fading": ({"m": 520.0, "p": 0.02}, None),
    "relay": ({}, None),
    "compare": ({"m_total": 60.0, "e_total": 180.0, "d_bits": 40.0}, None),
    "fig1": ({}, {"variable": "p", "start": 0.05, "stop": 200.0, "count": 60, "scale": "log"}),
    "fig2": ({}, None),
    "fig5": ({"method": "all"}, {"variable": "m_total", "values": [600.0, 800.0, 1000.0]}),
    "fig6": ({"n_users": 5, "gain": 10.0, "d_ratio": [0.8, 0.9, 1.0, 1.1, 1.2]},
             {"variable": "m_total", "values": [600.0, 800.0, 1000.0]}),
    "fig8": ({}, {"variable": "gain[1]", "values": [0.5, 1.0, 2.0, 4.0, 8.0]}),
}

BASE_EXPERIMENT = {"fig1": "eval", "fig2": "region_map", "fig5": "allocate", "fig6": "allocate",
                   "fig8": "relay"}


@dataclass
class Sweep:
    variable: str
    values: list

    @classmethod
    def from_dict(cls, data, problem) -> "Sweep":
        if not isinstance(data, dict):
            raise ValidationError("must be an object", "sweep")
        extra = set(data) - {"variable", "values", "start", "stop", "count", "scale"}
        if extra:
            raise ValidationError(f"unknown field {sorted(extra)[0]!r}", "sweep")
        var = data.get("variable")
        if not isinstance(var, str):
            raise ValidationError("variable must be a string", "sweep.variable")
        _get_field(problem, var)
        if "values" in data:
            vals = data["values"]
            if not isinstance(vals, list) or not vals:
                raise ValidationError("values must be a non-empty list", "sweep.values")
            return cls(var, list(vals))
        try:
            start, stop, count = float(data["start"]), float(data["stop"]), int(data["count"])
        except (KeyError, TypeError, ValueError):
            raise ValidationError("needs values or start/stop/count", "sweep") from None
        if count < 1:
            raise ValidationError("count must be >= 1", "sweep.count")
        scale = data.get("scale", "linear")
        if scale == "linear":
            vals = np.linspace(start, stop, count)
        elif scale == "log":
            if start <= 0 or stop <= 0:
                raise ValidationError("log sweep needs positive bounds", "sweep")
            vals = np.geomspace(start, stop, count)
        else:
            raise ValidationError(f"unknown scale {scale!r}", "sweep.scale")
        return cls(var, [float(v) for v in vals])

    def to_dict(self) -> dict:
        return {"variable": self.variable, "values": list(self.values)}


@dataclass
class Scenario:
    experiment: str
    problem: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))
    sweep: Sweep | None = None
    output: str | None = None
    seed: int = 0
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "experiment": self.experiment,
            "problem": copy.deepcopy(self.problem),
            "sweep": None if self.sweep is None else self.sweep.to_dict(),
            "output": self.output,
            "seed": self.seed,
        }


_INDEXED = re.compile(r"^([a-z_0-9]+)\[(\d+)\]$")


def _get_field(problem, path):
    m = _INDEXED.match(path)
    name, idx = (m.group(1), int(m.group(2))) if m else (path, None)
    if name not in problem:
        raise ValidationError(f"unknown problem field {name!r}", "sweep.variable")
    return name, idx


def _set_field(problem, path, value):
    name, idx = _get_field(problem, path)
    if idx is None:
        problem[name] = value
        return
    cur = problem[name]
    if not isinstance(cur, list):
        cur = [cur] * max(int(problem.get("n_users", 2)), idx + 1)
    cur = list(cur)
    if idx >= len(cur):
        raise ValidationError(f"index {idx} out of range", f"problem.{name}")
    cur[idx] = value
    problem[name] = cur


def scenario_from_dict(data: dict, experiment: str | None = None) -> Scenario:
    if not isinstance(data, dict):
        raise ValidationError("scenario must be a JSON object")
    allowed = {"schema_version", "experiment", "problem", "sweep", "output", "seed"}
    for key in data:
        if key not in allowed:
            raise ValidationError("unknown field", key)
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValidationError(f"unsupported version {version!r}", "schema_version")
    exp = data.get("experiment", experiment)
    if exp is None:
        raise ValidationError("missing", "experiment")
    if exp not in EXPERIMENTS:
        raise ValidationError(f"unknown experiment {exp!r}", "experiment")
    if experiment is not None and exp != experiment:
        raise ValidationError(f"scenario is for {exp!r}, command asks for {experiment!r}", "experiment")
    overrides, preset_sweep = PRESETS[exp]
    problem = copy.deepcopy(DEFAULTS)
    problem.update(copy.deepcopy(overrides))
    payload = data.get("problem", {})
    if not isinstance(payload, dict):
        raise ValidationError("must be an object", "problem")
    for key, value in payload.items():
        if key not in DEFAULTS:
            raise ValidationError("unknown field", f"problem.{key}")
        problem[key] = value
    _check_problem(problem)
    sweep_data = data.get("sweep", preset_sweep)
    sweep = None if sweep_data is None else Sweep.from_dict(sweep_data, problem)
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ValidationError("must be an integer", "seed")
    out = data.get("output")
    if out is not None and not isinstance(out, str):
        raise ValidationError("must be a string", "output")
    return Scenario(exp, problem, sweep, out, seed, version)


def _check_problem(problem):
    numeric = ("m_total", "e_total", "sigma2", "eps_max", "gamma_th", "m", "p", "m_bar", "e_bar")
    for key in numeric:
        v = problem[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValidationError("must be a number", f"problem.{key}")
    for key in ("n_users", "phi", "phi_policy", "n_samples", "grid_n", "seeds", "cap"):
        v = problem[key]
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise ValidationError("must be a positive integer", f"problem.{key}")
    if problem["method"] not in METHODS:
        raise ValidationError(f"must be one of {METHODS}", "problem.method")
    if not isinstance(problem["fading"], dict):
        raise ValidationError("must be an object", "problem.fading")


def load_scenario(path, experiment: str | None = None) -> Scenario:
    """Read and validate a scenario file.  Missing files raise ``OSError``."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return scenario_from_dict(data, experiment)


def default_scenario(experiment: str) -> Scenario:
    return scenario_from_dict({"experiment": experiment})


# --------------------------------------------------------------------------
# problem construction from a flat payload
# --------------------------------------------------------------------------

def _vector(value, n, name):
    if isinstance(value, list):
        if len(value) != n:
            raise ValidationError(f"needs {n} entries, got {len(value)}", f"problem.{name}")
        return tuple(float(v) for v in value)
    return (float(value),) * n


def allocation_problem(pb: dict) -> AllocationProblem:
    n = int(pb["n_users"])
    if pb["d_ratio"] is not None:
        d = tuple(float(r) * float(pb["d_bits"]) for r in _vector(pb["d_ratio"], n, "d_ratio"))
    else:
        d = _vector(pb["d_bits"], n, "d_bits")
    return AllocationProblem(
        d_bits=d,
        gain=_vector(pb["gain"], n, "gain"),
        m_total=float(pb["m_total"]),
        e_total=float(pb["e_total"]),
        eps_max=float(pb["eps_max"]),
        gamma_th=float(pb["gamma_th"]),
    )


def relay_problem(pb: dict) -> relay.RelayProblem:
    return relay.RelayProblem(
        d_bits=float(pb["d_bits"]),
        gain=_vector(pb["gain"], 2, "gain"),
        m_total=float(pb["m_total"]),
        e_total=float(pb["e_total"]),
        eps_max=float(pb["eps_max"]),
        gamma_th=float(pb["gamma_th"]),
    )


# --------------------------------------------------------------------------
# experiments: each returns a list of row dicts for one sweep point
# --------------------------------------------------------------------------

def _alloc_row(res, timing):
    row = {"method": res.method, "objective": res.objective}
    for i in range(len(res.m)):
        row[f"m_{i}"] = float(res.m[i])
        row[f"p_{i}"] = float(res.p[i])
        row[f"eps_{i}"] = float(res.eps[i])
    row["binding_blocklength"] = res.binding["blocklength"]
    row["binding_energy"] = res.binding["energy"]
    row["iterations"] = res.stats.iterations
    row["region_warnings"] = len(res.warnings)
    if timing:
        row["wall_time"] = res.stats.wall_time
    return row


def _run_eval(pb, ctx):
    pt = LinkPoint(m=float(pb["m"]), p=float(pb["p"]), g=float(_vector(pb["gain"], 1, "gain")[0]),
                   d_bits=float(_vector(pb["d_bits"], 1, "d_bits")[0]))
    c, v = capacity_dispersion(pt.gamma)
    return [{
        "m": pt.m, "p": pt.p, "gamma": pt.gamma, "rate": pt.rate, "capacity": c, "dispersion": v,
        "w": channel_w(pt), "eps": error_probability(pt), "eps_linear": error_linear(pt),
        "eps_unit_dispersion": error_unit_dispersion(pt),
    }]


def _run_region(pb, ctx):
    g = float(_vector(pb["gain"], 1, "gain")[0])
    d = float(_vector(pb["d_bits"], 1, "d_bits")[0])
    grid = region.log_grid(tuple(pb["gamma_range"]), tuple(pb["m_range"]), d, int(pb["grid_n"]), g)
    rep = region.numeric_psd_scan(grid, float(pb["eps_max"]), float(pb["gamma_th"]))
    return rep.rows


def _solve(problem, method, cap):
    if method == "joint":
        return allocator.solve_joint(problem)
    if method == "integer":
        return allocator.solve_integer(problem, cap=cap)
    if method == "alternating":
        return allocator.solve_alternating(problem)
    return allocator.round_solution(problem, allocator.solve_joint(problem))


def _run_allocate(pb, ctx):
    problem = allocation_problem(pb)
    methods = ("joint", "integer", "alternating") if pb["method"] == "all" else (pb["method"],)
    rows = []
    for method in methods:
        try:
            rows.append(_alloc_row(_solve(problem, method, ctx["cap"]), ctx["timing"]))
        except FblError as exc:
            rows.append({"method": method, **_error_cells(exc)})
    return rows


def _run_fading(pb, ctx):
    model = fading.FadingModel.from_dict(pb["fading"])
    m, p, d, s2 = float(pb["m"]), float(pb["p"]), float(_vector(pb["d_bits"], 1, "d_bits")[0]), float(pb["sigma2"])
    phi = int(ctx["phi"] or pb["phi"])
    ch = fading.quantize(model, phi)
    row = {
        "m": m, "p": p, "phi": phi,
        "eps_avg": fading.expected_error_avg(model, m, p, d, s2, max(16, phi)),
        "eps_quantized": fading.expected_error_csi(ch, np.full(phi, m), np.full(phi, p), d, s2),
        "eps_monte_carlo": fading.monte_carlo_error(model, m, p, d, s2, int(pb["n_samples"]), ctx["seed"]),
        "n_samples": int(pb["n_samples"]),
    }
    pol_ch = fading.quantize(model, int(pb["phi_policy"]))
    pol = fading.solve_per_state(pol_ch, d, s2, float(pb["m_bar"]), float(pb["e_bar"]))
    row["csi_policy_states"] = pol_ch.phi
    row["csi_policy_objective"] = pol.objective
    avg = fading.solve_avg_csi(model, d, s2, pb["m_bounds"], pb["p_bounds"], float(pb["e_bar"]),
                               quad_points=max(16, min(phi, 1024)))
    row.update(avg_csi_m=avg.m, avg_csi_p=avg.p, avg_csi_objective=avg.objective, avg_csi_rounds=avg.rounds)
    return [row]


def _run_relay(pb, ctx):
    prob = relay_problem(pb)
    res = relay.solve_relay(prob)
    rep = relay.gap_report(res, prob.eps_max)
    bal = relay.balanced_split(prob)
    row = {
        "gain_1": prob.gain[0], "gain_2": prob.gain[1],
        "m_1": float(res.m[0]), "m_2": float(res.m[1]), "p_1": float(res.p[0]), "p_2": float(res.p[1]),
        "m_ratio": float(res.m[0] / res.m[1]), "p_ratio": float(res.p[0] / res.p[1]),
        "eps_1": rep["eps1"], "eps_2": rep["eps2"], "eps_overall": rep["eps_overall"],
        "eps_sum": rep["eps_sum"], "cross_term": rep["cross_term"], "cross_term_ok": rep["ok"],
        "balanced_objective": bal["objective"], "balanced_feasible": bal["feasible"],
        "iterations": res.stats.iterations,
    }
    if ctx["timing"]:
        row["wall_time"] = res.stats.wall_time
    return [row]


def _run_compare(pb, ctx):
    return compare_solvers(allocation_problem(pb), int(pb["seeds"]), seed=ctx["seed"],
                           cap=ctx["cap"], timing=ctx["timing"])


RUNNERS = {
    "eval": _run_eval,
    "region_map": _run_region,
    "allocate": _run_allocate,
    "fading": _run_fading,
    "relay": _run_relay,
    "compare": _run_compare,
}


def compare_solvers(problem: AllocationProblem, seeds: int = 5, seed: int = 0,
                    cap: int = allocator.DEFAULT_CAP, timing: bool = False) -> list[dict]:
    """One row per solver; alternating is restarted from ``seeds`` random power vectors."""
    rows = []

    def run(name, fn):
        t0 = time.perf_counter()
        try:
            res = fn()
        except FblError as exc:
            row = {"solver": name, **_error_cells(exc)}
        else:
            row = {"solver": name, "objective": res.objective, "iterations": res.stats.iterations,
                   "status": "ok", "error": ""}
        if timing:
            row["wall_time"] = time.perf_counter() - t0
        rows.append(row)
        return row

    joint = {}

    def do_joint():
        joint["res"] = allocator.solve_joint(problem)
        return joint["res"]

    run("joint", do_joint)
    if "res" in joint:
        run("joint+round", lambda: allocator.round_solution(problem, joint["res"]))
    count = enumeration_count(problem.m_total, problem.n_users)
    if count > cap:
        rows.append({"solver": "integer", "status": "skipped: cap", "error": "",
                     "enumeration_count": count})
    else:
        run("integer", lambda: allocator.solve_integer(problem, cap=cap))

    rng = np.random.Generator(np.random.MT19937(seed))
    pmin = problem.p_min
    hi = np.maximum(2.0 * problem.e_total / problem.m_total, 2.0 * pmin)
    objs = []
    t0 = time.perf_counter()
    n_fail = 0
    for _ in range(seeds):
        p0 = pmin + rng.random(problem.n_users) * (hi - pmin)
        try:
            objs.append(allocator.solve_alternating(problem, p_init=p0).objective)
        except FblError:
            n_fail += 1
    row = {"solver": "alternating", "seeds": seeds, "failed_seeds": n_fail}
    if objs:
        row.update(objective=float(np.min(objs)), objective_median=float(np.median(objs)),
                   objective_worst=float(np.max(objs)), status="ok", error="")
    else:
        row.update(status="error", error="every random start failed")
    if timing:
        row["wall_time"] = time.perf_counter() - t0
    rows.append(row)
    return rows


def _error_cells(exc):
    return {"status": "error", "error": f"{type(exc).__name__}: {exc}"}


def run_experiment(scenario: Scenario, *, timing: bool = False, phi: int | None = None,
                   cap: int | None = None, seed: int | None = None) -> list[dict]:
    """Rows for every sweep point, in sweep order.  Failing points keep their row."""
    base = BASE_EXPERIMENT.get(scenario.experiment, scenario.experiment)
    runner = RUNNERS[base]
    ctx = {
        "timing": timing,
        "phi": phi,
        "cap": int(cap if cap is not None else scenario.problem["cap"]),
        "seed": int(seed if seed is not None else scenario.seed),
    }
    points = [(None, None)] if scenario.sweep is None else [
        (scenario.sweep.variable, v) for v in scenario.sweep.values
    ]
    rows = []
    for k, (var, value) in enumerate(points):
        pb = copy.deepcopy(scenario.problem)
        head = {"experiment": scenario.experiment, "index": k}
        if var is not None:
            head[var] = value
        try:
            if var is not None:
                _set_field(pb, var, value)
            out = runner(pb, ctx)
        except FblError as exc:
            out = [_error_cells(exc)]
        for r in out:
            row = {**head, **r}
            row.setdefault("status", "ok")
            row.setdefault("error", "")
            rows.append(row)
            log.info("row %d: %s", k, row["status"])
    return rows


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

def _cell(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        text = format(float(value), ".17g")
        if re.fullmatch(r"-?\d+", text):
            text += ".0"
        return text
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return ""
    return str(value)


def header_for(rows) -> list[str]:
    keys = []
    seen = set()
    for row in rows:
        for k in row:
            if k not in seen:
                seen.add(k)
                keys.append(k)
    if any(_nan_keys(r) for r in rows) and "status" not in seen:
        keys.append("status")
    return keys


def _nan_keys(row):
    return [k for k, v in row.items() if isinstance(v, (float, np.floating)) and math.isnan(v)]


def format_csv(rows, header=None) -> str:
    """RFC 4180 text: CRLF line ends, minimal quoting, 17 significant digits.

    NaN becomes an empty cell and the row's ``status`` gains ``nan:<key>``.
    """
    rows = list(rows)
    header = list(header) if header is not None else header_for(rows)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\r\n")
    wr.writerow(header)
    for row in rows:
        flags = [f"nan:{k}" for k in _nan_keys(row)]
        cells = []
        for k in header:
            v = row.get(k)
            if k == "status" and flags:
                v = ";".join(([str(v)] if v not in (None, "") else []) + flags)
            elif isinstance(v, (float, np.floating)) and math.isnan(v):
                v = None
            cells.append(_cell(v))
        wr.writerow(cells)
    return buf.getvalue()


def emit_csv(rows, path) -> None:
    text = format_csv(rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _parse(text):
    if text == "":
        return ""
    if re.fullmatch(r"-?\d+", text):
        return int(text)
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return float(text)
    except ValueError:
        return text


def parse_csv(text) -> list[dict]:
    """Inverse of :func:`format_csv`; flagged NaN cells come back as NaN."""
    rd = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(rd)
    except StopIteration:
        return []
    rows = []
    for rec in rd:
        row = {k: _parse(v) for k, v in zip(header, rec)}
        status = row.get("status")
        if isinstance(status, str) and "nan:" in status:
            parts = status.split(";")
            for part in parts:
                if part.startswith("nan:"):
                    row[part[4:]] = math.nan
            rest = [p for p in parts if not p.startswith("nan:")]
            row["status"] = ";".join(rest)
        rows.append(row)
    return rows


def read_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_csv(fh.read())
