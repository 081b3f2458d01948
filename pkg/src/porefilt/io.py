"""Run-configuration parsing and deterministic result serialization.

One JSON config file describes one run: it carries exactly one command
payload (``simulate``, ``optimize``, ``multistage`` or ``sweep``) plus an
optional ``out`` directory.  Unknown keys anywhere in the file are hard
errors -- a config that silently ignores a typo is worse than one that
refuses to run.

All emitted files are deterministic functions of the config (and seed):
numbers are written with 9 significant digits, which round-trips IEEE
doubles to ~1e-9 relative, and no file contains wall-clock information.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

from .errors import ConfigError, PorefiltError
from .model import FeedSpec, ScreeningParams, ShapeFunction
from .multistage import MultiStageResult, StagePlan, SweepRow
from .optimize import FeasibilityReport, OptimizationResult, ProblemSpec, SearchConfig
from .simulate import CONSTANT_FLUX, CONSTANT_PRESSURE, SimConfig, SimRecord, compute_metrics

COMMANDS = ("simulate", "optimize", "multistage", "sweep")

_FMT = "%.9g"


# ---------------------------------------------------------------------------
# config parsing


def _require_mapping(obj, ctx: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{ctx} must be a JSON object, got {type(obj).__name__}")
    return obj


def _check_keys(d: dict, allowed, ctx: str) -> None:
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {ctx}: {', '.join(unknown)}")


def _floats(value, ctx: str) -> list[float]:
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{ctx} must be a non-empty list of numbers")
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{ctx} must contain only numbers")
        out.append(float(v))
    return out


def load_config(path: str) -> dict:
    """Read a config file and validate its top-level structure.

    Returns a dict with keys ``command`` (one of COMMANDS), ``payload``
    (the unvalidated payload dict) and ``out`` (directory or None).
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    raw = _require_mapping(raw, "config")
    _check_keys(raw, COMMANDS + ("out",), "config")
    present = [k for k in COMMANDS if k in raw]
    if len(present) != 1:
        raise ConfigError(
            f"config must carry exactly one of {'/'.join(COMMANDS)}, found {present or 'none'}"
        )
    out = raw.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError("'out' must be a string path")
    return {
        "command": present[0],
        "payload": _require_mapping(raw[present[0]], present[0]),
        "out": out,
    }


def feed_from_config(d, ctx: str = "feed") -> FeedSpec:
    d = _require_mapping(d, ctx)
    _check_keys(d, ("xi", "beta", "lam1", "lam", "screening"), ctx)
    if "xi" not in d or "beta" not in d:
        raise ConfigError(f"{ctx} needs 'xi' and 'beta' lists")
    xi = _floats(d["xi"], f"{ctx}.xi")
    beta = _floats(d["beta"], f"{ctx}.beta")
    lam1 = d.get("lam1", 1.0)
    if isinstance(lam1, bool) or not isinstance(lam1, (int, float)):
        raise ConfigError(f"{ctx}.lam1 must be a number")
    lam = _floats(d["lam"], f"{ctx}.lam") if "lam" in d else None
    screening = None
    if d.get("screening") is not None:
        entries = d["screening"]
        if not isinstance(entries, list) or len(entries) != len(xi):
            raise ConfigError(f"{ctx}.screening must list one entry (or null) per species")
        lams = lam if lam is not None else [b * float(lam1) for b in beta]
        screening = []
        for i, entry in enumerate(entries):
            if entry is None:
                screening.append(None)
                continue
            entry = _require_mapping(entry, f"{ctx}.screening[{i}]")
            _check_keys(entry, ("lambda_fouled", "h0"), f"{ctx}.screening[{i}]")
            try:
                screening.append(
                    ScreeningParams(
                        lambda_clean=lams[i],
                        lambda_fouled=float(entry["lambda_fouled"]),
                        h0=float(entry.get("h0", 1.0)),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad {ctx}.screening[{i}]: {exc}") from exc
    try:
        return FeedSpec.from_fractions(xi, beta, lam1=float(lam1), lam=lam, screening=screening)
    except PorefiltError as exc:
        raise ConfigError(f"bad {ctx}: {exc}") from exc


_SIM_KEYS = (
    "mode", "n_x", "dt", "flux_fraction", "n_steps", "radius_floor",
    "step_cap", "max_steps", "p_init_max", "p_ratio_max", "screening",
)


def sim_from_config(d, ctx: str = "sim") -> SimConfig:
    if d is None:
        return SimConfig()
    d = _require_mapping(d, ctx)
    _check_keys(d, _SIM_KEYS, ctx)
    kwargs = dict(d)
    mode = kwargs.get("mode", CONSTANT_PRESSURE)
    if mode not in (CONSTANT_PRESSURE, CONSTANT_FLUX):
        raise ConfigError(f"{ctx}.mode must be '{CONSTANT_PRESSURE}' or '{CONSTANT_FLUX}'")
    try:
        return SimConfig(**kwargs)
    except (PorefiltError, TypeError) as exc:
        raise ConfigError(f"bad {ctx}: {exc}") from exc


def shape_from_config(value, ctx: str = "shape") -> ShapeFunction:
    try:
        return ShapeFunction(tuple(_floats(value, ctx)))
    except PorefiltError as exc:
        raise ConfigError(f"bad {ctx}: {exc}") from exc


def problem_from_config(d, feed: FeedSpec, sim: SimConfig, ctx: str = "problem") -> ProblemSpec:
    d = _require_mapping(d, ctx)
    _check_keys(d, ("kind", "method", "weights", "removal_min", "acm_removal_min"), ctx)
    if "kind" not in d:
        raise ConfigError(f"{ctx} needs 'kind'")
    kwargs = {"kind": d["kind"], "feed": feed, "sim": sim}
    if "method" in d:
        kwargs["method"] = d["method"]
    if "weights" in d:
        w = _floats(d["weights"], f"{ctx}.weights")
        if len(w) != 2:
            raise ConfigError(f"{ctx}.weights must have exactly two entries")
        kwargs["weights"] = tuple(w)
    for key in ("removal_min", "acm_removal_min"):
        if key in d:
            kwargs[key] = float(d[key])
    try:
        return ProblemSpec(**kwargs)
    except PorefiltError as exc:
        raise ConfigError(f"bad {ctx}: {exc}") from exc


_SEARCH_KEYS = (
    "degree", "bounds", "n_starts", "seed", "step_tol", "objective_tol",
    "max_iter", "start", "search_dt",
)


def search_from_config(d, ctx: str = "search", seed_override: int | None = None) -> SearchConfig:
    d = {} if d is None else dict(_require_mapping(d, ctx))
    _check_keys(d, _SEARCH_KEYS, ctx)
    if seed_override is not None:
        d["seed"] = seed_override
    if "bounds" in d and d["bounds"] is not None:
        bounds = d["bounds"]
        if not isinstance(bounds, list):
            raise ConfigError(f"{ctx}.bounds must be a list of [lo, hi] pairs")
        pairs = []
        for i, pair in enumerate(bounds):
            vals = _floats(pair, f"{ctx}.bounds[{i}]")
            if len(vals) != 2:
                raise ConfigError(f"{ctx}.bounds[{i}] must be a [lo, hi] pair")
            pairs.append(tuple(vals))
        d["bounds"] = tuple(pairs)
    if "start" in d and d["start"] is not None:
        d["start"] = tuple(_floats(d["start"], f"{ctx}.start"))
    try:
        return SearchConfig(**d)
    except (PorefiltError, TypeError) as exc:
        raise ConfigError(f"bad {ctx}: {exc}") from exc


def plan_from_config(d, ctx: str = "plan") -> StagePlan:
    d = _require_mapping(d, ctx)
    _check_keys(
        d, ("shape", "l", "removal_design", "target", "adaptive", "max_stages"), ctx
    )
    if "shape" not in d:
        raise ConfigError(f"{ctx} needs 'shape' (filter coefficients)")
    kwargs = {"shape": shape_from_config(d["shape"], f"{ctx}.shape")}
    if "l" in d:
        l = d["l"]
        if not isinstance(l, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in l):
            raise ConfigError(f"{ctx}.l must be a list of integers")
        kwargs["l"] = tuple(l)
    for key in ("removal_design", "target"):
        if key in d:
            kwargs[key] = float(d[key])
    if "adaptive" in d:
        if not isinstance(d["adaptive"], bool):
            raise ConfigError(f"{ctx}.adaptive must be a boolean")
        kwargs["adaptive"] = d["adaptive"]
    if "max_stages" in d:
        kwargs["max_stages"] = int(d["max_stages"])
    try:
        return StagePlan(**kwargs)
    except PorefiltError as exc:
        raise ConfigError(f"bad {ctx}: {exc}") from exc


def candidates_from_config(value, ctx: str = "candidates") -> list[tuple[int, ...]]:
    if not isinstance(value, list) or len(value) == 0:
        raise ConfigError(f"{ctx} must be a non-empty list of stage-count vectors")
    out = []
    for i, cand in enumerate(value):
        if (
            not isinstance(cand, list)
            or not cand
            or not all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in cand)
        ):
            raise ConfigError(f"{ctx}[{i}] must be a list of positive integers")
        out.append(tuple(cand))
    return out


# ---------------------------------------------------------------------------
# per-command payload parsing


def parse_simulate_payload(payload: dict):
    """-> (shape, feed, sim)"""
    _check_keys(payload, ("feed", "shape", "sim"), "simulate")
    if "feed" not in payload or "shape" not in payload:
        raise ConfigError("simulate needs 'feed' and 'shape'")
    return (
        shape_from_config(payload["shape"]),
        feed_from_config(payload["feed"]),
        sim_from_config(payload.get("sim")),
    )


def parse_optimize_payload(payload: dict, seed_override: int | None = None):
    """-> (problem, search)"""
    _check_keys(payload, ("feed", "problem", "sim", "search"), "optimize")
    if "feed" not in payload or "problem" not in payload:
        raise ConfigError("optimize needs 'feed' and 'problem'")
    feed = feed_from_config(payload["feed"])
    sim = sim_from_config(payload.get("sim"))
    problem = problem_from_config(payload["problem"], feed, sim)
    search = search_from_config(payload.get("search"), seed_override=seed_override)
    return problem, search


def parse_multistage_payload(payload: dict):
    """-> (plan, feed, sim)"""
    _check_keys(payload, ("feed", "plan", "sim"), "multistage")
    if "feed" not in payload or "plan" not in payload:
        raise ConfigError("multistage needs 'feed' and 'plan'")
    return (
        plan_from_config(payload["plan"]),
        feed_from_config(payload["feed"]),
        sim_from_config(payload.get("sim")),
    )


def parse_sweep_payload(payload: dict):
    """-> (candidates, shape, feed, sim, kwargs for sweep_stage_ratios)"""
    _check_keys(
        payload, ("feed", "shape", "candidates", "removal_design", "target", "sim"), "sweep"
    )
    for key in ("feed", "shape", "candidates"):
        if key not in payload:
            raise ConfigError(f"sweep needs '{key}'")
    kwargs = {}
    if "removal_design" in payload:
        kwargs["removal_design"] = float(payload["removal_design"])
    if "target" in payload:
        kwargs["target"] = float(payload["target"])
    return (
        candidates_from_config(payload["candidates"]),
        shape_from_config(payload["shape"]),
        feed_from_config(payload["feed"]),
        sim_from_config(payload.get("sim")),
        kwargs,
    )


# ---------------------------------------------------------------------------
# serialization helpers


def _num(v) -> float | None:
    """JSON-safe number: non-finite values become null."""
    v = float(v)
    return v if math.isfinite(v) else None


def _vec(arr) -> list:
    return [_num(v) for v in np.asarray(arr, dtype=float).ravel()]


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def write_json(path: str, payload: dict) -> None:
    _write_text(path, json.dumps(payload, indent=2, allow_nan=False) + "\n")


def _csv_line(values) -> str:
    return ",".join(_FMT % v for v in values)


def timeseries_header(n_species: int) -> list[str]:
    cols = ["t", "u", "j", "p0"]
    for tag in ("c_ins", "c_acm", "R", "Rbar"):
        cols += [f"{tag}_{i + 1}" for i in range(n_species)]
    return cols


def write_timeseries(path: str, record: SimRecord) -> None:
    """Dump the per-step series: t,u,j,p0 then c_ins/c_acm/R/Rbar per species."""
    n_s = record.n_species
    lines = [",".join(timeseries_header(n_s))]
    block = np.column_stack(
        [record.t, record.u, record.j, record.p0,
         record.c_ins, record.c_acm, record.removal, record.removal_acm]
    )
    for row in block:
        lines.append(_csv_line(row))
    _write_text(path, "\n".join(lines) + "\n")


def read_timeseries(path: str) -> tuple[list[str], np.ndarray]:
    """Parse a time-series CSV back into (header, float matrix)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return header, data


def summary_payload(record: SimRecord) -> dict:
    metrics = compute_metrics(record)
    return {
        "mode": record.mode,
        "termination": record.termination,
        "t_final": _num(record.t_final),
        "j_final": _num(record.j_final),
        "u_clean": _num(record.u_clean),
        "p_init": _num(record.p_init),
        "c_acm": _vec(metrics.c_acm),
        "removal_acm": _vec(metrics.removal_acm),
        "purity": _vec(metrics.purity),
        "yield_secondary": _num(metrics.yield_secondary)
        if metrics.yield_secondary is not None
        else None,
    }


def write_profiles(path: str, x, snapshots) -> None:
    """Write pore-radius snapshots a(x, t) as columns against the grid ``x``."""
    if not snapshots:
        raise PorefiltError("no profile snapshots were recorded")
    names = ["x"] + ["a_t_" + (_FMT % t_snap) for t_snap, _ in snapshots]
    cols = [np.asarray(radii, dtype=float) for _, radii in snapshots]
    lines = [",".join(names)]
    block = np.column_stack([np.asarray(x, dtype=float)] + cols)
    for row in block:
        lines.append(_csv_line(row))
    _write_text(path, "\n".join(lines) + "\n")


def optimum_payload(result: OptimizationResult, search: SearchConfig) -> dict:
    """Serializable search report; deliberately excludes wall-clock timing."""

    def eval_dict(report):
        return {
            "coefficients": _vec(report.shape.coefficients),
            "feasible": report.feasible,
            "objective": _num(report.objective),
            "violation": _num(report.violation),
            "removal_initial": _num(report.removal_initial),
            "score": _num(report.score),
        }

    return {
        "best": eval_dict(result.best),
        "best_start": _vec(result.best_start.coefficients),
        "seed": search.seed,
        "n_starts": result.n_starts,
        "n_feasible": result.n_feasible,
        "n_evaluations": result.n_evaluations,
        "local_optima": [
            {
                "start": _vec(loc.start.coefficients),
                "n_evals": loc.n_evals,
                "converged": loc.converged,
                **eval_dict(loc.best),
            }
            for loc in result.local_optima
        ],
    }


def feasibility_payload(report: FeasibilityReport) -> dict:
    return {
        "feasible": report.feasible,
        "coefficients": _vec(report.shape.coefficients),
        "violation": _num(report.violation),
        "removal_initial": _num(report.removal_initial),
        "pressure_initial": _num(report.pressure_initial),
        "min_radius": _num(report.shape_check.min_radius),
        "max_radius": _num(report.shape_check.max_radius),
        "reasons": list(report.reasons),
    }


def stage_label(values) -> str:
    """Dash-joined stage vector, e.g. (18, 6, 2, 1) -> '18-6-2-1'."""
    return "-".join(str(int(v)) for v in values)


def _protocol_header(n_species: int) -> list[str]:
    cols = ["l", "uses", "n_filters"]
    cols += [f"c_acm_{i + 1}" for i in range(n_species)]
    cols += ["j", "yield_per_filter", "k2"]
    cols += [f"Rbar_{i + 1}" for i in range(n_species)]
    cols += ["target_met"]
    return cols


def _protocol_cells(l, result: MultiStageResult) -> list[str]:
    conc = result.batch.conc
    cells = [stage_label(l), stage_label(result.n_per_stage), str(result.n_filters)]
    cells += [_FMT % v for v in conc]
    cells += [
        _FMT % result.batch.volume,
        _FMT % result.yield_per_filter,
        _FMT % result.k2,
    ]
    cells += [_FMT % v for v in result.removal_acm]
    cells += ["1" if result.target_met else "0"]
    return cells


def write_protocol_csv(path: str, plan: StagePlan, result: MultiStageResult) -> None:
    n_s = result.batch.conc.size
    lines = [
        ",".join(_protocol_header(n_s)),
        ",".join(_protocol_cells(plan.l, result)),
    ]
    _write_text(path, "\n".join(lines) + "\n")


def write_sweep_csv(path: str, rows: list[SweepRow]) -> None:
    if not rows:
        raise PorefiltError("sweep produced no rows")
    n_s = rows[0].c_acm.size
    lines = [",".join(["rank"] + _protocol_header(n_s))]
    for rank, row in enumerate(rows, start=1):
        lines.append(",".join([str(rank)] + _protocol_cells(row.l, row.result)))
    _write_text(path, "\n".join(lines) + "\n")


def write_filters_csv(path: str, entries) -> None:
    """Per-filter ledger; ``entries`` is a list of (label, MultiStageResult)."""
    lines = ["l,stage,index,n,volume_processed,volume_discarded"]
    for label, result in entries:
        for use in result.filters:
            lines.append(
                ",".join(
                    [
                        label,
                        str(use.stage),
                        str(use.index),
                        str(use.n),
                        _FMT % use.volume_processed,
                        _FMT % use.volume_discarded,
                    ]
                )
            )
    _write_text(path, "\n".join(lines) + "\n")


def ensure_outdir(path: str | None) -> str:
    out = path or "."
    os.makedirs(out, exist_ok=True)
    return out
