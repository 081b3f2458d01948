"""Shape-design objectives and multistart local search.

Three constrained design problems over the polynomial shape coefficients are
supported, each named by what it maximizes:

* ``weighted``   -- w1*j(t_f) + w2*c_acm_2(t_f) under constant pressure.
* ``yield``      -- c_acm_2(t_f) * j(t_f) under constant pressure.
* ``fixed_feed`` -- c_acm_2(t_f) * j(t_f) under constant flux with a fixed
  feed volume (N_t steps), plus inlet-pressure caps.

Every problem carries the hard constraint that the clean filter removes at
least a fraction ``removal_min`` of species 1 at t = 0, and fixed_feed
additionally requires the cumulative removal at the end of the run.

Each problem has a ``slow`` method that scores a design by running the full
simulation, and the constant-pressure problems also have a ``fast`` surrogate
built from the t = 0 state and its first derivatives only (roughly two orders
of magnitude cheaper per evaluation).  Infeasible points are compared
feasibility-first: any feasible point beats any infeasible one, and among
infeasible points the smaller constraint violation wins.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import (
    InfeasibleStartError,
    InvalidParameterError,
    InvalidShapeError,
    UndefinedPurityError,
    UnsupportedMethodError,
)
from .model import (
    REMOVAL_TARGET,
    FeedSpec,
    PoreProfile,
    ShapeCheck,
    ShapeFunction,
    flux_constant_pressure,
    inlet_pressure_constant_flux,
    reversed_shape,
    validate_shape,
)
from .simulate import (
    CONSTANT_FLUX,
    CONSTANT_PRESSURE,
    Metrics,
    SimConfig,
    compute_metrics,
    initial_rates,
    run_constant_flux,
    run_constant_pressure,
)

__all__ = [
    "WEIGHTED",
    "YIELD",
    "FIXED_FEED",
    "METHOD_SLOW",
    "METHOD_FAST",
    "ProblemSpec",
    "SearchConfig",
    "EvalReport",
    "LocalResult",
    "OptimizationResult",
    "FeasibilityReport",
    "initial_removal",
    "check_feasibility",
    "evaluate_slow",
    "evaluate_fast",
    "local_search",
    "multistart",
]

WEIGHTED = "weighted"
YIELD = "yield"
FIXED_FEED = "fixed_feed"
_KINDS = (WEIGHTED, YIELD, FIXED_FEED)

METHOD_SLOW = "slow"
METHOD_FAST = "fast"

# Base score assigned to constraint-violating points.  Any feasible score is
# -J with |J| far below this, so feasible always sorts first.
_PENALTY = 1e8


@dataclass(frozen=True)
class ProblemSpec:
    """One fully specified design problem.

    ``removal_min`` is the required initial removal of species 1 (the
    separation threshold, default 0.99); ``acm_removal_min`` is the required
    end-of-run cumulative removal, enforced only by ``fixed_feed``.
    """

    kind: str
    feed: FeedSpec
    sim: SimConfig
    method: str = METHOD_SLOW
    weights: tuple[float, float] = (1.0, 0.0)
    removal_min: float = REMOVAL_TARGET
    acm_removal_min: float = 0.98

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidParameterError(f"unknown problem kind {self.kind!r}")
        if self.method not in (METHOD_SLOW, METHOD_FAST):
            raise InvalidParameterError(f"unknown method {self.method!r}")
        if self.feed.n_species < 2:
            raise InvalidParameterError(
                "the design objectives involve species 2; the feed needs at least two species"
            )
        if not (0.0 <= self.removal_min <= 1.0):
            raise InvalidParameterError(f"removal_min must lie in [0, 1], got {self.removal_min}")
        if self.kind == FIXED_FEED:
            if self.sim.mode != CONSTANT_FLUX:
                raise InvalidParameterError("fixed_feed is a constant-flux problem")
            if not (0.0 <= self.acm_removal_min <= 1.0):
                raise InvalidParameterError(
                    f"acm_removal_min must lie in [0, 1], got {self.acm_removal_min}"
                )
        else:
            if self.sim.mode != CONSTANT_PRESSURE:
                raise InvalidParameterError(f"{self.kind} is a constant-pressure problem")
        if self.kind == WEIGHTED:
            w1, w2 = self.weights
            if w1 < 0.0 or w2 < 0.0 or (w1 == 0.0 and w2 == 0.0):
                raise InvalidParameterError("weights must be non-negative and not both zero")


@dataclass(frozen=True)
class SearchConfig:
    """Multistart and local-search settings.

    ``bounds`` is one (lo, hi) pair per coefficient; by default the constant
    term ranges over [0, 1] and every higher coefficient over [-1, 1].  The
    first start is ``start`` (bounds midpoint when omitted) and the remaining
    ``n_starts - 1`` are uniform draws from a counter-based generator, so the
    start list depends only on the seed, never on evaluation order.

    ``search_dt``, when set, coarsens the requested time step of the
    simulations run *inside* a slow search (the per-step deposition cap still
    bounds the effective step, so the trajectory error stays small); the best
    point of every local search is then re-scored with the problem's own
    configuration, and only those re-scored reports are returned.  It does not
    apply to the fast method and cannot be combined with fixed_feed, whose
    step count times dt *is* the fed volume.
    """

    degree: int = 1
    bounds: tuple[tuple[float, float], ...] | None = None
    n_starts: int = 100
    seed: int = 0
    step_tol: float = 1e-3
    # The simulated objective is piecewise constant in the stopping step, with
    # jumps around u*dt ~ 1e-5; a tighter f-tolerance than that can never be
    # met and every search would run to the iteration cap.
    objective_tol: float = 1e-5
    max_iter: int = 200
    start: tuple[float, ...] | None = None
    search_dt: float | None = None

    def __post_init__(self):
        if self.degree < 1:
            raise InvalidParameterError("search degree must be at least 1")
        if self.n_starts < 1:
            raise InvalidParameterError("n_starts must be at least 1")
        if self.step_tol <= 0.0 or self.objective_tol <= 0.0 or self.max_iter < 1:
            raise InvalidParameterError("tolerances must be positive and max_iter >= 1")
        if self.search_dt is not None and self.search_dt <= 0.0:
            raise InvalidParameterError("search_dt must be positive")
        if self.bounds is not None and len(self.bounds) != self.degree + 1:
            raise InvalidParameterError(
                f"need one bound pair per coefficient ({self.degree + 1}), got {len(self.bounds)}"
            )

    def resolved_bounds(self) -> tuple[tuple[float, float], ...]:
        if self.bounds is not None:
            bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        else:
            bounds = ((0.0, 1.0),) + ((-1.0, 1.0),) * self.degree
        for lo, hi in bounds:
            if not (lo < hi):
                raise InvalidParameterError(f"empty coefficient bound ({lo}, {hi})")
        return bounds

    def resolved_start(self) -> tuple[float, ...]:
        bounds = self.resolved_bounds()
        if self.start is None:
            return tuple(0.5 * (lo + hi) for lo, hi in bounds)
        start = tuple(float(v) for v in self.start)
        if len(start) != len(bounds):
            raise InvalidParameterError("start must have one value per coefficient")
        for v, (lo, hi) in zip(start, bounds):
            if not (lo <= v <= hi):
                raise InvalidParameterError(f"start coefficient {v} outside [{lo}, {hi}]")
        return start


@dataclass(frozen=True)
class FeasibilityReport:
    """Static (pre-simulation) constraint check of one shape."""

    shape: ShapeFunction
    feasible: bool
    shape_check: ShapeCheck
    removal_initial: float  # R_1(0); nan when the shape itself is invalid
    pressure_initial: float  # p0(0) for constant-flux problems; nan otherwise
    violation: float
    reasons: tuple[str, ...]


@dataclass(frozen=True)
class EvalReport:
    """Objective value and constraint status of one design point."""

    shape: ShapeFunction
    feasible: bool
    objective: float        # nan when never evaluated (invalid shape)
    violation: float        # 0 when feasible
    removal_initial: float  # R_1(0)
    score: float            # comparison scalar: -objective if feasible, else penalty + violation
    metrics: Metrics | None = None  # attached by slow evaluations


@dataclass(frozen=True)
class LocalResult:
    """Outcome of one local descent."""

    start: ShapeFunction
    best: EvalReport
    n_evals: int
    converged: bool


@dataclass(frozen=True)
class OptimizationResult:
    """Best point over all starts plus the full list of local optima."""

    best: EvalReport
    best_start: ShapeFunction
    n_starts: int
    n_feasible: int
    n_evaluations: int
    elapsed_seconds: float
    local_optima: tuple[LocalResult, ...]

    @property
    def succeeded(self) -> bool:
        return self.best.feasible


def initial_removal(shape, feed: FeedSpec, sim: SimConfig) -> float:
    """Removal of species 1 by the clean filter, R_1(0) = 1 - exp(-pi*lam1*I/(4u)).

    ``I`` is the trapezoidal integral of the clean radius profile and ``u``
    the clean flux (1 in constant-flux mode), matching the simulator's own
    quadrature exactly, so this is the cheap equivalent of running step 0.
    """
    profile = shape if isinstance(shape, PoreProfile) else PoreProfile.from_shape(
        shape, sim.n_x, floor=sim.radius_floor
    )
    u = 1.0 if sim.mode == CONSTANT_FLUX else flux_constant_pressure(profile)
    area = float(np.trapezoid(profile.radii, profile.x))
    lam1 = feed.species[0].lam
    return 1.0 - math.exp(-math.pi * lam1 * area / (4.0 * u))


def check_feasibility(shape: ShapeFunction, problem: ProblemSpec) -> FeasibilityReport:
    """Constraint checks that need no time stepping.

    Covers the shape box 0 < a0(x) <= 1, the initial removal threshold, and
    (for fixed_feed) the initial-pressure cap.  For an invalid shape the
    removal term of ``violation`` is replaced by the worst-case value
    ``removal_min`` so that search scores decrease monotonically as a point
    re-enters the admissible box.
    """
    chk = validate_shape(shape)
    reasons: list[str] = []
    floor_gap = problem.sim.radius_floor - chk.min_radius
    if not chk.feasible or floor_gap >= 0.0:
        if chk.feasible:
            # Inside the admissible box but at or below the numerical closure
            # floor: such a pore counts as closed and cannot be simulated.
            reasons.append(
                f"minimum radius {chk.min_radius:.4g} at x={chk.min_x:.4g} does not "
                f"clear the closure floor {problem.sim.radius_floor:.4g}"
            )
            base = floor_gap
        else:
            reasons.append(
                f"radius range [{chk.min_radius:.4g}, {chk.max_radius:.4g}] leaves (0, 1]"
            )
            base = chk.violation
        return FeasibilityReport(
            shape=shape,
            feasible=False,
            shape_check=chk,
            removal_initial=float("nan"),
            pressure_initial=float("nan"),
            violation=base + problem.removal_min,
            reasons=tuple(reasons),
        )
    removal = initial_removal(shape, problem.feed, problem.sim)
    violation = max(0.0, problem.removal_min - removal)
    if violation > 0.0:
        reasons.append(f"initial removal {removal:.4g} < required {problem.removal_min:.4g}")
    pressure = float("nan")
    if problem.kind == FIXED_FEED:
        profile = PoreProfile.from_shape(shape, problem.sim.n_x, floor=problem.sim.radius_floor)
        pressure = inlet_pressure_constant_flux(profile)
        if pressure > problem.sim.p_init_max:
            excess = (pressure - problem.sim.p_init_max) / problem.sim.p_init_max
            violation += excess
            reasons.append(
                f"initial pressure {pressure:.4g} > cap {problem.sim.p_init_max:.4g}"
            )
    return FeasibilityReport(
        shape=shape,
        feasible=not reasons,
        shape_check=chk,
        removal_initial=removal,
        pressure_initial=pressure,
        violation=violation,
        reasons=tuple(reasons),
    )


def _metrics_or_none(record) -> Metrics | None:
    # A filter that captures everything accumulates zero solute; its purity is
    # undefined but the design objectives below still are (they only need j
    # and c_acm_2, both read off the record).
    try:
        return compute_metrics(record)
    except UndefinedPurityError:
        return None


def _objective_from_record(problem: ProblemSpec, record) -> float:
    j = record.j_final
    c2 = float(record.c_acm[-1, 1])
    if problem.kind == WEIGHTED:
        w1, w2 = problem.weights
        return w1 * j + w2 * c2
    return c2 * j


def evaluate_slow(shape: ShapeFunction, problem: ProblemSpec) -> EvalReport:
    """Score a design by running the full simulation.

    The objective is always computed (also for points violating the removal
    threshold); feasibility travels in the report, and the search layer maps
    it to a penalty.  Invalid shapes (outside (0, 1]) cannot be simulated and
    raise instead.
    """
    static = check_feasibility(shape, problem)
    if not static.shape_check.feasible:
        raise InvalidShapeError(
            f"cannot simulate shape {shape.coefficients}: {static.reasons[0]}"
        )
    violation = static.violation
    if problem.kind == FIXED_FEED:
        try:
            record = run_constant_flux(shape, problem.feed, problem.sim, record=False)
        except InfeasibleStartError:
            # p0(0) beyond the hard cap: the run cannot even start.
            return EvalReport(
                shape=shape,
                feasible=False,
                objective=float("nan"),
                violation=violation,
                removal_initial=static.removal_initial,
                score=_PENALTY + violation,
                metrics=None,
            )
        metrics = _metrics_or_none(record)
        acm_removal = float(record.removal_acm[-1, 0])
        if acm_removal < problem.acm_removal_min:
            violation += problem.acm_removal_min - acm_removal
        if record.termination != "fixed-steps":
            # The run died (pressure cap) before feeding the requested volume;
            # the unprocessed fraction measures how infeasible the design is.
            asked = problem.sim.n_steps * problem.sim.dt
            if asked > 0.0:
                violation += max(0.0, 1.0 - record.j_final / asked)
    else:
        record = run_constant_pressure(shape, problem.feed, problem.sim, record=False)
        metrics = _metrics_or_none(record)
    objective = _objective_from_record(problem, record)
    feasible = violation == 0.0
    score = -objective if feasible else _PENALTY + violation
    return EvalReport(
        shape=shape,
        feasible=feasible,
        objective=objective,
        violation=violation,
        removal_initial=static.removal_initial,
        score=score,
        metrics=metrics,
    )


def evaluate_fast(shape: ShapeFunction, problem: ProblemSpec) -> EvalReport:
    """Score a design from the t = 0 state only (no time stepping).

    weighted: J = w1*(u(0) + u'(0)) + w2*(c_ins_2(0) + c_ins_2'(0));
    yield:    J = u(0) * c_ins_2(0).
    Only the initial removal constraint is checked (nothing else is knowable
    at t = 0).  fixed_feed has no such surrogate: its objective is dominated
    by late-time pressure behaviour, so requesting it is an error.
    """
    if problem.kind == FIXED_FEED:
        raise UnsupportedMethodError(
            "no fast objective exists for the constant-flux problem; use the slow method"
        )
    static = check_feasibility(shape, problem)
    if not static.shape_check.feasible:
        raise InvalidShapeError(
            f"cannot evaluate shape {shape.coefficients}: {static.reasons[0]}"
        )
    rates = initial_rates(shape, problem.feed, problem.sim)
    if problem.kind == WEIGHTED:
        w1, w2 = problem.weights
        objective = w1 * (rates.u0 + rates.du0) + w2 * (
            float(rates.c_out0[1]) + float(rates.dc_out0[1])
        )
    else:
        objective = rates.u0 * float(rates.c_out0[1])
    feasible = static.feasible
    score = -objective if feasible else _PENALTY + static.violation
    return EvalReport(
        shape=shape,
        feasible=feasible,
        objective=objective,
        violation=static.violation,
        removal_initial=static.removal_initial,
        score=score,
        metrics=None,
    )


def _evaluator(problem: ProblemSpec) -> Callable[[ShapeFunction], EvalReport]:
    return evaluate_fast if problem.method == METHOD_FAST else evaluate_slow


def _search_problem(problem: ProblemSpec, search: SearchConfig) -> ProblemSpec:
    """The problem actually scored inside the search loop (see search_dt)."""
    if search.search_dt is None or problem.method == METHOD_FAST:
        return problem
    if problem.kind == FIXED_FEED:
        raise InvalidParameterError(
            "search_dt cannot be used with fixed_feed: n_steps * dt is the fed volume"
        )
    if search.search_dt == problem.sim.dt:
        return problem
    return replace(problem, sim=replace(problem.sim, dt=search.search_dt))


def _tie_key(report: EvalReport) -> tuple:
    # Deterministic preference among equal scores: smallest coefficients,
    # highest order first (for the linear case: smallest (d1, d0)).
    return tuple(reversed(report.shape.coefficients))


def _initial_simplex(start: np.ndarray, bounds) -> np.ndarray:
    """Start simplex with one vertex per coordinate, stepped 10% of each range.

    scipy's default steps 0.00025 along coordinates that start at zero, which
    stalls badly for starts like (0.5, 0); an explicit simplex avoids that.
    Steps probe downward first (flipping up rather than leaving the bounds) so
    that at a start lying exactly on a symmetry axis of the objective the
    first move agrees with the global tie-break convention, which prefers the
    smaller-coefficient branch.
    """
    dim = start.size
    simplex = np.tile(start, (dim + 1, 1))
    for i in range(dim):
        lo, hi = bounds[i]
        step = -0.1 * (hi - lo)
        if start[i] + step < lo:
            step = -step
        simplex[i + 1, i] += step
    return simplex


def _scored_report(
    shape: ShapeFunction, problem: ProblemSpec, evaluate
) -> EvalReport:
    """Score one point with the feasibility-first convention."""
    static = check_feasibility(shape, problem)
    if not static.feasible:
        return EvalReport(
            shape=shape,
            feasible=False,
            objective=float("nan"),
            violation=static.violation,
            removal_initial=static.removal_initial,
            score=_PENALTY + static.violation,
            metrics=None,
        )
    return evaluate(shape, problem)


def local_search(
    start: Sequence[float], problem: ProblemSpec, search: SearchConfig
) -> LocalResult:
    """Nelder-Mead descent of the feasibility-first score from one start.

    Infeasible iterates score penalty + violation, so the simplex first walks
    toward the feasible region and then descends -J inside it.  The returned
    report is the best point ever evaluated (not merely the final simplex),
    which makes a start placed exactly at an optimum a fixed point.

    A profile and its end-to-end reversal share all t = 0 quantities, so
    objectives built on those are exactly twinned.  Whenever the search has
    moved off its start, the reversal of its best point is scored too, and
    adopted if it improves or ties within ``objective_tol`` with the smaller
    coefficient key; every such twin pair is thus reported by one canonical
    representative no matter which basin the simplex happened to fall into.
    """
    bounds = search.resolved_bounds()
    x0 = np.asarray(start, dtype=float)
    if x0.shape != (len(bounds),):
        raise InvalidParameterError("start must have one value per coefficient")
    inner_problem = _search_problem(problem, search)
    evaluate = _evaluator(problem)

    state = {"best": None, "n": 0}
    # Bound clipping maps distinct reflection candidates onto the same face
    # point, so at boundary optima Nelder-Mead revisits coordinates exactly;
    # memoizing by exact coefficients avoids re-simulating them.
    cache: dict[tuple[float, ...], float] = {}

    def score_fn(vec: np.ndarray) -> float:
        coeffs = tuple(float(v) for v in vec)
        hit = cache.get(coeffs)
        if hit is not None:
            return hit
        state["n"] += 1
        report = _scored_report(ShapeFunction(coeffs), inner_problem, evaluate)
        best = state["best"]
        # Strict improvement only: on a plateau the first-visited point (the
        # start) is kept, so a constant objective terminates exactly there.
        if best is None or report.score < best.score:
            state["best"] = report
        cache[coeffs] = report.score
        return report.score

    result = minimize(
        score_fn,
        x0,
        method="Nelder-Mead",
        bounds=bounds,
        options={
            "initial_simplex": _initial_simplex(x0, bounds),
            "xatol": search.step_tol,
            "fatol": search.objective_tol,
            "maxiter": search.max_iter,
            "maxfev": search.max_iter,
            "disp": False,
        },
    )
    best = state["best"]
    if best.shape.coefficients != tuple(float(v) for v in x0):
        twin = reversed_shape(best.shape)
        if all(lo <= v <= hi for v, (lo, hi) in zip(twin.coefficients, bounds)):
            state["n"] += 1
            candidate = _scored_report(twin, inner_problem, evaluate)
            # scores of exact twins agree only to roundoff, so anything inside
            # the objective tolerance is a tie and only the key decides
            if candidate.score < best.score - search.objective_tol or (
                candidate.score <= best.score + search.objective_tol
                and _tie_key(candidate) < _tie_key(best)
            ):
                best = candidate
    if inner_problem is not problem and math.isfinite(best.objective):
        # The search ran on a coarsened integrator; report the winning point
        # at the problem's own configuration.
        best = evaluate_slow(best.shape, problem)
        state["n"] += 1
    return LocalResult(
        start=ShapeFunction(tuple(float(v) for v in x0)),
        best=best,
        n_evals=state["n"],
        converged=bool(result.success),
    )


def multistart(problem: ProblemSpec, search: SearchConfig) -> OptimizationResult:
    """Run local searches from the user start plus seeded uniform starts.

    The best feasible local optimum wins.  Local optima whose scores agree to
    within ``objective_tol`` (the resolution the local solver itself stops at)
    are treated as tied and resolved by the deterministic coefficient key.
    This matters for objectives with exact symmetries: u and the radius
    integral are invariant under profile reversal, so e.g. the fast yield
    objective scores a narrowing profile and its mirror image identically, and
    without the tolerance window solver noise would pick between them at
    random.  When every start ends infeasible the result carries the
    least-violating point with ``succeeded == False`` — callers decide whether
    that is an error.
    """
    t0 = time.perf_counter()
    bounds = search.resolved_bounds()
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    starts = [np.asarray(search.resolved_start())]
    if search.n_starts > 1:
        rng = np.random.Generator(np.random.Philox(key=search.seed))
        starts.extend(lo + rng.random((search.n_starts - 1, lo.size)) * (hi - lo))

    local_optima: list[LocalResult] = [
        local_search(x0, problem, search) for x0 in starts
    ]
    min_score = min(r.best.score for r in local_optima)
    winner = min(
        (r for r in local_optima if r.best.score <= min_score + search.objective_tol),
        key=lambda r: _tie_key(r.best),
    )
    return OptimizationResult(
        best=winner.best,
        best_start=winner.start,
        n_starts=len(starts),
        n_feasible=sum(1 for r in local_optima if r.best.feasible),
        n_evaluations=sum(r.n_evals for r in local_optima),
        elapsed_seconds=time.perf_counter() - t0,
        local_optima=tuple(local_optima),
    )
