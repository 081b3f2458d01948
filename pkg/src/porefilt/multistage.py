"""Staged filtration protocols with filter reuse and discard accounting.

A protocol processes one raw feed through banks of identical filters arranged
in stages:

* Stage 1 runs ``l1`` clean filters on raw feed until each exhausts (flux
  below the fraction ``flux_fraction`` of that filter's clean flux) and pools
  their filtrate volume-weighted into one batch.
* Each intermediate stage passes the batch once through its bank: a filter
  processes what it can, the unprocessed remainder continues to the next
  filter of the same bank, and whatever is left when the bank dies is
  discarded.
* The final stage re-passes the batch through its filters until the
  cumulative removal of species 1 — always referenced to the *original* feed
  — reaches the target, moving to the next filter when one exhausts.  A pass
  cut short by exhaustion keeps the processed portion as the new batch and
  discards the rest.

The removal target is also checked after every completed stage, so a plan
whose early stages already reach it short-circuits.  In adaptive mode the
fixed stage list is replaced by spawning one fresh single-filter stage
whenever the current filter dies with the target still unmet.

Inside a pass the inlet concentration is the batch's own (a collected batch
is homogeneous), and a filter's exhaustion threshold stays anchored to its
clean flux, so reuse never resets it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    FilterExhaustedError,
    InvalidParameterError,
    PoreClosedError,
    UndefinedPurityError,
)
from .model import (
    FLUX_FRACTION,
    REMOVAL_TARGET,
    SECONDARY_CEILING,
    FeedSpec,
    PoreProfile,
    ShapeFunction,
    flux_constant_pressure,
)
from .simulate import SimConfig, run_constant_pressure

__all__ = [
    "FilterInstance",
    "Batch",
    "StagePlan",
    "PassResult",
    "FilterUse",
    "MultiStageResult",
    "SweepRow",
    "run_stage1_filter",
    "run_pass",
    "run_protocol",
    "sweep_stage_ratios",
]


@dataclass
class FilterInstance:
    """One physical filter: its current fouled state and usage counters.

    Mutated in place by the pass functions; ``exhausted`` compares the current
    flux against ``u_stop = flux_fraction * u_clean``, a property of the
    filter, not of the pass it is running.
    """

    stage: int
    index: int
    shape: ShapeFunction
    profile: PoreProfile
    u_clean: float
    u_stop: float
    deposit: np.ndarray
    n: int = 0
    volume_processed: float = 0.0
    volume_discarded: float = 0.0

    @classmethod
    def from_shape(
        cls, shape: ShapeFunction, cfg: SimConfig, stage: int = 1, index: int = 1
    ) -> "FilterInstance":
        profile = PoreProfile.from_shape(shape, cfg.n_x, floor=cfg.radius_floor)
        u_clean = flux_constant_pressure(profile)
        return cls(
            stage=stage,
            index=index,
            shape=shape,
            profile=profile,
            u_clean=u_clean,
            u_stop=cfg.flux_fraction * u_clean,
            deposit=np.zeros(profile.n_x + 1),
        )

    @property
    def flux_now(self) -> float:
        try:
            return flux_constant_pressure(self.profile)
        except PoreClosedError:
            return 0.0

    @property
    def exhausted(self) -> bool:
        return self.flux_now <= self.u_stop


@dataclass(frozen=True)
class Batch:
    """A collected volume of filtrate and its (homogeneous) concentrations."""

    volume: float
    conc: np.ndarray

    def __post_init__(self):
        if self.volume < 0.0:
            raise InvalidParameterError(f"batch volume must be >= 0, got {self.volume}")
        conc = np.asarray(self.conc, dtype=float)
        if conc.ndim != 1 or conc.size < 1 or np.any(conc < 0.0):
            raise InvalidParameterError("batch concentrations must be a non-negative vector")
        conc = conc.copy()
        conc.setflags(write=False)
        object.__setattr__(self, "conc", conc)


@dataclass(frozen=True)
class PassResult:
    """Outcome of feeding one batch (or part of it) through one filter."""

    outflow: Batch
    discarded: float  # inflow volume the filter could not process
    exhausted: bool   # filter state after the pass


@dataclass(frozen=True)
class StagePlan:
    """Protocol layout: the shared filter shape and the per-stage bank sizes.

    ``removal_design`` records the initial-removal threshold the shape was
    designed for (it does not re-derive the shape); ``target`` is the global
    cumulative-removal goal that ends the protocol.  With ``adaptive=True``
    the ``l`` vector only sets the stage-1 bank and later single-filter
    stages are spawned on demand, capped by ``max_stages``.
    """

    shape: ShapeFunction
    l: tuple[int, ...] = (1,)
    removal_design: float = 0.5
    target: float = REMOVAL_TARGET
    adaptive: bool = False
    max_stages: int = 64

    def __post_init__(self):
        l = tuple(int(v) for v in self.l)
        if len(l) < 1 or any(v < 1 for v in l):
            raise InvalidParameterError("every stage needs at least one filter")
        if self.adaptive and len(l) != 1:
            raise InvalidParameterError("adaptive plans give only the stage-1 filter count")
        if not (0.0 < self.target <= 1.0):
            raise InvalidParameterError(f"target removal must lie in (0, 1], got {self.target}")
        if not (0.0 < self.removal_design <= self.target):
            raise InvalidParameterError(
                f"design removal must lie in (0, target], got {self.removal_design}"
            )
        if self.max_stages < 1:
            raise InvalidParameterError("max_stages must be at least 1")
        object.__setattr__(self, "l", l)


@dataclass(frozen=True)
class FilterUse:
    """Ledger row: how one filter was used over the whole protocol."""

    stage: int
    index: int
    n: int
    volume_processed: float
    volume_discarded: float


@dataclass(frozen=True)
class MultiStageResult:
    """End state of a protocol run.

    ``removal_acm`` and ``purity`` are referenced to the original feed;
    ``n_filters`` counts every filter that received any volume;
    ``n_per_stage`` sums the passes run by each stage's filters.
    """

    filters: tuple[FilterUse, ...]
    batch: Batch
    n_filters: int
    n_per_stage: tuple[int, ...]
    removal_acm: np.ndarray
    purity: np.ndarray
    yield_per_filter: float
    target_met: bool
    volume_produced: float   # pooled stage-1 output
    volume_discarded: float  # total abandoned at capped or dying banks

    @property
    def k2(self) -> float:
        return float(self.purity[1])

    @property
    def effective(self) -> bool:
        """Target removal reached and the secondary species kept below its cap."""
        if not self.target_met or self.removal_acm.size < 2:
            return self.target_met
        return bool(self.removal_acm[1] <= SECONDARY_CEILING)


@dataclass(frozen=True)
class SweepRow:
    """One ranked candidate of a stage-ratio sweep."""

    l: tuple[int, ...]
    uses: tuple[int, ...]
    c_acm: np.ndarray
    j: float
    yield_per_filter: float
    k2: float
    removal_acm: np.ndarray
    target_met: bool
    result: MultiStageResult


def run_stage1_filter(filter: FilterInstance, feed: FeedSpec, cfg: SimConfig) -> Batch:
    """Exhaust one clean filter on raw feed and collect its whole filtrate."""
    if filter.n > 0 or filter.exhausted:
        raise FilterExhaustedError("stage-1 runs need a clean filter")
    record = run_constant_pressure(
        filter.profile,
        feed,
        cfg,
        record=False,
        u_stop=filter.u_stop,
        initial_deposit=filter.deposit if (cfg.screening and feed.has_screening) else None,
    )
    if record.termination == "step-cap":
        raise InvalidParameterError(
            "stage-1 filter never reached exhaustion within cfg.max_steps "
            "(a feed with no depositing species cannot drive the protocol)"
        )
    _absorb_pass(filter, record)
    return Batch(volume=record.j_final, conc=record.c_acm[-1])


def run_pass(
    filter: FilterInstance, inflow: Batch, feed: FeedSpec, cfg: SimConfig
) -> PassResult:
    """Feed a batch through one (possibly fouled) filter.

    The pass ends when the whole inflow volume has been processed or the flux
    falls to the filter's exhaustion threshold, whichever comes first; the
    outflow carries the mass-averaged outlet concentration of the processed
    portion.  ``feed`` supplies the species transport/fouling parameters (a
    batch only knows its concentrations).
    """
    if filter.exhausted:
        raise FilterExhaustedError(
            f"filter (stage {filter.stage}, index {filter.index}) is exhausted"
        )
    if inflow.conc.size != feed.n_species:
        raise InvalidParameterError("batch species count does not match the feed")
    if inflow.volume == 0.0:
        return PassResult(
            outflow=Batch(0.0, inflow.conc), discarded=0.0, exhausted=filter.exhausted
        )
    record = run_constant_pressure(
        filter.profile,
        feed,
        cfg,
        inlet_conc=inflow.conc,
        record=False,
        u_stop=filter.u_stop,
        volume_target=inflow.volume,
        initial_deposit=filter.deposit if (cfg.screening and feed.has_screening) else None,
    )
    if record.termination == "step-cap":
        raise InvalidParameterError(
            "pass never terminated within cfg.max_steps "
            "(non-depositing batches have no exhaustion or volume limit)"
        )
    _absorb_pass(filter, record)
    processed = record.j_final
    return PassResult(
        outflow=Batch(volume=processed, conc=record.c_acm[-1]),
        discarded=max(0.0, inflow.volume - processed),
        exhausted=record.termination == "flux-threshold" or filter.exhausted,
    )


def _absorb_pass(filter: FilterInstance, record) -> None:
    new_radii = record.final_profile.radii
    filter.deposit = filter.deposit + (filter.profile.radii - new_radii)
    filter.profile = record.final_profile
    filter.n += 1
    filter.volume_processed += record.j_final


def _pool(batches: Sequence[Batch]) -> Batch:
    volume = sum(b.volume for b in batches)
    if volume == 0.0:
        return Batch(0.0, batches[0].conc)
    conc = sum(b.volume * b.conc for b in batches) / volume
    return Batch(volume=volume, conc=conc)


def run_protocol(plan: StagePlan, feed: FeedSpec, cfg: SimConfig) -> MultiStageResult:
    """Execute a full staged protocol and summarise it against the raw feed.

    Returns a flagged (``target_met=False``) result rather than raising when
    the plan runs out of filters or stages before the removal target.
    """
    original = feed.fractions
    filters: list[FilterInstance] = []
    total_discarded = 0.0

    def met(batch: Batch) -> bool:
        return 1.0 - float(batch.conc[0]) / float(original[0]) >= plan.target

    # Stage 1: exhaust l1 clean filters on raw feed, pool everything.
    stage1 = []
    for i in range(plan.l[0]):
        f = FilterInstance.from_shape(plan.shape, cfg, stage=1, index=i + 1)
        filters.append(f)
        stage1.append(run_stage1_filter(f, feed, cfg))
    batch = _pool(stage1)
    produced = batch.volume
    target_met = met(batch)

    n_stages = plan.max_stages if plan.adaptive else len(plan.l)
    stage = 1
    while not target_met and stage < n_stages:
        stage += 1
        final_stage = plan.adaptive or stage == n_stages
        bank_size = 1 if plan.adaptive else plan.l[stage - 1]
        bank = [
            FilterInstance.from_shape(plan.shape, cfg, stage=stage, index=i + 1)
            for i in range(bank_size)
        ]
        if final_stage:
            batch, target_met, used = _run_final_bank(bank, batch, feed, cfg, met)
        else:
            batch, used = _run_single_bank_pass(bank, batch, feed, cfg)
            target_met = met(batch)
        filters.extend(used)
        total_discarded += sum(f.volume_discarded for f in used)
        if plan.adaptive and target_met:
            break

    purity = _purity(batch.conc)
    n_used = sum(1 for f in filters if f.volume_processed > 0.0)
    stages_seen = sorted({f.stage for f in filters})
    n_per_stage = tuple(sum(f.n for f in filters if f.stage == s) for s in stages_seen)
    return MultiStageResult(
        filters=tuple(
            FilterUse(f.stage, f.index, f.n, f.volume_processed, f.volume_discarded)
            for f in filters
        ),
        batch=batch,
        n_filters=n_used,
        n_per_stage=n_per_stage,
        removal_acm=1.0 - batch.conc / original,
        purity=purity,
        yield_per_filter=float(batch.conc[1]) * batch.volume / n_used
        if batch.conc.size >= 2
        else float("nan"),
        target_met=target_met,
        volume_produced=produced,
        volume_discarded=total_discarded,
    )


def _run_single_bank_pass(bank, batch, feed, cfg):
    """One pass of the batch through an intermediate bank.

    The bank's filters run in parallel on equal shares of the batch; each
    filter's unprocessed remainder (if it dies mid-share) is discarded, and
    the outputs are pooled volume-weighted.
    """
    if batch.volume == 0.0:
        return batch, []
    share = batch.volume / len(bank)
    outputs = []
    for f in bank:
        res = run_pass(f, Batch(share, batch.conc), feed, cfg)
        outputs.append(res.outflow)
        if res.discarded > 0.0:
            f.volume_discarded += res.discarded
    return _pool(outputs), list(bank)


def _run_final_bank(bank, batch, feed, cfg, met):
    """Re-pass the batch through the last stage's filters until the target.

    A completed pass updates the batch and, if the target is still unmet and
    the filter still alive, runs again through the same filter.  A pass cut
    short keeps the processed portion (the remainder is discarded) and the
    target is checked on it before moving to the next filter.
    """
    used = []
    current = batch
    for f in bank:
        used.append(f)
        while True:
            res = run_pass(f, current, feed, cfg)
            current = res.outflow
            if res.discarded > 0.0:
                f.volume_discarded += res.discarded
            if met(current):
                return current, True, used
            if res.exhausted or res.discarded > 0.0:
                break  # this filter is done; try the next one
    return current, False, used


def _purity(conc: np.ndarray) -> np.ndarray:
    total = float(np.sum(conc))
    if total <= 0.0:
        raise UndefinedPurityError("final batch holds no solute; purity is undefined")
    return conc / total


def sweep_stage_ratios(
    candidates: Sequence[Sequence[int]],
    shape: ShapeFunction,
    feed: FeedSpec,
    cfg: SimConfig,
    *,
    removal_design: float = 0.5,
    target: float = REMOVAL_TARGET,
) -> list[SweepRow]:
    """Run one protocol per stage-count vector and rank by yield per filter.

    Ties rank the smaller stage vector first, so the ordering is total.
    """
    if len(candidates) == 0:
        raise InvalidParameterError("need at least one stage-count candidate")
    rows = []
    for cand in candidates:
        plan = StagePlan(
            shape=shape, l=tuple(cand), removal_design=removal_design, target=target
        )
        result = run_protocol(plan, feed, cfg)
        rows.append(
            SweepRow(
                l=plan.l,
                uses=result.n_per_stage,
                c_acm=batch_conc(result),
                j=result.batch.volume,
                yield_per_filter=result.yield_per_filter,
                k2=result.k2,
                removal_acm=result.removal_acm,
                target_met=result.target_met,
                result=result,
            )
        )
    rows.sort(key=lambda r: (-r.yield_per_filter, r.l))
    return rows


def batch_conc(result: MultiStageResult) -> np.ndarray:
    """Concentration vector of a protocol's final batch (copy)."""
    return result.batch.conc.copy()
