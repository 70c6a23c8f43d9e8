"""Seeded traffic generation, click-fraud injection, and fraud detection.

Query arrivals are Poisson; organic click probability is the advertiser's base
CTR damped by slot position. Clicks land at the same millisecond as their
impression. With a fixed seed every function here is fully deterministic.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import (
    MAX_SEED,
    AdsimError,
    AdvertiserId,
    ClickEvent,
    ClickSource,
    Event,
    EventLog,
    ImpressionEvent,
    Seed,
)
from .auction import SlotAllocation

SCRIPTED = "scripted"
HUMAN = "human"


class HorizonExceededError(AdsimError):
    """A fraud plan schedules clicks at or past the log horizon."""


@dataclass(frozen=True)
class TrafficConfig:
    """Organic traffic model.

    ``base_ctr`` maps each advertiser to its click probability in slot 1;
    slot s gets ``base_ctr * position_decay ** (s - 1)``.
    """

    queries_per_second: float
    base_ctr: Mapping[AdvertiserId, float]
    horizon_ms: int
    seed: Seed
    position_decay: float = 0.6

    def __post_init__(self):
        if self.queries_per_second < 0:
            raise ValueError(f"negative query rate: {self.queries_per_second}")
        for adv, p in self.base_ctr.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"base CTR for {adv!r} outside [0, 1]: {p}")
        if self.horizon_ms < 0:
            raise ValueError(f"negative horizon: {self.horizon_ms}")
        if not 0.0 < self.position_decay <= 1.0:
            raise ValueError(f"position decay outside (0, 1]: {self.position_decay}")
        if not 0 <= self.seed <= MAX_SEED:
            raise ValueError(f"seed outside unsigned 64-bit range: {self.seed}")


@dataclass(frozen=True)
class FraudPlan:
    """One attack on one advertiser.

    ``scripted``: ``count`` clicks at exact ``interval_ms`` spacing from
    ``start_ms``. ``human``: a click crew whose inter-click gaps are drawn
    log-normally with mean ``mean_gap_ms`` and shape ``gap_sigma`` (seeded by
    ``seed``). Every fraud click gets its own synthetic impression at the
    same millisecond.
    """

    kind: str
    target: AdvertiserId
    start_ms: int
    count: int
    interval_ms: int | None = None
    mean_gap_ms: float | None = None
    gap_sigma: float | None = None
    seed: Seed = 0

    def __post_init__(self):
        if self.kind not in (SCRIPTED, HUMAN):
            raise ValueError(f"unknown fraud kind {self.kind!r}")
        if not self.target:
            raise ValueError("empty target advertiser")
        if self.start_ms < 0:
            raise ValueError(f"negative start: {self.start_ms}")
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        if self.kind == SCRIPTED:
            if self.interval_ms is None or self.interval_ms < 1:
                raise ValueError("scripted plan needs interval_ms >= 1")
        else:
            if self.mean_gap_ms is None or self.mean_gap_ms <= 0:
                raise ValueError("human plan needs mean_gap_ms > 0")
            if self.gap_sigma is None or self.gap_sigma < 0:
                raise ValueError("human plan needs gap_sigma >= 0")
        if not 0 <= self.seed <= MAX_SEED:
            raise ValueError(f"seed outside unsigned 64-bit range: {self.seed}")


@dataclass(frozen=True)
class FraudFlag:
    """A detected run of suspiciously regular clicks."""

    span: tuple[int, int]  # [first click t, last click t]
    advertiser: AdvertiserId
    flagged_click_ids: tuple[int, ...]  # impression_refs of the flagged clicks
    reason: str = "fixed_interval_run"


# ---------------------------------------------------------------------------
# Organic traffic.


def organic_events(
    cfg: TrafficConfig,
    allocation: Sequence[SlotAllocation],
    rng: np.random.Generator,
    t_lo: int,
    t_hi: int,
    query_id_start: int,
) -> tuple[list[Event], int]:
    """Draw one window of organic traffic; returns (events, next query id).

    Split out from :func:`gen_organic` so a scenario runner can draw traffic
    tick by tick against a changing allocation while sharing one RNG.
    """
    span_ms = t_hi - t_lo
    if span_ms <= 0:
        return [], query_id_start
    n_queries = int(rng.poisson(cfg.queries_per_second * span_ms / 1000.0))
    times = np.sort(rng.integers(t_lo, t_hi, size=n_queries))
    events: list[Event] = []
    qid = query_id_start
    for t in times.tolist():
        for alloc in allocation:
            adv = alloc.advertiser
            events.append(ImpressionEvent(t, adv, alloc.slot, qid))
            p = cfg.base_ctr[adv] * cfg.position_decay ** (alloc.slot - 1)
            if rng.random() < p:
                events.append(ClickEvent(t, adv, alloc.slot, qid, ClickSource.ORGANIC))
        qid += 1
    return events, qid


def gen_organic(cfg: TrafficConfig, allocation: Sequence[SlotAllocation]) -> EventLog:
    """Organic-only log over ``[0, horizon_ms)`` for a fixed slot allocation."""
    if not allocation:
        raise ValueError("empty allocation")
    missing = sorted({a.advertiser for a in allocation} - set(cfg.base_ctr))
    if missing:
        raise ValueError(f"no base CTR for {missing}")
    rng = np.random.default_rng(cfg.seed)
    events, _ = organic_events(cfg, allocation, rng, 0, cfg.horizon_ms, 0)
    return EventLog.from_events(events, cfg.horizon_ms)


# ---------------------------------------------------------------------------
# Fraud injection.


def plan_click_times(plan: FraudPlan) -> list[int]:
    """Millisecond timestamps of the plan's clicks, in increasing order."""
    if plan.kind == SCRIPTED:
        return [plan.start_ms + k * plan.interval_ms for k in range(plan.count)]
    rng = np.random.default_rng(plan.seed)
    sigma = plan.gap_sigma
    # Parameterized so the distribution mean equals mean_gap_ms.
    mu = math.log(plan.mean_gap_ms) - sigma * sigma / 2.0
    times = [plan.start_ms]
    for gap in rng.lognormal(mean=mu, sigma=sigma, size=plan.count - 1).tolist():
        times.append(times[-1] + max(1, round(gap)))
    return times


def plan_events(plan: FraudPlan, query_id_start: int) -> list[Event]:
    """Impression/click pairs for the plan; one synthetic impression per click."""
    source = ClickSource.SCRIPTED_FRAUD if plan.kind == SCRIPTED else ClickSource.HUMAN_FRAUD
    events: list[Event] = []
    for k, t in enumerate(plan_click_times(plan)):
        qid = query_id_start + k
        events.append(ImpressionEvent(t, plan.target, 1, qid))
        events.append(ClickEvent(t, plan.target, 1, qid, source))
    return events


def _inject(log: EventLog, plan: FraudPlan) -> EventLog:
    times = plan_click_times(plan)
    if times[-1] >= log.horizon:
        raise HorizonExceededError(
            f"plan reaches t={times[-1]} but the log ends at {log.horizon}"
        )
    events = list(log) + plan_events(plan, log.max_query_id() + 1)
    return EventLog.from_events(events, log.horizon)


def inject_scripted_fraud(log: EventLog, plan: FraudPlan) -> EventLog:
    """New log with the scripted plan's clicks merged in; the input is untouched."""
    if plan.kind != SCRIPTED:
        raise ValueError(f"expected a scripted plan, got {plan.kind!r}")
    return _inject(log, plan)


def inject_human_fraud(log: EventLog, plan: FraudPlan) -> EventLog:
    """New log with the human click-crew merged in; the input is untouched."""
    if plan.kind != HUMAN:
        raise ValueError(f"expected a human plan, got {plan.kind!r}")
    return _inject(log, plan)


# ---------------------------------------------------------------------------
# Detection.


def detect_scripted(
    log: EventLog, min_run: int = 5, interval_tolerance_ms: int = 10
) -> list[FraudFlag]:
    """Flag runs of near-constant click spacing per advertiser.

    Scans each advertiser's click stream left to right, growing a run while
    every inter-click gap stays within ``interval_tolerance_ms`` of the run's
    median gap. A run that ends with at least ``min_run`` clicks is flagged.
    Never reads click labels, so it behaves identically on stripped views.
    """
    if min_run < 3:
        raise ValueError(f"min_run must be >= 3, got {min_run}")
    if interval_tolerance_ms < 0:
        raise ValueError(f"negative tolerance: {interval_tolerance_ms}")
    clicks_by: dict[str, list[ClickEvent]] = {}
    for e in log:
        if isinstance(e, ClickEvent):
            clicks_by.setdefault(e.advertiser, []).append(e)
    flags: list[FraudFlag] = []
    for adv in sorted(clicks_by):
        clicks = clicks_by[adv]
        start = 0
        gaps: list[int] = []
        for j in range(1, len(clicks)):
            candidate = gaps + [clicks[j].t - clicks[j - 1].t]
            median = statistics.median(candidate)
            if all(abs(g - median) <= interval_tolerance_ms for g in candidate):
                gaps = candidate
                continue
            if j - start >= min_run:
                flags.append(_flag(adv, clicks[start:j]))
            start = j - 1  # the breaking gap seeds the next run
            gaps = [clicks[j].t - clicks[j - 1].t]
        if len(clicks) - start >= min_run:
            flags.append(_flag(adv, clicks[start:]))
    return flags


def _flag(adv: str, run: list[ClickEvent]) -> FraudFlag:
    return FraudFlag(
        span=(run[0].t, run[-1].t),
        advertiser=adv,
        flagged_click_ids=tuple(c.impression_ref for c in run),
    )
