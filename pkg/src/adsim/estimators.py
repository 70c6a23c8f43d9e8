"""Click-through-rate estimators.

Three windowed estimators (trailing time window, last-N impressions, last-N
clicks) plus a cohort-relative estimator that scores an advertiser by its
share of all clicks. Each has a streaming fold that consumes events in log
order and a convenience function that evaluates a whole log at one instant.

Feeding contract for the folds: call ``observe`` with events in non-decreasing
timestamp order, feed everything with ``t <= now`` before calling
``estimate(now)``, and query with non-decreasing ``now`` values. Each fold
applies its own boundary rule (the time and relative windows are half-open and
exclude ``t == now``; the impression and click windows include it).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .core import AdvertiserId, ClickEvent, ClickTally, Event, EventLog, ImpressionEvent


@dataclass(frozen=True, slots=True)
class CtrEstimate:
    """A click-through-rate estimate with its supporting counts.

    ``defined`` is False when the window holds no denominator yet (cold
    start); consumers substitute their own default in that case.
    """

    value: float
    clicks_in_window: int
    denominator: int
    defined: bool

    def __post_init__(self):
        if self.clicks_in_window < 0 or self.denominator < 0:
            raise ValueError("negative counts")
        if self.defined:
            if self.denominator <= 0:
                raise ValueError("defined estimate needs a positive denominator")
            if self.value != self.clicks_in_window / self.denominator:
                raise ValueError("value does not match clicks/denominator")

    @classmethod
    def ratio(cls, clicks: int, denominator: int) -> "CtrEstimate":
        return cls(clicks / denominator, clicks, denominator, True)

    @classmethod
    def undefined(cls) -> "CtrEstimate":
        return cls(0.0, 0, 0, False)


_SPEC_KINDS = ("time", "impressions", "clicks", "relative")


@dataclass(frozen=True, slots=True)
class WindowSpec:
    """Selects one estimator family and its window parameter.

    kind="time"        param = trailing window length in ms
    kind="impressions" param = number of most recent impressions
    kind="clicks"      param = number of most recent clicks
    kind="relative"    param = sliding interval in ms, or None for
                       cumulative-from-start counting (the default)
    """

    kind: str
    param: int | None = None

    def __post_init__(self):
        if self.kind not in _SPEC_KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if self.kind == "relative":
            if self.param is not None and self.param < 1:
                raise ValueError("relative interval must be >= 1 ms")
        elif self.param is None or self.param < 1:
            raise ValueError(f"{self.kind} window parameter must be >= 1")

    @classmethod
    def time_window(cls, window_ms: int) -> "WindowSpec":
        return cls("time", window_ms)

    @classmethod
    def impression_window(cls, size: int) -> "WindowSpec":
        return cls("impressions", size)

    @classmethod
    def click_window(cls, size: int) -> "WindowSpec":
        return cls("clicks", size)

    @classmethod
    def relative(cls, interval_ms: int | None = None) -> "WindowSpec":
        return cls("relative", interval_ms)

    @property
    def label(self) -> str:
        """Column name used in CSV output and reports."""
        return {
            "time": "ctr_time",
            "impressions": "ctr_impr",
            "clicks": "ctr_click",
            "relative": "ctr_relative",
        }[self.kind]

    def build(self, advertiser: AdvertiserId):
        """Instantiate the matching streaming fold."""
        if self.kind == "time":
            return TimeWindowCtr(advertiser, self.param)
        if self.kind == "impressions":
            return ImpressionWindowCtr(advertiser, self.param)
        if self.kind == "clicks":
            return ClickWindowCtr(advertiser, self.param)
        return _RelativeFold(advertiser, RelativeCtr(self.param))


class TimeWindowCtr:
    """Clicks over impressions within the trailing half-open window [now-T, now)."""

    def __init__(self, advertiser: AdvertiserId, window_ms: int):
        if window_ms < 1:
            raise ValueError("window_ms must be >= 1")
        self.advertiser = advertiser
        self.window_ms = window_ms
        self._imp: deque[int] = deque()
        self._clk: deque[int] = deque()

    def observe(self, e: Event) -> None:
        if e.advertiser != self.advertiser:
            return
        (self._imp if isinstance(e, ImpressionEvent) else self._clk).append(e.t)

    def estimate(self, now: int) -> CtrEstimate:
        lo = now - self.window_ms
        for dq in (self._imp, self._clk):
            while dq and dq[0] < lo:
                dq.popleft()
        y = len(self._imp) - _count_at_or_after(self._imp, now)
        x = len(self._clk) - _count_at_or_after(self._clk, now)
        return CtrEstimate.ratio(x, y) if y > 0 else CtrEstimate.undefined()


def _count_at_or_after(dq: deque, now: int) -> int:
    # Timestamps are fed in order, so anything >= now sits at the tail.
    n = 0
    for t in reversed(dq):
        if t < now:
            break
        n += 1
    return n


class ImpressionWindowCtr:
    """Clicked fraction of the advertiser's last N impressions at or before now."""

    def __init__(self, advertiser: AdvertiserId, size: int):
        if size < 1:
            raise ValueError("size must be >= 1")
        self.advertiser = advertiser
        self.size = size
        self._window: deque[int] = deque()  # query ids, oldest first
        self._members: set[int] = set()
        self._clicked: set[int] = set()

    def observe(self, e: Event) -> None:
        if e.advertiser != self.advertiser:
            return
        if isinstance(e, ImpressionEvent):
            self._window.append(e.query_id)
            self._members.add(e.query_id)
            if len(self._window) > self.size:
                old = self._window.popleft()
                self._members.remove(old)
                self._clicked.discard(old)
        elif e.impression_ref in self._members:
            self._clicked.add(e.impression_ref)

    def estimate(self, now: int) -> CtrEstimate:
        y = len(self._window)
        if y == 0:
            return CtrEstimate.undefined()
        return CtrEstimate.ratio(len(self._clicked), y)


class ClickWindowCtr:
    """Last N clicks over the impressions shown since the Nth-most-recent click.

    The denominator counts the advertiser's impressions from the one that
    received that Nth-last click (inclusive) through now.
    """

    def __init__(self, advertiser: AdvertiserId, size: int):
        if size < 1:
            raise ValueError("size must be >= 1")
        self.advertiser = advertiser
        self.size = size
        self._imp_pos: dict[int, int] = {}  # query id -> arrival ordinal
        self._imp_count = 0
        self._recent: deque[int] = deque()  # ordinals of last N clicked impressions

    def observe(self, e: Event) -> None:
        if e.advertiser != self.advertiser:
            return
        if isinstance(e, ImpressionEvent):
            self._imp_pos[e.query_id] = self._imp_count
            self._imp_count += 1
        else:
            self._recent.append(self._imp_pos[e.impression_ref])
            if len(self._recent) > self.size:
                self._recent.popleft()

    def estimate(self, now: int) -> CtrEstimate:
        if len(self._recent) < self.size:
            return CtrEstimate.undefined()
        y = self._imp_count - self._recent[0]
        return CtrEstimate.ratio(self.size, y)


class RelativeCtr:
    """Shares each advertiser's clicks against the whole cohort's clicks.

    Cumulative from scenario start by default; pass ``interval_ms`` for a
    sliding half-open window ``[now - interval, now)``.
    """

    def __init__(self, interval_ms: int | None = None):
        if interval_ms is not None and interval_ms < 1:
            raise ValueError("interval_ms must be >= 1")
        self.interval_ms = interval_ms
        self._clicks: dict[str, deque[int]] = {}

    def observe(self, e: Event) -> None:
        if isinstance(e, ClickEvent):
            self._clicks.setdefault(e.advertiser, deque()).append(e.t)

    def tally(self, now: int) -> ClickTally:
        lo = 0 if self.interval_ms is None else now - self.interval_ms
        counts: dict[str, int] = {}
        for adv, dq in sorted(self._clicks.items()):
            if self.interval_ms is not None:
                while dq and dq[0] < lo:
                    dq.popleft()
            n = len(dq) - _count_at_or_after(dq, now)
            if n > 0:
                counts[adv] = n
        return ClickTally(counts, sum(counts.values()), (max(lo, 0), now))

    def estimate(self, advertiser: AdvertiserId, now: int) -> CtrEstimate:
        return ctr_relative(self.tally(now), advertiser)


class _RelativeFold:
    """Adapter giving RelativeCtr the per-advertiser fold interface."""

    def __init__(self, advertiser: AdvertiserId, shared: RelativeCtr):
        self.advertiser = advertiser
        self.shared = shared

    def observe(self, e: Event) -> None:
        self.shared.observe(e)

    def estimate(self, now: int) -> CtrEstimate:
        return self.shared.estimate(self.advertiser, now)


# ---------------------------------------------------------------------------
# Whole-log evaluation at a single instant.


def _fold_log(fold, log: EventLog, now: int) -> CtrEstimate:
    for e in log:
        if e.t > now:
            break
        fold.observe(e)
    return fold.estimate(now)


def ctr_time_window(
    log: EventLog, advertiser: AdvertiserId, window_ms: int, now: int
) -> CtrEstimate:
    """Clicks/impressions for ``advertiser`` within ``[now - window_ms, now)``."""
    return _fold_log(TimeWindowCtr(advertiser, window_ms), log, now)


def ctr_impression_window(
    log: EventLog, advertiser: AdvertiserId, size: int, now: int
) -> CtrEstimate:
    """Clicked fraction of the advertiser's last ``size`` impressions."""
    return _fold_log(ImpressionWindowCtr(advertiser, size), log, now)


def ctr_click_window(
    log: EventLog, advertiser: AdvertiserId, size: int, now: int
) -> CtrEstimate:
    """Last ``size`` clicks over impressions since the one that took click N-back."""
    return _fold_log(ClickWindowCtr(advertiser, size), log, now)


def ctr_relative(tally: ClickTally, advertiser: AdvertiserId) -> CtrEstimate:
    """The advertiser's share of all clicks in the tally window."""
    if tally.total == 0:
        return CtrEstimate.undefined()
    return CtrEstimate.ratio(tally.count(advertiser), tally.total)


def ctr_legacy(clicks: int, impressions: int) -> float:
    """CTR as clicks/(impressions + clicks).

    For feeds where the impression counter excludes displays that converted
    into clicks, so clicks must be added back to recover the display total.
    Raises ``ZeroDivisionError`` when both counts are zero.
    """
    if clicks < 0 or impressions < 0:
        raise ValueError("counts must be non-negative")
    if impressions + clicks == 0:
        raise ZeroDivisionError("no displays: impressions + clicks == 0")
    return clicks / (impressions + clicks)
