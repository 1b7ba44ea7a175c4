"""From a trade log to per-user daily popularity, performance, and a panel.

Every table is indexed by a :class:`Calendar` (a contiguous run of calendar
days) so that popularity and performance can be aligned without dates.
"""

from __future__ import annotations

import bisect
import datetime as dt
import math
import statistics
from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..errors import IntegrityError, InvalidInputError
from ..panel import PanelDataset
from .trades import TradeRecord

METRICS = ("roi", "sharpe", "sortino", "sum", "average", "percent")


@dataclass(frozen=True)
class Calendar:
    start: int  # ordinal of the first day
    n_days: int

    def __post_init__(self):
        if self.n_days < 1:
            raise InvalidInputError("calendar must span at least one day")

    @property
    def ordinals(self) -> np.ndarray:
        return np.arange(self.start, self.start + self.n_days, dtype=np.int64)

    def index(self, day: dt.date) -> int:
        return day.toordinal() - self.start

    @classmethod
    def covering(cls, records: Sequence[TradeRecord]) -> "Calendar":
        if not records:
            raise InvalidInputError("cannot derive a calendar from an empty trade log")
        first = min(r.open_date for r in records).toordinal()
        last = max(r.close_date for r in records).toordinal()
        return cls(first, last - first + 1)


@dataclass(frozen=True)
class MirrorInterval:
    mirror_id: int
    mimicker_user: int
    target_user: int
    first_date: dt.date
    last_date: dt.date


@dataclass
class PopularityTable:
    """``counts[u, d]`` standing mimickers; ``new``/``lost`` changes recorded on day ``d``."""

    calendar: Calendar
    users: np.ndarray
    counts: np.ndarray
    new: np.ndarray
    lost: np.ndarray
    intervals: list[MirrorInterval]
    unresolved: list[int]  # mirror ids whose target could not be identified


@dataclass
class PerformanceTable:
    calendar: Calendar
    users: np.ndarray
    values: np.ndarray
    defined: np.ndarray
    metric: str
    window_days: int


@dataclass(frozen=True)
class PerformanceMetricSpec:
    kind: str = "roi"
    window_days: int = 30
    closed_trades_only: bool = True

    def __post_init__(self):
        if self.kind not in METRICS:
            raise InvalidInputError(f"unknown metric {self.kind!r}; expected one of {list(METRICS)}")
        if int(self.window_days) != self.window_days or self.window_days < 1:
            raise InvalidInputError(f"window_days must be a positive integer, got {self.window_days!r}")


# -- popularity ---------------------------------------------------------------


def mirror_intervals(records: Sequence[TradeRecord]) -> tuple[list[MirrorInterval], list[int]]:
    """One interval per mirror id, from its first to its last observed copy."""
    owner = {r.trade_id: r.user_id for r in records}
    spans: dict[int, list] = {}
    for r in records:
        if r.mirror_id is None:
            continue
        target = owner.get(r.parent_trade_id)
        span = spans.get(r.mirror_id)
        if span is None:
            spans[r.mirror_id] = [r.user_id, target, r.open_date, r.close_date]
            continue
        if span[0] != r.user_id:
            raise IntegrityError(
                f"mirror_id {r.mirror_id} maps to conflicting mimickers {span[0]} and {r.user_id}"
            )
        if target is not None:
            if span[1] is None:
                span[1] = target
            elif span[1] != target:
                raise IntegrityError(
                    f"mirror_id {r.mirror_id} maps to conflicting targets {span[1]} and {target}"
                )
        span[2] = min(span[2], r.open_date)
        span[3] = max(span[3], r.close_date)
    intervals, unresolved = [], []
    for mid in sorted(spans):
        mimicker, target, first, last = spans[mid]
        if target is None:
            unresolved.append(mid)
        else:
            intervals.append(MirrorInterval(mid, mimicker, target, first, last))
    return intervals, unresolved


def reconstruct_popularity(records: Sequence[TradeRecord], calendar: Calendar | None = None) -> PopularityTable:
    """Daily mimicker counts per target user.

    A relationship is active from its first through its last observed date
    inclusive; its loss is recorded on the day after the last date.
    """
    calendar = calendar or Calendar.covering(records)
    intervals, unresolved = mirror_intervals(records)
    users = np.array(sorted({iv.target_user for iv in intervals}), dtype=np.int64)
    row = {int(u): i for i, u in enumerate(users)}
    D = calendar.n_days
    diff = np.zeros((users.size, D + 1), dtype=np.int64)
    new = np.zeros((users.size, D), dtype=np.int64)
    lost = np.zeros((users.size, D), dtype=np.int64)
    for iv in intervals:
        i = row[iv.target_user]
        a, b = calendar.index(iv.first_date), calendar.index(iv.last_date)
        if a < 0 or b >= D:
            raise IntegrityError(f"mirror {iv.mirror_id} falls outside the calendar")
        diff[i, a] += 1
        diff[i, b + 1] -= 1
        new[i, a] += 1
        if b + 1 < D:
            lost[i, b + 1] += 1
    counts = np.cumsum(diff[:, :D], axis=1)
    return PopularityTable(calendar, users, counts, new, lost, intervals, unresolved)


# -- performance --------------------------------------------------------------


def _returns(profits, amounts):
    if any(a == 0.0 for a in amounts):
        return None
    return [p / a for p, a in zip(profits, amounts)]


def metric_value(kind: str, profits: Sequence[float], amounts: Sequence[float]) -> float | None:
    """One user-day score from the trades in its window; ``None`` when undefined."""
    n = len(profits)
    if n == 0:
        return None
    if kind == "sum":
        return math.fsum(profits)
    if kind == "average":
        total = math.fsum(amounts)
        return None if total == 0.0 else math.fsum(profits) / total
    if kind == "percent":
        return sum(1 for p in profits if p > 0) / n - 0.5
    rets = _returns(profits, amounts)
    if rets is None:
        return None
    mean = math.fsum(rets) / n
    if kind == "roi":
        return mean
    if kind == "sharpe":
        scale = statistics.pstdev(rets)  # exact, so equal returns give exactly 0
    else:  # sortino: downside deviation below zero
        scale = math.sqrt(math.fsum(min(r, 0.0) ** 2 for r in rets) / n)
    return None if scale == 0.0 else mean / scale


def last_observed_rates(records: Sequence[TradeRecord]) -> dict[tuple[str, dt.date], float]:
    """Latest rate seen per (asset, day), ordering events by trade id."""
    best: dict[tuple[str, dt.date], tuple] = {}
    for r in records:
        for key, rank, rate in (
            ((r.asset, r.open_date), (r.trade_id, 0), r.open_rate),
            ((r.asset, r.close_date), (r.trade_id, 1), r.close_rate),
        ):
            cur = best.get(key)
            if cur is None or rank > cur[0]:
                best[key] = (rank, rate)
    return {k: v[1] for k, v in best.items()}


def compute_performance(
    records: Sequence[TradeRecord],
    spec: PerformanceMetricSpec = PerformanceMetricSpec(),
    calendar: Calendar | None = None,
    rates: Mapping[tuple[str, dt.date], float] | None = None,
) -> PerformanceTable:
    """Per-user daily performance over the trailing window ``[d - W, d - 1]``.

    Copy trades (those carrying a mirror id) are not the copier's own
    decisions and are skipped.  With ``closed_trades_only`` the window runs
    over close dates; otherwise over open dates, with trades still open at
    the end of their opening day marked to that day's rate.
    """
    calendar = calendar or Calendar.covering(records)
    W = spec.window_days
    marks = None
    if not spec.closed_trades_only:
        marks = dict(last_observed_rates(records))
        if rates:
            marks.update(rates)

    per_user: dict[int, list] = defaultdict(list)
    for r in records:
        if r.is_copy:
            continue
        if spec.closed_trades_only:
            key, profit = r.close_date, r.net_profit
        else:
            key = r.open_date
            if r.close_date == r.open_date:
                profit = r.net_profit
            else:
                profit = r.units * (marks[(r.asset, r.open_date)] - r.open_rate)
        per_user[r.user_id].append((calendar.index(key), profit, r.amount_invested))

    users = np.array(sorted(per_user), dtype=np.int64)
    D = calendar.n_days
    values = np.full((users.size, D), np.nan)
    defined = np.zeros((users.size, D), dtype=bool)
    for i, u in enumerate(users):
        trades = sorted(per_user[int(u)], key=lambda t: t[0])
        keys = [t[0] for t in trades]
        for d in range(D):
            lo = bisect.bisect_left(keys, d - W)
            hi = bisect.bisect_left(keys, d)
            if lo == hi:
                continue
            window = trades[lo:hi]
            v = metric_value(spec.kind, [t[1] for t in window], [t[2] for t in window])
            if v is not None and math.isfinite(v):
                values[i, d] = v
                defined[i, d] = True
    return PerformanceTable(calendar, users, values, defined, spec.kind, W)


# -- panel --------------------------------------------------------------------


def is_weekend(ordinal: int) -> bool:
    return dt.date.fromordinal(int(ordinal)).weekday() >= 5


def build_panel(popularity: PopularityTable, performance: PerformanceTable, window_days: int | None = None) -> PanelDataset:
    """One row per weekday user-day with defined performance after the warm-up.

    The first ``window_days`` calendar days are dropped.  ``prev_popularity``
    is the count on the previous weekday, and new/lost counts accumulate
    over any weekend in between, so ``new - lost`` is always the change
    since the previous row's day.
    """
    if popularity.calendar != performance.calendar:
        raise IntegrityError(
            f"calendar mismatch: popularity {popularity.calendar} vs performance {performance.calendar}"
        )
    cal = performance.calendar
    W = performance.window_days if window_days is None else int(window_days)
    row = {int(u): i for i, u in enumerate(popularity.users)}
    weekday = np.array([not is_weekend(o) for o in cal.ordinals])
    keep_day = weekday & (np.arange(cal.n_days) >= max(W, 1))
    # anchor[d]: latest weekday index before d, -1 if none
    marks = np.where(weekday, np.arange(cal.n_days), -1)
    anchor = np.r_[-1, np.maximum.accumulate(marks)[:-1]]
    pad = ((0, 0), (1, 0))
    cum_new = np.cumsum(np.pad(popularity.new, pad), axis=1)
    cum_lost = np.cumsum(np.pad(popularity.lost, pad), axis=1)

    cols = {k: [] for k in ("day", "user", "q", "prev", "new", "lost")}
    for i, u in enumerate(performance.users):
        days = np.flatnonzero(performance.defined[i] & keep_day)
        if days.size == 0:
            continue
        j = row.get(int(u))
        cols["day"].append(cal.start + days)
        cols["user"].append(np.full(days.size, u, dtype=np.int64))
        cols["q"].append(performance.values[i, days])
        if j is None:
            zeros = np.zeros(days.size, dtype=np.int64)
            cols["prev"].append(zeros)
            cols["new"].append(zeros)
            cols["lost"].append(zeros)
        else:
            a = anchor[days]
            cols["prev"].append(np.where(a >= 0, popularity.counts[j, np.maximum(a, 0)], 0))
            cols["new"].append(cum_new[j, days + 1] - cum_new[j, a + 1])
            cols["lost"].append(cum_lost[j, days + 1] - cum_lost[j, a + 1])
    if not cols["day"]:
        raise InvalidInputError("no user-day has defined performance after the warm-up window")
    cat = {k: np.concatenate(v) for k, v in cols.items()}
    return PanelDataset(cat["day"], cat["user"], cat["q"], cat["prev"], cat["new"], cat["lost"])
