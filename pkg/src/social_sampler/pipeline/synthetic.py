"""Ground-truth synthetic markets: trade logs whose panel is known exactly.

Traders open and close one trade every weekday, winning with probability
equal to their skill (one designated best trader, everyone else at 0.5).
From the warm-up onward, each weekday's new mimickers are a multinomial
draw of ``decisions_per_day`` over the choice model's probabilities, and on
Tuesday to Friday each standing mimicker leaves with probability
``unfollow_rate``.  Mimickers appear in the log only through copy trades on
the first and last day of their relationship.

The main random stream drives every panel quantity, so
:func:`synthetic_panel` can skip building the log and still return the same
panel.  A secondary stream decides which relationships end and the copy
sizes; a third picks the parent trades to delete.
"""

from __future__ import annotations

import bisect
import datetime as dt
from dataclasses import dataclass, field, fields
from typing import Mapping

import numpy as np

from ..errors import InvalidInputError
from ..models import (
    MarketSnapshot,
    ModelSpec,
    SocialSampling,
    decision_probabilities,
    model_from_dict,
    model_to_dict,
)
from ..panel import PanelDataset
from .reconstruct import metric_value
from .trades import TradeRecord

MIMICKER_ID_OFFSET = 1_000_000
BEST_USER = 1
ASSETS = ("EURUSD", "GBPUSD", "USDJPY", "GOLD")
AMOUNT = 100.0
OPEN_RATE = 1.0
GOOD_CLOSE = 1.01
BAD_CLOSE = 0.99


@dataclass(frozen=True)
class SyntheticMarketConfig:
    n_users: int = 50
    n_days: int = 100
    decisions_per_day: int = 1000
    generator_model: ModelSpec = field(default_factory=lambda: SocialSampling(eta=0.8, gamma=1.0))
    best_skill: float = 0.7
    base_skill: float = 0.5
    unfollow_rate: float = 0.0
    seed: int = 0
    initial_mimickers: int = 0
    performance_window: int = 30
    start_date: str = "2011-06-01"
    missing_parents: int = 0
    copy_ratio_low: float = 0.05
    copy_ratio_high: float = 0.5

    def __post_init__(self):
        for name, low in (("n_users", 1), ("n_days", 1), ("decisions_per_day", 0), ("initial_mimickers", 0),
                          ("performance_window", 1), ("missing_parents", 0)):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < low:
                raise InvalidInputError(f"{name} must be an integer >= {low}, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.n_users >= MIMICKER_ID_OFFSET:
            raise InvalidInputError(f"n_users must be below {MIMICKER_ID_OFFSET}")
        for name in ("best_skill", "base_skill", "unfollow_rate"):
            if not (0.0 <= getattr(self, name) <= 1.0):
                raise InvalidInputError(f"{name} must lie in [0, 1], got {getattr(self, name)!r}")
        if not (0.0 < self.copy_ratio_low <= self.copy_ratio_high):
            raise InvalidInputError("copy ratio range must satisfy 0 < low <= high")
        if int(self.seed) != self.seed or not (0 <= self.seed < 2**64):
            raise InvalidInputError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        object.__setattr__(self, "seed", int(self.seed))
        if isinstance(self.generator_model, Mapping):
            object.__setattr__(self, "generator_model", model_from_dict(self.generator_model))
        try:
            start = dt.date.fromisoformat(self.start_date)
        except (TypeError, ValueError):
            raise InvalidInputError(f"start_date must be an ISO date, got {self.start_date!r}") from None
        if start.weekday() >= 5:
            raise InvalidInputError(f"start_date must be a weekday, got {self.start_date}")

    @property
    def start_ordinal(self) -> int:
        return dt.date.fromisoformat(self.start_date).toordinal()

    def skills(self) -> np.ndarray:
        s = np.full(self.n_users, self.base_skill)
        s[BEST_USER - 1] = self.best_skill
        return s

    @classmethod
    def from_dict(cls, data: Mapping) -> "SyntheticMarketConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known - {"schema_version"}
        if unknown:
            raise InvalidInputError(f"unknown synthetic market fields: {sorted(unknown)}")
        return cls(**{k: v for k, v in data.items() if k in known})

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["generator_model"] = model_to_dict(self.generator_model)
        return out


@dataclass
class _Mirror:
    mirror_id: int
    target: int
    first: int
    last: int
    ratio: float


@dataclass
class SyntheticMarket:
    config: SyntheticMarketConfig
    trades: list[TradeRecord]
    panel: PanelDataset
    truth: dict
    deleted: list[TradeRecord] = field(default_factory=list)


def _streams(seed: int):
    main = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0])))
    aux = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1])))
    return main, aux


def _simulate(config: SyntheticMarketConfig, with_log: bool):
    rng, aux = _streams(config.seed)
    U, W = config.n_users, config.performance_window
    users = np.arange(1, U + 1, dtype=np.int64)
    skills = config.skills()
    start = config.start_ordinal
    model = config.generator_model

    pop = np.full(U, config.initial_mimickers, dtype=np.int64)
    history = [([], [], []) for _ in range(U)]  # per user: day index, profit, amount
    outcomes: list[tuple[int, np.ndarray]] = []  # (day index, good flags) per weekday
    mirrors: list[_Mirror] = []
    active: list[list[int]] = [[] for _ in range(U)]
    if with_log:
        for u in range(U):
            for _ in range(config.initial_mimickers):
                mirrors.append(_Mirror(len(mirrors) + 1, u + 1, 0, -1, _ratio(aux, config)))
                active[u].append(len(mirrors) - 1)

    rows = {k: [] for k in ("day", "user", "q", "prev", "new", "lost")}
    totals = []
    panel_days = 0
    k = 0
    while True:
        weekday = dt.date.fromordinal(start + k).weekday() < 5
        if weekday and k >= W:
            q = np.full(U, np.nan)
            for u in range(U):
                days, profits, amounts = history[u]
                lo = bisect.bisect_left(days, k - W)
                if lo < len(days):
                    q[u] = metric_value("roi", profits[lo:], amounts[lo:])
            live = np.flatnonzero(np.isfinite(q))
            prev = pop.copy()
            lost = np.zeros(U, dtype=np.int64)
            if config.unfollow_rate > 0 and dt.date.fromordinal(start + k - 1).weekday() < 5:
                lost = rng.binomial(prev, config.unfollow_rate).astype(np.int64)
            new = np.zeros(U, dtype=np.int64)
            if live.size and config.decisions_per_day > 0:
                theta = decision_probabilities(model, MarketSnapshot(prev[live], q[live], day=start + k))
                new[live] = rng.multinomial(config.decisions_per_day, theta)
            pop = prev - lost + new
            if with_log:
                _update_mirrors(config, aux, mirrors, active, lost, new, k)
            rows["day"].append(np.full(live.size, start + k, dtype=np.int64))
            rows["user"].append(users[live])
            rows["q"].append(q[live])
            rows["prev"].append(prev[live])
            rows["new"].append(new[live])
            rows["lost"].append(lost[live])
            totals.append({"day": dt.date.fromordinal(start + k).isoformat(),
                           "new": int(new.sum()), "lost": int(lost.sum())})
            panel_days += 1
        if weekday:
            good = rng.random(U) < skills
            outcomes.append((k, good))
            for u in range(U):
                profit, amount = _trade_values(bool(good[u]))
                history[u][0].append(k)
                history[u][1].append(profit)
                history[u][2].append(amount)
        if panel_days == config.n_days:
            break
        k += 1

    cat = {name: np.concatenate(v) if v else np.zeros(0) for name, v in rows.items()}
    panel = PanelDataset(cat["day"], cat["user"], cat["q"], cat["prev"], cat["new"], cat["lost"])
    truth = {
        "schema_version": 1,
        "config": config.to_dict(),
        "best_user": BEST_USER,
        "skills": {str(int(u)): float(s) for u, s in zip(users, skills)},
        "daily_totals": totals,
        "final_popularity": {str(int(u)): int(p) for u, p in zip(users, pop)},
    }
    return panel, truth, outcomes, mirrors, active, k


def _ratio(aux: np.random.Generator, config: SyntheticMarketConfig) -> float:
    return float(aux.uniform(config.copy_ratio_low, config.copy_ratio_high))


def _update_mirrors(config, aux, mirrors, active, lost, new, k):
    for u in range(config.n_users):
        if lost[u]:
            ending = set(aux.choice(len(active[u]), size=int(lost[u]), replace=False).tolist())
            for i in ending:
                mirrors[active[u][i]].last = k - 1
            active[u] = [m for i, m in enumerate(active[u]) if i not in ending]
        for _ in range(int(new[u])):
            mirrors.append(_Mirror(len(mirrors) + 1, u + 1, k, -1, _ratio(aux, config)))
            active[u].append(len(mirrors) - 1)


def _trade_values(good: bool) -> tuple[float, float]:
    units = AMOUNT * 1.0 / OPEN_RATE
    close = GOOD_CLOSE if good else BAD_CLOSE
    return units * (close - OPEN_RATE), AMOUNT


def synthetic_panel(config: SyntheticMarketConfig) -> tuple[PanelDataset, dict]:
    """Ground-truth panel and truth document without materialising the trade log."""
    panel, truth, *_ = _simulate(config, with_log=False)
    return panel, truth


def generate_synthetic_market(config: SyntheticMarketConfig) -> SyntheticMarket:
    panel, truth, outcomes, mirrors, active, k_end = _simulate(config, with_log=True)
    for m in mirrors:
        if m.last < 0:
            m.last = k_end
    start = config.start_ordinal

    trades: list[TradeRecord] = []
    parent_of: dict[tuple[int, int], TradeRecord] = {}
    for k, good in outcomes:
        day = dt.date.fromordinal(start + k)
        for u in range(config.n_users):
            profit, amount = _trade_values(bool(good[u]))
            rec = TradeRecord(
                trade_id=len(trades) + 1,
                user_id=u + 1,
                open_date=day,
                close_date=day,
                asset=ASSETS[u % len(ASSETS)],
                amount_invested=amount,
                units=AMOUNT * 1.0 / OPEN_RATE,
                leverage=1.0,
                open_rate=OPEN_RATE,
                close_rate=GOOD_CLOSE if good[u] else BAD_CLOSE,
                net_profit=profit,
            )
            trades.append(rec)
            parent_of[(u + 1, k)] = rec

    copies_of: dict[int, list[TradeRecord]] = {}
    for m in mirrors:
        for k in sorted({m.first, m.last}):
            parent = parent_of[(m.target, k)]
            units = m.ratio * parent.units
            copy = TradeRecord(
                trade_id=len(trades) + 1,
                user_id=MIMICKER_ID_OFFSET + m.mirror_id,
                open_date=parent.open_date,
                close_date=parent.close_date,
                asset=parent.asset,
                amount_invested=units * parent.open_rate / parent.leverage,
                units=units,
                leverage=parent.leverage,
                open_rate=parent.open_rate,
                close_rate=parent.close_rate,
                net_profit=units * (parent.close_rate - parent.open_rate),
                parent_trade_id=parent.trade_id,
                mirror_id=m.mirror_id,
            )
            trades.append(copy)
            copies_of.setdefault(parent.trade_id, []).append(copy)

    deleted = _choose_deletions(config, trades, copies_of, mirrors)
    gone = {r.trade_id for r in deleted}
    truth["deleted_parents"] = [
        {"trade_id": r.trade_id, "user_id": r.user_id, "units": r.units, "net_profit": r.net_profit}
        for r in deleted
    ]
    truth["n_mirrors"] = len(mirrors)
    kept = [r for r in trades if r.trade_id not in gone]
    return SyntheticMarket(config, kept, panel, truth, deleted)


def _choose_deletions(config, trades, copies_of, mirrors) -> list[TradeRecord]:
    """Parents to drop, each keeping a copy whose mirror still has an observed pair."""
    if config.missing_parents == 0:
        return []
    aux = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 2])))
    by_id = {r.trade_id: r for r in trades}
    # the other parent of each mirror, keyed by (mirror, parent)
    parents_of_mirror: dict[int, list[int]] = {}
    for pid, cs in copies_of.items():
        for c in cs:
            parents_of_mirror.setdefault(c.mirror_id, []).append(pid)
    candidates = sorted(copies_of)
    deleted: set[int] = set()
    for idx in aux.permutation(len(candidates)):
        if len(deleted) == config.missing_parents:
            break
        pid = candidates[int(idx)]
        others = [[p for p in parents_of_mirror[c.mirror_id] if p != pid] for c in copies_of[pid]]
        if any(p in deleted for o in others for p in o):
            continue
        if not any(o for o in others):
            continue
        deleted.add(pid)
    if len(deleted) < config.missing_parents:
        raise InvalidInputError(
            f"only {len(deleted)} parent trades can be deleted while keeping them imputable "
            f"(requested {config.missing_parents})"
        )
    return [by_id[p] for p in sorted(deleted)]
