"""Reconstruct parent trades that are referenced by copies but absent from the log."""

from __future__ import annotations

import statistics
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Sequence

from .trades import TradeRecord


@dataclass
class ImputationReport:
    records: list[TradeRecord]
    imputed_ids: list[int]
    failures: list[str]


def mirror_ratios(records: Sequence[TradeRecord]) -> dict[int, float]:
    """Median copy-to-parent units ratio per mirror over its observed pairs."""
    by_id = {r.trade_id: r for r in records}
    samples: dict[int, list[float]] = defaultdict(list)
    for r in records:
        if r.mirror_id is None:
            continue
        parent = by_id.get(r.parent_trade_id)
        if parent is not None and parent.units != 0.0:
            samples[r.mirror_id].append(r.units / parent.units)
    return {mid: statistics.median(v) for mid, v in samples.items()}


def impute_missing_parents(records: Sequence[TradeRecord]) -> ImputationReport:
    """Impute each missing parent's units as the median of its copies' proposals.

    A copy proposes ``copy.units / ratio`` where ``ratio`` is its mirror's
    median units ratio.  Rates, dates, asset and leverage come from the
    lowest-id contributing copy; amount and profit are recomputed from the
    imputed units.  Existing records are returned unchanged.
    """
    by_id = {r.trade_id: r for r in records}
    ratios = mirror_ratios(records)
    targets: dict[int, int] = {}
    copies: dict[int, list[TradeRecord]] = defaultdict(list)
    for r in records:
        if r.mirror_id is None:
            continue
        parent = by_id.get(r.parent_trade_id)
        if parent is None:
            copies[r.parent_trade_id].append(r)
        else:
            targets.setdefault(r.mirror_id, parent.user_id)

    out = list(records)
    imputed_ids, failures = [], []
    for pid in sorted(copies):
        contributing = sorted(
            (c for c in copies[pid] if ratios.get(c.mirror_id, 0.0) != 0.0),
            key=lambda c: c.trade_id,
        )
        if not contributing:
            failures.append(f"parent {pid}: no copy belongs to a mirror with observed parent-copy pairs")
            continue
        owners = {targets[c.mirror_id] for c in contributing if c.mirror_id in targets}
        if len(owners) != 1:
            failures.append(f"parent {pid}: owner is {'unknown' if not owners else 'ambiguous'}")
            continue
        units = statistics.median(c.units / ratios[c.mirror_id] for c in contributing)
        tpl = contributing[0]
        out.append(
            replace(
                tpl,
                trade_id=pid,
                user_id=owners.pop(),
                units=units,
                amount_invested=units * tpl.open_rate / tpl.leverage,
                net_profit=units * (tpl.close_rate - tpl.open_rate),
                parent_trade_id=None,
                mirror_id=None,
                imputed=True,
            )
        )
        imputed_ids.append(pid)
    out.sort(key=lambda r: r.trade_id)
    return ImputationReport(out, imputed_ids, failures)
