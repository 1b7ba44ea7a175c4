"""Trade-log records and the CSV schema they travel in."""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ..errors import InvalidInputError

TRADE_COLUMNS = (
    "trade_id",
    "user_id",
    "open_date",
    "close_date",
    "asset",
    "amount_invested",
    "units",
    "leverage",
    "open_rate",
    "close_rate",
    "net_profit",
    "parent_trade_id",
    "mirror_id",
)

MAX_MALFORMED_FRACTION = 0.10


@dataclass(frozen=True)
class TradeRecord:
    trade_id: int
    user_id: int
    open_date: dt.date
    close_date: dt.date
    asset: str
    amount_invested: float
    units: float
    leverage: float
    open_rate: float
    close_rate: float
    net_profit: float
    parent_trade_id: int | None = None
    mirror_id: int | None = None
    imputed: bool = field(default=False, compare=False)

    @property
    def is_copy(self) -> bool:
        return self.mirror_id is not None


@dataclass
class ParseReport:
    records: list[TradeRecord]
    diagnostics: list[str]
    quarantined: list[int]  # line numbers
    total_rows: int

    @property
    def malformed(self) -> int:
        return len(self.diagnostics)


def _opt_int(raw: str) -> int | None:
    return None if raw == "" else int(raw)


def _finite(raw: str) -> float:
    value = float(raw)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {raw!r}")
    return value


_PARSERS = {
    "trade_id": int,
    "user_id": int,
    "open_date": dt.date.fromisoformat,
    "close_date": dt.date.fromisoformat,
    "asset": str,
    "amount_invested": _finite,
    "units": _finite,
    "leverage": _finite,
    "open_rate": _finite,
    "close_rate": _finite,
    "net_profit": _finite,
    "parent_trade_id": _opt_int,
    "mirror_id": _opt_int,
}


def _parse_row(row: Sequence[str]) -> TradeRecord:
    values = {}
    for name, raw in zip(TRADE_COLUMNS, row):
        try:
            values[name] = _PARSERS[name](raw)
        except ValueError as exc:
            raise ValueError(f"column {name!r}: {exc}") from None
    if values["mirror_id"] is not None and values["parent_trade_id"] is None:
        raise ValueError("mirror_id present without parent_trade_id")
    return TradeRecord(**values)


def parse_trades(path) -> ParseReport:
    """Parse a trade-log CSV, collecting a diagnostic for every rejected row.

    Rows whose close date precedes their open date are quarantined.  More
    than 10% malformed rows aborts with :class:`InvalidInputError`.
    """
    records: list[TradeRecord] = []
    diagnostics: list[str] = []
    quarantined: list[int] = []
    seen: dict[int, int] = {}
    total = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TRADE_COLUMNS:
            raise InvalidInputError(f"{path}: trade-log header must be {','.join(TRADE_COLUMNS)}, got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            total += 1
            if len(row) != len(TRADE_COLUMNS):
                diagnostics.append(f"{path}:{lineno}: expected {len(TRADE_COLUMNS)} fields, got {len(row)}")
                continue
            try:
                rec = _parse_row(row)
            except ValueError as exc:
                diagnostics.append(f"{path}:{lineno}: {exc}")
                continue
            if rec.close_date < rec.open_date:
                diagnostics.append(
                    f"{path}:{lineno}: trade {rec.trade_id} quarantined: closed dates occurring before "
                    f"open dates ({rec.close_date} < {rec.open_date})"
                )
                quarantined.append(lineno)
                continue
            if rec.trade_id in seen:
                diagnostics.append(f"{path}:{lineno}: duplicate trade_id {rec.trade_id} (first on line {seen[rec.trade_id]})")
                continue
            seen[rec.trade_id] = lineno
            records.append(rec)
    if total and len(diagnostics) > MAX_MALFORMED_FRACTION * total:
        preview = "\n  ".join(diagnostics[:5])
        raise InvalidInputError(
            f"{path}: {len(diagnostics)} of {total} rows malformed (limit {MAX_MALFORMED_FRACTION:.0%}); first:\n  {preview}"
        )
    return ParseReport(records, diagnostics, quarantined, total)


def _fmt_opt(value: int | None) -> str:
    return "" if value is None else str(value)


def emit_trades(records: Iterable[TradeRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRADE_COLUMNS)
        for r in records:
            writer.writerow(
                (
                    r.trade_id,
                    r.user_id,
                    r.open_date.isoformat(),
                    r.close_date.isoformat(),
                    r.asset,
                    repr(float(r.amount_invested)),
                    repr(float(r.units)),
                    repr(float(r.leverage)),
                    repr(float(r.open_rate)),
                    repr(float(r.close_rate)),
                    repr(float(r.net_profit)),
                    _fmt_opt(r.parent_trade_id),
                    _fmt_opt(r.mirror_id),
                )
            )
