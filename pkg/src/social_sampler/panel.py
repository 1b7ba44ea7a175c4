"""User-day panel: the substrate for fitting and evaluation.

Rows are sorted by (day, user).  All rows of a day form that day's market
snapshot; ``mask`` marks the rows whose new mimickers are *counted* (in the
likelihood or an evaluation), so cross-validation can hold out users
without changing any day's choice set.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import IntegrityError, InvalidInputError

PANEL_COLUMNS = ("day", "user_id", "performance", "prev_popularity", "new_mimickers", "lost_mimickers")


@dataclass
class PanelDataset:
    day: np.ndarray
    user_id: np.ndarray
    performance: np.ndarray
    prev_popularity: np.ndarray
    new_mimickers: np.ndarray
    lost_mimickers: np.ndarray
    mask: np.ndarray | None = None
    group: np.ndarray = field(init=False, repr=False)
    days: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        day = np.asarray(self.day, dtype=np.int64)
        n = day.size
        cols = {
            "user_id": np.asarray(self.user_id, dtype=np.int64),
            "performance": np.asarray(self.performance, dtype=float),
            "prev_popularity": np.asarray(self.prev_popularity, dtype=np.int64),
            "new_mimickers": np.asarray(self.new_mimickers, dtype=np.int64),
            "lost_mimickers": np.asarray(self.lost_mimickers, dtype=np.int64),
        }
        mask = np.ones(n, dtype=bool) if self.mask is None else np.asarray(self.mask, dtype=bool)
        for name, col in list(cols.items()) + [("mask", mask)]:
            if col.shape != (n,):
                raise InvalidInputError(f"column {name} has shape {col.shape}, expected ({n},)")
        for name in ("prev_popularity", "new_mimickers", "lost_mimickers"):
            if np.any(cols[name] < 0):
                raise InvalidInputError(f"column {name} must be non-negative")
        if not np.all(np.isfinite(cols["performance"])):
            raise InvalidInputError("performance must be finite")

        order = np.lexsort((cols["user_id"], day))
        day = day[order]
        cols = {k: v[order] for k, v in cols.items()}
        mask = mask[order]
        dup = (np.diff(day) == 0) & (np.diff(cols["user_id"]) == 0)
        if np.any(dup):
            i = int(np.flatnonzero(dup)[0])
            raise IntegrityError(f"duplicate row for user {cols['user_id'][i]} on day {day[i]}")

        self.day = day
        for k, v in cols.items():
            setattr(self, k, v)
        self.mask = mask
        self.days, self.group = np.unique(day, return_inverse=True)
        self.group = self.group.astype(np.intp)

    def __len__(self) -> int:
        return int(self.day.size)

    @property
    def n_days(self) -> int:
        return int(self.days.size)

    @property
    def counted_new(self) -> np.ndarray:
        """New mimickers on counted rows, zero elsewhere."""
        return np.where(self.mask, self.new_mimickers, 0)

    def daily_totals(self) -> np.ndarray:
        """Actual total new mimickers per day, over all rows of the day."""
        return np.bincount(self.group, weights=self.new_mimickers, minlength=self.n_days)

    def with_mask(self, mask) -> "PanelDataset":
        """Same snapshots, counting only rows where ``mask`` (and the current mask) hold."""
        mask = np.asarray(mask, dtype=bool)
        return PanelDataset(
            self.day, self.user_id, self.performance, self.prev_popularity,
            self.new_mimickers, self.lost_mimickers, mask & self.mask,
        )

    def select_days(self, days) -> "PanelDataset":
        """Drop every row whose day is not in ``days``."""
        keep = np.isin(self.day, np.asarray(days))
        return PanelDataset(
            self.day[keep], self.user_id[keep], self.performance[keep],
            self.prev_popularity[keep], self.new_mimickers[keep],
            self.lost_mimickers[keep], self.mask[keep],
        )

    def change(self) -> np.ndarray:
        """Net popularity change (new minus lost) per row."""
        return self.new_mimickers - self.lost_mimickers

    def equals(self, other: "PanelDataset") -> bool:
        return len(self) == len(other) and all(
            np.array_equal(getattr(self, c), getattr(other, c))
            for c in ("day", "user_id", "performance", "prev_popularity", "new_mimickers", "lost_mimickers", "mask")
        )

    # -- CSV ------------------------------------------------------------------

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(PANEL_COLUMNS)
            for i in range(len(self)):
                writer.writerow(
                    (
                        dt.date.fromordinal(int(self.day[i])).isoformat(),
                        int(self.user_id[i]),
                        repr(float(self.performance[i])),
                        int(self.prev_popularity[i]),
                        int(self.new_mimickers[i]),
                        int(self.lost_mimickers[i]),
                    )
                )

    @classmethod
    def read_csv(cls, path) -> "PanelDataset":
        cols = {name: [] for name in PANEL_COLUMNS}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != PANEL_COLUMNS:
                raise InvalidInputError(
                    f"{path}: panel header must be {','.join(PANEL_COLUMNS)}, got {header!r}"
                )
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(PANEL_COLUMNS):
                    raise InvalidInputError(f"{path}:{lineno}: expected {len(PANEL_COLUMNS)} fields, got {len(row)}")
                for name, raw in zip(PANEL_COLUMNS, row):
                    try:
                        cols[name].append(_parse_panel_field(name, raw))
                    except ValueError as exc:
                        raise InvalidInputError(f"{path}:{lineno}: column {name!r}: {exc}") from None
        return cls(
            np.asarray(cols["day"], dtype=np.int64),
            cols["user_id"],
            cols["performance"],
            cols["prev_popularity"],
            cols["new_mimickers"],
            cols["lost_mimickers"],
        )


def _parse_panel_field(name: str, raw: str):
    if name == "day":
        return dt.date.fromisoformat(raw).toordinal()
    if name == "performance":
        value = float(raw)
        if not math.isfinite(value):
            raise ValueError(f"non-finite value {raw!r}")
        return value
    value = int(raw)
    if name != "user_id" and value < 0:
        raise ValueError(f"negative count {raw!r}")
    return value
