"""Idealised multi-agent simulations of social sampling.

``M`` options emit Bernoulli rewards each round (the best option at rate
``true_best_rate``, all others at 0.5).  ``N`` agents per round consider an
option with probability proportional to ``p ** gamma + 1/M`` and commit with
probability ``eta`` after a good signal or ``1 - eta`` after a bad one.
"""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np

from . import _fallback, backend
from .errors import CapExceededError, InvalidInputError

Z_95 = 1.959963984540054
BEST_OPTION = 0


@dataclass(frozen=True)
class SimulationConfig:
    n_agents: int
    n_options: int
    n_rounds: int
    true_best_rate: float
    assumed_best_rate: float
    gamma: float = 1.0
    cost: float = 0.5
    repetitions: int = 1
    seed: int = 0
    unfollow_enabled: bool = False

    def __post_init__(self):
        for name in ("n_agents", "n_options", "n_rounds", "repetitions"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise InvalidInputError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if not (0.5 < self.true_best_rate < 1.0):
            raise InvalidInputError(f"true_best_rate must lie in (0.5, 1), got {self.true_best_rate!r}")
        if not (0.5 <= self.assumed_best_rate < 1.0):
            raise InvalidInputError(
                f"assumed_best_rate must lie in [0.5, 1), got {self.assumed_best_rate!r}"
            )
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise InvalidInputError(f"gamma must be finite and >= 0, got {self.gamma!r}")
        if not math.isfinite(self.cost):
            raise InvalidInputError(f"cost must be finite, got {self.cost!r}")
        if int(self.seed) != self.seed or not (0 <= self.seed < 2**64):
            raise InvalidInputError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def rates(self) -> np.ndarray:
        rates = np.full(self.n_options, 0.5)
        rates[BEST_OPTION] = self.true_best_rate
        return rates

    def weight_table(self) -> np.ndarray:
        """``k ** gamma`` for every reachable popularity ``k``."""
        size = self.n_agents * (self.n_rounds if self.unfollow_enabled else 1) + 1
        return _weight_table(self.gamma, size)


def _weight_table(gamma: float, size: int) -> np.ndarray:
    return np.power(np.arange(size, dtype=float), gamma)


@dataclass
class SimulationResult:
    """Outputs of one repetition.

    ``mean_mimicker_performance`` is the expected final-round reward of the
    committed agents given where they committed; ``realized_mimicker_performance``
    uses the actual reward draw.  Neither subtracts ``cost``.
    """

    mean_mimicker_performance: float
    realized_mimicker_performance: float
    committing_count_final: int
    popularity_trajectory: np.ndarray
    posterior_l1_trajectory: np.ndarray
    rewards: np.ndarray
    cost: float = 0.5

    @property
    def net_performance(self) -> float:
        return self.mean_mimicker_performance - self.cost


def rng_for(seed: int, cell: int = 0, repetition: int = 0) -> np.random.Generator:
    """Independent stream for one (cell, repetition) work unit."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, cell, repetition])))


def _as_counts(values, n_options: int, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.shape != (n_options,):
        raise InvalidInputError(f"{name} must have length {n_options}, got shape {arr.shape}")
    if np.any(arr < 0):
        raise InvalidInputError(f"{name} must be non-negative")
    return arr.astype(np.int64)


def run_round(config: SimulationConfig, prev_counts, rewards, rng: np.random.Generator) -> np.ndarray:
    """Commit counts produced by one round of fresh decisions."""
    prev = _as_counts(prev_counts, config.n_options, "prev_counts")
    r = _as_counts(rewards, config.n_options, "rewards").astype(np.uint8)
    table = _weight_table(config.gamma, max(int(prev.max()), config.n_agents) + 1)
    return _fallback.consider_and_commit(
        rng, config.n_agents, prev, r, config.assumed_best_rate, table
    )


def run_unfollow_round(config: SimulationConfig, prev_counts, rewards, rng: np.random.Generator):
    """One round with persistence; returns ``(kept, fresh)`` commit counts."""
    prev = _as_counts(prev_counts, config.n_options, "prev_counts")
    r = _as_counts(rewards, config.n_options, "rewards").astype(np.uint8)
    eta = config.assumed_best_rate
    kept = rng.binomial(prev, np.where(r == 1, eta, 1.0 - eta))
    return kept, run_round(config, prev, r, rng)


def posterior_l1(counts: np.ndarray, rewards: np.ndarray, eta: float) -> np.ndarray:
    """Per-round L1 distance between popularity share and the exact posterior.

    Row ``t`` of ``counts`` was decided on signals ``rewards[: t + 1]``; the
    posterior uses the agents' assumed ``eta``.
    """
    n_rounds, n_options = counts.shape
    good = math.log(eta / 0.5)
    bad = math.log((1.0 - eta) / 0.5)
    log_post = np.cumsum(np.where(rewards[:n_rounds] == 1, good, bad), axis=0)
    post = np.exp(log_post - log_post.max(axis=1, keepdims=True))
    post /= post.sum(axis=1, keepdims=True)
    totals = counts.sum(axis=1, keepdims=True)
    share = np.where(totals > 0, counts / np.maximum(totals, 1), 1.0 / n_options)
    return np.abs(share - post).sum(axis=1)


def _result(config: SimulationConfig, counts: np.ndarray, rewards: np.ndarray) -> SimulationResult:
    final = counts[-1]
    total = int(final.sum())
    if total:
        expected = float(final @ config.rates) / total
        realized = float(final @ rewards[-1]) / total
    else:
        expected = realized = math.nan
    return SimulationResult(
        mean_mimicker_performance=expected,
        realized_mimicker_performance=realized,
        committing_count_final=total,
        popularity_trajectory=counts,
        posterior_l1_trajectory=posterior_l1(counts, rewards, config.assumed_best_rate),
        rewards=rewards,
        cost=config.cost,
    )


def _simulate(config: SimulationConfig, rng: np.random.Generator, table: np.ndarray | None = None):
    if table is None:
        table = config.weight_table()
    counts, rewards = backend.simulate_counts(
        rng,
        config.n_agents,
        config.n_rounds,
        config.rates,
        float(config.assumed_best_rate),
        table,
        bool(config.unfollow_enabled),
    )
    return _result(config, counts, rewards)


def run_simulation(config: SimulationConfig, repetition: int = 0, cell: int = 0) -> SimulationResult:
    """Simulate one repetition; deterministic given (seed, cell, repetition)."""
    return _simulate(config, rng_for(config.seed, cell, repetition))


def run_unfollow_simulation(config: SimulationConfig, repetition: int = 0, cell: int = 0) -> SimulationResult:
    if not config.unfollow_enabled:
        raise InvalidInputError("run_unfollow_simulation requires unfollow_enabled=True")
    return run_simulation(config, repetition, cell)


# -- parameter sweeps ---------------------------------------------------------

_GRID_AXES = (
    "n_agents",
    "n_options",
    "n_rounds",
    "true_best_rate",
    "assumed_best_rate",
    "gamma",
    "cost",
    "unfollow_enabled",
)


@dataclass
class SweepGrid:
    """Values to cross for each configuration field.

    ``None`` in ``assumed_best_rate`` means "equal to ``true_best_rate``".
    """

    n_agents: list
    n_options: list
    n_rounds: list
    true_best_rate: list
    assumed_best_rate: list = field(default_factory=lambda: [None])
    gamma: list = field(default_factory=lambda: [1.0])
    cost: list = field(default_factory=lambda: [0.5])
    unfollow_enabled: list = field(default_factory=lambda: [False])
    repetitions: int = 100
    seed: int = 0
    max_cells: int = 10_000

    def __post_init__(self):
        for axis in _GRID_AXES:
            values = getattr(self, axis)
            if not isinstance(values, (list, tuple)):
                values = [values]
            if len(values) == 0:
                raise InvalidInputError(f"grid axis {axis!r} is empty")
            setattr(self, axis, list(values))
        if int(self.repetitions) != self.repetitions or self.repetitions < 1:
            raise InvalidInputError(f"repetitions must be a positive integer, got {self.repetitions!r}")

    @classmethod
    def from_dict(cls, data: Mapping) -> "SweepGrid":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInputError(f"unknown sweep fields: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise InvalidInputError(f"invalid sweep grid: {exc}") from None

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def cell_count(self) -> int:
        return math.prod(len(getattr(self, axis)) for axis in _GRID_AXES)

    def cells(self) -> list[SimulationConfig]:
        if self.cell_count > self.max_cells:
            raise CapExceededError(
                f"sweep has {self.cell_count} cells, above the cap of {self.max_cells}; "
                "shrink the grid or raise max_cells"
            )
        configs = []
        for combo in itertools.product(*(getattr(self, axis) for axis in _GRID_AXES)):
            values = dict(zip(_GRID_AXES, combo))
            if values["assumed_best_rate"] is None:
                values["assumed_best_rate"] = values["true_best_rate"]
            configs.append(SimulationConfig(**values, repetitions=self.repetitions, seed=self.seed))
        return configs


@dataclass
class SweepRow:
    cell: int
    config: SimulationConfig
    repetitions: int
    valid: int
    mean: float
    sd: float
    ci_lo: float
    ci_hi: float
    realized_mean: float
    mean_l1_second_half: float

    @property
    def half_width(self) -> float:
        return (self.ci_hi - self.ci_lo) / 2.0

    @property
    def net_mean(self) -> float:
        return self.mean - self.config.cost

    def as_record(self) -> dict:
        record = {"cell": self.cell}
        record.update({axis: getattr(self.config, axis) for axis in _GRID_AXES})
        record.update(
            repetitions=self.repetitions,
            valid=self.valid,
            mean_mimicker_performance=self.mean,
            sd=self.sd,
            ci_lo=self.ci_lo,
            ci_hi=self.ci_hi,
            net_of_cost=self.net_mean,
            realized_mean=self.realized_mean,
            mean_l1_second_half=self.mean_l1_second_half,
        )
        return record


def summarize(values: Sequence[float]) -> tuple[int, float, float, float, float]:
    """(n, mean, sd, ci_lo, ci_hi) over the finite values, normal-approximation CI."""
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        return 0, math.nan, math.nan, math.nan, math.nan
    mean = float(x.mean())
    sd = float(x.std(ddof=1)) if x.size > 1 else math.nan
    half = Z_95 * sd / math.sqrt(x.size) if x.size > 1 else math.nan
    return int(x.size), mean, sd, mean - half, mean + half


def _run_unit(config, cell, rep, table):
    res = _simulate(config, rng_for(config.seed, cell, rep), table)
    tail = res.posterior_l1_trajectory[config.n_rounds // 2 :]
    return (
        res.mean_mimicker_performance,
        res.realized_mimicker_performance,
        float(tail.mean()) if tail.size else math.nan,
    )


def run_sweep(grid: SweepGrid, threads: int = 1) -> list[SweepRow]:
    """Run every cell of ``grid``; rows come back in grid order."""
    configs = grid.cells()
    tables = {}
    units = []
    for cell, config in enumerate(configs):
        key = (config.gamma, config.n_agents * (config.n_rounds if config.unfollow_enabled else 1))
        if key not in tables:
            tables[key] = config.weight_table()
        units.extend((config, cell, rep, tables[key]) for rep in range(grid.repetitions))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(lambda u: _run_unit(*u), units))
    else:
        outputs = [_run_unit(*u) for u in units]

    per_cell = np.asarray(outputs, dtype=float).reshape(len(configs), grid.repetitions, 3)
    rows = []
    for cell, config in enumerate(configs):
        perf, realized, l1 = per_cell[cell].T
        n, mean, sd, lo, hi = summarize(perf)
        rows.append(
            SweepRow(
                cell=cell,
                config=config,
                repetitions=grid.repetitions,
                valid=n,
                mean=mean,
                sd=sd,
                ci_lo=lo,
                ci_hi=hi,
                realized_mean=float(np.nanmean(realized)) if np.isfinite(realized).any() else math.nan,
                mean_l1_second_half=float(np.nanmean(l1)) if np.isfinite(l1).any() else math.nan,
            )
        )
    return rows


SWEEP_COLUMNS = (
    ("cell",)
    + _GRID_AXES
    + (
        "repetitions",
        "valid",
        "mean_mimicker_performance",
        "sd",
        "ci_lo",
        "ci_hi",
        "net_of_cost",
        "realized_mean",
        "mean_l1_second_half",
    )
)


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.as_record().items()})


def sweep_document(grid: SweepGrid, rows: Sequence[SweepRow]) -> dict:
    return {
        "schema_version": 1,
        "grid": grid.to_dict(),
        "cells": [{k: _json_num(v) for k, v in row.as_record().items()} for row in rows],
    }


def _fmt(value):
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return value


def _json_num(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value
