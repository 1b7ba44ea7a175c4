"""Maximum-likelihood fitting of the choice models to panel data.

Bounded parameters are optimised in an unconstrained coordinate:
``eta = 0.5 + 0.5 * logistic(u)`` and ``alpha = logistic(u)``.  Start points
come from a grid search over that coordinate, then Nelder-Mead refines the
best start.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from . import backend
from .errors import InvalidInputError, NumericError
from .models import (
    Additive,
    FullRegression,
    MarketSnapshot,
    ModelSpec,
    Performance,
    PerformanceRegression,
    Popularity,
    SocialSampling,
    binarize,
    decision_probabilities,
    family_class,
    grouped_probabilities,
    logistic,
    model_to_dict,
)
from .panel import PanelDataset
from .special import beta_ppf

GRID = (-10.0, -1.0, 0.0, 1.0, 10.0)
COARSE_GRID = (-1.0, 1.0)
NM_FATOL = 1e-8
NM_MAXITER = 2000
NM_STEP = 0.5


def log_likelihood(model: ModelSpec, panel: PanelDataset) -> float:
    """Sum over counted rows of ``n_jt * log(theta_jt)``.

    Returns ``-inf`` when a counted option with new mimickers has zero
    probability; raises :class:`NumericError` on non-finite intermediates.
    """
    counts = panel.counted_new.astype(float)
    if len(panel) == 0 or not counts.any():
        return 0.0
    if isinstance(model, SocialSampling):
        ll = backend.social_sampling_loglik(
            panel.group,
            panel.n_days,
            panel.prev_popularity.astype(float),
            binarize(panel.performance),
            counts,
            float(model.eta),
            float(model.gamma),
        )
        if math.isnan(ll) or ll == math.inf:
            raise NumericError("non-finite social sampling likelihood (popularity ** gamma overflow?)")
        return float(ll)
    theta = grouped_probabilities(model, panel.prev_popularity, panel.performance, panel.group, panel.n_days)
    used = counts > 0
    if np.any(theta[used] <= 0.0):
        return -math.inf
    return float(np.sum(counts[used] * np.log(theta[used])))


# -- parameter transforms -----------------------------------------------------


def _rate(u: float) -> float:
    return 0.5 + 0.5 * logistic(u)


def _build(family: str, u: Sequence[float], gamma: float) -> ModelSpec:
    if family == "social_sampling":
        return SocialSampling(eta=_rate(u[0]), gamma=gamma)
    if family == "performance":
        return Performance(eta=_rate(u[0]))
    if family == "additive":
        return Additive(alpha=logistic(u[0]), eta=_rate(u[1]))
    if family == "performance_regression":
        return PerformanceRegression(*map(float, u))
    if family == "full_regression":
        return FullRegression(*map(float, u))
    if family == "popularity":
        return Popularity()
    raise InvalidInputError(f"unknown family {family!r}")


def _objective(family: str, panel: PanelDataset, gamma: float):
    def negll(u) -> float:
        try:
            model = _build(family, u, gamma)
            ll = log_likelihood(model, panel)
        except (InvalidInputError, NumericError):
            return math.inf
        return -ll if math.isfinite(ll) else math.inf

    return negll


@dataclass
class FitResult:
    model: ModelSpec
    log_likelihood: float
    iterations: int
    converged: bool
    init_point: tuple[float, ...]
    evaluations: int = 0

    def to_dict(self) -> dict:
        return {
            "model": model_to_dict(self.model),
            "log_likelihood": self.log_likelihood if math.isfinite(self.log_likelihood) else None,
            "iterations": self.iterations,
            "converged": self.converged,
            "init_point": list(self.init_point),
            "evaluations": self.evaluations,
        }


def _check_panel(panel: PanelDataset) -> None:
    totals = np.bincount(panel.group, weights=panel.counted_new, minlength=panel.n_days)
    if not np.any(totals > 0):
        raise InvalidInputError("panel has no day with counted new mimickers")


def fit(family: str, panel: PanelDataset, gamma: float = 1.0, n_starts: int = 1) -> FitResult:
    """Maximum-likelihood fit of one model family.

    ``gamma`` fixes the popularity exponent of the social sampling family.
    Nelder-Mead runs from the ``n_starts`` best grid points; the best local
    optimum is returned.
    """
    cls = family_class(family)
    _check_panel(panel)
    if family == "popularity":
        model = Popularity()
        return FitResult(model, log_likelihood(model, panel), 0, True, ())

    negll = _objective(family, panel, gamma)
    grid = COARSE_GRID if family == "full_regression" else GRID
    starts = [np.array(p) for p in itertools.product(grid, repeat=len(cls.free_params))]
    scores = [negll(s) for s in starts]
    order = sorted(range(len(starts)), key=lambda i: scores[i])

    best = None
    evaluations = len(starts)
    for i in order[: max(1, n_starts)]:
        x0 = starts[i]
        if not math.isfinite(scores[i]):
            continue
        simplex = np.vstack([x0] + [x0 + NM_STEP * e for e in np.eye(x0.size)])
        res = minimize(
            negll,
            x0,
            method="Nelder-Mead",
            options={
                "initial_simplex": simplex,
                "xatol": math.inf,
                "fatol": NM_FATOL,
                "maxiter": NM_MAXITER,
                "maxfev": 100 * NM_MAXITER,
            },
        )
        evaluations += int(res.nfev)
        if best is None or res.fun < best[0].fun:
            best = (res, tuple(float(v) for v in x0))

    if best is None:
        i = order[0]
        u = starts[i]
        try:
            model = _build(family, u, gamma)
        except InvalidInputError:
            model = _build(family, np.zeros_like(u), gamma)
        return FitResult(model, -math.inf, 0, False, tuple(map(float, u)), evaluations)

    res, x0 = best
    model = _build(family, res.x, gamma)
    ll = -float(res.fun)
    converged = bool(res.success) and math.isfinite(ll)
    return FitResult(model, ll, int(res.nit), converged, x0, evaluations)


@dataclass
class ProfilePoint:
    gamma: float
    log_likelihood: float
    eta: float
    converged: bool
    error: str | None = None


def gamma_profile(panel: PanelDataset, gamma_grid: Sequence[float]) -> list[ProfilePoint]:
    """Maximised log-likelihood over ``eta`` for each fixed popularity exponent."""
    grid = [float(g) for g in gamma_grid]
    if not grid:
        raise InvalidInputError("gamma grid is empty")
    if any(not math.isfinite(g) or g < 0 for g in grid):
        raise InvalidInputError("gamma values must be finite and >= 0")
    points = []
    for g in grid:
        try:
            res = fit("social_sampling", panel, gamma=g)
            points.append(ProfilePoint(g, res.log_likelihood, res.model.eta, res.converged))
        except Exception as exc:  # noqa: BLE001 - reported per grid point
            points.append(ProfilePoint(g, math.nan, math.nan, False, f"{type(exc).__name__}: {exc}"))
    return points


def rank_traders(daily_profits: Mapping[int, Sequence[float]]) -> list[tuple[int, int]]:
    """Rank users by (#profitable days - #losing days), ties by user id."""
    if not daily_profits:
        raise InvalidInputError("no users to rank")
    scores = []
    for user, profits in daily_profits.items():
        x = np.asarray(profits, dtype=float)
        scores.append((user, int(np.sum(x > 0)) - int(np.sum(x < 0))))
    return sorted(scores, key=lambda s: (-s[1], s[0]))


@dataclass(frozen=True)
class CredibleInterval:
    lower: float
    upper: float
    level: float


def skill_credible_interval(successes: int, failures: int, level: float = 0.95) -> CredibleInterval:
    """Equal-tailed interval of Beta(successes + 1, failures + 1)."""
    if successes < 0 or failures < 0:
        raise InvalidInputError("successes and failures must be non-negative")
    if not (0.0 < level < 1.0):
        raise InvalidInputError(f"level must lie in (0, 1), got {level!r}")
    tail = (1.0 - level) / 2.0
    a, b = successes + 1.0, failures + 1.0
    return CredibleInterval(beta_ppf(tail, a, b), beta_ppf(1.0 - tail, a, b), level)


def expected_new_mimickers(model: ModelSpec, snapshot: MarketSnapshot, total_new: int) -> np.ndarray:
    if total_new < 0:
        raise InvalidInputError("total_new must be non-negative")
    return decision_probabilities(model, snapshot) * total_new


def predict_new_mimickers(model: ModelSpec, panel: PanelDataset) -> np.ndarray:
    """Expected new mimickers per row given each day's actual total."""
    theta = grouped_probabilities(model, panel.prev_popularity, panel.performance, panel.group, panel.n_days)
    return theta * panel.daily_totals()[panel.group]
