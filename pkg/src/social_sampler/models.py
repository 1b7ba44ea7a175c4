"""Choice-probability kernels for the social sampling model and its alternatives.

Every kernel maps a market snapshot (per-option popularity ``p`` and
performance ``q``) to a probability vector over options.  The kernels are
pure functions; the panel-level code in :mod:`social_sampler.inference`
reuses :func:`grouped_probabilities` to evaluate many days at once.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import ClassVar, Mapping, Sequence, Union

import numpy as np

from .errors import InvalidInputError, NumericError

#: Logistic arguments are clamped to this magnitude before exponentiation.
LOGIT_CLAMP = 500.0


def logistic(x):
    """Numerically safe logistic function, ``1 / (1 + exp(-x))``."""
    z = np.clip(np.asarray(x, dtype=float), -LOGIT_CLAMP, LOGIT_CLAMP)
    out = 1.0 / (1.0 + np.exp(-z))
    return out if out.ndim else float(out)


def binarize_signal(q: float) -> int:
    """Return 1 if ``q`` is strictly positive, else 0."""
    q = float(q)
    if not math.isfinite(q):
        raise InvalidInputError(f"performance signal must be finite, got {q!r}")
    return 1 if q > 0.0 else 0


def binarize(q) -> np.ndarray:
    """Vectorised :func:`binarize_signal`; returns a ``uint8`` array."""
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        bad = int(np.flatnonzero(~np.isfinite(q))[0])
        raise InvalidInputError(f"performance signal at index {bad} is not finite")
    return (q > 0.0).astype(np.uint8)


def smoothing(active_count: int) -> float:
    """Smoothing term ``1 / M_t`` added to popularity."""
    if int(active_count) != active_count or active_count < 1:
        raise InvalidInputError(f"active_count must be a positive integer, got {active_count!r}")
    return 1.0 / active_count


@dataclass(frozen=True)
class MarketSnapshot:
    """Popularity and performance of every active option on one day."""

    popularity: np.ndarray
    performance: np.ndarray
    day: int = 0

    def __post_init__(self):
        pop = np.asarray(self.popularity)
        perf = np.asarray(self.performance, dtype=float)
        if pop.ndim != 1 or perf.ndim != 1:
            raise InvalidInputError("popularity and performance must be one-dimensional")
        if pop.shape != perf.shape:
            raise InvalidInputError(
                f"popularity has {pop.size} entries but performance has {perf.size}"
            )
        if pop.size == 0:
            raise InvalidInputError("snapshot has no active options")
        if np.any(pop < 0) or np.any(pop != np.floor(pop)):
            raise InvalidInputError("popularity entries must be non-negative integers")
        if not np.all(np.isfinite(perf)):
            raise InvalidInputError("performance entries must be finite")
        object.__setattr__(self, "popularity", pop.astype(np.int64))
        object.__setattr__(self, "performance", perf)

    @property
    def active_count(self) -> int:
        return int(self.popularity.size)


def _check_rate(name: str, value: float) -> None:
    if not (0.5 < value < 1.0):
        raise InvalidInputError(f"{name} must lie in (0.5, 1), got {value!r}")


def _check_finite(**values: float) -> None:
    for name, value in values.items():
        if not math.isfinite(value):
            raise InvalidInputError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class SocialSampling:
    """Popularity as a prior, commit with the likelihood of the latest signal.

    ``gamma`` scales popularity as ``p ** gamma``; the canonical model has
    ``gamma == 1`` and only ``eta`` is fitted.
    """

    eta: float
    gamma: float = 1.0
    family: ClassVar[str] = "social_sampling"
    free_params: ClassVar[tuple[str, ...]] = ("eta",)

    def __post_init__(self):
        _check_rate("eta", self.eta)
        _check_finite(gamma=self.gamma)
        if self.gamma < 0:
            raise InvalidInputError(f"gamma must be >= 0, got {self.gamma!r}")


@dataclass(frozen=True)
class PerformanceRegression:
    beta0: float
    beta1: float
    family: ClassVar[str] = "performance_regression"
    free_params: ClassVar[tuple[str, ...]] = ("beta0", "beta1")

    def __post_init__(self):
        _check_finite(beta0=self.beta0, beta1=self.beta1)


@dataclass(frozen=True)
class FullRegression:
    beta0: float
    beta1: float
    beta2: float
    beta3: float
    family: ClassVar[str] = "full_regression"
    free_params: ClassVar[tuple[str, ...]] = ("beta0", "beta1", "beta2", "beta3")

    def __post_init__(self):
        _check_finite(beta0=self.beta0, beta1=self.beta1, beta2=self.beta2, beta3=self.beta3)


@dataclass(frozen=True)
class Popularity:
    """Preferential attachment: choose in proportion to smoothed popularity."""

    family: ClassVar[str] = "popularity"
    free_params: ClassVar[tuple[str, ...]] = ()


@dataclass(frozen=True)
class Performance:
    eta: float
    family: ClassVar[str] = "performance"
    free_params: ClassVar[tuple[str, ...]] = ("eta",)

    def __post_init__(self):
        _check_rate("eta", self.eta)


@dataclass(frozen=True)
class Additive:
    """Mixture of the popularity and performance models with weight ``alpha``."""

    alpha: float
    eta: float
    family: ClassVar[str] = "additive"
    free_params: ClassVar[tuple[str, ...]] = ("alpha", "eta")

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise InvalidInputError(f"alpha must lie in [0, 1], got {self.alpha!r}")
        _check_rate("eta", self.eta)


ModelSpec = Union[SocialSampling, PerformanceRegression, FullRegression, Popularity, Performance, Additive]

FAMILIES: dict[str, type] = {
    cls.family: cls
    for cls in (SocialSampling, PerformanceRegression, FullRegression, Popularity, Performance, Additive)
}


def family_class(tag: str) -> type:
    try:
        return FAMILIES[tag]
    except KeyError:
        raise InvalidInputError(
            f"unknown model family {tag!r}; expected one of {sorted(FAMILIES)}"
        ) from None


def model_to_dict(model: ModelSpec) -> dict:
    return {"family": model.family, **asdict(model)}


def model_from_dict(data: Mapping) -> ModelSpec:
    data = dict(data)
    cls = family_class(data.pop("family", None))
    try:
        return cls(**data)
    except TypeError as exc:
        raise InvalidInputError(f"bad parameters for {cls.family}: {exc}") from None


def _signal_likelihood(r: np.ndarray, eta: float) -> np.ndarray:
    return np.where(r == 1, eta, 1.0 - eta)


def _raise_nonfinite(values: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(values)
    if np.any(bad):
        raise NumericError(f"non-finite {what}", index=int(np.flatnonzero(bad)[0]))


def _normalize_log(logw: np.ndarray, group: np.ndarray, n_groups: int) -> np.ndarray:
    top = np.full(n_groups, -np.inf)
    np.maximum.at(top, group, logw)
    w = np.exp(logw - top[group])
    return w / np.bincount(group, weights=w, minlength=n_groups)[group]


def _normalize(w: np.ndarray, group: np.ndarray, n_groups: int) -> np.ndarray:
    total = np.bincount(group, weights=w, minlength=n_groups)[group]
    return w / total


def grouped_probabilities(
    model: ModelSpec,
    popularity: np.ndarray,
    performance: np.ndarray,
    group: np.ndarray,
    n_groups: int,
) -> np.ndarray:
    """Decision probabilities for many days at once.

    Rows sharing a ``group`` value form one snapshot; each group is
    normalised independently and uses its own smoothing ``1 / M_t``.
    """
    p = np.asarray(popularity, dtype=float)
    q = np.asarray(performance, dtype=float)
    group = np.asarray(group, dtype=np.intp)
    sizes = np.bincount(group, minlength=n_groups)
    eps = 1.0 / np.maximum(sizes, 1)[group]

    if isinstance(model, SocialSampling):
        r = binarize(q)
        with np.errstate(over="ignore"):
            prior = np.power(p, model.gamma) + eps
        _raise_nonfinite(prior, "popularity weight")
        logw = np.where(r == 1, math.log(model.eta), math.log1p(-model.eta)) + np.log(prior)
        return _normalize_log(logw, group, n_groups)
    if isinstance(model, Performance):
        return _normalize(_signal_likelihood(binarize(q), model.eta), group, n_groups)
    if isinstance(model, Popularity):
        return _normalize(p + eps, group, n_groups)
    if isinstance(model, Additive):
        pop_share = _normalize(p + eps, group, n_groups)
        w = model.alpha * pop_share + (1.0 - model.alpha) * _signal_likelihood(binarize(q), model.eta)
        return _normalize(w, group, n_groups)
    if isinstance(model, PerformanceRegression):
        with np.errstate(over="ignore", invalid="ignore"):
            z = model.beta0 + model.beta1 * q
        _raise_nonfinite(z, "logistic argument")
        return _normalize(logistic(z), group, n_groups)
    if isinstance(model, FullRegression):
        with np.errstate(over="ignore", invalid="ignore"):
            z = model.beta0 + model.beta1 * q + model.beta2 * p + model.beta3 * q * p
        _raise_nonfinite(z, "logistic argument")
        return _normalize(logistic(z), group, n_groups)
    raise InvalidInputError(f"not a model specification: {model!r}")


def decision_probabilities(model: ModelSpec, snapshot: MarketSnapshot) -> np.ndarray:
    """Probability that one decision-maker commits to each option.

    >>> snap = MarketSnapshot(popularity=[3, 1], performance=[0.1, -0.1])
    >>> decision_probabilities(SocialSampling(eta=0.75), snap).round(3).tolist()
    [0.875, 0.125]
    """
    group = np.zeros(snapshot.active_count, dtype=np.intp)
    return grouped_probabilities(model, snapshot.popularity, snapshot.performance, group, 1)


# -- exact posterior under the needle-in-a-haystack reward model -------------


@dataclass(frozen=True)
class PosteriorState:
    """Log-space posterior that each option is the best one."""

    log_weights: np.ndarray
    eta: float

    def __post_init__(self):
        _check_rate("eta", self.eta)
        object.__setattr__(self, "log_weights", np.asarray(self.log_weights, dtype=float))

    @property
    def option_count(self) -> int:
        return int(self.log_weights.size)

    def probabilities(self) -> np.ndarray:
        w = np.exp(self.log_weights - self.log_weights.max())
        return w / w.sum()


def _signal_log_ratios(eta: float) -> tuple[float, float]:
    # Likelihood ratios against the 0.5 rate of a non-best option.
    return math.log(eta / 0.5), math.log((1.0 - eta) / 0.5)


def posterior_init(option_count: int, eta: float) -> PosteriorState:
    if int(option_count) != option_count or option_count < 1:
        raise InvalidInputError(f"option_count must be a positive integer, got {option_count!r}")
    return PosteriorState(np.zeros(int(option_count)), eta)


def posterior_update(state: PosteriorState, signals: Sequence[int]) -> PosteriorState:
    """One Bayes step given one binary signal per option."""
    r = np.asarray(signals)
    if r.shape != (state.option_count,):
        raise InvalidInputError(
            f"expected {state.option_count} signals, got shape {r.shape}"
        )
    if not np.all((r == 0) | (r == 1)):
        raise InvalidInputError("signals must be 0 or 1")
    good, bad = _signal_log_ratios(state.eta)
    return PosteriorState(state.log_weights + np.where(r == 1, good, bad), state.eta)


def posterior_from_counts(good_counts, rounds: int, eta: float) -> PosteriorState:
    """Posterior after ``rounds`` signal days, from per-option good-signal counts."""
    g = np.asarray(good_counts, dtype=float)
    if np.any(g < 0) or np.any(g > rounds):
        raise InvalidInputError("good_counts must lie in [0, rounds]")
    good, bad = _signal_log_ratios(eta)
    return PosteriorState(g * good + (rounds - g) * bad, eta)


def generalized_commit_probability(
    likelihood_best: float, likelihood_other: float, ratio_bound: float
) -> float:
    """Commit probability ``(1/C) * P(r | best) / P(r | not best)`` for real-valued rewards."""
    if not (likelihood_best > 0 and likelihood_other > 0):
        raise InvalidInputError("likelihoods must be positive")
    ratio = likelihood_best / likelihood_other
    if not (ratio_bound > 0) or ratio > ratio_bound * (1.0 + 1e-12):
        raise InvalidInputError(
            f"likelihood ratio {ratio!r} exceeds the bound C={ratio_bound!r}"
        )
    return min(ratio / ratio_bound, 1.0)
