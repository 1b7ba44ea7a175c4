"""Out-of-sample model comparison and descriptive analyses of a panel.

Cross-validation folds are expressed as row masks over one panel.  Held-out
rows stay in every day's choice set (they are simply not counted), so the
probability of a training row is normalised over the same options the
decision-makers actually saw.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .errors import InvalidInputError, SingularDesignError
from .inference import fit, predict_new_mimickers
from .models import family_class
from .panel import PanelDataset
from .simulator import Z_95

SCHEMES = ("by_user_10fold", "by_day_10fold", "temporal_last_fraction")
BASELINE = "social_sampling"


@dataclass(frozen=True)
class CVScheme:
    kind: str
    fraction: float = 0.10
    folds: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise InvalidInputError(f"unknown CV scheme {self.kind!r}; expected one of {list(SCHEMES)}")
        if not (0.0 < self.fraction < 1.0):
            raise InvalidInputError(f"fraction must lie in (0, 1), got {self.fraction!r}")
        if int(self.folds) != self.folds or self.folds < 2:
            raise InvalidInputError(f"folds must be an integer >= 2, got {self.folds!r}")
        if int(self.seed) != self.seed or not (0 <= self.seed < 2**64):
            raise InvalidInputError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")


def _unit_folds(units: np.ndarray, folds: int, seed: int) -> list[np.ndarray]:
    order = np.random.default_rng(seed).permutation(units.size)
    return [np.sort(units[idx]) for idx in np.array_split(order, folds)]


def temporal_test_days(panel: PanelDataset, fraction: float) -> np.ndarray:
    """Smallest run of final days holding at least ``fraction`` of the rows."""
    sizes = np.bincount(panel.group, minlength=panel.n_days)
    need = math.ceil(fraction * len(panel) - 1e-9)
    tail = np.cumsum(sizes[::-1])
    n_last = int(np.searchsorted(tail, need)) + 1
    return panel.days[panel.n_days - n_last :]


def split(panel: PanelDataset, scheme: CVScheme) -> list[tuple[PanelDataset, PanelDataset]]:
    """(train, test) pairs sharing the panel's snapshots, differing only in masks."""
    if scheme.kind == "temporal_last_fraction":
        if panel.n_days < 2:
            raise InvalidInputError(f"{scheme.kind} needs at least 2 days, panel has {panel.n_days}")
        test_days = temporal_test_days(panel, scheme.fraction)
        if test_days.size == panel.n_days:
            raise InvalidInputError(f"{scheme.kind}: fraction {scheme.fraction} leaves no training days")
        masks = [np.isin(panel.day, test_days)]
    else:
        by_user = scheme.kind == "by_user_10fold"
        column = panel.user_id if by_user else panel.day
        units = np.unique(column)
        if units.size < scheme.folds:
            what = "users" if by_user else "days"
            raise InvalidInputError(
                f"{scheme.kind} needs at least {scheme.folds} {what}, panel has {units.size}"
            )
        masks = [np.isin(column, f) for f in _unit_folds(units, scheme.folds, scheme.seed)]
    return [(panel.with_mask(~m), panel.with_mask(m)) for m in masks]


def round_half_up(x) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=float) + 0.5)


def error_metrics(predicted, actual) -> tuple[float, float, float]:
    """(MAE, MSE, F1) where a row is predicted positive iff its rounded prediction exceeds 0."""
    pred = np.asarray(predicted, dtype=float)
    act = np.asarray(actual, dtype=float)
    if pred.shape != act.shape or pred.ndim != 1:
        raise InvalidInputError(f"predicted and actual must be equal-length vectors, got {pred.shape} and {act.shape}")
    if pred.size == 0:
        raise InvalidInputError("error metrics need at least one row")
    resid = pred - act
    mae = float(np.mean(np.abs(resid)))
    mse = float(np.mean(resid**2))
    guess = round_half_up(pred) > 0
    truth = act > 0
    tp = int(np.sum(guess & truth))
    if tp == 0:
        return mae, mse, 0.0
    precision = tp / int(np.sum(guess))
    recall = tp / int(np.sum(truth))
    return mae, mse, 2.0 * precision * recall / (precision + recall)


def relative_error(model_residuals, baseline_residuals) -> float:
    """Fraction of rows where the model's residual strictly exceeds the baseline's."""
    a = np.asarray(model_residuals, dtype=float)
    b = np.asarray(baseline_residuals, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidInputError(f"residual vectors must have equal length, got {a.shape} and {b.shape}")
    if a.size == 0:
        raise InvalidInputError("relative error needs at least one row")
    return float(np.mean(a > b))


@dataclass
class ErrorReport:
    scheme: CVScheme
    families: list[str]
    metrics: dict[str, dict[str, float]]
    relative_error: dict[str, float]  # family -> share of rows where it is worse than the baseline
    baseline_worse: dict[str, float]  # family -> share of rows where the baseline is worse
    skipped_folds: list[tuple[int, str]]
    n_test_rows: int
    residuals: dict[str, np.ndarray] = field(repr=False, default_factory=dict)
    fits: list[dict] = field(repr=False, default_factory=list)

    def best(self, metric: str) -> str:
        sign = -1.0 if metric == "f_score" else 1.0
        return min(self.families, key=lambda f: (sign * self.metrics[f][metric], f))

    def records(self) -> list[tuple[str, str, str, float]]:
        out = []
        for fam in self.families:
            for metric in ("mae", "mse", "f_score"):
                out.append((self.scheme.kind, fam, metric, self.metrics[fam][metric]))
        for fam, value in self.relative_error.items():
            out.append((self.scheme.kind, fam, f"relative_error_vs_{BASELINE}", value))
        for fam, value in self.baseline_worse.items():
            out.append((self.scheme.kind, fam, f"{BASELINE}_relative_error_vs_family", value))
        return out

    def to_dict(self) -> dict:
        return {
            "scheme": {
                "kind": self.scheme.kind,
                "fraction": self.scheme.fraction,
                "folds": self.scheme.folds,
                "seed": self.scheme.seed,
            },
            "families": self.families,
            "metrics": self.metrics,
            "relative_error": self.relative_error,
            "baseline_worse": self.baseline_worse,
            "skipped_folds": [{"fold": i, "reason": r} for i, r in self.skipped_folds],
            "n_test_rows": self.n_test_rows,
            "fits": self.fits,
        }


def cross_validate(families: Iterable[str], panel: PanelDataset, scheme: CVScheme) -> ErrorReport:
    """Fit every family on each training mask and pool test-row residuals.

    Predictions for a test row are its probability times the day's actual
    total of new mimickers.
    """
    fams = list(dict.fromkeys(families))
    if not fams:
        raise InvalidInputError("no model families given")
    for f in fams:
        family_class(f)
    preds: dict[str, list[np.ndarray]] = {f: [] for f in fams}
    actual: list[np.ndarray] = []
    skipped: list[tuple[int, str]] = []
    fits: list[dict] = []
    for i, (train, test) in enumerate(split(panel, scheme)):
        rows = np.flatnonzero(test.mask)
        if test.counted_new.sum() == 0:
            skipped.append((i, "no new mimickers among test rows"))
            continue
        try:
            results = {f: fit(f, train) for f in fams}
        except InvalidInputError as exc:
            skipped.append((i, f"training failed: {exc}"))
            continue
        for f, res in results.items():
            preds[f].append(predict_new_mimickers(res.model, panel)[rows])
            fits.append({"fold": i, "family": f, **res.to_dict()})
        actual.append(panel.new_mimickers[rows].astype(float))
    if not actual:
        raise InvalidInputError(f"{scheme.kind}: every fold was skipped")

    y = np.concatenate(actual)
    residuals, metrics = {}, {}
    for f in fams:
        p = np.concatenate(preds[f])
        residuals[f] = np.abs(p - y)
        mae, mse, f1 = error_metrics(p, y)
        metrics[f] = {"mae": mae, "mse": mse, "f_score": f1, "n": int(y.size)}
    rel, rev = {}, {}
    if BASELINE in fams:
        for f in fams:
            if f != BASELINE:
                rel[f] = relative_error(residuals[f], residuals[BASELINE])
                rev[f] = relative_error(residuals[BASELINE], residuals[f])
    return ErrorReport(scheme, fams, metrics, rel, rev, skipped, int(y.size), residuals, fits)


# -- binned popularity x performance summaries --------------------------------


@dataclass(frozen=True)
class Bin:
    label: str
    lo: float
    hi: float
    lo_closed: bool = True
    hi_closed: bool = True

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        above = x >= self.lo if self.lo_closed else x > self.lo
        below = x <= self.hi if self.hi_closed else x < self.hi
        return above & below

    @classmethod
    def point(cls, value: float, label: str | None = None) -> "Bin":
        return cls(label or f"{value:g}", value, value)


DEFAULT_POP_BINS = (
    Bin("0", 0, 0),
    Bin("1-10", 1, 10),
    Bin("11-100", 10, 100, lo_closed=False),
    Bin(">100", 100, math.inf, lo_closed=False, hi_closed=False),
)
DEFAULT_PERF_BINS = (
    Bin("q<=0", -math.inf, 0.0, lo_closed=False),
    Bin("q>0", 0.0, math.inf, lo_closed=False, hi_closed=False),
)


@dataclass
class BinnedCell:
    pop_bin: str
    perf_bin: str
    n: int
    mean_observed: float
    ci_lo: float
    ci_hi: float
    mean_predicted: float
    pred_ci_lo: float
    pred_ci_hi: float


@dataclass
class BinnedSummary:
    cells: list[BinnedCell]
    n_rows: int

    def cell(self, pop_bin: str, perf_bin: str) -> BinnedCell:
        for c in self.cells:
            if c.pop_bin == pop_bin and c.perf_bin == perf_bin:
                return c
        raise KeyError((pop_bin, perf_bin))


def _mean_ci(x: np.ndarray) -> tuple[float, float, float]:
    if x.size == 0:
        return math.nan, math.nan, math.nan
    mean = float(x.mean())
    if x.size < 2:
        return mean, math.nan, math.nan
    half = Z_95 * float(x.std(ddof=1)) / math.sqrt(x.size)
    return mean, mean - half, mean + half


def _assign(values: np.ndarray, bins: Sequence[Bin], what: str) -> np.ndarray:
    member = np.stack([b.contains(values) for b in bins])
    hits = member.sum(axis=0)
    if np.any(hits == 0):
        bad = values[np.flatnonzero(hits == 0)[0]]
        raise InvalidInputError(f"{what} value {bad!r} falls in no bin")
    if np.any(hits > 1):
        bad = values[np.flatnonzero(hits > 1)[0]]
        raise InvalidInputError(f"{what} value {bad!r} falls in more than one bin")
    return np.argmax(member, axis=0)


def binned_interaction_summary(
    panel: PanelDataset,
    predictions=None,
    pop_bins: Sequence[Bin] = DEFAULT_POP_BINS,
    perf_bins: Sequence[Bin] = DEFAULT_PERF_BINS,
) -> BinnedSummary:
    """Mean net popularity change per (previous popularity, performance) cell.

    Only rows selected by the panel mask are included.  ``predictions`` are
    predicted new mimickers per panel row; the predicted change subtracts the
    observed losses.
    """
    rows = np.flatnonzero(panel.mask)
    observed = panel.change()[rows].astype(float)
    predicted = None
    if predictions is not None:
        pred = np.asarray(predictions, dtype=float)
        if pred.shape != (len(panel),):
            raise InvalidInputError(f"predictions must have one value per panel row ({len(panel)})")
        predicted = pred[rows] - panel.lost_mimickers[rows]
    pi = _assign(panel.prev_popularity[rows], pop_bins, "popularity")
    qi = _assign(panel.performance[rows], perf_bins, "performance")
    cells = []
    for a, pb in enumerate(pop_bins):
        for b, qb in enumerate(perf_bins):
            sel = (pi == a) & (qi == b)
            mean, lo, hi = _mean_ci(observed[sel])
            pmean, plo, phi = _mean_ci(predicted[sel]) if predicted is not None else (math.nan,) * 3
            cells.append(BinnedCell(pb.label, qb.label, int(sel.sum()), mean, lo, hi, pmean, plo, phi))
    return BinnedSummary(cells, int(rows.size))


BINNED_COLUMNS = ("pop_bin", "perf_bin", "n", "mean_observed", "ci_lo", "ci_hi", "mean_predicted")


def write_binned_csv(summary: BinnedSummary, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BINNED_COLUMNS)
        for c in summary.cells:
            writer.writerow(
                (c.pop_bin, c.perf_bin, c.n, _fmt(c.mean_observed), _fmt(c.ci_lo), _fmt(c.ci_hi), _fmt(c.mean_predicted))
            )


# -- OLS interaction regression -----------------------------------------------

COEFFICIENT_NAMES = ("intercept", "popularity", "performance", "interaction")


@dataclass
class RegressionResult:
    coefficients: np.ndarray
    std_errors: np.ndarray
    t_values: np.ndarray
    p_values: np.ndarray
    n_obs: int
    residuals: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "n_obs": self.n_obs,
            "terms": {
                name: {
                    "estimate": float(self.coefficients[i]),
                    "std_error": float(self.std_errors[i]),
                    "t_value": _json_float(self.t_values[i]),
                    "p_value": float(self.p_values[i]),
                }
                for i, name in enumerate(COEFFICIENT_NAMES)
            },
        }


def ols_interaction_regression(panel: PanelDataset) -> RegressionResult:
    """Least squares of net change on (1, p, q, p*q) with classical t-test p-values."""
    rows = np.flatnonzero(panel.mask)
    n = rows.size
    if n < 5:
        raise InvalidInputError(f"regression needs at least 5 rows, got {n}")
    p = panel.prev_popularity[rows].astype(float)
    q = panel.performance[rows]
    y = panel.change()[rows].astype(float)
    X = np.column_stack([np.ones(n), p, q, p * q])
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise SingularDesignError("design matrix (1, p, q, p*q) is rank deficient")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    df = n - X.shape[1]
    sigma2 = float(resid @ resid) / df
    xtx_inv = np.linalg.inv(X.T @ X)
    se = np.sqrt(np.maximum(sigma2 * np.diag(xtx_inv), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, beta / se, np.where(beta == 0, 0.0, np.sign(beta) * np.inf))
    pvals = 2.0 * stats.t.sf(np.abs(t), df)
    return RegressionResult(beta, se, t, pvals, int(n), resid)


# -- writers ------------------------------------------------------------------

REPORT_COLUMNS = ("scheme", "family", "metric", "value")


def write_report_csv(reports: Sequence[ErrorReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for report in reports:
            for scheme, fam, metric, value in report.records():
                writer.writerow((scheme, fam, metric, _fmt(value)))


def _fmt(value: float) -> str:
    return "" if math.isnan(value) else repr(float(value))


def _json_float(value: float):
    value = float(value)
    return value if math.isfinite(value) else None
