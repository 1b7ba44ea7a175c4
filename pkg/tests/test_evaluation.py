from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from social_sampler.errors import InvalidInputError, SingularDesignError
from social_sampler.evaluation import (
    BINNED_COLUMNS,
    COEFFICIENT_NAMES,
    REPORT_COLUMNS,
    Bin,
    CVScheme,
    binned_interaction_summary,
    cross_validate,
    error_metrics,
    ols_interaction_regression,
    relative_error,
    round_half_up,
    split,
    write_binned_csv,
    write_report_csv,
)
from social_sampler.inference import fit, predict_new_mimickers
from social_sampler.models import FAMILIES, Popularity, SocialSampling
from social_sampler.panel import PanelDataset
from social_sampler.pipeline import SyntheticMarketConfig, synthetic_panel


def grid_panel(n_days, n_users, seed=0):
    rng = np.random.default_rng(seed)
    d, u = np.meshgrid(np.arange(n_days), np.arange(1, n_users + 1), indexing="ij")
    d, u = d.ravel(), u.ravel()
    return PanelDataset(730000 + d, u, rng.normal(0, 0.01, d.size), rng.integers(0, 30, d.size),
                        rng.integers(0, 4, d.size), np.zeros(d.size, dtype=int))


def test_user_split_one_user_per_fold():
    panel = grid_panel(5, 10)
    pairs = split(panel, CVScheme("by_user_10fold"))
    assert len(pairs) == 10
    users = [np.unique(test.user_id[test.mask]) for _, test in pairs]
    assert all(u.size == 1 for u in users)
    assert sorted(int(u[0]) for u in users) == list(range(1, 11))
    for train, test in pairs:
        assert np.array_equal(train.mask, ~test.mask)
        assert len(train) == len(panel)


def test_day_split_partitions_days():
    panel = grid_panel(23, 3)
    pairs = split(panel, CVScheme("by_day_10fold", seed=4))
    covered = np.zeros(len(panel), dtype=int)
    for _, test in pairs:
        covered += test.mask
        days = np.unique(test.day[test.mask])
        assert np.all(test.mask[np.isin(test.day, days)])
    assert np.all(covered == 1)


def test_temporal_split_last_days():
    panel = grid_panel(100, 4)
    (train, test), = split(panel, CVScheme("temporal_last_fraction", fraction=0.10))
    assert np.array_equal(np.unique(test.day[test.mask]), panel.days[-10:])
    assert not np.any(train.mask & test.mask)


def test_temporal_split_weighted_by_rows():
    day = [1] * 10 + [2] * 1 + [3] * 1
    panel = PanelDataset(day, list(range(10)) + [0, 0], [0.0] * 12, [0] * 12, [1] * 12, [0] * 12)
    (_, test), = split(panel, CVScheme("temporal_last_fraction", fraction=0.08))
    assert test.day[test.mask].tolist() == [3]
    (_, test), = split(panel, CVScheme("temporal_last_fraction", fraction=0.10))
    assert test.day[test.mask].tolist() == [2, 3]
    with pytest.raises(InvalidInputError, match="no training days"):
        split(panel, CVScheme("temporal_last_fraction", fraction=0.2))


def test_split_deterministic_and_seeded():
    panel = grid_panel(4, 30)
    a = [t.mask.copy() for _, t in split(panel, CVScheme("by_user_10fold", seed=7))]
    b = [t.mask.copy() for _, t in split(panel, CVScheme("by_user_10fold", seed=7))]
    c = [t.mask.copy() for _, t in split(panel, CVScheme("by_user_10fold", seed=8))]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


def test_split_too_few_units():
    with pytest.raises(InvalidInputError, match="by_user_10fold"):
        split(grid_panel(3, 9), CVScheme("by_user_10fold"))
    with pytest.raises(InvalidInputError, match="by_day_10fold"):
        split(grid_panel(9, 30), CVScheme("by_day_10fold"))


@pytest.mark.parametrize("kw", [dict(kind="random"), dict(kind="by_user_10fold", fraction=1.0),
                                dict(kind="by_user_10fold", folds=1), dict(kind="by_day_10fold", seed=-1)])
def test_scheme_validation(kw):
    with pytest.raises(InvalidInputError):
        CVScheme(**kw)


def test_error_metrics_hand_fixture():
    mae, mse, f = error_metrics([0.6, 0.2, 1.4], [1, 0, 0])
    assert mae == pytest.approx(2.0 / 3, abs=1e-9)
    assert mse == pytest.approx(0.72, abs=1e-9)
    assert f == pytest.approx(2.0 / 3, abs=1e-9)


def test_error_metrics_degenerate():
    assert error_metrics([0, 2, 5], [0, 2, 5]) == (0.0, 0.0, 1.0)
    mae, mse, f = error_metrics([0.4] * 3, [0, 0, 0])
    assert f == 0.0 and mae == pytest.approx(0.4)
    with pytest.raises(InvalidInputError):
        error_metrics([1.0], [1.0, 2.0])
    with pytest.raises(InvalidInputError):
        error_metrics([], [])


def test_round_half_up():
    assert round_half_up([0.5, 1.5, 2.5, 0.49]).tolist() == [1.0, 2.0, 3.0, 0.0]
    assert error_metrics([0.5], [1])[2] == 1.0


def test_relative_error_fixtures():
    assert relative_error([1, 2, 3], [1, 2, 3]) == 0.0
    assert relative_error([2, 2, 2], [1, 3, 1]) == pytest.approx(2 / 3)
    assert relative_error([1, 1], [5, 6]) == 0.0
    with pytest.raises(InvalidInputError):
        relative_error([1], [1, 2])


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100)), min_size=1, max_size=50))
def test_relative_error_pair_sums_to_at_most_one(pairs):
    a, b = np.array(pairs).T
    assert relative_error(a, b) + relative_error(b, a) <= 1.0 + 1e-12


@pytest.fixture(scope="module")
def ss_panel():
    cfg = SyntheticMarketConfig(n_users=30, n_days=60, decisions_per_day=300, seed=3)
    return synthetic_panel(cfg)[0]


def test_cross_validate_pools_all_rows(ss_panel):
    report = cross_validate(["social_sampling", "popularity"], ss_panel, CVScheme("by_user_10fold"))
    assert report.n_test_rows == len(ss_panel) and not report.skipped_folds
    assert set(report.relative_error) == {"popularity"}
    for fam in report.families:
        assert report.metrics[fam]["mae"] >= 0 and 0 <= report.metrics[fam]["f_score"] <= 1
    assert report.relative_error["popularity"] + report.baseline_worse["popularity"] <= 1.0


def test_cross_validate_single_family(ss_panel):
    report = cross_validate(["additive"], ss_panel, CVScheme("temporal_last_fraction"))
    assert report.families == ["additive"]
    assert report.relative_error == {} and report.baseline_worse == {}
    assert all(r[1] == "additive" for r in report.records())


def test_cross_validate_social_sampling_wins(ss_panel):
    report = cross_validate(FAMILIES, ss_panel, CVScheme("by_day_10fold"))
    assert report.best("mae") == "social_sampling"
    assert report.best("f_score") == "social_sampling"


def test_cross_validate_popularity_generator():
    cfg = SyntheticMarketConfig(n_users=30, n_days=60, decisions_per_day=300, seed=3, generator_model=Popularity())
    panel = synthetic_panel(cfg)[0]
    report = cross_validate(FAMILIES, panel, CVScheme("by_day_10fold"))
    best = min(m["mae"] for m in report.metrics.values())
    assert report.metrics["popularity"]["mae"] <= best + 1e-3 * best


def test_cross_validate_skips_empty_folds():
    panel = grid_panel(20, 3)
    new = np.where(panel.user_id == 2, 0, panel.new_mimickers)
    panel = PanelDataset(panel.day, panel.user_id, panel.performance, panel.prev_popularity, new, panel.lost_mimickers)
    report = cross_validate(["popularity"], panel, CVScheme("by_user_10fold", folds=3))
    assert len(report.skipped_folds) == 1
    assert report.n_test_rows == 40
    new = np.where(panel.day == panel.days[-1], 0, panel.new_mimickers)
    panel = PanelDataset(panel.day, panel.user_id, panel.performance, panel.prev_popularity, new, panel.lost_mimickers)
    with pytest.raises(InvalidInputError, match="every fold was skipped"):
        cross_validate(["popularity"], panel, CVScheme("temporal_last_fraction", fraction=0.05))


def test_write_report_csv(tmp_path, ss_panel):
    report = cross_validate(["social_sampling", "performance"], ss_panel, CVScheme("temporal_last_fraction"))
    path = tmp_path / "report.csv"
    write_report_csv([report], path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(REPORT_COLUMNS)
    assert len(lines) == 1 + len(report.records())


def test_binned_homogeneous_panel():
    n = 40
    rng = np.random.default_rng(0)
    pop = rng.integers(0, 300, n)
    perf = rng.normal(0, 0.1, n)
    panel = PanelDataset([1] * n, range(n), perf, pop, [3] * n, [1] * n)
    summary = binned_interaction_summary(panel, predictions=np.full(n, 2.0))
    assert sum(c.n for c in summary.cells) == summary.n_rows == n
    for c in summary.cells:
        if c.n:
            assert c.mean_observed == 2.0 and c.mean_predicted == 1.0


def test_binned_empty_cell_is_nan():
    panel = PanelDataset([1, 1], [1, 2], [0.1, 0.2], [0, 5], [1, 2], [0, 0])
    summary = binned_interaction_summary(panel)
    empty = summary.cell(">100", "q<=0")
    assert empty.n == 0 and math.isnan(empty.mean_observed) and math.isnan(empty.ci_lo)
    assert summary.cell("1-10", "q>0").mean_observed == 2.0


def test_binned_rejects_uncovered_values():
    panel = PanelDataset([1], [1], [0.1], [5], [1], [0])
    with pytest.raises(InvalidInputError):
        binned_interaction_summary(panel, pop_bins=[Bin.point(0)])


@pytest.fixture(scope="module")
def strong_panel():
    cfg = SyntheticMarketConfig(n_users=80, n_days=150, decisions_per_day=300, seed=11,
                                generator_model=SocialSampling(0.9), unfollow_rate=0.02)
    return synthetic_panel(cfg)[0]


def test_binned_interaction_shape(strong_panel):
    s = binned_interaction_summary(strong_panel)
    good = [s.cell(p, "q>0").mean_observed for p in ("0", "1-10", "11-100")]
    bad = [s.cell(p, "q<=0").mean_observed for p in ("0", "1-10", "11-100")]
    assert good[0] < good[1] < good[2]
    assert good[2] - good[0] > bad[2] - bad[0]


def test_binned_low_popularity_subset():
    # sparse regime: most user-days sit at popularity 0 or 1 in steady state
    cfg = SyntheticMarketConfig(n_users=200, n_days=150, decisions_per_day=20, seed=0,
                                generator_model=SocialSampling(0.9), unfollow_rate=0.05)
    panel = synthetic_panel(cfg)[0]
    low = panel.with_mask(panel.prev_popularity <= 1)
    s = binned_interaction_summary(low, pop_bins=[Bin.point(0), Bin.point(1)])
    assert s.n_rows == int(low.mask.sum())
    good = s.cell("1", "q>0").mean_observed - s.cell("0", "q>0").mean_observed
    bad = s.cell("1", "q<=0").mean_observed - s.cell("0", "q<=0").mean_observed
    assert good > 0 and good > bad


def test_write_binned_csv(tmp_path, strong_panel):
    model = fit("social_sampling", strong_panel).model
    s = binned_interaction_summary(strong_panel, predict_new_mimickers(model, strong_panel))
    path = tmp_path / "binned.csv"
    write_binned_csv(s, path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",")[: len(BINNED_COLUMNS)] == list(BINNED_COLUMNS)
    assert len(lines) == 1 + 8


def change_panel(pop, perf, delta):
    n = len(pop)
    delta = np.asarray(delta)
    return PanelDataset(np.arange(n), [1] * n, perf, pop, np.maximum(delta, 0), np.maximum(-delta, 0))


def test_ols_exact_interpolation():
    rng = np.random.default_rng(0)
    p = rng.integers(0, 50, 40)
    q = rng.choice([-0.2, -0.1, 0.0, 0.1, 0.2], 40)
    delta = 0.01 + 0.005 * p + 0.02 * q + 0.05 * p * q
    # response must be integer for a panel; scale the generating law by a common factor
    scale = 1000.0
    y = np.rint(delta * scale).astype(int)
    assert np.allclose(y, delta * scale)
    res = ols_interaction_regression(change_panel(p, q, y))
    np.testing.assert_allclose(res.coefficients, np.array([0.01, 0.005, 0.02, 0.05]) * scale, atol=1e-10 * scale)
    assert res.n_obs == 40


def test_ols_matches_normal_equations():
    p = np.array([0, 1, 2, 3, 5, 8])
    q = np.array([0.5, -1.0, 0.25, 0.0, -0.5, 1.0])
    y = np.array([1, -2, 3, 0, 4, 7])
    X = np.column_stack([np.ones(6), p, q, p * q])
    beta = np.linalg.solve(X.T @ X, X.T @ y)
    res = ols_interaction_regression(change_panel(p, q, y))
    np.testing.assert_allclose(res.coefficients, beta, atol=1e-9)
    resid = y - X @ beta
    sigma2 = resid @ resid / 2
    np.testing.assert_allclose(res.std_errors, np.sqrt(np.diag(sigma2 * np.linalg.inv(X.T @ X))), rtol=1e-9)
    assert np.all((0 <= res.p_values) & (res.p_values <= 1))
    assert set(res.to_dict()["terms"]) == set(COEFFICIENT_NAMES)


def test_ols_residuals_orthogonal(strong_panel):
    res = ols_interaction_regression(strong_panel)
    p, q = strong_panel.prev_popularity.astype(float), strong_panel.performance
    X = np.column_stack([np.ones(p.size), p, q, p * q])
    np.testing.assert_allclose(X.T @ res.residuals, 0.0, atol=1e-6 * np.abs(X).sum())


def test_ols_errors():
    with pytest.raises(SingularDesignError):
        ols_interaction_regression(change_panel([3] * 6, [0.1, 0.2, 0.3, 0.4, 0.5, 0.6], [1, 2, 3, 4, 5, 6]))
    with pytest.raises(InvalidInputError):
        ols_interaction_regression(change_panel([1, 2, 3, 4], [0.1, 0.2, 0.3, 0.4], [1, 2, 3, 4]))


def test_ols_matches_statsmodels(strong_panel):
    sm = pytest.importorskip("statsmodels.api")
    res = ols_interaction_regression(strong_panel)
    p, q = strong_panel.prev_popularity.astype(float), strong_panel.performance
    X = np.column_stack([np.ones(p.size), p, q, p * q])
    ref = sm.OLS(strong_panel.change().astype(float), X).fit()
    np.testing.assert_allclose(res.coefficients, ref.params, rtol=1e-8)
    np.testing.assert_allclose(res.std_errors, ref.bse, rtol=1e-8)
    np.testing.assert_allclose(res.p_values, ref.pvalues, rtol=1e-6, atol=1e-300)
