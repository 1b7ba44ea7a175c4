"""End-to-end acceptance checks; each prints one PASS/FAIL line."""

from __future__ import annotations

import dataclasses
import json
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from social_sampler.cli import main
from social_sampler.evaluation import (
    CVScheme,
    cross_validate,
    error_metrics,
    ols_interaction_regression,
    relative_error,
)
from social_sampler.inference import fit, gamma_profile, skill_credible_interval
from social_sampler.models import (
    FAMILIES,
    MarketSnapshot,
    Performance,
    Popularity,
    SocialSampling,
    decision_probabilities,
    generalized_commit_probability,
    posterior_from_counts,
    posterior_init,
    posterior_update,
)
from social_sampler.panel import PanelDataset
from social_sampler.pipeline import (
    SyntheticMarketConfig,
    generate_synthetic_market,
    impute_missing_parents,
    synthetic_panel,
)
from social_sampler.simulator import SweepGrid, run_sweep

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
THREADS = 4


@pytest.fixture
def verdict(capsys):
    def report(number: int, ok: bool, detail: str, started: float) -> None:
        with capsys.disabled():
            print(f"\nACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} ({time.perf_counter() - started:.1f}s) {detail}")
        assert ok, detail

    return report


def load_grid(name: str) -> SweepGrid:
    data = json.loads((CONFIGS / name).read_text())
    data.pop("schema_version", None)
    return SweepGrid.from_dict(data)


def market_config(**changes) -> SyntheticMarketConfig:
    cfg = SyntheticMarketConfig.from_dict(json.loads((CONFIGS / "synthetic_market.json").read_text()))
    return dataclasses.replace(cfg, **changes)


def test_1_gamma_sweep_peaks_at_linear(verdict):
    t0 = time.perf_counter()
    rows = {r.config.gamma: r for r in run_sweep(load_grid("gamma_sweep.json"), threads=THREADS)}
    best = rows[1.0]
    strict = all(best.mean > r.mean for g, r in rows.items() if g != 1.0)
    separated = all(best.ci_lo > rows[g].ci_hi for g in (0.0, 4.0))
    means = ", ".join(f"g={g:g}:{r.mean:.4f}" for g, r in sorted(rows.items()))
    verdict(1, strict and separated, means, t0)


def test_2_eta_sweep_is_flat(verdict):
    t0 = time.perf_counter()
    rows = {r.config.assumed_best_rate: r for r in run_sweep(load_grid("eta_sweep.json"), threads=THREADS)}
    base = rows[0.5]
    informed = [rows[e] for e in (0.6, 0.7, 0.8, 0.9)]
    lifts = np.array([r.mean - base.mean for r in informed])
    above = bool(np.all(lifts >= 5 * base.half_width))
    spread = float(lifts.max() - lifts.min())
    flat = spread < 0.25 * float(lifts.mean())
    detail = (f"lifts={np.round(lifts, 4).tolist()} 5*hw={5 * base.half_width:.4f} "
              f"spread/lift={spread / lifts.mean():.3f}")
    verdict(2, above and flat, detail, t0)


def test_3_popularity_tracks_posterior(verdict):
    t0 = time.perf_counter()
    grid = SweepGrid(n_agents=[10_000], n_options=[5], n_rounds=[300], true_best_rate=[0.7],
                     assumed_best_rate=[0.7], gamma=[1.0], repetitions=50, seed=0)
    row, = run_sweep(grid, threads=THREADS)
    verdict(3, row.mean_l1_second_half <= 0.15, f"mean L1 over final 150 rounds = {row.mean_l1_second_half:.4f}", t0)


def test_4_parameter_recovery(verdict):
    t0 = time.perf_counter()
    grid = [0.5, 0.75, 1.0, 1.25, 1.5, 2.0]
    errors, argmax_hits = [], 0
    for seed in range(20):
        cfg = SyntheticMarketConfig(n_users=50, n_days=100, decisions_per_day=1000, seed=seed,
                                    generator_model=SocialSampling(0.8, 1.0))
        panel, _ = synthetic_panel(cfg)
        errors.append(abs(fit("social_sampling", panel).model.eta - 0.8))
        profile = gamma_profile(panel, grid)
        argmax_hits += max(profile, key=lambda p: p.log_likelihood).gamma == 1.0
    med = float(np.median(errors))
    verdict(4, med <= 0.02 and argmax_hits >= 18, f"median |eta-0.8|={med:.4f}; gamma argmax at 1 in {argmax_hits}/20", t0)


def test_5_model_discrimination(verdict):
    t0 = time.perf_counter()
    schemes = [CVScheme(kind) for kind in ("by_user_10fold", "by_day_10fold", "temporal_last_fraction")]
    ss_panel, _ = synthetic_panel(market_config(seed=1))
    pa_panel, _ = synthetic_panel(market_config(seed=1, generator_model=Popularity()))
    ok, notes = True, []
    for scheme in schemes:
        rep = cross_validate(FAMILIES, ss_panel, scheme)
        wins = rep.best("mae") == "social_sampling" and rep.best("f_score") == "social_sampling"
        ok &= wins
        notes.append(f"{scheme.kind}: ss best={wins}")
        rep = cross_validate(FAMILIES, pa_panel, scheme)
        best = min(m["mae"] for m in rep.metrics.values())
        close = rep.metrics["popularity"]["mae"] <= 1.01 * best
        ok &= close
        notes.append(f"pop within 1%={close}")
    verdict(5, ok, "; ".join(notes), t0)


def test_6_interaction_regression(verdict):
    t0 = time.perf_counter()
    hits = 0
    for seed in range(20):
        panel, _ = synthetic_panel(market_config(seed=seed))
        res = ols_interaction_regression(panel)
        hits += res.coefficients[3] > 0 and res.p_values[3] < 0.05
    rng = np.random.default_rng(0)
    p = rng.integers(0, 50, 40)
    q = rng.choice([-0.2, -0.1, 0.0, 0.1, 0.2], 40)
    truth = np.array([10.0, 5.0, 20.0, 50.0])
    delta = np.rint(truth[0] + truth[1] * p + truth[2] * q + truth[3] * p * q).astype(int)
    exact = PanelDataset(np.arange(40), [1] * 40, q, p, np.maximum(delta, 0), np.maximum(-delta, 0))
    err = float(np.max(np.abs(ols_interaction_regression(exact).coefficients - truth)))
    verdict(6, hits >= 18 and err <= 1e-10, f"positive & p<0.05 in {hits}/20 seeds; interpolation error {err:.1e}", t0)


def test_7_metric_fixtures(verdict):
    t0 = time.perf_counter()
    mae, mse, f = error_metrics([0.6, 0.2, 1.4], [1, 0, 0])
    ok = abs(mae - 2 / 3) <= 1e-9 and abs(mse - 0.72) <= 1e-9 and abs(f - 2 / 3) <= 1e-9
    ok &= relative_error([2, 2, 2], [1, 3, 1]) == 2 / 3 and relative_error([1, 2], [1, 2]) == 0.0
    ok &= relative_error([1, 1], [2, 3]) == 0.0
    u = skill_credible_interval(0, 0, 0.95)
    ok &= abs(u.lower - 0.025) <= 1e-9 and abs(u.upper - 0.975) <= 1e-9
    b = skill_credible_interval(60, 40, 0.95)
    lo, hi = stats.beta.ppf([0.025, 0.975], 61, 41)
    ok &= abs(b.lower - lo) <= 1e-6 and abs(b.upper - hi) <= 1e-6
    verdict(7, bool(ok), f"mae={mae:.4f} mse={mse:.4f} F={f:.4f} ci(60,40)=[{b.lower:.4f},{b.upper:.4f}]", t0)


def test_8_pipeline_round_trips(verdict, tmp_path):
    t0 = time.perf_counter()
    cfg_path = CONFIGS / "synthetic_market.json"
    synth, ingest = tmp_path / "synth", tmp_path / "ingest"
    rc = main(["synth", "--config", str(cfg_path), "--out", str(synth)])
    rc |= main(["ingest", "--trades", str(synth / "trades.csv"), "--impute", "--out", str(ingest)])
    same = rc == 0 and (synth / "panel.csv").read_bytes() == (ingest / "panel.csv").read_bytes()

    market = generate_synthetic_market(market_config())
    report = impute_missing_parents(market.trades)
    by_id = {r.trade_id: r for r in report.records}
    deleted = market.deleted
    signs = sum(np.sign(by_id[d.trade_id].net_profit) == np.sign(d.net_profit) for d in deleted if d.trade_id in by_id)
    units = all(abs(by_id[d.trade_id].units - d.units) <= 1e-9 * abs(d.units) for d in deleted if d.trade_id in by_id)

    import datetime as dt
    from social_sampler.pipeline import TradeRecord

    day = dt.date(2011, 6, 1)

    def rec(tid, user, units, parent=None, mirror=None):
        return TradeRecord(tid, user, day, day, "EURUSD", 100.0, units, 1.0, 1.0, 1.01, 1.0, parent, mirror)

    fixture = [rec(1, 10, 100.0), rec(2, 20, 10.0, 1, 1), rec(3, 10, 50.0), rec(4, 21, 10.0, 3, 2),
               rec(6, 20, 5.0, 50, 1), rec(7, 21, 8.0, 50, 2)]
    hand = next(r for r in impute_missing_parents(fixture).records if r.trade_id == 50).units
    ok = same and len(deleted) == 50 and signs == 50 and units and abs(hand - 45.0) <= 1e-12
    verdict(8, ok, f"panel byte-equal={same}; signs {signs}/{len(deleted)}; units exact={units}; fixture={hand}", t0)


def test_9_kernel_invariants(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    failures = 0
    for _ in range(1000):
        m = int(rng.integers(1, 31))
        pop = rng.integers(0, 1001, m)
        perf = np.where(rng.random(m) < 0.2, 0.0, rng.uniform(-1, 1, m))
        snap = MarketSnapshot(pop, perf)
        eta = float(rng.uniform(0.5001, 0.9999))
        gamma = float(rng.uniform(0, 3))
        model = SocialSampling(eta, gamma)
        theta = decision_probabilities(model, snap)
        ok = np.all(theta >= 0) and abs(theta.sum() - 1) <= 1e-9
        perm = rng.permutation(m)
        ok &= np.allclose(decision_probabilities(model, MarketSnapshot(pop[perm], perf[perm])), theta[perm],
                          rtol=1e-12, atol=1e-15)
        flat = MarketSnapshot(np.full(m, pop[0]), perf)
        perf_theta = decision_probabilities(Performance(eta), flat)
        ok &= np.allclose(decision_probabilities(SocialSampling(eta, 1.0), flat), perf_theta, rtol=1e-12, atol=1e-15)
        ok &= np.max(np.abs(decision_probabilities(SocialSampling(0.5 + 1e-9), snap)
                            - decision_probabilities(Popularity(), snap))) <= 1e-6
        ok &= np.allclose(decision_probabilities(SocialSampling(eta, 0.0), snap),
                          decision_probabilities(Performance(eta), snap), rtol=1e-12, atol=1e-15)
        if m >= 2:
            j = int(rng.integers(m))
            bumped = pop.copy()
            bumped[j] += 1
            ok &= decision_probabilities(model, MarketSnapshot(bumped, perf))[j] > theta[j] or gamma == 0.0
            lo_perf, hi_perf = perf.copy(), perf.copy()
            lo_perf[j], hi_perf[j] = -0.5, 0.5
            ok &= (decision_probabilities(model, MarketSnapshot(pop, hi_perf))[j]
                   > decision_probabilities(model, MarketSnapshot(pop, lo_perf))[j])
        exact = posterior_update(posterior_init(m, eta), (perf > 0).astype(int)).probabilities()
        ok &= np.max(np.abs(decision_probabilities(SocialSampling(eta), flat) - exact)) <= 1e-6
        days = int(rng.integers(0, 30))
        signals = rng.integers(0, 2, (days, m))
        state = posterior_init(m, eta)
        for row in signals:
            state = posterior_update(state, row)
        batch = posterior_from_counts(signals.sum(axis=0), days, eta)
        ok &= np.allclose(state.log_weights, batch.log_weights, rtol=0, atol=1e-9)
        a, b = sorted(rng.uniform(1e-6, 10, 2))
        other = float(rng.uniform(1e-3, 10))
        ca, cb = generalized_commit_probability(a, other, b / other), generalized_commit_probability(b, other, b / other)
        ok &= 0 < ca <= cb <= 1
        failures += not ok
    verdict(9, failures == 0, f"{1000 - failures}/1000 random snapshots satisfy every invariant", t0)


def test_10_replay_determinism(verdict, tmp_path):
    t0 = time.perf_counter()
    small_grid = tmp_path / "grid.json"
    small_grid.write_text(json.dumps({"n_agents": [300], "n_options": [5], "n_rounds": [30], "true_best_rate": [0.7],
                                      "gamma": [0.0, 1.0], "repetitions": 5, "seed": 11}))
    market = tmp_path / "market.json"
    market.write_text(json.dumps({"n_users": 20, "n_days": 40, "decisions_per_day": 300, "performance_window": 10,
                                  "unfollow_rate": 0.02, "initial_mimickers": 1, "missing_parents": 8, "seed": 5}))
    synth = tmp_path / "synth"
    runs = {
        "simulate": ["simulate", "--config", str(small_grid)],
        "synth": ["synth", "--config", str(market)],
        "ingest": ["ingest", "--trades", str(synth / "trades.csv"), "--impute", "--window", "10"],
        "fit": ["fit", "--panel", str(synth / "panel.csv"), "--gamma-profile", "0.5,1,2", "--skill-intervals",
                "--trades", str(synth / "trades.csv")],
        "evaluate": ["evaluate", "--panel", str(synth / "panel.csv"), "--scheme", "all"],
    }
    identical = []
    for name, argv in runs.items():
        first = synth if name == "synth" else tmp_path / f"{name}-1"
        second = tmp_path / f"{name}-2"
        rc = main(argv + ["--out", str(first)])
        rc |= main(["replay", "--manifest", str(first / "manifest.json"), "--out", str(second)])
        files = sorted(p.name for p in first.iterdir() if p.name != "manifest.json")
        same = rc == 0 and files and all((first / f).read_bytes() == (second / f).read_bytes() for f in files)
        identical.append(f"{name}={'ok' if same else 'DIFF'}")
    verdict(10, all(s.endswith("ok") for s in identical), " ".join(identical), t0)
