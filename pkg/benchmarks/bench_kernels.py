"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import timeit


from social_sampler import _fallback
from social_sampler.models import binarize
from social_sampler.pipeline import SyntheticMarketConfig, synthetic_panel
from social_sampler.simulator import SimulationConfig, rng_for

try:
    from social_sampler import _core
except ImportError:
    _core = None


def simulation_case(impl, unfollow: bool):
    cfg = SimulationConfig(n_agents=1000, n_options=10, n_rounds=200, true_best_rate=0.7,
                           assumed_best_rate=0.7, unfollow_enabled=unfollow)
    table = cfg.weight_table()

    def run():
        impl.simulate_counts(rng_for(0), cfg.n_agents, cfg.n_rounds, cfg.rates, 0.7, table, unfollow)

    return run


def loglik_case(impl):
    panel, _ = synthetic_panel(SyntheticMarketConfig(n_users=50, n_days=100, decisions_per_day=1000))
    args = (panel.group, panel.n_days, panel.prev_popularity.astype(float), binarize(panel.performance),
            panel.new_mimickers.astype(float), 0.8, 1.0)

    def run():
        impl.social_sampling_loglik(*args)

    return run


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    impls = {"python": _fallback}
    if _core is not None:
        impls["compiled"] = _core
    else:
        print("compiled core not built; timing the fallback only")

    cases = {
        "simulate (N=1000, M=10, T=200)": lambda impl: simulation_case(impl, False),
        "simulate with unfollow": lambda impl: simulation_case(impl, True),
        "loglik (50 users x 100 days)": loglik_case,
    }
    print(f"{'kernel':34s} " + " ".join(f"{name:>12s}" for name in impls) + "     speedup")
    for label, make in cases.items():
        times = {}
        for name, impl in impls.items():
            fn = make(impl)
            fn()
            times[name] = min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e3
        speedup = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{label:34s} " + " ".join(f"{t:10.3f}ms" for t in times.values()) + f"  {speedup:9.1f}x")


if __name__ == "__main__":
    main()
