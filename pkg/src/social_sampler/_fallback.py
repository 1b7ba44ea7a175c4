"""Pure-numpy implementations of the hot kernels.

These define the reference semantics; the Cython module ``_core`` must
draw from the generator in exactly the same order so both backends yield
identical trajectories for the same seed.
"""

from __future__ import annotations

import numpy as np


def consider_and_commit(rng, n_agents, prev_counts, rewards, eta, weight_table):
    """One round of single-attempt social sampling.

    Every agent considers option ``j`` with probability proportional to
    ``weight_table[prev_counts[j]] + 1/M`` and commits with probability
    ``eta`` after a good signal, ``1 - eta`` after a bad one.
    """
    w = weight_table[prev_counts] + 1.0 / prev_counts.size
    considered = rng.multinomial(n_agents, w / w.sum())
    return rng.binomial(considered, np.where(rewards == 1, eta, 1.0 - eta))


def simulate_counts(rng, n_agents, n_rounds, rates, eta, weight_table, unfollow):
    """Run ``n_rounds`` rounds; return per-round commit counts and reward signals.

    ``rewards[t]`` is the signal observed by agents deciding in round ``t``;
    the extra row ``rewards[n_rounds]`` pays the final round's commitments.
    With ``unfollow`` the counts are standing commitments: each survives a
    round with the commit probability of its option's latest signal.
    """
    n_options = rates.size
    counts = np.zeros((n_rounds, n_options), dtype=np.int64)
    rewards = np.zeros((n_rounds + 1, n_options), dtype=np.uint8)
    prev = np.zeros(n_options, dtype=np.int64)
    for t in range(n_rounds):
        r = (rng.random(n_options) < rates).astype(np.uint8)
        rewards[t] = r
        if unfollow:
            kept = rng.binomial(prev, np.where(r == 1, eta, 1.0 - eta))
            prev = kept + consider_and_commit(rng, n_agents, prev, r, eta, weight_table)
        else:
            prev = consider_and_commit(rng, n_agents, prev, r, eta, weight_table)
        counts[t] = prev
    rewards[n_rounds] = rng.random(n_options) < rates
    return counts, rewards


def social_sampling_loglik(group, n_groups, popularity, signals, counts, eta, gamma):
    """Panel log-likelihood of the social sampling model (vectorised)."""
    sizes = np.bincount(group, minlength=n_groups)
    prior = np.power(popularity, gamma) + 1.0 / sizes[group]
    w = prior * np.where(signals == 1, eta, 1.0 - eta)
    totals = np.bincount(group, weights=w, minlength=n_groups)
    used = counts > 0
    decisions = np.bincount(group, weights=counts, minlength=n_groups)
    busy = decisions > 0
    return float(
        np.sum(counts[used] * np.log(w[used])) - np.sum(decisions[busy] * np.log(totals[busy]))
    )
