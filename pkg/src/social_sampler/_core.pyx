# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; see ``_fallback.py`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer, PyCapsule_IsValid
from libc.math cimport log, pow
from libc.stdint cimport int64_t, uint8_t
from libc.string cimport memset
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport (
    binomial_t,
    random_binomial,
    random_multinomial,
)

cnp.import_array()

cdef enum:
    PW_BLOCKSIZE = 128
    REDUCE_BUFSIZE = 8192


cdef double _pairwise_sum(const double *a, Py_ssize_t n) noexcept nogil:
    # Same association order as numpy's float64 add.reduce, so the
    # normalised weights match the fallback bit for bit.
    cdef Py_ssize_t i, n2
    cdef double res
    cdef double r[8]
    if n < 8:
        res = -0.0
        for i in range(n):
            res += a[i]
        return res
    elif n <= PW_BLOCKSIZE:
        for i in range(8):
            r[i] = a[i]
        i = 8
        while i < n - (n % 8):
            r[0] += a[i]
            r[1] += a[i + 1]
            r[2] += a[i + 2]
            r[3] += a[i + 3]
            r[4] += a[i + 4]
            r[5] += a[i + 5]
            r[6] += a[i + 6]
            r[7] += a[i + 7]
            i += 8
        res = ((r[0] + r[1]) + (r[2] + r[3])) + ((r[4] + r[5]) + (r[6] + r[7]))
        while i < n:
            res += a[i]
            i += 1
        return res
    else:
        n2 = n // 2
        n2 -= n2 % 8
        return _pairwise_sum(a, n2) + _pairwise_sum(a + n2, n - n2)


cdef double _numpy_sum(const double *a, Py_ssize_t n) noexcept nogil:
    # numpy reduces in buffer-sized chunks and accumulates the chunk sums.
    cdef Py_ssize_t start = REDUCE_BUFSIZE
    cdef double res = _pairwise_sum(a, n if n < REDUCE_BUFSIZE else REDUCE_BUFSIZE)
    while start < n:
        res += _pairwise_sum(a + start, min(n - start, <Py_ssize_t> REDUCE_BUFSIZE))
        start += REDUCE_BUFSIZE
    return res


def pairwise_sum(double[::1] a):
    """Expose the summation helper for tests."""
    return _numpy_sum(&a[0], a.shape[0]) if a.shape[0] else 0.0


cdef bitgen_t *_bitgen(object rng) except NULL:
    capsule = rng.bit_generator.capsule
    if not PyCapsule_IsValid(capsule, "BitGenerator"):
        raise ValueError("invalid bit generator capsule")
    return <bitgen_t *> PyCapsule_GetPointer(capsule, "BitGenerator")


cdef void _consider_commit(
    bitgen_t *bg, binomial_t *binom, int64_t n_agents, const int64_t *prev,
    const uint8_t *r, double eta, const double *table, Py_ssize_t m,
    double *w, int64_t *considered, int64_t *out,
) noexcept nogil:
    cdef Py_ssize_t j
    cdef double inv_m = 1.0 / m
    cdef double total
    for j in range(m):
        w[j] = table[prev[j]] + inv_m
    total = _numpy_sum(w, m)
    for j in range(m):
        w[j] = w[j] / total
    memset(considered, 0, m * sizeof(int64_t))
    random_multinomial(bg, n_agents, considered, w, m, binom)
    for j in range(m):
        out[j] = random_binomial(bg, eta if r[j] else 1.0 - eta, considered[j], binom)


def simulate_counts(rng, int64_t n_agents, Py_ssize_t n_rounds, double[::1] rates,
                    double eta, double[::1] weight_table, bint unfollow):
    cdef Py_ssize_t m = rates.shape[0]
    cdef Py_ssize_t t, j
    cdef Py_ssize_t table_size = weight_table.shape[0]
    counts_arr = np.zeros((n_rounds, m), dtype=np.int64)
    rewards_arr = np.zeros((n_rounds + 1, m), dtype=np.uint8)
    cdef int64_t[:, ::1] counts = counts_arr
    cdef uint8_t[:, ::1] rewards = rewards_arr
    cdef int64_t[::1] prev = np.zeros(m, dtype=np.int64)
    cdef int64_t[::1] fresh = np.zeros(m, dtype=np.int64)
    cdef int64_t[::1] kept = np.zeros(m, dtype=np.int64)
    cdef int64_t[::1] considered = np.zeros(m, dtype=np.int64)
    cdef double[::1] w = np.zeros(m, dtype=np.float64)
    cdef bitgen_t *bg = _bitgen(rng)
    cdef binomial_t binom
    cdef bint overflow = False
    memset(&binom, 0, sizeof(binomial_t))

    with rng.bit_generator.lock, nogil:
        for t in range(n_rounds):
            for j in range(m):
                rewards[t, j] = bg.next_double(bg.state) < rates[j]
            if unfollow:
                for j in range(m):
                    kept[j] = random_binomial(
                        bg, eta if rewards[t, j] else 1.0 - eta, prev[j], &binom)
            for j in range(m):
                if prev[j] >= table_size:
                    overflow = True
            if overflow:
                break
            _consider_commit(bg, &binom, n_agents, &prev[0], &rewards[t, 0], eta,
                             &weight_table[0], m, &w[0], &considered[0], &fresh[0])
            for j in range(m):
                prev[j] = fresh[j] + kept[j] if unfollow else fresh[j]
                counts[t, j] = prev[j]
        if not overflow:
            for j in range(m):
                rewards[n_rounds, j] = bg.next_double(bg.state) < rates[j]
    if overflow:
        raise IndexError("popularity exceeded the precomputed weight table")
    return counts_arr, rewards_arr


def social_sampling_loglik(cnp.intp_t[::1] group, Py_ssize_t n_groups,
                           double[::1] popularity, uint8_t[::1] signals,
                           double[::1] counts, double eta, double gamma):
    cdef Py_ssize_t n = group.shape[0]
    cdef Py_ssize_t i, g
    cdef double[::1] totals = np.zeros(n_groups, dtype=np.float64)
    cdef double[::1] decisions = np.zeros(n_groups, dtype=np.float64)
    cdef int64_t[::1] sizes = np.zeros(n_groups, dtype=np.int64)
    cdef double log_good = log(eta), log_bad = log(1.0 - eta)
    cdef double prior, wi, ll = 0.0
    with nogil:
        for i in range(n):
            sizes[group[i]] += 1
        for i in range(n):
            g = group[i]
            if gamma == 1.0:
                prior = popularity[i] + 1.0 / sizes[g]
            elif gamma == 0.0:
                prior = 1.0 + 1.0 / sizes[g]
            else:
                prior = pow(popularity[i], gamma) + 1.0 / sizes[g]
            wi = prior * (eta if signals[i] else 1.0 - eta)
            totals[g] += wi
            if counts[i] > 0:
                ll += counts[i] * (log(prior) + (log_good if signals[i] else log_bad))
                decisions[g] += counts[i]
        for g in range(n_groups):
            if decisions[g] > 0:
                ll -= decisions[g] * log(totals[g])
    return ll
