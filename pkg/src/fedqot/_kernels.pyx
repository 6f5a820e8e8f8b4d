# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled PRNG/shuffle/generation kernels; mirrors ``_kernels_py`` exactly."""
from libc.math cimport pow, log10
from libc.stdint cimport uint64_t, int64_t

import numpy as np

cdef double TWO_POW_M53 = 1.0 / 9007199254740992.0
cdef double SIGMA_ASE = 0.05
cdef double ETA_NL = 0.01
cdef double[3] THRESHOLDS = [7.0, 10.5, 13.5]


cdef inline uint64_t _next(uint64_t* state) nogil:
    state[0] += <uint64_t>0x9E3779B97F4A7C15ULL
    cdef uint64_t z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _unit(uint64_t z) nogil:
    return <double>(z >> 11) * TWO_POW_M53


cdef inline int _label(int64_t spans, double power, int64_t chans, int64_t mod) nogil:
    cdef double p = pow(10.0, power / 10.0)
    cdef double noise = <double>spans * (SIGMA_ASE + ETA_NL * pow(p, 3.0) * (1.0 + 0.5 * <double>chans / 96.0))
    cdef double snr = 10.0 * log10(p / noise)
    return 1 if snr >= THRESHOLDS[mod] else 0


def splitmix64_next(state):
    cdef uint64_t s = <uint64_t>(state & 0xFFFFFFFFFFFFFFFF)
    cdef uint64_t z = _next(&s)
    return s, z


def uniform_fill(state, Py_ssize_t n):
    cdef uint64_t s = <uint64_t>(state & 0xFFFFFFFFFFFFFFFF)
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] view = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            view[i] = _unit(_next(&s))
    return out, s


def permutation(Py_ssize_t n, seed):
    cdef uint64_t s = <uint64_t>(seed & 0xFFFFFFFFFFFFFFFF)
    perm = np.arange(n, dtype=np.int64)
    cdef int64_t[::1] view = perm
    cdef Py_ssize_t i
    cdef uint64_t j
    cdef int64_t tmp
    with nogil:
        for i in range(n - 1, 0, -1):
            j = _next(&s) % <uint64_t>(i + 1)
            tmp = view[i]
            view[i] = view[j]
            view[j] = tmp
    return perm


def qot_label(int64_t n_spans, double launch_power_dbm, int64_t channel_load, int64_t modulation):
    return _label(n_spans, launch_power_dbm, channel_load, modulation)


def generate_domain(seed, domain_id, Py_ssize_t n_target, int64_t max_draws, double cdf0, double cdf1):
    cdef uint64_t s = <uint64_t>((seed ^ domain_id) & 0xFFFFFFFFFFFFFFFF)
    n_spans = np.zeros(n_target, dtype=np.int64)
    launch = np.zeros(n_target, dtype=np.float64)
    load = np.zeros(n_target, dtype=np.int64)
    modulation = np.zeros(n_target, dtype=np.int64)
    labels = np.zeros(n_target, dtype=np.int64)
    cdef int64_t[::1] v_spans = n_spans
    cdef double[::1] v_launch = launch
    cdef int64_t[::1] v_load = load
    cdef int64_t[::1] v_mod = modulation
    cdef int64_t[::1] v_lab = labels
    cdef int64_t[2] quota
    quota[0] = n_target - n_target // 2
    quota[1] = n_target // 2
    cdef Py_ssize_t filled = 0
    cdef int64_t draws = 0
    cdef int64_t spans, chans, mod
    cdef double power, u
    cdef int lab
    with nogil:
        while filled < n_target and draws < max_draws:
            draws += 1
            spans = 1 + <int64_t>(_unit(_next(&s)) * 30.0)
            power = -4.0 + 8.0 * _unit(_next(&s))
            chans = 1 + <int64_t>(_unit(_next(&s)) * 96.0)
            u = _unit(_next(&s))
            if u < cdf0:
                mod = 0
            elif u < cdf1:
                mod = 1
            else:
                mod = 2
            lab = _label(spans, power, chans, mod)
            if quota[lab] == 0:
                continue
            quota[lab] -= 1
            v_spans[filled] = spans
            v_launch[filled] = power
            v_load[filled] = chans
            v_mod[filled] = mod
            v_lab[filled] = lab
            filled += 1
    return n_spans, launch, load, modulation, labels, filled, draws
