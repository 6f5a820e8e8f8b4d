"""Pure-Python implementations of the integer/PRNG hot loops.

These are the reference semantics. ``_kernels.pyx`` must match them bit for bit;
``fedqot.kernels`` picks whichever backend is importable.
"""
import math

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
TWO_POW_M53 = 1.0 / 9007199254740992.0

# label proxy constants
SIGMA_ASE = 0.05
ETA_NL = 0.01
SNR_THRESHOLDS_DB = (7.0, 10.5, 13.5)  # QPSK, QAM8, QAM16


def splitmix64_next(state):
    """Advance a splitmix64 state. Returns ``(new_state, output)``."""
    state = (state + GOLDEN_GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def u64_to_unit(z):
    return (z >> 11) * TWO_POW_M53


def uniform_fill(state, n):
    """Draw ``n`` floats in [0, 1) from the stream. Returns ``(values, new_state)``."""
    out = np.empty(n, dtype=np.float64)
    state &= MASK64
    for i in range(n):
        state, z = splitmix64_next(state)
        out[i] = (z >> 11) * TWO_POW_M53
    return out, state


def permutation(n, seed):
    """Fisher-Yates shuffle of ``arange(n)``; swap index is ``u64 % (i + 1)``."""
    perm = list(range(n))
    state = seed & MASK64
    for i in range(n - 1, 0, -1):
        state, z = splitmix64_next(state)
        j = z % (i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return np.array(perm, dtype=np.int64)


def snr_db(n_spans, launch_power_dbm, channel_load):
    p = 10.0 ** (launch_power_dbm / 10.0)
    noise = n_spans * (SIGMA_ASE + ETA_NL * p ** 3.0 * (1.0 + 0.5 * channel_load / 96.0))
    return 10.0 * math.log10(p / noise)


def qot_label(n_spans, launch_power_dbm, channel_load, modulation):
    return int(snr_db(n_spans, launch_power_dbm, channel_load) >= SNR_THRESHOLDS_DB[modulation])


def generate_domain(seed, domain_id, n_target, max_draws, cdf0, cdf1):
    """Rejection-balanced draw of one domain's lightpaths.

    Each candidate consumes four stream outputs: span count, launch power,
    channel load, modulation. Candidates are kept only while their class quota
    (``n_target // 2`` positives, the rest negatives) is open.

    Returns ``(n_spans, launch, load, modulation, labels, filled, draws)``; the
    caller checks ``filled == n_target``.
    """
    n_spans = np.zeros(n_target, dtype=np.int64)
    launch = np.zeros(n_target, dtype=np.float64)
    load = np.zeros(n_target, dtype=np.int64)
    modulation = np.zeros(n_target, dtype=np.int64)
    labels = np.zeros(n_target, dtype=np.int64)
    quota = [n_target - n_target // 2, n_target // 2]
    state = (seed ^ domain_id) & MASK64
    filled = 0
    draws = 0
    while filled < n_target and draws < max_draws:
        draws += 1
        state, z = splitmix64_next(state)
        spans = 1 + int(u64_to_unit(z) * 30.0)
        state, z = splitmix64_next(state)
        power = -4.0 + 8.0 * u64_to_unit(z)
        state, z = splitmix64_next(state)
        chans = 1 + int(u64_to_unit(z) * 96.0)
        state, z = splitmix64_next(state)
        u = u64_to_unit(z)
        mod = 0 if u < cdf0 else (1 if u < cdf1 else 2)
        lab = qot_label(spans, power, chans, mod)
        if quota[lab] == 0:
            continue
        quota[lab] -= 1
        n_spans[filled] = spans
        launch[filled] = power
        load[filled] = chans
        modulation[filled] = mod
        labels[filled] = lab
        filled += 1
    return n_spans, launch, load, modulation, labels, filled, draws
