"""Backend selection for the PRNG/shuffle/generation hot loops.

The compiled extension ``fedqot._kernels`` is used when it is importable;
otherwise the pure-Python ``fedqot._kernels_py`` is used. Setting the
environment variable ``FEDQOT_PURE_PYTHON=1`` forces the fallback. Both
backends produce bit-identical results.
"""
import os

from . import _kernels_py

_impl = _kernels_py
BACKEND = "python"

if not os.environ.get("FEDQOT_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass

splitmix64_next = _impl.splitmix64_next
uniform_fill = _impl.uniform_fill
permutation = _impl.permutation
generate_domain = _impl.generate_domain

MASK64 = _kernels_py.MASK64
GOLDEN_GAMMA = _kernels_py.GOLDEN_GAMMA


def available_backends():
    """Map backend name to module for every importable backend."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels
        found["cython"] = _kernels
    except ImportError:
        pass
    return found


def epoch_seed(shuffle_seed, round_index, epoch):
    """Seed for the shuffle of one (round, epoch); rounds and epochs count from 1."""
    return (shuffle_seed ^ ((round_index * GOLDEN_GAMMA) & MASK64) ^ epoch) & MASK64
