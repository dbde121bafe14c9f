"""Deterministic sample generators used by the audit routines."""

import numpy as np

from .errors import ValidationError

_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53,
           59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113,
           127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181,
           191, 193, 197, 199, 211, 223, 227, 229, 233, 239, 241, 251)


def halton(count, dims, skip=20):
    """First ``count`` points of the Halton sequence in [0, 1)^dims.

    Low-discrepancy and fully deterministic, so audits sample the same
    points on every run.  The first ``skip`` points are dropped (they
    cluster near the origin).
    """
    if dims > len(_PRIMES):
        raise ValidationError(f"cannot sample {dims} dimensions; "
                              f"limit is {len(_PRIMES)}")
    out = np.empty((count, dims))
    for d in range(dims):
        base = _PRIMES[d]
        for i in range(count):
            k = skip + 1 + i
            f = 1.0
            r = 0.0
            while k > 0:
                f /= base
                r += f * (k % base)
                k //= base
            out[i, d] = r
    return out


def map_to_box(points, lo, hi):
    """Affinely map unit-cube samples into the box [lo, hi] per column."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    return lo + points * (hi - lo)


def unit_directions(count, dim, seed):
    """Deterministic random unit vectors (Gaussian direction trick)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    vecs = rng.standard_normal((count, dim))
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    norms[norms < 1e-12] = 1.0
    return vecs / norms
