"""Shared constructors for correlation-algebra tests."""

import numpy as np

from mfchaos import correlations as ca


def random_weight(M, rng, dz=None):
    dz = 1.0 / M if dz is None else dz
    vals = rng.uniform(0.2, 1.0, size=M)
    vals /= vals.sum() * dz
    return ca.Weight(space=ca.SiteSpace(M=M, dz=dz), values=vals)


def random_symmetric(space, N, rng, scale=1.0):
    """Symmetric tensor via a function of the sorted index tuple."""
    base = rng.standard_normal((space.M,) * N) * scale
    idx = np.indices((space.M,) * N)
    srt = np.sort(idx, axis=0)
    vals = base[tuple(srt)]
    return ca.NTensor(space=space, values=vals, symmetric=True)
