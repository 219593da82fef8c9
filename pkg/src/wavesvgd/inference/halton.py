"""Halton low-discrepancy points for particle initialisation."""
import numpy as np

from .stein import ParticleSet

__all__ = ["first_primes", "radical_inverse", "halton_points", "halton_init", "star_discrepancy"]


def first_primes(d):
    primes = []
    k = 2
    while len(primes) < d:
        if all(k % p for p in primes if p * p <= k):
            primes.append(k)
        k += 1
    return primes


def radical_inverse(indices, base):
    """Digit reversal of each index in ``base`` about the radix point."""
    idx = np.asarray(indices, dtype=np.int64).copy()
    out = np.zeros(idx.shape)
    f = 1.0 / base
    while np.any(idx > 0):
        out += f * (idx % base)
        idx //= base
        f /= base
    return out


def halton_points(m, d, start=1):
    """First ``m`` points (indices ``start .. start + m - 1``) of the ``d``-dim Halton sequence."""
    idx = np.arange(start, start + m)
    return np.stack([radical_inverse(idx, b) for b in first_primes(d)], axis=1)


def halton_init(m, d, bounds):
    """``m`` Halton points mapped affinely into per-dimension ``bounds`` (``d`` x 2)."""
    if m < 1:
        raise ValueError("need at least one particle")
    bounds = np.asarray(bounds, dtype=float).reshape(d, 2)
    if np.any(bounds[:, 0] >= bounds[:, 1]):
        raise ValueError("each bound needs lower < upper")
    U = halton_points(m, d)
    return ParticleSet(bounds[:, 0] + U * (bounds[:, 1] - bounds[:, 0]))


def star_discrepancy(points, grid=64):
    """Grid approximation of the star discrepancy on the unit cube.

    Anchored boxes ``[0, t)`` are taken at grid corners and at the point
    coordinates; the maximum absolute gap between the empirical and the
    uniform measure is returned.
    """
    P = np.asarray(points, dtype=float)
    m, d = P.shape
    axes = [np.unique(np.concatenate([np.linspace(0, 1, grid + 1)[1:], P[:, k]])) for k in range(d)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    vol = np.prod(mesh, axis=1)
    open_count = np.zeros(mesh.shape[0])
    closed_count = np.zeros(mesh.shape[0])
    for p in P:
        open_count += np.all(p < mesh, axis=1)
        closed_count += np.all(p <= mesh, axis=1)
    return float(max(np.max(vol - open_count / m), np.max(closed_count / m - vol)))
