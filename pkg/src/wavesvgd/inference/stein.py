"""RBF kernel, bandwidth heuristic and the Stein variational direction."""
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform

__all__ = ["ParticleSet", "RBFKernel", "median_bandwidth", "stein_direction", "BANDWIDTH_FLOOR"]

BANDWIDTH_FLOOR = 1e-8


@dataclass
class ParticleSet:
    particles: np.ndarray
    iteration: int = 0

    def __post_init__(self):
        p = np.asarray(self.particles, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if p.ndim != 2:
            raise ValueError("particles must be an m x d matrix")
        if not np.all(np.isfinite(p)):
            raise ValueError("particles must be finite")
        self.particles = p

    @property
    def m(self):
        return self.particles.shape[0]

    @property
    def d(self):
        return self.particles.shape[1]

    def mean(self):
        return self.particles.mean(axis=0)

    def var(self):
        return self.particles.var(axis=0, ddof=1) if self.m > 1 else np.zeros(self.d)

    def copy(self):
        return ParticleSet(self.particles.copy(), self.iteration)


@dataclass(frozen=True)
class RBFKernel:
    """``k(x, x') = exp(-|x - x'|^2 / (2 h^2))``."""

    h: float

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"bandwidth must be positive, got {self.h}")

    def matrix(self, X, Y=None):
        X = np.asarray(X, dtype=float)
        Y = X if Y is None else np.asarray(Y, dtype=float)
        sq = np.sum((X[:, None, :] - Y[None, :, :]) ** 2, axis=-1)
        return np.exp(-sq / (2.0 * self.h**2))

    def __call__(self, x, y):
        diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        return float(np.exp(-np.dot(diff, diff) / (2.0 * self.h**2)))


def median_bandwidth(particles):
    """``h`` with ``h^2 = median(pairwise distance)^2 / log m``, floored at ``BANDWIDTH_FLOOR``."""
    X = particles.particles if isinstance(particles, ParticleSet) else np.asarray(particles, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    m = X.shape[0]
    if m < 2:
        raise ValueError("median bandwidth needs at least two particles")
    med = float(np.median(pdist(X)))
    h2 = med * med / np.log(m)
    return float(np.sqrt(max(h2, BANDWIDTH_FLOOR)))


def stein_direction(particles, grads, kernel):
    """``phi(x_i) = 1/m sum_j [k(x_j, x_i) grad_j + (x_i - x_j) / h^2 k(x_j, x_i)]``."""
    X = particles.particles if isinstance(particles, ParticleSet) else np.asarray(particles, dtype=float)
    G = np.asarray(grads, dtype=float)
    if G.shape != X.shape:
        raise ValueError(f"grads shape {G.shape} does not match particles {X.shape}")
    if not np.all(np.isfinite(G)):
        raise ValueError("grads must be finite")
    m = X.shape[0]
    K = kernel.matrix(X)                      # K[i, j] = k(x_i, x_j), symmetric
    drive = K @ G
    # sum_j (x_i - x_j) k_ij = x_i * sum_j k_ij - sum_j k_ij x_j
    repulse = (X * K.sum(axis=1, keepdims=True) - K @ X) / kernel.h**2
    return (drive + repulse) / m


def pairwise_distances(X):
    return squareform(pdist(np.asarray(X, dtype=float)))
