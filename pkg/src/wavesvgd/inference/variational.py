"""Gaussian KDE test distribution, Gaussian KL and the ELBO estimate."""
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .stein import ParticleSet

__all__ = [
    "GaussianKDE",
    "scott_bandwidth",
    "kde_density",
    "kde_moments",
    "gaussian_kl",
    "ElboNoise",
    "elbo_estimate",
    "marginal_modes",
]

KDE_BANDWIDTH_FLOOR = 1e-8


def scott_bandwidth(X):
    """Per-dimension Scott rule ``m^(-1/(d+4)) * std``; floored at ``KDE_BANDWIDTH_FLOOR``."""
    X = np.asarray(X, dtype=float)
    m, d = X.shape
    if m < 2:
        raise ValueError("Scott's rule needs at least two particles")
    return np.maximum(m ** (-1.0 / (d + 4)) * X.std(axis=0, ddof=1), KDE_BANDWIDTH_FLOOR)


@dataclass(frozen=True)
class GaussianKDE:
    support: np.ndarray
    bandwidth: np.ndarray

    def __post_init__(self):
        S = np.asarray(self.support, dtype=float)
        if S.ndim == 1:
            S = S[:, None]
        bw = np.broadcast_to(np.asarray(self.bandwidth, dtype=float), (S.shape[1],)).copy()
        if np.any(~(bw > 0)):
            raise ValueError("KDE bandwidths must be positive")
        object.__setattr__(self, "support", S)
        object.__setattr__(self, "bandwidth", bw)

    @classmethod
    def from_particles(cls, particles, bandwidth=None):
        X = particles.particles if isinstance(particles, ParticleSet) else np.asarray(particles, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if bandwidth is None:
            # Scott's rule is undefined for one particle; fall back to unit width
            bandwidth = scott_bandwidth(X) if X.shape[0] > 1 else np.ones(X.shape[1])
        return cls(X, bandwidth)

    @property
    def d(self):
        return self.support.shape[1]

    def logpdf(self, points):
        P = np.atleast_2d(np.asarray(points, dtype=float))
        z = (P[:, None, :] - self.support[None, :, :]) / self.bandwidth
        logk = -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(self.bandwidth)) \
            - 0.5 * self.d * np.log(2 * np.pi)
        return logsumexp(logk, axis=1) - np.log(self.support.shape[0])

    def pdf(self, points):
        return np.exp(self.logpdf(points))

    def sample_from(self, idx, eps):
        """Draws ``support[idx] + bandwidth * eps`` for pre-drawn noise."""
        return self.support[idx] + self.bandwidth * eps

    def sample(self, n, rng):
        idx = rng.integers(0, self.support.shape[0], size=n)
        return self.sample_from(idx, rng.standard_normal((n, self.d)))


def kde_density(kde, point):
    p = np.asarray(point, dtype=float)
    out = kde.pdf(p.reshape(-1, kde.d))
    return float(out[0]) if p.ndim <= 1 else out


def kde_moments(kde):
    """Mixture mean and covariance: particle mean, population covariance plus ``diag(bw^2)``."""
    S = kde.support
    mu = S.mean(axis=0)
    r = S - mu
    cov = r.T @ r / S.shape[0] + np.diag(kde.bandwidth**2)
    return mu, cov


def _chol(cov, name):
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-14):
        raise ValueError(f"{name} is not symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{name} is not positive definite") from exc


def gaussian_kl(mu_q, cov_q, mu_p, cov_p):
    """``KL(N(mu_q, cov_q) || N(mu_p, cov_p))``."""
    mu_q = np.atleast_1d(np.asarray(mu_q, dtype=float))
    mu_p = np.atleast_1d(np.asarray(mu_p, dtype=float))
    Lq, Lp = _chol(cov_q, "cov_q"), _chol(cov_p, "cov_p")
    d = mu_q.size
    logdet_q = 2 * np.sum(np.log(np.diag(Lq)))
    logdet_p = 2 * np.sum(np.log(np.diag(Lp)))
    A = np.linalg.solve(Lp, Lq)
    b = np.linalg.solve(Lp, mu_p - mu_q)
    kl = 0.5 * (logdet_p - logdet_q - d + np.sum(A * A) + b @ b)
    return max(float(kl), 0.0)


@dataclass(frozen=True)
class ElboNoise:
    """Fixed mixture indices and standard normals; reusing them gives common random numbers."""

    idx: np.ndarray
    eps: np.ndarray

    @classmethod
    def draw(cls, n, m, d, rng):
        if n < 1:
            raise ValueError("need at least one ELBO sample")
        return cls(rng.integers(0, m, size=n), rng.standard_normal((n, d)))


def elbo_estimate(model, kde, n=None, rng=None, noise=None, evaluate=None):
    """Monte Carlo ``E_q[log p(y | z)]`` minus ``KL(moments(q) || prior)``.

    Pass either ``n`` and ``rng`` or pre-drawn ``noise``.  Draws outside
    ``model.bounds`` are projected onto the box, which keeps the estimate
    continuous in the particle positions.  Draws with non-finite
    log-likelihood are dropped; if all are, the ELBO is ``-inf``.
    ``evaluate`` maps a list of points to log-likelihoods (for parallel use).
    """
    if noise is None:
        if n is None or rng is None:
            raise ValueError("need n and rng, or pre-drawn noise")
        noise = ElboNoise.draw(n, kde.support.shape[0], kde.d, rng)
    Z = kde.sample_from(noise.idx, noise.eps)
    bounds = getattr(model, "bounds", None)
    if bounds is not None:
        Z = np.clip(Z, bounds[:, 0], bounds[:, 1])
    if evaluate is None:
        ll = np.array([model.log_likelihood(z) for z in Z])
    else:
        ll = np.asarray(evaluate(Z), dtype=float)
    ok = np.isfinite(ll)
    if not ok.any():
        return -np.inf
    mu, cov = kde_moments(kde)
    return float(ll[ok].mean()) - gaussian_kl(mu, cov, model.prior_mean, model.prior_cov)


def marginal_modes(X, grid=512):
    """Per-coordinate argmax of a 1D Gaussian KDE (Scott bandwidth) of the particle cloud."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    modes = np.empty(X.shape[1])
    for k in range(X.shape[1]):
        col = X[:, k]
        kde = GaussianKDE.from_particles(col[:, None])
        span = col.max() - col.min()
        xs = np.linspace(col.min() - 0.1 * span, col.max() + 0.1 * span, grid) if span > 0 else col[:1]
        modes[k] = xs[int(np.argmax(kde.logpdf(xs[:, None])))]
    return modes
