"""Gaussian-noise Bayesian model over wave-speed parameters.

``log p(theta | y) = -sum_i 1/(2 sigma_i^2) ||y_i - u_i(theta)||^2 - 1/2 (theta - theta0)^T M^-1 (theta - theta0)``

with the time norm evaluated by the trapezoidal rule on the record grid.
The gradient comes from the discrete adjoint of the RK4 forward solve; a
central finite-difference mode is kept as a reference.
"""
import logging
import threading

import numpy as np

from .wavesolver import ObservationRecord, StabilityError, VelocityError

__all__ = [
    "BayesModel",
    "QuadraticModel",
    "AffineModel",
    "ForwardFailure",
    "log_likelihood",
    "log_posterior",
    "grad_log_posterior",
    "fd_gradient",
    "trapezoid_weights",
    "synthetic_data",
]

FORWARD_ERRORS = (StabilityError, VelocityError, FloatingPointError)

log = logging.getLogger(__name__)


class ForwardFailure(RuntimeError):
    """Raised by gradient evaluation when the forward map cannot be solved."""


def trapezoid_weights(times):
    times = np.asarray(times, dtype=float)
    w = np.zeros_like(times)
    dt = np.diff(times)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


class _Counter:
    """Thread-safe count of forward and adjoint solves."""

    def __init__(self):
        self._lock = threading.Lock()
        self.value = 0

    def add(self, k=1):
        with self._lock:
            self.value += k


class _PriorMixin:
    """Gaussian prior, box bounds and the shared evaluation API."""

    def _init_prior(self, prior_mean, prior_cov, bounds):
        self.prior_mean = np.atleast_1d(np.asarray(prior_mean, dtype=float))
        d = self.prior_mean.size
        cov = np.asarray(prior_cov, dtype=float)
        if cov.ndim == 0:
            cov = cov * np.eye(d)
        elif cov.ndim == 1:
            cov = np.diag(cov)
        if cov.shape != (d, d) or not np.allclose(cov, cov.T, rtol=1e-12, atol=0):
            raise ValueError("prior covariance must be a symmetric d x d matrix")
        try:
            self._prior_chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("prior covariance must be positive definite") from exc
        self.prior_cov = cov
        self.prior_prec = np.linalg.inv(cov)
        if bounds is not None:
            bounds = np.asarray(bounds, dtype=float).reshape(d, 2)
            if np.any(bounds[:, 0] >= bounds[:, 1]):
                raise ValueError("each bound needs lower < upper")
        self.bounds = bounds
        self.counter = _Counter()

    @property
    def dim(self):
        return self.prior_mean.size

    @property
    def n_solves(self):
        return self.counter.value

    def in_bounds(self, theta):
        if self.bounds is None:
            return True
        return bool(np.all((theta >= self.bounds[:, 0]) & (theta <= self.bounds[:, 1])))

    def log_prior(self, theta):
        r = np.asarray(theta, dtype=float) - self.prior_mean
        return -0.5 * float(r @ self.prior_prec @ r)

    def grad_log_prior(self, theta):
        return -self.prior_prec @ (np.asarray(theta, dtype=float) - self.prior_mean)

    def log_posterior(self, theta):
        ll = self.log_likelihood(theta)
        if not np.isfinite(ll):
            return -np.inf
        return ll + self.log_prior(theta)

    def energy(self, theta):
        """Negative log-posterior."""
        return -self.log_posterior(theta)


class BayesModel(_PriorMixin):
    """Posterior over the parameters of a linear wave system.

    ``forward`` is a :class:`~wavesvgd.wavesolver.HighContrastSystem` or
    :class:`~wavesvgd.wavesolver.LowContrastSystem`.  ``sigma`` is a scalar
    or one standard deviation per observation node.  ``likelihood=False``
    gives the prior-only model.
    """

    def __init__(self, forward, data, sigma, prior_mean, prior_cov, bounds=None,
                 likelihood=True, backend=None):
        self.forward = forward
        if not isinstance(data, ObservationRecord):
            data = ObservationRecord(forward.obs_positions, forward.times, data)
        if data.values.shape != (forward.obs_positions.size, forward.times.size):
            raise ValueError("data and forward output must share node set and time grid")
        if not (np.allclose(data.times, forward.times) and
                np.allclose(data.node_positions, forward.obs_positions)):
            raise ValueError("data and forward output must share node set and time grid")
        self.data = data
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (data.node_positions.size,))
        if np.any(~(sigma > 0)):
            raise ValueError("noise standard deviations must be positive")
        self.sigma = sigma.copy()
        self.likelihood = likelihood
        self.backend = backend
        self._init_prior(prior_mean, prior_cov, bounds)
        if self.dim != forward.n_params:
            raise ValueError(f"prior has dimension {self.dim}, forward map expects {forward.n_params}")
        # weights[n, i] = tau_n / sigma_i^2
        self._weights = trapezoid_weights(data.times)[:, None] / self.sigma[None, :] ** 2
        self._y = data.values.T

    def predict(self, theta):
        self.counter.add()
        return self.forward.run(np.asarray(theta, dtype=float), backend=self.backend).obs

    def _misfit(self, obs):
        r = obs - self._y
        return -0.5 * float(np.sum(self._weights * r * r)), r

    def log_likelihood(self, theta):
        if not self.likelihood:
            return 0.0
        theta = np.asarray(theta, dtype=float)
        if not self.in_bounds(theta):
            # the box is part of the model: zero posterior mass outside it
            return -np.inf
        try:
            obs = self.predict(theta)
        except FORWARD_ERRORS as exc:
            log.debug("forward failure at theta=%s: %s", theta, exc)
            return -np.inf
        return self._misfit(obs)[0]

    def value_and_grad(self, theta):
        """``(log_posterior, gradient)`` from one forward and one adjoint solve."""
        theta = np.asarray(theta, dtype=float)
        lp, g = self.log_prior(theta), self.grad_log_prior(theta)
        if not self.likelihood:
            return lp, g
        try:
            run = self.forward.run(theta, store=True, backend=self.backend)
        except FORWARD_ERRORS as exc:
            raise ForwardFailure(f"forward failure at theta={theta}: {exc}") from exc
        self.counter.add(2)
        ll, r = self._misfit(run.obs)
        gl = self.forward.vjp(theta, -self._weights * r, run=run, backend=self.backend)
        return ll + lp, gl + g

    def grad_log_posterior(self, theta, method="adjoint"):
        if method == "adjoint":
            return self.value_and_grad(theta)[1]
        if method == "fd":
            return fd_gradient(self.log_posterior, theta, self.bounds)
        raise ValueError(f"unknown gradient method {method!r}")


class QuadraticModel(_PriorMixin):
    """Gaussian log-likelihood ``-1/2 (theta - mu)^T P (theta - mu)``.

    Cheap closed-form target for sampler checks.  Every likelihood evaluation
    counts as one forward solve.
    """

    def __init__(self, mean, precision, prior_mean, prior_cov, bounds=None):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        P = np.asarray(precision, dtype=float)
        self.precision = P * np.eye(self.mean.size) if P.ndim == 0 else P
        self._init_prior(prior_mean, prior_cov, bounds)

    @classmethod
    def standard_normal_posterior(cls, d, prior_var=4.0):
        """Prior ``N(0, prior_var I)`` and likelihood chosen so the posterior is ``N(0, I)``."""
        return cls(np.zeros(d), (1.0 - 1.0 / prior_var) * np.eye(d), np.zeros(d), prior_var * np.eye(d))

    @property
    def posterior_cov(self):
        return np.linalg.inv(self.precision + self.prior_prec)

    @property
    def posterior_mean(self):
        return self.posterior_cov @ (self.precision @ self.mean + self.prior_prec @ self.prior_mean)

    def log_likelihood(self, theta):
        self.counter.add()
        r = np.asarray(theta, dtype=float) - self.mean
        return -0.5 * float(r @ self.precision @ r)

    def value_and_grad(self, theta):
        theta = np.asarray(theta, dtype=float)
        self.counter.add()
        r = theta - self.mean
        ll = -0.5 * float(r @ self.precision @ r)
        return ll + self.log_prior(theta), -self.precision @ r + self.grad_log_prior(theta)

    def grad_log_posterior(self, theta, method="adjoint"):
        if method == "fd":
            return fd_gradient(self.log_posterior, theta, self.bounds)
        return self.value_and_grad(theta)[1]


class AffineModel(_PriorMixin):
    """``base`` re-expressed in unit coordinates ``z`` with ``theta = lower + (upper - lower) * z``.

    The Gaussian prior maps exactly; bounds become the unit box.
    """

    def __init__(self, base, lower=None, upper=None):
        if lower is None or upper is None:
            if base.bounds is None:
                raise ValueError("need explicit lower/upper when the base model has no bounds")
            lower, upper = base.bounds[:, 0], base.bounds[:, 1]
        self.base = base
        self.lower = np.asarray(lower, dtype=float)
        self.scale = np.asarray(upper, dtype=float) - self.lower
        if np.any(self.scale <= 0):
            raise ValueError("upper must exceed lower")
        S = np.diag(1.0 / self.scale)
        bounds = None if base.bounds is None else np.stack(
            [self.to_unit(base.bounds[:, 0]), self.to_unit(base.bounds[:, 1])], axis=1)
        self._init_prior(self.to_unit(base.prior_mean), S @ base.prior_cov @ S, bounds)
        self.counter = base.counter

    def to_unit(self, theta):
        return (np.asarray(theta, dtype=float) - self.lower) / self.scale

    def from_unit(self, z):
        return self.lower + self.scale * np.asarray(z, dtype=float)

    def log_likelihood(self, z):
        return self.base.log_likelihood(self.from_unit(z))

    def value_and_grad(self, z):
        lp, g = self.base.value_and_grad(self.from_unit(z))
        return lp, g * self.scale

    def log_posterior(self, z):
        return self.base.log_posterior(self.from_unit(z))

    def grad_log_posterior(self, z, method="adjoint"):
        if method == "fd":
            return fd_gradient(self.log_posterior, z, self.bounds)
        return self.value_and_grad(z)[1]


def fd_gradient(fn, theta, bounds=None, rel_step=1e-4):
    """Central differences with ``h_i = rel_step (1 + |theta_i|)``; one-sided next to a bound."""
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    h = rel_step * (1.0 + np.abs(theta))
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h[i]
        lo_ok = bounds is None or theta[i] - h[i] >= bounds[i, 0]
        hi_ok = bounds is None or theta[i] + h[i] <= bounds[i, 1]
        if lo_ok and hi_ok:
            g[i] = (fn(theta + e) - fn(theta - e)) / (2 * h[i])
        elif hi_ok:
            g[i] = (fn(theta + e) - fn(theta)) / h[i]
        elif lo_ok:
            g[i] = (fn(theta) - fn(theta - e)) / h[i]
        else:
            raise ValueError(f"bound interval too narrow for a finite-difference step in component {i}")
    return g


def log_likelihood(model, theta):
    return model.log_likelihood(theta)


def log_posterior(model, theta):
    return model.log_posterior(theta)


def grad_log_posterior(model, theta, method="adjoint"):
    return model.grad_log_posterior(theta, method=method)


def synthetic_data(forward, theta_true, noise_fraction, rng, backend=None):
    """Noisy record from ``theta_true``.

    ``sigma_i = noise_fraction * max_t |u_i|`` per node; i.i.d. Gaussian noise
    is drawn from ``rng``.  Returns ``(record, sigma, clean_record)``.
    """
    clean = forward.record(np.asarray(theta_true, dtype=float), backend=backend)
    peak = np.max(np.abs(clean.values), axis=1)
    peak = np.where(peak > 0, peak, 1.0)
    sigma = noise_fraction * peak
    if noise_fraction > 0:
        noise = rng.standard_normal(clean.values.shape) * sigma[:, None]
    else:
        noise = np.zeros_like(clean.values)
        sigma = np.where(sigma > 0, sigma, 1.0)
    noisy = ObservationRecord(clean.node_positions, clean.times, clean.values + noise)
    return noisy, sigma, clean
