"""Greedy SVGD (loss-guided global step) and ADAM-SVGD.

The greedy loss is ``L = (1 - omega) * max_i |grad log p(theta_i)|_inf - omega * ELBO(q)``
with ``q`` the Gaussian KDE of the particles.  The ELBO noise is drawn once
per run, so ``L`` is a deterministic function of the particle matrix and
accepted steps never increase it.
"""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..posterior import ForwardFailure
from .stein import ParticleSet, RBFKernel, median_bandwidth, stein_direction
from .variational import ElboNoise, GaussianKDE, elbo_estimate

__all__ = [
    "LossConfig",
    "AdamState",
    "Evaluator",
    "GradientFailure",
    "LineSearchFailure",
    "loss_terms",
    "loss",
    "line_search_alpha",
    "gsvgd_run",
    "adam_update",
    "asvgd_run",
    "STOP_THRESHOLD",
    "STOP_MAX_ITERS",
    "STOP_NO_DESCENT",
]

STOP_THRESHOLD = "threshold"
STOP_MAX_ITERS = "max_iters"
STOP_NO_DESCENT = "no_descent"

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class GradientFailure(RuntimeError):
    def __init__(self, index, cause):
        super().__init__(f"gradient evaluation failed at particle {index}: {cause}")
        self.index = index


class LineSearchFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class LossConfig:
    omega: float = 0.5
    xi: float = 1.0
    epsilon: float = 0.0
    elbo_samples: int = 32
    max_iters: int = 50
    probes: int = 12
    alpha_min_ratio: float = 1e-6
    alpha_scale: str = "log"

    def __post_init__(self):
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError(f"omega must lie in [0, 1], got {self.omega}")
        if not self.xi > 0:
            raise ValueError("xi must be positive")
        if self.elbo_samples < 1:
            raise ValueError("elbo_samples must be at least 1")
        if self.probes < 3:
            raise ValueError("the line search needs at least 3 probes")
        if self.alpha_scale not in ("log", "linear"):
            raise ValueError("alpha_scale must be 'log' or 'linear'")
        if not 0 < self.alpha_min_ratio < 1:
            raise ValueError("alpha_min_ratio must lie in (0, 1)")


class Evaluator:
    """Per-particle model evaluations, optionally spread over worker threads.

    Results are gathered in particle order, so reductions are deterministic
    regardless of the worker count.
    """

    def __init__(self, model, workers=1):
        self.model = model
        self.workers = max(1, int(workers))
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def _map(self, fn, rows):
        if self._pool is None:
            return [fn(r) for r in rows]
        return list(self._pool.map(fn, rows))

    def grads(self, X):
        def one(i):
            try:
                return self.model.value_and_grad(X[i])
            except (ForwardFailure, ArithmeticError, ValueError) as exc:
                raise GradientFailure(i, exc) from exc
        out = self._map(one, range(X.shape[0]))
        return np.array([v for v, _ in out]), np.array([g for _, g in out])

    def log_likelihoods(self, Z):
        return np.array(self._map(self.model.log_likelihood, list(Z)))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _as_matrix(particles):
    return particles.particles if isinstance(particles, ParticleSet) else np.asarray(particles, dtype=float)


def loss_terms(particles, kde, model, config, grads=None, noise=None, rng=None, evaluator=None,
               need_sup=True, need_elbo=True):
    """``{"sup_norm", "elbo", "loss"}`` for the current particles.

    Terms not needed at the configured ``omega`` are skipped unless forced
    with ``need_sup`` / ``need_elbo``; skipped terms are NaN.
    """
    X = _as_matrix(particles)
    ev = evaluator or Evaluator(model)
    w = config.omega
    sup = np.nan
    if need_sup and w < 1.0:
        if grads is None:
            _, grads = ev.grads(X)
        sup = float(np.max(np.abs(grads)))
    elbo = np.nan
    if need_elbo and w > 0.0:
        if noise is None:
            if rng is None:
                raise ValueError("need ELBO noise or an rng")
            noise = ElboNoise.draw(config.elbo_samples, X.shape[0], X.shape[1], rng)
        elbo = elbo_estimate(model, kde, noise=noise, evaluate=ev.log_likelihoods)
    return {"sup_norm": sup, "elbo": elbo, "loss": combine_loss(w, sup, elbo)}


def combine_loss(omega, sup, elbo):
    total = 0.0
    if omega < 1.0:
        total += (1.0 - omega) * sup
    if omega > 0.0:
        total -= omega * elbo
    return float(total)


def loss(particles, kde, model, config, **kwargs):
    return loss_terms(particles, kde, model, config, **kwargs)["loss"]


def _kernel(X):
    # a lone particle feels no repulsion, so any bandwidth gives the same direction
    return RBFKernel(median_bandwidth(X) if X.shape[0] > 1 else 1.0)


def _clip(X, bounds):
    if bounds is None:
        return X
    return np.clip(X, bounds[:, 0], bounds[:, 1])


def _probe_factory(X, phi, model, config, noise, evaluator):
    cache = {}

    def probe(alpha):
        if alpha in cache:
            return cache[alpha]
        Y = _clip(X + alpha * phi, model.bounds)
        grads = None
        try:
            if config.omega < 1.0:
                _, grads = evaluator.grads(Y)
            kde = GaussianKDE.from_particles(Y)
            terms = loss_terms(Y, kde, model, config, grads=grads, noise=noise, evaluator=evaluator)
        except GradientFailure:
            terms = {"sup_norm": np.nan, "elbo": np.nan, "loss": np.inf}
        val = terms["loss"] if np.isfinite(terms["loss"]) else np.inf
        cache[alpha] = (val, terms, Y, grads)
        return cache[alpha]

    return probe, cache


def line_search_alpha(particles, directions, model, config, rng=None, noise=None, baseline=None,
                      evaluator=None, return_details=False):
    """Golden-section search for the step ``alpha`` in ``(0, xi]``.

    Both interval ends are probed, the rest of the ``config.probes`` budget
    goes to golden-section refinement (on ``log10 alpha`` by default).  If no
    probe improves on ``baseline`` (the loss at ``alpha -> 0+``) the smallest
    probe is returned.  Raises :class:`LineSearchFailure` if every probe is
    infeasible.
    """
    X = _as_matrix(particles)
    phi = np.asarray(directions, dtype=float)
    ev = evaluator or Evaluator(model)
    if noise is None and config.omega > 0:
        if rng is None:
            raise ValueError("need ELBO noise or an rng")
        noise = ElboNoise.draw(config.elbo_samples, X.shape[0], X.shape[1], rng)
    probe, cache = _probe_factory(X, phi, model, config, noise, ev)
    lo_a, hi_a = config.xi * config.alpha_min_ratio, config.xi
    if config.alpha_scale == "log":
        to_alpha, a, b = (lambda s: 10.0**s), np.log10(lo_a), np.log10(hi_a)
    else:
        to_alpha, a, b = (lambda s: s), lo_a, hi_a

    def f(s):
        return probe(float(to_alpha(s)))[0]

    f(a)
    f(b)
    budget = config.probes - 2
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc = f(c)
    budget -= 1
    fd = None
    while budget > 0:
        if fd is None:
            fd = f(d)
            budget -= 1
            continue
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
        budget -= 1

    alphas = sorted(cache)
    vals = np.array([cache[al][0] for al in alphas])
    if not np.any(np.isfinite(vals)):
        raise LineSearchFailure("every line-search probe was infeasible")
    best = alphas[int(np.argmin(vals))]
    improved = baseline is None or cache[best][0] <= baseline
    if not improved:
        best = alphas[0]
    if return_details:
        return best, cache[best][0], {"probes": cache, "improved": improved}
    return best, cache[best][0]


def _trace_row(it, terms, alpha, solves, t0, n_probes=0):
    return {
        "iteration": it,
        "loss": terms["loss"],
        "elbo": terms["elbo"],
        "sup_norm": terms["sup_norm"],
        "alpha": alpha,
        "forward_solves": solves,
        "wall_time": time.perf_counter() - t0,
        "probes": n_probes,
    }


@dataclass
class Trace:
    rows: list = field(default_factory=list)
    stop_reason: str = ""
    method: str = ""

    def column(self, key):
        return np.array([r[key] for r in self.rows], dtype=float)

    @property
    def losses(self):
        return self.column("loss")


def gsvgd_run(model, init, config, rng, workers=1, callback=None):
    """Greedy SVGD: Stein direction plus loss-minimising global step.

    Each iteration builds the KDE of the particles, stops if the loss is at
    most ``config.epsilon``, and otherwise line-searches the step along the
    Stein direction.  The run also stops when no probe lowers the loss.
    Returns ``(ParticleSet, Trace)``.
    """
    X = _as_matrix(init).copy()
    m, d = X.shape
    noise = ElboNoise.draw(config.elbo_samples, m, d, rng) if config.omega > 0 else None
    trace = Trace(method="gsvgd")
    t0 = time.perf_counter()
    base = model.n_solves
    with Evaluator(model, workers) as ev:
        _, grads = ev.grads(X)
        kde = GaussianKDE.from_particles(X)
        terms = loss_terms(X, kde, model, config, grads=grads, noise=noise, evaluator=ev)
        trace.rows.append(_trace_row(0, terms, 0.0, model.n_solves - base, t0))
        it = 0
        while True:
            if terms["loss"] <= config.epsilon:
                trace.stop_reason = STOP_THRESHOLD
                break
            if it >= config.max_iters:
                trace.stop_reason = STOP_MAX_ITERS
                break
            phi = stein_direction(X, grads, _kernel(X))
            alpha, best, info = line_search_alpha(X, phi, model, config, noise=noise,
                                                  baseline=terms["loss"], evaluator=ev,
                                                  return_details=True)
            if not info["improved"]:
                trace.stop_reason = STOP_NO_DESCENT
                break
            _, new_terms, Y, new_grads = info["probes"][alpha]
            it += 1
            X, terms = Y, new_terms
            grads = new_grads if new_grads is not None else ev.grads(X)[1]
            trace.rows.append(_trace_row(it, terms, alpha, model.n_solves - base, t0,
                                         len(info["probes"])))
            if callback is not None:
                callback(it, X, terms)
    return ParticleSet(X, it), trace


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = None
    v: np.ndarray = None
    t: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


def adam_update(state, grad_like):
    """Bias-corrected ADAM ascent step for ``grad_like``; returns ``(step, new_state)``."""
    g = np.asarray(grad_like, dtype=float)
    m = np.zeros_like(g) if state.m is None else state.m
    v = np.zeros_like(g) if state.v is None else state.v
    if m.shape != g.shape:
        raise ValueError(f"moment shape {m.shape} does not match input {g.shape}")
    t = state.t + 1
    m = state.beta1 * m + (1 - state.beta1) * g
    v = state.beta2 * v + (1 - state.beta2) * g * g
    mhat = m / (1 - state.beta1**t)
    vhat = v / (1 - state.beta2**t)
    step = state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return step, replace(state, m=m, v=v, t=t)


def asvgd_run(model, init, adam, iters, rng, loss_config=None, report_every=1, workers=1,
              callback=None):
    """SVGD with ADAM-scaled steps.

    The loss in the trace is for reporting only; solves spent on it are
    excluded from ``forward_solves``.
    """
    X = _as_matrix(init).copy()
    m, d = X.shape
    cfg = loss_config
    noise = None
    if cfg is not None and cfg.omega > 0:
        noise = ElboNoise.draw(cfg.elbo_samples, m, d, rng)
    trace = Trace(method="asvgd")
    t0 = time.perf_counter()
    used = 0
    state = adam

    def report(it, grads, alpha):
        if cfg is None:
            terms = {"loss": np.nan, "elbo": np.nan, "sup_norm": float(np.max(np.abs(grads)))}
        else:
            terms = loss_terms(X, GaussianKDE.from_particles(X), model, cfg, grads=grads,
                               noise=noise, evaluator=ev)
        trace.rows.append(_trace_row(it, terms, alpha, used, t0))

    with Evaluator(model, workers) as ev:
        for it in range(iters + 1):
            before = model.n_solves
            _, grads = ev.grads(X)
            used += model.n_solves - before
            if it % report_every == 0 or it == iters:
                report(it, grads, float(state.lr))
            if it == iters:
                break
            phi = stein_direction(X, grads, _kernel(X))
            step, state = adam_update(state, phi)
            X = _clip(X + step, model.bounds)
            if callback is not None:
                callback(it + 1, X, state)
    trace.stop_reason = STOP_MAX_ITERS
    return ParticleSet(X, iters), trace
