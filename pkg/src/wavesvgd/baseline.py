"""Random-walk Metropolis reference sampler.

Gaussian proposals ``theta' = theta + s * N(0, I)``.  With adaptation on,
``s`` is tuned in batches during the first ``adapt_fraction`` of the chain
toward an acceptance rate in ``target_rate`` and frozen afterwards, so the
remaining samples come from a fixed Metropolis kernel.
"""
from dataclasses import dataclass

import numpy as np

from .io import read_csv, write_csv

__all__ = ["Chain", "InfeasibleInit", "rwm_sample", "write_chain_csv", "read_chain_csv"]


class InfeasibleInit(ValueError):
    pass


@dataclass
class Chain:
    samples: np.ndarray
    log_post: np.ndarray
    accepted: np.ndarray
    scale: float
    burn_in: int
    forward_solves: int = 0

    @property
    def n(self):
        return self.samples.shape[0]

    @property
    def acceptance_count(self):
        return int(self.accepted.sum())

    def acceptance_rate(self, after_burn_in=True):
        a = self.accepted[self.burn_in:] if after_burn_in else self.accepted
        return float(a.mean()) if a.size else float("nan")

    def sampling(self):
        """Samples drawn after the adaptation window."""
        return self.samples[self.burn_in:]

    def autocorrelation(self, lag=1):
        x = self.sampling()
        x = x - x.mean(axis=0)
        denom = np.sum(x * x, axis=0)
        num = np.sum(x[lag:] * x[:-lag], axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(denom > 0, num / denom, 1.0)


def rwm_sample(model, n_samples, init, proposal_scale, rng, adapt=True, adapt_fraction=0.2,
               target_rate=(0.25, 0.40), batch=50):
    """Metropolis random walk of ``n_samples`` states starting from ``init``."""
    x = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    if not proposal_scale > 0:
        raise ValueError("proposal_scale must be positive")
    if n_samples < 1:
        raise ValueError("need at least one sample")
    before = model.n_solves
    lp = model.log_posterior(x)
    if not np.isfinite(lp):
        raise InfeasibleInit(f"log posterior is not finite at init {x}")
    d = x.size
    samples = np.empty((n_samples, d))
    log_post = np.empty(n_samples)
    accepted = np.zeros(n_samples, dtype=bool)
    window = int(round(adapt_fraction * n_samples)) if adapt else 0
    lo, hi = target_rate
    s = float(proposal_scale)
    for k in range(n_samples):
        prop = x + s * rng.standard_normal(d)
        lp_prop = model.log_posterior(prop)
        # log(u) < lp' - lp, written to avoid exp overflow
        if np.isfinite(lp_prop) and np.log(rng.random()) < lp_prop - lp:
            x, lp = prop, lp_prop
            accepted[k] = True
        samples[k] = x
        log_post[k] = lp
        if k < window and (k + 1) % batch == 0:
            rate = accepted[k + 1 - batch:k + 1].mean()
            if rate < lo:
                s *= 0.7
            elif rate > hi:
                s *= 1.3
    return Chain(samples, log_post, accepted, s, window, model.n_solves - before)


def write_chain_csv(path, chain, header=None, names=None):
    d = chain.samples.shape[1]
    names = names or [f"theta_{j}" for j in range(d)]
    head = dict(header or {})
    head.update({"burn_in": chain.burn_in, "final_scale": repr(chain.scale),
                 "acceptance_rate": repr(chain.acceptance_rate())})
    rows = [[k] + [float(v) for v in chain.samples[k]] + [float(chain.log_post[k]), int(chain.accepted[k])]
            for k in range(chain.n)]
    return write_csv(path, ["step"] + names + ["log_posterior", "accepted"], rows, header=head)


def read_chain_csv(path):
    header, cols, rows = read_csv(path)
    arr = np.array([[float(v) for v in r] for r in rows]).reshape(-1, len(cols))
    samples = arr[:, 1:-2]
    return Chain(samples, arr[:, -2], arr[:, -1].astype(bool), float(header.get("final_scale", "nan")),
                 int(header.get("burn_in", 0)))
