"""Build synthetic inversion problems from an :class:`~wavesvgd.config.ExperimentConfig`.

Samplers work in unit coordinates: each squared-speed parameter is mapped
affinely from its box ``[lower^2, upper^2]`` onto ``[0, 1]``.
"""
from dataclasses import dataclass, field

import numpy as np

from .baseline import rwm_sample
from .inference import (
    AdamState,
    ElboNoise,
    Evaluator,
    GaussianKDE,
    LossConfig,
    asvgd_run,
    combine_loss,
    gsvgd_run,
    halton_init,
    loss_terms,
)
from .posterior import AffineModel, BayesModel, synthetic_data
from .velocity import BSplineBasis
from .wavesolver import (
    HighContrastSystem,
    LowContrastSystem,
    SimulationConfig,
    SourceSignal,
)

__all__ = [
    "Problem",
    "grid_nodes_per_segment",
    "observation_positions",
    "make_source",
    "make_simulation",
    "true_speed_field",
    "build_high_contrast",
    "build_low_contrast",
    "build_problem",
    "loss_config",
    "run_sampler",
    "predictive_bands",
    "thin",
    "sample_losses",
    "budget_comparison",
]


@dataclass
class Problem:
    kind: str
    system: object
    base: BayesModel
    model: AffineModel
    theta_true: np.ndarray
    data: object
    clean: object
    sigma: np.ndarray
    names: list
    degree: int = None
    basis: BSplineBasis = None
    grid: np.ndarray = None
    true_field: np.ndarray = None
    meta: dict = field(default_factory=dict)

    @property
    def z_true(self):
        return self.model.to_unit(self.theta_true)


def _segments(cfg):
    if cfg.kind == "high_contrast":
        return list(cfg.high_contrast.lengths)
    return [cfg.low_contrast.length]


def grid_nodes_per_segment(cfg):
    """Node count of each layer (high contrast) or of the single grid (low contrast)."""
    dx = cfg.grid.dx
    nodes = []
    for L in _segments(cfg):
        cells = L / dx
        n = int(round(cells))
        if abs(cells - n) > 1e-9 * max(1.0, cells):
            raise ValueError(f"segment length {L} is not a multiple of dx={dx}")
        if n + 1 < 5:
            raise ValueError(f"segment length {L} gives {n + 1} nodes; at least 5 are needed")
        nodes.append(n + 1)
    return nodes


def observation_positions(cfg):
    L = cfg.domain_length
    if cfg.observation.positions is not None:
        pos = np.asarray(cfg.observation.positions, dtype=float)
    else:
        s = cfg.observation.spacing
        pos = np.arange(0.0, L + 0.5 * s, s)
        pos = pos[pos <= L + 1e-9]
    cells = pos / cfg.grid.dx
    if np.any(np.abs(cells - np.round(cells)) > 1e-9 * np.maximum(1.0, cells)):
        raise ValueError("observation positions must be grid nodes")
    return np.round(cells) * cfg.grid.dx


def make_source(cfg):
    s = cfg.source
    return SourceSignal(s.kind, s.amplitude, s.center, s.width, s.frequency, s.phase)


def _bounds(cfg):
    b = cfg.high_contrast.bounds if cfg.kind == "high_contrast" else cfg.low_contrast.bounds
    return b.lower, b.upper


def make_simulation(cfg):
    lo, hi = _bounds(cfg)
    vmax = cfg.grid.max_speed or hi
    return SimulationConfig.from_courant(cfg.grid.dx, vmax, cfg.grid.t_end, courant=cfg.grid.courant,
                                         courant_limit=cfg.grid.courant_limit)


def true_speed_field(cfg, x):
    f = cfg.low_contrast.true_field
    return f.c_left + (f.c_right - f.c_left) / (1.0 + np.exp(-(np.asarray(x) - f.center) / f.width))


def _prior(cfg, d):
    lo, hi = _bounds(cfg)
    box = np.array([[lo**2, hi**2]] * d)
    mean = box.mean(axis=1)
    std = cfg.prior.std_fraction * (box[:, 1] - box[:, 0])
    return box, mean, np.diag(std**2)


def build_high_contrast(cfg):
    nodes = grid_nodes_per_segment(cfg)
    obs = observation_positions(cfg)
    src, sim = make_source(cfg), make_simulation(cfg)
    hc = cfg.high_contrast
    system = HighContrastSystem(hc.lengths, nodes, src, sim, obs)
    theta_true = np.asarray(hc.speeds_true, dtype=float) ** 2
    rng = np.random.default_rng(cfg.noise.seed)
    data, sigma, clean = synthetic_data(system, theta_true, cfg.noise.fraction, rng, backend=cfg.backend)
    box, mean, cov = _prior(cfg, theta_true.size)
    base = BayesModel(system, data, sigma, mean, cov, bounds=box, backend=cfg.backend)
    names = [f"c2_layer{i}" for i in range(theta_true.size)]
    return Problem("high_contrast", system, base, AffineModel(base), theta_true, data, clean, sigma, names)


def build_low_contrast(cfg, degree):
    (n,) = grid_nodes_per_segment(cfg)
    obs = observation_positions(cfg)
    src, sim = make_source(cfg), make_simulation(cfg)
    lc = cfg.low_contrast
    grid = lc.length / (n - 1) * np.arange(n)
    c2_true = true_speed_field(cfg, grid) ** 2
    truth_system = LowContrastSystem(lc.length, n, src, sim, obs)
    rng = np.random.default_rng(cfg.noise.seed)
    data, sigma, clean = synthetic_data(truth_system, c2_true, cfg.noise.fraction, rng, backend=cfg.backend)
    basis = BSplineBasis.uniform(lc.n_coeffs, degree, lc.length)
    B = basis.design_matrix(grid)
    system = LowContrastSystem(lc.length, n, src, sim, obs, basis=B)
    # least-squares projection of the true field onto the spline space (reference only)
    theta_ref = np.linalg.lstsq(B, c2_true, rcond=None)[0]
    box, mean, cov = _prior(cfg, basis.n)
    base = BayesModel(system, data, sigma, mean, cov, bounds=box, backend=cfg.backend)
    names = [f"theta_{j}" for j in range(basis.n)]
    return Problem("low_contrast", system, base, AffineModel(base), theta_ref, data, clean, sigma, names,
                   degree=degree, basis=basis, grid=grid, true_field=c2_true)


def build_problem(cfg, degree=None):
    if cfg.kind == "high_contrast":
        return build_high_contrast(cfg)
    return build_low_contrast(cfg, cfg.low_contrast.degrees[0] if degree is None else degree)


def loss_config(cfg, omega=None):
    g = cfg.sampler.gsvgd
    return LossConfig(
        omega=g.omega if omega is None else omega,
        xi=g.xi,
        epsilon=-np.inf if g.epsilon is None else g.epsilon,
        elbo_samples=g.elbo_samples,
        max_iters=g.max_iters,
        probes=g.probes,
        alpha_min_ratio=g.alpha_min_ratio,
        alpha_scale=g.alpha_scale,
    )


def run_sampler(problem, cfg, method=None, omega=None, seed=None, budget=None, callback=None):
    """Run one sampler in unit coordinates.

    Returns a dict with ``particles`` (squared speeds), ``trace`` (SVGD) or
    ``chain`` (RWM), ``forward_solves`` (solves spent by the sampler itself)
    and ``total_solves`` (including A-SVGD loss reporting).  A forward-solve ``budget``
    overrides the A-SVGD iteration count (two solves per particle per
    iteration) and the RWM chain length (one solve per step).
    """
    method = method or cfg.sampler.method
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    model = problem.model
    d = model.dim
    m = cfg.sampler.particles
    start = model.n_solves
    if method == "gsvgd":
        init = halton_init(m, d, np.array([[0.0, 1.0]] * d))
        P, trace = gsvgd_run(model, init, loss_config(cfg, omega), rng, workers=cfg.workers, callback=callback)
        out = {"particles": model.from_unit(P.particles), "trace": trace, "unit": P.particles}
    elif method == "asvgd":
        a = cfg.sampler.asvgd
        iters = a.iters if budget is None else max(int(budget) // (2 * m) - 1, 0)
        init = halton_init(m, d, np.array([[0.0, 1.0]] * d))
        P, trace = asvgd_run(model, init, AdamState(lr=a.lr), iters, rng,
                             loss_config=loss_config(cfg, omega), report_every=a.report_every,
                             workers=cfg.workers, callback=callback)
        out = {"particles": model.from_unit(P.particles), "trace": trace, "unit": P.particles}
    elif method == "rwm":
        r = cfg.sampler.rwm
        n = r.n_samples if budget is None else max(int(budget) - 1, 1)
        chain = rwm_sample(model, n, np.full(d, 0.5), r.proposal_scale, rng, adapt=r.adapt)
        out = {"particles": model.from_unit(chain.sampling()), "chain": chain, "unit": chain.sampling()}
    else:
        raise ValueError(f"unknown sampler {method!r}")
    out["total_solves"] = model.n_solves - start
    # A-SVGD loss reporting is diagnostic; its trace counts only the solves the update used
    out["forward_solves"] = (int(out["trace"].rows[-1]["forward_solves"]) if method == "asvgd"
                             else out["total_solves"])
    out["method"] = method
    return out


def predictive_bands(problem, theta_samples, quantiles=(0.05, 0.5, 0.95)):
    """Quantiles of ``c2(x)`` over posterior samples, one row per quantile."""
    fields = np.asarray(theta_samples) @ problem.basis.design_matrix(problem.grid).T
    return np.quantile(fields, quantiles, axis=0)


def thin(samples, m):
    """``m`` evenly spaced rows of ``samples`` (all rows if there are fewer)."""
    samples = np.asarray(samples)
    if samples.shape[0] <= m:
        return samples
    return samples[np.linspace(0, samples.shape[0] - 1, m).round().astype(int)]


def sample_losses(problem, cfg, unit_particles, omegas, seed=0):
    """Shared loss of one particle set at several ``omega`` values.

    The sup-norm and ELBO terms are computed once, with ELBO noise drawn from
    ``seed``, so every method is scored with the same random numbers.
    Returns ``{omega: {"loss", "sup_norm", "elbo"}}``.
    """
    X = np.asarray(unit_particles, dtype=float)
    model = problem.model
    base = loss_config(cfg, 0.5)
    noise = ElboNoise.draw(base.elbo_samples, X.shape[0], X.shape[1], np.random.default_rng(seed))
    with Evaluator(model, cfg.workers) as ev:
        terms = loss_terms(X, GaussianKDE.from_particles(X), model, base, noise=noise, evaluator=ev)
    return {float(w): {"loss": combine_loss(w, terms["sup_norm"], terms["elbo"]),
                       "sup_norm": terms["sup_norm"], "elbo": terms["elbo"]} for w in omegas}


def budget_comparison(cfg, seeds, omega=None, methods=("gsvgd", "asvgd", "rwm")):
    """Paired-seed loss of each sampler at the forward-solve budget G-SVGD used.

    For each seed G-SVGD runs first; A-SVGD and RWM then get the same budget.
    Every final sample (RWM thinned to ``cfg.sampler.particles`` states after
    adaptation) is scored with :func:`sample_losses` at ``omega``.
    Returns a list of row dicts.
    """
    omega = cfg.sampler.gsvgd.omega if omega is None else omega
    rows = []
    for seed in seeds:
        budget = None
        for method in methods:
            problem = build_problem(cfg)
            out = run_sampler(problem, cfg, method=method, omega=omega, seed=seed, budget=budget)
            if budget is None:
                budget = out["forward_solves"]
            X = thin(out["unit"], cfg.sampler.particles)
            score = sample_losses(problem, cfg, X, [omega], seed=seed)[float(omega)]
            rows.append({"seed": seed, "method": method, "omega": float(omega), "budget": int(budget),
                         "forward_solves": int(out["forward_solves"]), **score})
    return rows
