"""Particle variational inference: Stein direction, KDE/ELBO, greedy and ADAM SVGD."""
from .halton import halton_init, halton_points, radical_inverse, star_discrepancy
from .stein import ParticleSet, RBFKernel, median_bandwidth, stein_direction
from .svgd import (
    AdamState,
    Evaluator,
    GradientFailure,
    LineSearchFailure,
    LossConfig,
    Trace,
    adam_update,
    asvgd_run,
    combine_loss,
    gsvgd_run,
    line_search_alpha,
    loss,
    loss_terms,
)
from .trace import read_trace_csv, write_trace_csv, write_trace_json
from .variational import (
    ElboNoise,
    GaussianKDE,
    elbo_estimate,
    gaussian_kl,
    kde_density,
    kde_moments,
    marginal_modes,
    scott_bandwidth,
)
