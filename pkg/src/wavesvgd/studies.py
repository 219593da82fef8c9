"""Forward-model validation studies.

``derivative_study`` measures the five-point derivative error on the cosine,
Gaussian and summed test waves as the grid is refined.  Resolution is counted
in points per wavelength (ppw); the Gaussian of width ``sigma`` is assigned the
wavelength ``2 pi sigma``.

``boundary_study`` propagates a Gaussian pulse through a homogeneous bar and
out of its absorbing end with each boundary scheme, and compares the record
with the exact travelling wave ``S(t - x / c)``.
"""
from dataclasses import dataclass

import numpy as np

from .stencil import build_derivative_matrix
from .wavesolver import SCHEMES, LayeredMedium, SimulationConfig, SourceSignal, solve_high_contrast, wave_test_functions

__all__ = [
    "DEFAULT_PPW",
    "DEFAULT_BOUNDARY_PPW",
    "DerivativeResult",
    "derivative_errors",
    "derivative_study",
    "convergence_order",
    "min_ppw",
    "BoundaryResult",
    "boundary_errors",
    "boundary_study",
]

DEFAULT_PPW = (8, 12, 16, 24, 32, 35, 48, 49, 55, 64)
DEFAULT_BOUNDARY_PPW = (4, 6, 8, 12, 16, 24, 32, 48, 64)
WAVE_KINDS = ("cosine", "gaussian", "sum")


def _wave_params(kind, wavelength):
    k = 2 * np.pi / wavelength
    sigma = wavelength / (2 * np.pi)
    params = {"cosine": {"k": k}, "gaussian": {"sigma": sigma}, "sum": {"k": k, "sigma": sigma}}
    if kind not in params:
        raise ValueError(f"unknown wave kind {kind!r}; expected one of {WAVE_KINDS}")
    return params[kind]


@dataclass
class DerivativeResult:
    kind: str
    order: int
    ppw: np.ndarray
    error: np.ndarray
    interior_error: np.ndarray

    @property
    def interior_order(self):
        return convergence_order(self.ppw, self.interior_error)

    def rows(self):
        return [[self.kind, self.order, int(p), float(e), float(ei)]
                for p, e, ei in zip(self.ppw, self.error, self.interior_error)]


def derivative_errors(kind, order, ppw, wavelength=1.0, span=2.0):
    """Relative L2 errors (all nodes, interior nodes) on ``[-span/2, span/2]`` wavelengths."""
    dx = wavelength / ppw
    n = int(round(span * wavelength / dx)) + 1
    x = -0.5 * span * wavelength + dx * np.arange(n)
    params = _wave_params(kind, wavelength)
    f = wave_test_functions(x, 0.0, kind, 0, **params)
    exact = wave_test_functions(x, 0.0, kind, order, **params)
    approx = build_derivative_matrix(n, dx, order).apply(f)
    err = approx - exact
    inner = slice(2, n - 2)
    return (float(np.linalg.norm(err) / np.linalg.norm(exact)),
            float(np.linalg.norm(err[inner]) / np.linalg.norm(exact[inner])))


def derivative_study(ppw=DEFAULT_PPW, kinds=WAVE_KINDS, orders=(1, 2), wavelength=1.0):
    out = []
    ppw = np.asarray(ppw, dtype=int)
    for kind in kinds:
        for order in orders:
            errs = np.array([derivative_errors(kind, order, p, wavelength) for p in ppw])
            out.append(DerivativeResult(kind, order, ppw, errs[:, 0], errs[:, 1]))
    return out


def convergence_order(ppw, error):
    """Slope of ``-log(error)`` against ``log(ppw)`` by least squares."""
    slope = np.polyfit(np.log(np.asarray(ppw, dtype=float)), np.log(np.asarray(error)), 1)[0]
    return float(-slope)


def min_ppw(ppw, error, tol):
    """Smallest resolution from which the error stays at or below ``tol`` (None if never)."""
    ppw, error = np.asarray(ppw), np.asarray(error)
    order = np.argsort(ppw)
    ppw, error = ppw[order], error[order]
    ok = error <= tol
    for i in range(ppw.size):
        if ok[i:].all():
            return int(ppw[i])
    return None


@dataclass
class BoundaryResult:
    scheme: str
    ppw: np.ndarray
    error: np.ndarray
    residual: np.ndarray

    def rows(self):
        return [[self.scheme, int(p), float(e), float(r)] for p, e, r in zip(self.ppw, self.error, self.residual)]


def boundary_errors(scheme, ppw, speed=1.0, width=0.15, length=2.0, tail=2.0, backend=None):
    """Record error against ``S(t - x / c)`` and post-exit residual for one scheme.

    Observations sit at the driven end, the middle and the absorbing end.
    The residual is the largest ``|u|`` anywhere in the bar at ``t_end``,
    relative to the pulse peak, once the pulse has left.
    """
    wavelength = 2 * np.pi * width * speed
    n = int(np.ceil(length * ppw / wavelength)) + 1
    dx = length / (n - 1)
    src = SourceSignal("gaussian_pulse", 1.0, 4 * width, width)
    cfg = SimulationConfig.from_courant(dx, speed, t_end=length / speed + 8 * width + tail)
    obs = np.array([0.0, dx * ((n - 1) // 2), length])
    medium = LayeredMedium.from_arrays([length], [speed**2], [n])
    rec, final = solve_high_contrast(medium, src, cfg, obs, scheme=scheme, return_final=True, backend=backend)
    exact = np.array([src(rec.times - x / speed) for x in rec.node_positions])
    err = np.linalg.norm(rec.values - exact) / np.linalg.norm(exact)
    residual = np.max(np.abs(np.concatenate(final))) / np.max(np.abs(exact))
    return float(err), float(residual)


def boundary_study(ppw=DEFAULT_BOUNDARY_PPW, schemes=SCHEMES, **kw):
    out = []
    ppw = np.asarray(ppw, dtype=int)
    for scheme in schemes:
        vals = np.array([boundary_errors(scheme, p, **kw) for p in ppw])
        out.append(BoundaryResult(scheme, ppw, vals[:, 0], vals[:, 1]))
    return out
