"""B-spline parameterisation of the squared wave speed ``c2(x) = sum_j theta_j B_j(x)``.

Basis functions follow the Cox-de Boor recursion on clamped uniform knots.
The last nonempty knot interval is closed so the field is defined at ``x = L``.
"""
from dataclasses import dataclass

import numpy as np

from .wavesolver import VelocityError

__all__ = [
    "BSplineBasis",
    "VelocityField",
    "clamped_uniform_knots",
    "basis_value",
    "evaluate_field",
]


def clamped_uniform_knots(n, degree, length):
    """``n + degree + 1`` knots on ``[0, length]`` with both ends repeated ``degree + 1`` times."""
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    if n < degree + 1:
        raise ValueError(f"need n >= degree + 1 basis functions, got n={n}, degree={degree}")
    if not length > 0:
        raise ValueError("length must be positive")
    inner = np.linspace(0.0, length, n - degree + 1)
    return np.concatenate([np.zeros(degree), inner, np.full(degree, float(length))])


def _last_interval(knots):
    """Index ``i`` of the last knot interval with positive width."""
    widths = np.diff(knots)
    return int(np.flatnonzero(widths > 0)[-1])


def _degree_zero(i, x, knots, last):
    lo, hi = knots[i], knots[i + 1]
    inside = (lo <= x) & (x < hi)
    if i == last:
        inside = inside | (x == hi)
    return inside.astype(float)


def basis_value(i, k, x, knots):
    """Cox-de Boor value of ``B_{i,k}`` at ``x`` (scalar or array); 0/0 terms count as 0."""
    knots = np.asarray(knots, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(np.diff(knots) < 0):
        raise ValueError("knots must be nondecreasing")
    last = _last_interval(knots)

    def rec(i, k):
        if k == 0:
            return _degree_zero(i, x, knots, last)
        out = np.zeros_like(x)
        d1 = knots[i + k] - knots[i]
        if d1 > 0:
            out = out + (x - knots[i]) / d1 * rec(i, k - 1)
        d2 = knots[i + k + 1] - knots[i + 1]
        if d2 > 0:
            out = out + (knots[i + k + 1] - x) / d2 * rec(i + 1, k - 1)
        return out

    val = rec(i, k)
    return float(val) if val.ndim == 0 else val


@dataclass(frozen=True)
class BSplineBasis:
    degree: int
    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        if self.degree < 0:
            raise ValueError("degree must be nonnegative")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be nondecreasing")
        if self.n < self.degree + 1:
            raise ValueError("too few knots for the requested degree")

    @classmethod
    def uniform(cls, n, degree, length):
        return cls(degree, clamped_uniform_knots(n, degree, length))

    @property
    def n(self):
        return self.knots.size - self.degree - 1

    @property
    def domain(self):
        return float(self.knots[0]), float(self.knots[-1])

    def design_matrix(self, x):
        """``Phi[p, j] = B_{j,k}(x_p)`` via a bottom-up (vectorised) recursion."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        t, k = self.knots, self.degree
        last = _last_interval(t)
        m = t.size - 1
        B = np.stack([_degree_zero(i, x, t, last) for i in range(m)], axis=1)
        for q in range(1, k + 1):
            nb = m - q
            new = np.zeros((x.size, nb))
            for i in range(nb):
                d1 = t[i + q] - t[i]
                d2 = t[i + q + 1] - t[i + 1]
                if d1 > 0:
                    new[:, i] += (x - t[i]) / d1 * B[:, i]
                if d2 > 0:
                    new[:, i] += (t[i + q + 1] - x) / d2 * B[:, i + 1]
            B = new
        return B

    __call__ = design_matrix


@dataclass(frozen=True)
class VelocityField:
    basis: BSplineBasis
    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        object.__setattr__(self, "theta", theta)
        if theta.shape != (self.basis.n,):
            raise ValueError(f"expected {self.basis.n} coefficients, got shape {theta.shape}")

    def __call__(self, x):
        return self.basis.design_matrix(x) @ self.theta


def evaluate_field(field, grid):
    """Squared-speed samples on ``grid``; raises on any nonpositive sample."""
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    lo, hi = field.basis.domain
    if grid.min() < lo - 1e-12 or grid.max() > hi + 1e-12:
        raise ValueError(f"grid leaves the spline domain [{lo}, {hi}]")
    c2 = field(grid)
    bad = np.flatnonzero(~(c2 > 0))
    if bad.size:
        j = bad[0]
        raise VelocityError(f"nonpositive squared speed {c2[j]:.6g} at node {j} (x={grid[j]:.6g})")
    return c2
