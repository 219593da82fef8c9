"""Five-point finite-difference coefficients, banded operators and error bounds.

Coefficients come from the Taylor system ``A(phi) alpha = f^(n)`` where row
``r`` of ``A`` holds ``offset_j ** r`` and ``f^(n)`` is ``n!/dx**n`` in row
``n``.  Each stencil position (two per edge plus the centred one) has its own
offsets; see :class:`StencilPosition`.
"""
from dataclasses import dataclass
from enum import Enum
from math import factorial

import numpy as np
import scipy.sparse as sp

__all__ = [
    "StencilPosition",
    "FivePointCoefficients",
    "DerivativeMatrix",
    "DomainTooSmallError",
    "solve_stencil_system",
    "solve_all_orders",
    "build_derivative_matrix",
    "remainder_bound",
    "min_resolution",
]

MIN_NODES = 5
RESIDUAL_TOL = 1e-12


class DomainTooSmallError(ValueError):
    pass


class StencilPosition(Enum):
    LEFT_EDGE = "left_edge"
    LEFT_INNER = "left_inner"
    INTERIOR = "interior"
    RIGHT_INNER = "right_inner"
    RIGHT_EDGE = "right_edge"

    @property
    def offsets(self):
        return _OFFSETS[self]

    @property
    def span(self):
        """Distance (in cells) from the evaluation node to the far stencil end."""
        return max(abs(o) for o in self.offsets)

    @property
    def center_index(self):
        return self.offsets.index(0)


_OFFSETS = {
    StencilPosition.LEFT_EDGE: (0, 1, 2, 3, 4),
    StencilPosition.LEFT_INNER: (-1, 0, 1, 2, 3),
    StencilPosition.INTERIOR: (-2, -1, 0, 1, 2),
    StencilPosition.RIGHT_INNER: (-3, -2, -1, 0, 1),
    StencilPosition.RIGHT_EDGE: (-4, -3, -2, -1, 0),
}


@dataclass(frozen=True)
class FivePointCoefficients:
    position: StencilPosition
    order: int
    alpha: np.ndarray
    dx: float

    def apply(self, samples):
        """Weighted sum of five samples taken at ``position.offsets``."""
        return float(np.dot(self.alpha, samples))

    def off_center_abs_sum(self):
        mask = np.ones(5, dtype=bool)
        mask[self.position.center_index] = False
        return float(np.abs(self.alpha[mask]).sum())


def _check_order(order):
    if not (isinstance(order, (int, np.integer)) and 1 <= order <= 4):
        raise ValueError(f"derivative order must be an integer in [1, 4], got {order!r}")


def taylor_matrix(position):
    offs = np.asarray(position.offsets, dtype=float)
    return np.vander(offs, 5, increasing=True).T


def solve_stencil_system(position, dx, order):
    """Solve the 5x5 Taylor system for one stencil position and derivative order."""
    _check_order(order)
    if not dx > 0:
        raise ValueError(f"dx must be positive, got {dx!r}")
    A = taylor_matrix(position)
    rhs = np.zeros(5)
    rhs[order] = factorial(order) / dx**order
    alpha = np.linalg.solve(A, rhs)
    resid = np.max(np.abs(A @ alpha - rhs)) / np.max(np.abs(rhs))
    if resid > RESIDUAL_TOL:
        raise np.linalg.LinAlgError(
            f"stencil system for {position.name}, order {order} left residual {resid:.3e}"
        )
    return FivePointCoefficients(position=position, order=order, alpha=alpha, dx=float(dx))


def solve_all_orders(position, dx):
    """Orders 1..4 at once, keyed by order."""
    return {n: solve_stencil_system(position, dx, n) for n in range(1, 5)}


def _row_position(i, n):
    if i == 0:
        return StencilPosition.LEFT_EDGE
    if i == 1:
        return StencilPosition.LEFT_INNER
    if i == n - 1:
        return StencilPosition.RIGHT_EDGE
    if i == n - 2:
        return StencilPosition.RIGHT_INNER
    return StencilPosition.INTERIOR


@dataclass(frozen=True)
class DerivativeMatrix:
    """Banded five-point derivative operator on ``size`` uniformly spaced nodes.

    ``bands[i]`` are the five weights of row ``i`` and ``starts[i]`` the column
    of the first weight.
    """

    order: int
    size: int
    dx: float
    bands: np.ndarray
    starts: np.ndarray

    def apply(self, f):
        f = np.asarray(f)
        if f.shape[0] != self.size:
            raise ValueError(f"expected {self.size} samples, got {f.shape[0]}")
        idx = self.starts[:, None] + np.arange(5)[None, :]
        return np.einsum("ij,ij...->i...", self.bands, f[idx])

    __matmul__ = apply

    def row(self, i):
        """(columns, weights) of row ``i``."""
        return self.starts[i] + np.arange(5), self.bands[i]

    def tocsr(self):
        rows = np.repeat(np.arange(self.size), 5)
        cols = (self.starts[:, None] + np.arange(5)[None, :]).ravel()
        return sp.csr_matrix((self.bands.ravel(), (rows, cols)), shape=(self.size, self.size))

    def todense(self):
        return self.tocsr().toarray()


def build_derivative_matrix(n_nodes, dx, order):
    """Assemble the banded order-``order`` operator on ``n_nodes`` nodes.

    Rows 0 and 1 use the left one-sided stencils, the last two rows the right
    ones, everything else the centred stencil.
    """
    _check_order(order)
    if n_nodes < MIN_NODES:
        raise DomainTooSmallError(f"need at least {MIN_NODES} nodes, got {n_nodes}")
    coeffs = {p: solve_stencil_system(p, dx, order).alpha for p in StencilPosition}
    bands = np.empty((n_nodes, 5))
    starts = np.empty(n_nodes, dtype=np.int64)
    for i in range(n_nodes):
        pos = _row_position(i, n_nodes)
        bands[i] = coeffs[pos]
        starts[i] = i + pos.offsets[0]
    return DerivativeMatrix(order=order, size=n_nodes, dx=float(dx), bands=bands, starts=starts)


def remainder_bound(coeffs, dx, f5_bound):
    """Lagrange-remainder bound on the truncation error of one stencil.

    ``|f5| (s dx)^5 / 5! * sum |alpha_j|`` over the four off-centre weights,
    with ``s`` the stencil span (2 centred, 3 inner, 4 edge).
    """
    if f5_bound < 0:
        raise ValueError("f5_bound must be nonnegative")
    s = coeffs.position.span
    return f5_bound * (s * dx) ** 5 / 120.0 * coeffs.off_center_abs_sum()


def min_resolution(epsilon, f5_bound, coeffs):
    """Largest grid spacing whose remainder bound does not exceed ``epsilon``."""
    if not (epsilon > 0 and f5_bound > 0):
        raise ValueError("epsilon and f5_bound must be positive")
    s = coeffs.position.span
    return (120.0 * epsilon / (f5_bound * coeffs.off_center_abs_sum())) ** 0.2 / s
