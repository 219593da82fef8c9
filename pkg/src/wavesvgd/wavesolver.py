"""1D wave propagation in layered (high-contrast) and smooth (low-contrast) media.

Both media are written as first-order systems ``w = [u, du/dt]`` and
advanced with classical RK4.  Spatial derivatives use the five-point
operators of :mod:`wavesvgd.stencil`.

High-contrast media are a chain of homogeneous layers.  Each layer carries a
rightward wave (driven at its left end, absorbing at its right end) and a
leftward wave (driven at its right end, absorbing at its left end).  The
drive at an interface is the reflection/transmission mix of the two waves
arriving there.  Drives are imposed as time derivatives of the boundary
node, so the coupling is exact inside every RK stage.

Low-contrast media use one field on one grid with
``d2u/dt2 = D5[c2] * D5[u] + c2 * L5[u]``.
"""
import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .stencil import MIN_NODES, build_derivative_matrix

__all__ = [
    "HomogeneousLayer",
    "LayeredMedium",
    "WaveState",
    "SourceKind",
    "SourceSignal",
    "SimulationConfig",
    "ObservationRecord",
    "StabilityError",
    "VelocityError",
    "reflection_transmission",
    "interface_sources",
    "step_homogeneous",
    "solve_high_contrast",
    "solve_low_contrast",
    "cosine_wave",
    "gaussian_wave",
    "wave_test_functions",
    "HighContrastSystem",
    "LowContrastSystem",
    "SCHEMES",
]

SCHEMES = ("five_point", "backward", "centered")


class StabilityError(ValueError):
    """Time step violates the configured Courant limit."""


class VelocityError(ValueError):
    """Nonpositive wave speed."""


# --------------------------------------------------------------------------
# domain types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class HomogeneousLayer:
    length: float
    speed_sq: float
    nodes: int

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError(f"layer length must be positive, got {self.length}")
        if not self.speed_sq > 0:
            raise VelocityError(f"speed_sq must be positive, got {self.speed_sq}")
        if self.nodes < MIN_NODES:
            raise ValueError(f"a layer needs at least {MIN_NODES} nodes, got {self.nodes}")

    @property
    def dx(self):
        return self.length / (self.nodes - 1)

    @property
    def speed(self):
        return float(np.sqrt(self.speed_sq))


@dataclass(frozen=True)
class LayeredMedium:
    """Contiguous layers; neighbouring layers share their boundary node position."""

    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("a medium needs at least one layer")

    @classmethod
    def from_arrays(cls, lengths, speed_sq, nodes):
        nodes = np.broadcast_to(nodes, np.shape(lengths))
        return cls(tuple(HomogeneousLayer(float(L), float(c2), int(n))
                         for L, c2, n in zip(lengths, speed_sq, nodes)))

    @property
    def starts(self):
        return np.concatenate([[0.0], np.cumsum([l.length for l in self.layers])[:-1]])

    @property
    def length(self):
        return float(sum(l.length for l in self.layers))

    def layer_grid(self, i):
        layer = self.layers[i]
        return self.starts[i] + layer.dx * np.arange(layer.nodes)

    def locate(self, x, tol=1e-9):
        """(layer index, local node) of grid position ``x``; interfaces go left."""
        starts = self.starts
        for i, layer in enumerate(self.layers):
            local = (x - starts[i]) / layer.dx
            j = int(round(local))
            if 0 <= j < layer.nodes and abs(local - j) <= tol * max(1.0, abs(local)):
                return i, j
        raise ValueError(f"position {x} is not a grid node of the medium")


@dataclass
class WaveState:
    u: np.ndarray
    ut: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.ut = np.asarray(self.ut, dtype=float)
        if self.u.shape != self.ut.shape:
            raise ValueError("u and ut must have the same shape")

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0.0)


class SourceKind(str, Enum):
    GAUSSIAN_PULSE = "gaussian_pulse"
    COSINE = "cosine"
    ZERO = "zero"


@dataclass(frozen=True)
class SourceSignal:
    """Boundary drive ``S(t)`` with analytic first and second derivatives.

    Gaussian pulse: ``A exp(-(t - t0)^2 / (2 w^2))``.
    Cosine: ``A cos(2 pi f t + phase)``.
    """

    kind: SourceKind = SourceKind.GAUSSIAN_PULSE
    amplitude: float = 1.0
    center: float = 1.0
    width: float = 0.25
    frequency: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", SourceKind(self.kind))
        if self.kind is SourceKind.GAUSSIAN_PULSE and not self.width > 0:
            raise ValueError("Gaussian pulse width must be positive")

    def evaluate(self, t, deriv=0):
        t = np.asarray(t, dtype=float)
        A = self.amplitude
        if self.kind is SourceKind.ZERO:
            return np.zeros_like(t)
        if self.kind is SourceKind.GAUSSIAN_PULSE:
            s = (t - self.center) / self.width
            g = A * np.exp(-0.5 * s * s)
            if deriv == 0:
                return g
            if deriv == 1:
                return -s / self.width * g
            if deriv == 2:
                return (s * s - 1.0) / self.width**2 * g
        else:
            w = 2.0 * np.pi * self.frequency
            arg = w * t + self.phase
            if deriv == 0:
                return A * np.cos(arg)
            if deriv == 1:
                return -A * w * np.sin(arg)
            if deriv == 2:
                return -A * w * w * np.cos(arg)
        raise ValueError(f"derivative order {deriv} not available")

    __call__ = evaluate

    def scaled(self, factor):
        return SourceSignal(self.kind, self.amplitude * factor, self.center, self.width,
                            self.frequency, self.phase)


@dataclass(frozen=True)
class SimulationConfig:
    dt: float
    t_end: float
    courant_limit: float = 0.5

    def __post_init__(self):
        if not (self.dt > 0 and self.t_end > 0 and self.courant_limit > 0):
            raise ValueError("dt, t_end and courant_limit must be positive")

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))

    @property
    def times(self):
        return self.dt * np.arange(self.n_steps + 1)

    @classmethod
    def from_courant(cls, dx, max_speed, t_end, courant=0.5, courant_limit=None):
        """dt giving Courant number ``courant`` at ``max_speed``.

        ``dt`` is shrunk slightly so that ``t_end`` is an integer number of steps.
        """
        dt = courant * dx / max_speed
        n = int(np.ceil(t_end / dt))
        return cls(dt=t_end / n, t_end=t_end,
                   courant_limit=courant if courant_limit is None else courant_limit)

    def check_cfl(self, speed, dx):
        number = float(np.max(np.asarray(speed) * self.dt / np.asarray(dx)))
        if number > self.courant_limit * (1 + 1e-12):
            raise StabilityError(
                f"Courant number {number:.4f} exceeds limit {self.courant_limit}")
        return number


@dataclass
class ObservationRecord:
    """Displacement ``values[node, time]`` at ``node_positions``."""

    node_positions: np.ndarray
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.node_positions = np.asarray(self.node_positions, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.node_positions.size, self.times.size):
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"({self.node_positions.size}, {self.times.size})")

    def to_csv(self, path, header_lines=()):
        path = Path(path)
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(["time"] + [f"x={x:.10g}" for x in self.node_positions])
            for k, t in enumerate(self.times):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in self.values[:, k]])

    @classmethod
    def from_csv(cls, path):
        rows = []
        with open(path, newline="") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        reader = csv.reader(lines)
        head = next(reader)
        nodes = [float(h.split("=", 1)[1]) for h in head[1:]]
        for row in reader:
            rows.append([float(v) for v in row])
        arr = np.array(rows).reshape(-1, len(nodes) + 1)
        return cls(np.array(nodes), arr[:, 0], arr[:, 1:].T)

    def relative_l2(self, other):
        return float(np.linalg.norm(self.values - other.values) / np.linalg.norm(other.values))


# --------------------------------------------------------------------------
# interface physics
# --------------------------------------------------------------------------

def reflection_transmission(c_i, c_j):
    """Reflection and transmission coefficients for a wave going from speed c_i to c_j."""
    if not (c_i > 0 and c_j > 0):
        raise VelocityError(f"wave speeds must be positive, got {c_i}, {c_j}")
    s = c_i + c_j
    return (c_j - c_i) / s, 2.0 * c_j / s


def interface_sources(u_r_left, u_l_right, R_ij, T_ij, R_ji, T_ji):
    """Drives at an interface from the two arriving waves.

    Returns ``(F_r, F_l)``: ``F_r`` drives the leftward wave of the left layer,
    ``F_l`` drives the rightward wave of the right layer.
    """
    F_r = R_ij * u_r_left + T_ji * u_l_right
    F_l = R_ji * u_l_right + T_ij * u_r_left
    return F_r, F_l


# --------------------------------------------------------------------------
# analytic travelling waves
# --------------------------------------------------------------------------

def cosine_wave(x, t=0.0, amplitude=1.0, k=1.0, omega=1.0, sign=-1, deriv=0):
    """``A cos(k x + sign * omega t)`` and its spatial derivatives."""
    arg = k * np.asarray(x, dtype=float) + sign * omega * t
    A = amplitude
    return {0: A * np.cos(arg), 1: -A * k * np.sin(arg), 2: -A * k * k * np.cos(arg),
            3: A * k**3 * np.sin(arg), 4: A * k**4 * np.cos(arg),
            5: -A * k**5 * np.sin(arg)}[deriv]


def gaussian_wave(x, t=0.0, sigma=1.0, c=1.0, sign=-1, deriv=0):
    """Normalised Gaussian ``exp(-(x + sign c t)^2 / 2 sigma^2) / (sqrt(2 pi) sigma)``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    z = (np.asarray(x, dtype=float) + sign * c * t) / sigma
    g = np.exp(-0.5 * z * z) / (np.sqrt(2 * np.pi) * sigma)
    # probabilists' Hermite polynomials: d^n/dz^n exp(-z^2/2) = (-1)^n He_n(z) exp(-z^2/2)
    he = np.polynomial.hermite_e.hermeval(z, [0] * deriv + [1])
    return (-1) ** deriv * he * g / sigma**deriv


def wave_test_functions(x, t=0.0, kind="cosine", deriv=0, **params):
    """Evaluate a cosine, Gaussian or summed test wave (or one of its x-derivatives)."""
    if kind == "cosine":
        return cosine_wave(x, t, deriv=deriv, **params)
    if kind == "gaussian":
        return gaussian_wave(x, t, deriv=deriv, **params)
    if kind == "sum":
        cos_p = {k: params[k] for k in ("amplitude", "k", "omega", "sign") if k in params}
        gau_p = {k: params[k] for k in ("sigma", "c", "sign") if k in params}
        if "x0" in params:
            x = np.asarray(x, dtype=float)
            gx = x - params["x0"]
        else:
            gx = x
        return cosine_wave(x, t, deriv=deriv, **cos_p) + gaussian_wave(gx, t, deriv=deriv, **gau_p)
    raise ValueError(f"unknown test wave kind {kind!r}")


# --------------------------------------------------------------------------
# linear system assembly
# --------------------------------------------------------------------------

class _Entries:
    """COO accumulator: ``value = coef * factor[fid] + lin @ theta``."""

    def __init__(self, n_params):
        self.rows, self.cols, self.coef, self.fid, self.lin = [], [], [], [], []
        self.n_params = n_params

    def add(self, row, col, coef, fid=0, lin=None):
        self.rows.append(row)
        self.cols.append(col)
        self.coef.append(coef)
        self.fid.append(fid)
        self.lin.append(lin)

    def finish(self, n_state):
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
        if dup.any():
            raise AssertionError("duplicate matrix entries during assembly")
        coef = np.asarray(self.coef, dtype=float)[order]
        fid = np.asarray(self.fid, dtype=np.int64)[order]
        lin = None
        if any(l is not None for l in self.lin):
            lin = np.zeros((len(self.lin), self.n_params))
            for e, l in enumerate(self.lin):
                if l is not None:
                    lin[e] = l
            lin = lin[order]
        indptr = np.zeros(n_state + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        indptr = np.cumsum(indptr)
        # transpose pattern + permutation so data_T = data[perm]
        tag = sp.csr_matrix((np.arange(1, rows.size + 1, dtype=float), cols, indptr),
                            shape=(n_state, n_state)).T.tocsr()
        tag.sort_indices()
        perm = tag.data.astype(np.int64) - 1
        return _Pattern(indptr, cols, rows, coef, fid, lin,
                        tag.indptr.astype(np.int64), tag.indices.astype(np.int64), perm)


@dataclass
class _Pattern:
    indptr: np.ndarray
    indices: np.ndarray
    rows: np.ndarray
    coef: np.ndarray
    fid: np.ndarray
    lin: object
    t_indptr: np.ndarray
    t_indices: np.ndarray
    perm: np.ndarray

    def values(self, fvals, theta):
        data = self.coef * fvals[self.fid]
        if self.lin is not None:
            data = data + self.lin @ theta
        return data

    def jacobian(self, fgrads):
        jac = self.coef[:, None] * fgrads[self.fid]
        if self.lin is not None:
            jac = jac + self.lin
        return jac


@dataclass
class _Run:
    obs: np.ndarray
    traj: np.ndarray
    final: np.ndarray
    data: np.ndarray


class _LinearWaveSystem:
    """Shared RK4 driver; subclasses assemble ``A(theta)``, sources and ``H``."""

    n_params: int
    times: np.ndarray

    def _setup(self, entries, n_state, src_rows, src_fns, obs_rows, obs_positions,
               init_rows, init_fns):
        self.n_state = n_state
        self.pattern = entries.finish(n_state)
        self.src_rows = np.asarray(src_rows, dtype=np.int64)
        t = self.config.times[:-1]
        dt = self.config.dt
        stage_t = np.stack([t, t + 0.5 * dt, t + dt], axis=1)
        self.src_vals = np.stack([fn(stage_t) for fn in src_fns], axis=-1) if src_fns else \
            np.zeros((t.size, 3, 0))
        obs_indptr = [0]
        obs_indices, obs_data = [], []
        for rows in obs_rows:
            obs_indices.extend(rows)
            obs_data.extend([1.0] * len(rows))
            obs_indptr.append(len(obs_indices))
        self.obs = (np.asarray(obs_indptr, dtype=np.int64), np.asarray(obs_indices, dtype=np.int64),
                    np.asarray(obs_data, dtype=float))
        self.obs_positions = np.asarray(obs_positions, dtype=float)
        self.x0 = np.zeros(n_state)
        for row, fn in zip(init_rows, init_fns):
            self.x0[row] = fn(0.0)

    @property
    def times(self):
        return self.config.times

    def _factors(self, theta):
        raise NotImplementedError

    def check(self, theta):
        raise NotImplementedError

    def _data(self, theta):
        theta = np.asarray(theta, dtype=float)
        self.check(theta)
        fvals, _ = self._factors(theta)
        return self.pattern.values(fvals, theta)

    def run(self, theta, store=False, backend=None):
        data = self._data(theta)
        p = self.pattern
        obs, traj, final = _kernels.rk4_forward(
            (p.indptr, p.indices, data), self.x0, self.config.dt, self.config.n_steps,
            self.src_rows, self.src_vals, self.obs, store=store, backend=backend)
        return _Run(obs, traj, final, data)

    def record(self, theta, backend=None):
        run = self.run(theta, backend=backend)
        return ObservationRecord(self.obs_positions, self.times, run.obs.T)

    def vjp(self, theta, dj_dy, run=None, backend=None):
        """Gradient of a scalar ``J(y)`` w.r.t. ``theta`` given ``dJ/dy`` (time x node)."""
        theta = np.asarray(theta, dtype=float)
        if run is None or run.traj.shape[0] == 0:
            run = self.run(theta, store=True, backend=backend)
        p = self.pattern
        g = _kernels.rk4_adjoint(
            (p.indptr, p.indices, run.data), (p.t_indptr, p.t_indices, run.data[p.perm]),
            run.traj, self.config.dt, self.src_rows, self.src_vals, self.obs, dj_dy,
            backend=backend)
        _, fgrads = self._factors(theta)
        return p.jacobian(fgrads).T @ g

    def dense_matrix(self, theta):
        data = self._data(theta)
        p = self.pattern
        return sp.csr_matrix((data, p.indices, p.indptr), shape=(self.n_state,) * 2).toarray()


def _boundary_rows(n, dx, scheme):
    """(cols, weights) of the outward first derivative at the left and right edges."""
    if scheme == "five_point":
        D = build_derivative_matrix(n, dx, 1)
        return D.row(0), D.row(n - 1)
    if scheme == "backward":
        w = np.array([-3.0, 4.0, -1.0]) / (2 * dx)
        return (np.arange(3), w), (np.arange(n - 3, n), -w[::-1])
    raise ValueError(scheme)


def _second_derivative_rows(n, dx, scheme):
    if scheme == "five_point":
        L = build_derivative_matrix(n, dx, 2)
        return [L.row(j) for j in range(n)]
    w = np.array([1.0, -2.0, 1.0]) / dx**2
    return [None] + [(np.arange(j - 1, j + 2), w) for j in range(1, n - 1)] + [None]


class HighContrastSystem(_LinearWaveSystem):
    """Layered medium with ``theta`` = per-layer squared speed.

    State layout: for layer ``i`` and wave ``d`` (0 rightward, 1 leftward)
    the block ``[u (n_i), v (n_i)]`` starts at ``offset[i, d]``.
    ``scheme`` other than ``"five_point"`` swaps in three-point operators and
    is only available for a single layer.
    """

    def __init__(self, lengths, nodes, source, config, obs_nodes, scheme="five_point"):
        if scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        lengths = np.atleast_1d(np.asarray(lengths, dtype=float))
        nodes = np.broadcast_to(np.atleast_1d(nodes), lengths.shape).astype(int)
        if scheme != "five_point" and lengths.size != 1:
            raise ValueError("three-point reference schemes support a single layer only")
        if np.any(nodes < MIN_NODES):
            raise ValueError(f"each layer needs at least {MIN_NODES} nodes")
        self.lengths, self.nodes = lengths, nodes
        self.dx = lengths / (nodes - 1)
        self.n_params = lengths.size
        self.source, self.config, self.scheme = source, config, scheme
        self.medium_template = LayeredMedium.from_arrays(lengths, np.ones_like(lengths), nodes)
        L = lengths.size
        offsets = np.zeros((L, 2), dtype=np.int64)
        pos = 0
        for i in range(L):
            for d in range(2):
                offsets[i, d] = pos
                pos += 2 * nodes[i]
        self.offsets = offsets
        n_state = pos

        # factor ids: 0 -> 1, 1+i -> theta_i, 1+L+i -> c_i, then per interface
        # (TR: T_ij c_i == T_ji c_j, Rji: R_ji c_j, Rij: R_ij c_i)
        self._fid_theta = 1 + np.arange(L)
        self._fid_c = 1 + L + np.arange(L)
        self._fid_if = 1 + 2 * L + 3 * np.arange(max(L - 1, 0))

        E = _Entries(L)
        for i in range(L):
            n, dx = nodes[i], self.dx[i]
            left, right = _boundary_rows(n, dx, scheme) if scheme != "centered" else (None, None)
            second = _second_derivative_rows(n, dx, scheme)
            for d in range(2):
                ou, ov = offsets[i, d], offsets[i, d] + n
                for j in range(1, n - 1):
                    E.add(ou + j, ov + j, 1.0)
                    cols, w = second[j]
                    for c, wk in zip(cols, w):
                        E.add(ov + j, ou + c, wk, self._fid_theta[i])
                # absorbing end: rightward wave -> right end, leftward -> left end
                if d == 0:
                    end = n - 1
                    if scheme == "centered":
                        E.add(ou + end, ov + end, 1.0)
                        E.add(ov + end, ou + end - 1, 2.0 / dx**2, self._fid_theta[i])
                        E.add(ov + end, ou + end, -2.0 / dx**2, self._fid_theta[i])
                        E.add(ov + end, ov + end, -2.0 / dx, self._fid_c[i])
                    else:
                        cols, w = right
                        for c, wk in zip(cols, w):
                            E.add(ou + end, ou + c, -wk, self._fid_c[i])
                            E.add(ov + end, ov + c, -wk, self._fid_c[i])
                else:
                    end = 0
                    if scheme == "centered":
                        E.add(ou, ov, 1.0)
                        E.add(ov, ou + 1, 2.0 / dx**2, self._fid_theta[i])
                        E.add(ov, ou, -2.0 / dx**2, self._fid_theta[i])
                        E.add(ov, ov, -2.0 / dx, self._fid_c[i])
                    else:
                        cols, w = left
                        for c, wk in zip(cols, w):
                            E.add(ou, ou + c, wk, self._fid_c[i])
                            E.add(ov, ov + c, wk, self._fid_c[i])

        # interface drives
        for i in range(L - 1):
            j = i + 1
            f_tr, f_rji, f_rij = self._fid_if[i], self._fid_if[i] + 1, self._fid_if[i] + 2
            Di = build_derivative_matrix(nodes[i], self.dx[i], 1)
            Dj = build_derivative_matrix(nodes[j], self.dx[j], 1)
            ci_cols, ci_w = Di.row(nodes[i] - 1)
            cj_cols, cj_w = Dj.row(0)
            for blk in (0, 1):  # u rows then v rows
                ir = offsets[i, 0] + blk * nodes[i]      # layer i rightward
                jl = offsets[j, 1] + blk * nodes[j]      # layer j leftward
                # rightward wave of layer j, node 0:
                #   T_ij * (-c_i D5 u_ir)_end + R_ji * (c_j D5 u_jl)_0
                row = offsets[j, 0] + blk * nodes[j]
                for c, wk in zip(ci_cols, ci_w):
                    E.add(row, ir + c, -wk, f_tr)
                for c, wk in zip(cj_cols, cj_w):
                    E.add(row, jl + c, wk, f_rji)
                # leftward wave of layer i, last node:
                #   R_ij * (-c_i D5 u_ir)_end + T_ji * (c_j D5 u_jl)_0
                row = offsets[i, 1] + blk * nodes[i] + nodes[i] - 1
                for c, wk in zip(ci_cols, ci_w):
                    E.add(row, ir + c, -wk, f_rij)
                for c, wk in zip(cj_cols, cj_w):
                    E.add(row, jl + c, wk, f_tr)

        src = source
        src_rows = [offsets[0, 0], offsets[0, 0] + nodes[0]]
        src_fns = [lambda t: src(t, 1), lambda t: src(t, 2)]
        init_fns = [lambda t: src(t, 0), lambda t: src(t, 1)]
        obs_rows = []
        for x in np.atleast_1d(obs_nodes):
            li, lj = self.medium_template.locate(float(x))
            obs_rows.append([offsets[li, 0] + lj, offsets[li, 1] + lj])
        self._setup(E, n_state, src_rows, src_fns, obs_rows, np.atleast_1d(obs_nodes),
                    src_rows, init_fns)

    def check(self, theta):
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {theta.shape}")
        bad = np.flatnonzero(~(theta > 0))
        if bad.size:
            raise VelocityError(f"nonpositive speed_sq in layer {bad[0]}: {theta[bad[0]]}")
        self.config.check_cfl(np.sqrt(theta), self.dx)

    def _factors(self, theta):
        L = self.n_params
        c = np.sqrt(theta)
        nf = 1 + 2 * L + 3 * (L - 1)
        fv = np.zeros(nf)
        fg = np.zeros((nf, L))
        fv[0] = 1.0
        fv[self._fid_theta] = theta
        fg[self._fid_theta, np.arange(L)] = 1.0
        fv[self._fid_c] = c
        fg[self._fid_c, np.arange(L)] = 0.5 / c
        for i in range(L - 1):
            j = i + 1
            ci, cj = c[i], c[j]
            s = ci + cj
            k = self._fid_if[i]
            # d/dc then chain rule dc/dtheta = 1/(2c)
            fv[k] = 2 * ci * cj / s
            fg[k, i], fg[k, j] = 2 * cj**2 / s**2, 2 * ci**2 / s**2
            fv[k + 1] = (ci - cj) * cj / s
            fg[k + 1, i], fg[k + 1, j] = 2 * cj**2 / s**2, (ci**2 - 2 * ci * cj - cj**2) / s**2
            fv[k + 2] = (cj - ci) * ci / s
            fg[k + 2, i], fg[k + 2, j] = (cj**2 - 2 * ci * cj - ci**2) / s**2, 2 * ci**2 / s**2
            fg[k:k + 3, i] *= 0.5 / ci
            fg[k:k + 3, j] *= 0.5 / cj
        return fv, fg

    def split_state(self, w):
        """Per-layer list of ``(rightward WaveState, leftward WaveState)``."""
        out = []
        t = self.config.t_end
        for i, n in enumerate(self.nodes):
            pair = []
            for d in range(2):
                o = self.offsets[i, d]
                pair.append(WaveState(w[o:o + n].copy(), w[o + n:o + 2 * n].copy(), t))
            out.append(tuple(pair))
        return out

    def total_field(self, w):
        """Superposed displacement ``u_r + u_l`` for every layer."""
        return [r.u + l.u for r, l in self.split_state(w)]


class LowContrastSystem(_LinearWaveSystem):
    """Smooth medium on one grid with ``c2 = basis @ theta``.

    ``basis`` maps parameters to squared speed at the grid nodes; ``None``
    means ``theta`` are the nodal samples themselves.
    """

    def __init__(self, length, nodes, source, config, obs_nodes, basis=None):
        if nodes < MIN_NODES:
            raise ValueError(f"need at least {MIN_NODES} nodes")
        self.length, self.nodes = float(length), int(nodes)
        self.dx = self.length / (self.nodes - 1)
        self.grid = self.dx * np.arange(self.nodes)
        self.basis = np.eye(self.nodes) if basis is None else np.asarray(basis, dtype=float)
        if self.basis.shape[0] != self.nodes:
            raise ValueError("basis must have one row per grid node")
        self.n_params = self.basis.shape[1]
        self.source, self.config = source, config
        n = self.nodes
        D = build_derivative_matrix(n, self.dx, 1)
        Lop = build_derivative_matrix(n, self.dx, 2)
        DB = D.apply(self.basis)   # d(c2)/dx at nodes as a linear map of theta
        E = _Entries(self.n_params)
        ou, ov = 0, n
        for j in range(1, n - 1):
            E.add(ou + j, ov + j, 1.0)
            cols, wd = D.row(j)
            cols2, wl = Lop.row(j)
            assert np.array_equal(cols, cols2)
            for c, a, b in zip(cols, wd, wl):
                E.add(ov + j, ou + c, 0.0, 0, lin=a * DB[j] + b * self.basis[j])
        cols, w = D.row(n - 1)
        for c, wk in zip(cols, w):
            E.add(ou + n - 1, ou + c, -wk, 1)
            E.add(ov + n - 1, ov + c, -wk, 1)
        src = source
        src_rows = [0, n]
        obs_rows = []
        for x in np.atleast_1d(obs_nodes):
            local = x / self.dx
            j = int(round(local))
            if not (0 <= j < n and abs(local - j) <= 1e-9 * max(1.0, local)):
                raise ValueError(f"position {x} is not a grid node")
            obs_rows.append([j])
        self._setup(E, 2 * n, src_rows, [lambda t: src(t, 1), lambda t: src(t, 2)],
                    obs_rows, np.atleast_1d(obs_nodes), src_rows,
                    [lambda t: src(t, 0), lambda t: src(t, 1)])

    def speed_sq(self, theta):
        return self.basis @ np.asarray(theta, dtype=float)

    def check(self, theta):
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {theta.shape}")
        c2 = self.speed_sq(theta)
        bad = np.flatnonzero(~(c2 > 0))
        if bad.size:
            raise VelocityError(
                f"nonpositive squared speed {c2[bad[0]]:.6g} at node {bad[0]} (x={self.grid[bad[0]]:.6g})")
        self.config.check_cfl(np.sqrt(c2), self.dx)

    def _factors(self, theta):
        c2_end = self.basis[-1] @ theta
        c_end = np.sqrt(c2_end)
        fv = np.array([1.0, c_end])
        fg = np.zeros((2, self.n_params))
        fg[1] = 0.5 * self.basis[-1] / c_end
        return fv, fg

    def field(self, w):
        return WaveState(w[:self.nodes].copy(), w[self.nodes:].copy(), self.config.t_end)


# --------------------------------------------------------------------------
# public solvers
# --------------------------------------------------------------------------

def solve_high_contrast(medium, source_left, config, obs_nodes, scheme="five_point",
                        return_final=False, backend=None):
    """Observation record of a layered medium driven from the left.

    With ``return_final=True`` also returns the per-layer total displacement at
    ``t_end``.
    """
    system = HighContrastSystem([l.length for l in medium.layers], [l.nodes for l in medium.layers],
                                source_left, config, obs_nodes, scheme=scheme)
    theta = np.array([l.speed_sq for l in medium.layers])
    run = system.run(theta, backend=backend)
    rec = ObservationRecord(system.obs_positions, system.times, run.obs.T)
    if return_final:
        return rec, system.total_field(run.final)
    return rec


def solve_low_contrast(velocity, length, nodes, source_left, config, obs_nodes,
                       return_final=False, backend=None):
    """Observation record of a smooth medium.

    ``velocity`` is either a callable ``c2(x)`` or an array of nodal samples.
    """
    grid = length / (nodes - 1) * np.arange(nodes)
    c2 = velocity(grid) if callable(velocity) else np.asarray(velocity, dtype=float)
    c2 = np.broadcast_to(c2, grid.shape).astype(float)
    system = LowContrastSystem(length, nodes, source_left, config, obs_nodes)
    run = system.run(c2, backend=backend)
    rec = ObservationRecord(system.obs_positions, system.times, run.obs.T)
    if return_final:
        return rec, run.final[:nodes].copy()
    return rec


def step_homogeneous(state, layer, direction, boundary, dt, scheme="five_point"):
    """Advance one wave in one homogeneous layer by a single RK4 step.

    ``boundary`` drives the node opposite the absorbing end: a
    :class:`SourceSignal` (or any object with ``evaluate(t, deriv)``).
    ``direction`` is ``"rightward"`` (driven at x=0) or ``"leftward"`` (driven
    at x=L).
    """
    if direction not in ("rightward", "leftward"):
        raise ValueError("direction must be 'rightward' or 'leftward'")
    n = layer.nodes
    if state.u.shape != (n,):
        raise ValueError("state does not match the layer grid")
    t0 = state.time
    cfg = SimulationConfig(dt=dt, t_end=dt, courant_limit=np.inf)
    cfg.check_cfl(layer.speed, layer.dx)

    class _Shifted:
        def evaluate(self, t, deriv=0):
            return boundary.evaluate(np.asarray(t) + t0, deriv)
        __call__ = evaluate

    u, ut = state.u, state.ut
    if direction == "leftward":
        u, ut = u[::-1], ut[::-1]
    system = HighContrastSystem([layer.length], [n], _Shifted(), cfg, [0.0], scheme=scheme)
    x0 = np.zeros(system.n_state)
    o = system.offsets[0, 0]
    x0[o:o + n] = u
    x0[o + n:o + 2 * n] = ut
    data = system._data(np.array([layer.speed_sq]))
    p = system.pattern
    _, _, w = _kernels.rk4_forward((p.indptr, p.indices, data), x0, dt, 1, system.src_rows,
                                   system.src_vals, system.obs)
    u_new, ut_new = w[o:o + n], w[o + n:o + 2 * n]
    if direction == "leftward":
        u_new, ut_new = u_new[::-1], ut_new[::-1]
    return WaveState(u_new.copy(), ut_new.copy(), t0 + dt)
