"""RK4 time stepping of ``dw/dt = A w + b(t)`` and its discrete adjoint.

``A`` is CSR (``indptr``, ``indices``, ``data``).  The source is
``b(t) = sum_s e_{src_rows[s]} g_s(t)`` with ``src_vals[n, k, s]`` holding
``g_s`` at ``t_n``, ``t_n + dt/2`` and ``t_n + dt`` (``k = 0, 1, 2``).
Observations are ``y_n = H w_n`` with ``H`` also in CSR form.

Two interchangeable backends exist: explicit loops compiled with numba and
a scipy.sparse path.  :func:`rk4_forward` / :func:`rk4_adjoint` dispatch on
:func:`wavesvgd._accel.numba_enabled` unless a backend is forced.
"""
import numpy as np
import scipy.sparse as sp

from ._accel import njit, numba_enabled


# --------------------------------------------------------------------------
# numba backend
# --------------------------------------------------------------------------

@njit
def _csr_matvec(indptr, indices, data, x, out):
    n = indptr.shape[0] - 1
    for i in range(n):
        acc = 0.0
        for e in range(indptr[i], indptr[i + 1]):
            acc += data[e] * x[indices[e]]
        out[i] = acc


@njit
def _add_source(out, src_rows, vals):
    for s in range(src_rows.shape[0]):
        out[src_rows[s]] += vals[s]


@njit
def _observe(obs_indptr, obs_indices, obs_data, w, out):
    for i in range(obs_indptr.shape[0] - 1):
        acc = 0.0
        for e in range(obs_indptr[i], obs_indptr[i + 1]):
            acc += obs_data[e] * w[obs_indices[e]]
        out[i] = acc


@njit
def _forward_nb(indptr, indices, data, x0, dt, n_steps, src_rows, src_vals,
                obs_indptr, obs_indices, obs_data, store):
    n = x0.shape[0]
    n_obs = obs_indptr.shape[0] - 1
    obs = np.empty((n_steps + 1, n_obs))
    if store:
        traj = np.empty((n_steps + 1, n))
    else:
        traj = np.empty((0, n))
    w = x0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    s = np.empty(n)
    h2 = 0.5 * dt
    h6 = dt / 6.0
    _observe(obs_indptr, obs_indices, obs_data, w, obs[0])
    if store:
        traj[0] = w
    for step in range(n_steps):
        _csr_matvec(indptr, indices, data, w, k1)
        _add_source(k1, src_rows, src_vals[step, 0])
        for i in range(n):
            s[i] = w[i] + h2 * k1[i]
        _csr_matvec(indptr, indices, data, s, k2)
        _add_source(k2, src_rows, src_vals[step, 1])
        for i in range(n):
            s[i] = w[i] + h2 * k2[i]
        _csr_matvec(indptr, indices, data, s, k3)
        _add_source(k3, src_rows, src_vals[step, 1])
        for i in range(n):
            s[i] = w[i] + dt * k3[i]
        _csr_matvec(indptr, indices, data, s, k4)
        _add_source(k4, src_rows, src_vals[step, 2])
        for i in range(n):
            w[i] += h6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        _observe(obs_indptr, obs_indices, obs_data, w, obs[step + 1])
        if store:
            traj[step + 1] = w
    return obs, traj, w


@njit
def _accumulate(indptr, indices, kbar, state, weight, g):
    # g[e] += weight * kbar[row(e)] * state[col(e)]
    n = indptr.shape[0] - 1
    for i in range(n):
        ki = weight * kbar[i]
        if ki != 0.0:
            for e in range(indptr[i], indptr[i + 1]):
                g[e] += ki * state[indices[e]]


@njit
def _obs_transpose_add(obs_indptr, obs_indices, obs_data, r, out):
    for i in range(obs_indptr.shape[0] - 1):
        ri = r[i]
        for e in range(obs_indptr[i], obs_indptr[i + 1]):
            out[obs_indices[e]] += obs_data[e] * ri


@njit
def _adjoint_nb(indptr, indices, data, t_indptr, t_indices, t_data, traj, dt,
                src_rows, src_vals, obs_indptr, obs_indices, obs_data, dj_dy):
    n_steps = traj.shape[0] - 1
    n = traj.shape[1]
    nnz = data.shape[0]
    g = np.zeros(nnz)
    lam = np.zeros(n)
    _obs_transpose_add(obs_indptr, obs_indices, obs_data, dj_dy[n_steps], lam)
    k1 = np.empty(n)
    k2 = np.empty(n)
    s2 = np.empty(n)
    s3 = np.empty(n)
    s4 = np.empty(n)
    kb = np.empty(n)
    kb3 = np.empty(n)
    kb2 = np.empty(n)
    kb1 = np.empty(n)
    sb = np.empty(n)
    h2 = 0.5 * dt
    h6 = dt / 6.0
    h3 = dt / 3.0
    for step in range(n_steps - 1, -1, -1):
        w = traj[step]
        # rebuild stage states of this step
        _csr_matvec(indptr, indices, data, w, k1)
        _add_source(k1, src_rows, src_vals[step, 0])
        for i in range(n):
            s2[i] = w[i] + h2 * k1[i]
        _csr_matvec(indptr, indices, data, s2, k2)
        _add_source(k2, src_rows, src_vals[step, 1])
        for i in range(n):
            s3[i] = w[i] + h2 * k2[i]
        _csr_matvec(indptr, indices, data, s3, k1)
        _add_source(k1, src_rows, src_vals[step, 1])
        for i in range(n):
            s4[i] = w[i] + dt * k1[i]
        # reverse sweep through the stages
        for i in range(n):
            kb[i] = h6 * lam[i]
            kb3[i] = h3 * lam[i]
            kb2[i] = h3 * lam[i]
            kb1[i] = h6 * lam[i]
        _csr_matvec(t_indptr, t_indices, t_data, kb, sb)
        _accumulate(indptr, indices, kb, s4, 1.0, g)
        for i in range(n):
            lam[i] += sb[i]
            kb3[i] += dt * sb[i]
        _csr_matvec(t_indptr, t_indices, t_data, kb3, sb)
        _accumulate(indptr, indices, kb3, s3, 1.0, g)
        for i in range(n):
            lam[i] += sb[i]
            kb2[i] += h2 * sb[i]
        _csr_matvec(t_indptr, t_indices, t_data, kb2, sb)
        _accumulate(indptr, indices, kb2, s2, 1.0, g)
        for i in range(n):
            lam[i] += sb[i]
            kb1[i] += h2 * sb[i]
        _csr_matvec(t_indptr, t_indices, t_data, kb1, sb)
        _accumulate(indptr, indices, kb1, w, 1.0, g)
        for i in range(n):
            lam[i] += sb[i]
        _obs_transpose_add(obs_indptr, obs_indices, obs_data, dj_dy[step], lam)
    return g


# --------------------------------------------------------------------------
# numpy / scipy.sparse backend
# --------------------------------------------------------------------------

def _source_vector(n, src_rows, vals):
    b = np.zeros(n)
    np.add.at(b, src_rows, vals)
    return b


def _forward_np(indptr, indices, data, x0, dt, n_steps, src_rows, src_vals,
                obs_indptr, obs_indices, obs_data, store):
    n = x0.shape[0]
    A = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    H = sp.csr_matrix((obs_data, obs_indices, obs_indptr), shape=(obs_indptr.shape[0] - 1, n))
    # dense per-step source is cheaper than np.add.at inside the loop
    B = np.zeros((src_vals.shape[0], 3, n))
    for s, row in enumerate(src_rows):
        B[:, :, row] += src_vals[:, :, s]
    obs = np.empty((n_steps + 1, H.shape[0]))
    traj = np.empty((n_steps + 1 if store else 0, n))
    w = x0.copy()
    obs[0] = H @ w
    if store:
        traj[0] = w
    for step in range(n_steps):
        b = B[step]
        k1 = A @ w + b[0]
        k2 = A @ (w + 0.5 * dt * k1) + b[1]
        k3 = A @ (w + 0.5 * dt * k2) + b[1]
        k4 = A @ (w + dt * k3) + b[2]
        w = w + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        obs[step + 1] = H @ w
        if store:
            traj[step + 1] = w
    return obs, traj, w


def _forward_np_stages(A, B, w, dt, step):
    b = B[step]
    k1 = A @ w + b[0]
    s2 = w + 0.5 * dt * k1
    k2 = A @ s2 + b[1]
    s3 = w + 0.5 * dt * k2
    k3 = A @ s3 + b[1]
    s4 = w + dt * k3
    return s2, s3, s4


def _adjoint_np(indptr, indices, data, t_indptr, t_indices, t_data, traj, dt,
                src_rows, src_vals, obs_indptr, obs_indices, obs_data, dj_dy):
    n_steps = traj.shape[0] - 1
    n = traj.shape[1]
    A = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    At = sp.csr_matrix((t_data, t_indices, t_indptr), shape=(n, n))
    H = sp.csr_matrix((obs_data, obs_indices, obs_indptr), shape=(obs_indptr.shape[0] - 1, n))
    Ht = H.T.tocsr()
    rows = np.repeat(np.arange(n), np.diff(indptr))
    cols = indices
    B = np.zeros((src_vals.shape[0], 3, n))
    for s, row in enumerate(src_rows):
        B[:, :, row] += src_vals[:, :, s]
    g = np.zeros(data.shape[0])
    lam = Ht @ dj_dy[n_steps]
    for step in range(n_steps - 1, -1, -1):
        w = traj[step]
        s2, s3, s4 = _forward_np_stages(A, B, w, dt, step)
        kb4 = (dt / 6.0) * lam
        kb3 = (dt / 3.0) * lam
        kb2 = (dt / 3.0) * lam
        kb1 = (dt / 6.0) * lam
        sb = At @ kb4
        g += kb4[rows] * s4[cols]
        lam = lam + sb
        kb3 = kb3 + dt * sb
        sb = At @ kb3
        g += kb3[rows] * s3[cols]
        lam = lam + sb
        kb2 = kb2 + 0.5 * dt * sb
        sb = At @ kb2
        g += kb2[rows] * s2[cols]
        lam = lam + sb
        kb1 = kb1 + 0.5 * dt * sb
        sb = At @ kb1
        g += kb1[rows] * w[cols]
        lam = lam + sb + Ht @ dj_dy[step]
    return g


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

def _use_numba(backend):
    if backend is None:
        return numba_enabled()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    return backend == "numba"


def rk4_forward(system, x0, dt, n_steps, src_rows, src_vals, obs, store=False, backend=None):
    """Integrate ``n_steps`` RK4 steps; returns (observations, trajectory, final state).

    ``system`` and ``obs`` are ``(indptr, indices, data)`` triples.
    """
    fn = _forward_nb if _use_numba(backend) else _forward_np
    return fn(system[0], system[1], system[2], np.ascontiguousarray(x0, dtype=float),
              float(dt), int(n_steps), src_rows, np.ascontiguousarray(src_vals, dtype=float),
              obs[0], obs[1], obs[2], bool(store))


def rk4_adjoint(system, system_t, traj, dt, src_rows, src_vals, obs, dj_dy, backend=None):
    """Sensitivity of ``J`` to every stored nonzero of ``A``.

    ``dj_dy[n]`` is ``dJ/dy_n``.  Returns ``g`` with ``g[e] = dJ/dA_e`` (the
    initial state is taken to be independent of ``A``).
    """
    fn = _adjoint_nb if _use_numba(backend) else _adjoint_np
    return fn(system[0], system[1], system[2], system_t[0], system_t[1], system_t[2],
              np.ascontiguousarray(traj), float(dt), src_rows,
              np.ascontiguousarray(src_vals, dtype=float), obs[0], obs[1], obs[2],
              np.ascontiguousarray(dj_dy, dtype=float))
