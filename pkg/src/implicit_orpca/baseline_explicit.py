"""Online robust PCA with explicit l1 and ridge penalties, used as a reference."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .metrics import explained_variance
from .model import ConfigError, ExplicitParams, SampleDecomposition, as_finite_vector
from .orpca_engine import StreamReport


def soft_threshold(x, tau):
    """Proximal map of ``tau * |.|_1``: ``sign(x) * max(|x| - tau, 0)``."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def solve_r_ridge(z_minus_e, L, lambda1):
    """Minimizer of ``0.5 ||y - L r||^2 + lambda1/2 ||r||^2``."""
    L = np.asarray(L, dtype=np.float64)
    A = L.T @ L + lambda1 * np.eye(L.shape[1])
    return np.linalg.solve(A, L.T @ np.asarray(z_minus_e, dtype=np.float64))


@dataclass
class BaselineState:
    L: np.ndarray
    A: np.ndarray
    B: np.ndarray
    prev_r: np.ndarray
    prev_e: np.ndarray
    t: int = 0
    R: list = field(default_factory=list)
    E: list = field(default_factory=list)

    @classmethod
    def initial(cls, p, rank):
        if rank < 1 or rank > p:
            raise ConfigError(f"rank {rank} must lie in [1, {p}]")
        return cls(np.zeros((p, rank)), np.zeros((rank, rank)), np.zeros((p, rank)),
                   np.zeros(rank), np.zeros(p))


def surrogate_objective(L, A, B, lambda1):
    """``0.5 tr(L^T L (A + lambda1 I)) - tr(L^T B)``, minimized by the basis update."""
    At = A + lambda1 * np.eye(A.shape[0])
    return 0.5 * float(np.trace(L.T @ L @ At)) - float(np.trace(L.T @ B))


def baseline_update_L(state, z_minus_e, r_coef, lambda1):
    """Accumulate ``A += r r^T``, ``B += (z - e) r^T``, then one pass of column-wise updates."""
    r = np.asarray(r_coef, dtype=np.float64)
    state.A = state.A + np.outer(r, r)
    state.B = state.B + np.outer(z_minus_e, r)
    At = state.A + lambda1 * np.eye(r.shape[0])
    L = state.L.copy()
    for j in range(r.shape[0]):
        L[:, j] += (state.B[:, j] - L @ At[:, j]) / At[j, j]
    state.L = L
    return state


class ExplicitORPCA:
    """Alternating ridge / soft-threshold solver with accumulated basis statistics.

    A zero basis is a fixed point here too, so empty columns are seeded from
    the normalized residual exactly as in the implicit engine.
    """

    def __init__(self, p, rank, params, T_0=50, conv_tol=1e-3, accumulate_outputs=True):
        if not isinstance(params, ExplicitParams):
            raise ConfigError("params must be ExplicitParams")
        self.p = int(p)
        self.params = params
        self.T_0 = int(T_0)
        self.conv_tol = float(conv_tol)
        self.accumulate_outputs = accumulate_outputs
        self.state = BaselineState.initial(self.p, int(rank))

    @property
    def basis(self):
        return self.state.L

    def process_sample(self, z):
        z = as_finite_vector(z)
        if z.shape[0] != self.p:
            raise ConfigError(f"sample has length {z.shape[0]}, expected {self.p}")
        st, lam1, lam2 = self.state, self.params.lambda1, self.params.lambda2
        L = st.L
        nz = float(np.linalg.norm(z)) or 1.0
        e = np.zeros(self.p)
        r_ref, e_ref = st.prev_r, st.prev_e
        for k in range(1, self.T_0 + 1):
            r = solve_r_ridge(z - e, L, lam1)
            e = soft_threshold(z - L @ r, lam2)
            eps = max(np.linalg.norm(r - r_ref), np.linalg.norm(e - e_ref)) / nz
            r_ref, e_ref = r, e
            if eps < self.conv_tol:
                break
        d = z - L @ r - e
        dec = SampleDecomposition(r, e, k, 0.5 * float(d @ d))
        empty = np.flatnonzero(~np.any(L, axis=0))
        nres = float(np.linalg.norm(d))
        if empty.size and nres > 1e-6 * nz:
            st.L = L.copy()
            st.L[:, empty[0]] = d / nres
        else:
            baseline_update_L(st, z - e, r, lam1)
        st.prev_r, st.prev_e = r, e
        st.t += 1
        if self.accumulate_outputs:
            st.R.append(r)
            st.E.append(e)
        return dec


def run_explicit_stream(Z, rank, params, truth=None, T_0=50, conv_tol=1e-3, accumulate_outputs=True):
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] == 0:
        raise ConfigError("stream must be a non-empty p x n matrix")
    p, n = Z.shape
    eng = ExplicitORPCA(p, rank, params, T_0, conv_tol, accumulate_outputs)
    t0 = time.perf_counter()
    iters = np.zeros(n, dtype=np.int64)
    fid = np.zeros(n)
    ev = np.zeros(n) if truth is not None else None
    for t in range(n):
        dec = eng.process_sample(Z[:, t])
        iters[t], fid[t] = dec.inner_iters, dec.fidelity
        if ev is not None:
            ev[t] = explained_variance(eng.basis, truth)
    R = E = None
    if accumulate_outputs:
        R = np.array(eng.state.R)
        E = np.array(eng.state.E).T
    return StreamReport(eng.basis.copy(), R, E, ev, iters, fid, np.zeros(n, dtype=bool),
                        time.perf_counter() - t0)
