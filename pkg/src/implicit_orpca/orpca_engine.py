"""Streaming driver: alternate coefficient and sparse solves per sample, then update the basis."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import implicit_solvers as solvers
from .metrics import explained_variance
from .model import (
    ConfigError,
    DivergenceError,
    EngineConfig,
    ImplicitHyperParams,
    SampleDecomposition,
    SubspaceState,
    as_finite_vector,
    derive_basis,
)


def robust_scale(z):
    """Spread of a sample used to make the solvers scale free.

    Normal-consistent median absolute deviation about the median, falling
    back to the RMS deviation, then to ``max|z|``, then to 1.
    """
    dev = np.abs(z - np.median(z))
    s = 1.4826 * float(np.median(dev))
    if s > 0:
        return s
    s = float(np.sqrt(np.mean(dev * dev)))
    if s > 0:
        return s
    s = float(np.max(np.abs(z), initial=0.0))
    return s if s > 0 else 1.0


@dataclass
class StreamReport:
    basis: np.ndarray
    R: np.ndarray | None
    E: np.ndarray | None
    ev: np.ndarray | None
    inner_iters: np.ndarray
    fidelity: np.ndarray
    diverged: np.ndarray
    wall_time: float = 0.0
    lowrank: np.ndarray | None = None

    @property
    def n_diverged(self):
        return int(np.sum(self.diverged))


@dataclass
class EngineState:
    subspace: SubspaceState
    prev_r: np.ndarray
    prev_e: np.ndarray
    t: int = 0
    R: list = field(default_factory=list)
    E: list = field(default_factory=list)


class ORPCAEngine:
    """Online robust PCA with implicitly regularized solvers.

    State starts at ``g = g0``, ``V = 0``. Because ``V = 0`` is a fixed
    point of the basis gradient, empty basis columns are filled from the
    normalized residual of the first samples that leave one.
    """

    def __init__(self, p, config):
        if not isinstance(config, EngineConfig):
            raise ConfigError("config must be an EngineConfig")
        self.config = config
        self.p = int(p)
        self.state = EngineState(
            SubspaceState.initial(self.p, int(config.rank), config.hyper.g0),
            np.zeros(int(config.rank)),
            np.zeros(self.p),
        )

    @property
    def basis(self):
        return derive_basis(self.state.subspace)

    def _sparse_step(self, y, k, floor):
        h = self.config.hyper
        if h.T_e == "auto":
            M = float(np.max(np.abs(y), initial=0.0))
            tau = M * h.continuation ** -(k + 1)
            if tau > floor:
                return solvers.hp_grad_flow(y, tau, h.alpha_e), False
            return solvers.hp_grad_flow(y, floor, h.alpha_e), True
        eta = solvers.auto_eta_e(y) if h.eta_e == "auto" else h.eta_e
        if h.T_e == "formula":
            M = float(np.max(np.abs(y), initial=0.0))
            T = solvers.hp_grad_budget(M, y.shape[0], eta, h.alpha_e, h.budget_cap)
        else:
            T = int(h.T_e)
        return solvers.hp_grad(y, T, eta, h.alpha_e), True

    def decompose(self, z):
        """Split one sample against the current basis without updating it.

        Returns ``(r, e, k, s)`` in the normalized units of scale ``s``.
        """
        h = self.config.hyper
        s = robust_scale(z)
        zn = z / s
        L = self.basis
        e = np.zeros(self.p)
        r_ref = self.state.prev_r / s
        e_ref = self.state.prev_e / s
        floor = h.kappa
        r = r_ref
        for k in range(1, h.T_0 + 1):
            r = solvers.hp_mom_grad(zn - e, L, h.mu, h.T_r, h.eta_r, h.alpha_r)
            e, final = self._sparse_step(zn - L @ r, k - 1, floor)
            nz = float(np.linalg.norm(zn - e)) or 1.0
            eps = max(np.linalg.norm(r - r_ref), np.linalg.norm(e - e_ref)) / nz
            r_ref, e_ref = r, e
            if eps < self.config.conv_tol and final:
                break
        return r, e, k, s

    def _update_basis(self, zn, r, e, s):
        h = self.config.hyper
        sub = self.state.subspace
        empty = np.flatnonzero(~np.any(sub.V, axis=0))
        res = zn - e - derive_basis(sub) @ r
        nres = float(np.linalg.norm(res))
        if empty.size and nres > 1e-6 * (float(np.linalg.norm(zn)) or 1.0):
            V = sub.V.copy()
            V[:, empty[0]] = res / nres / (sub.g * sub.g)
            return SubspaceState(sub.g.copy(), V)
        new, _ = solvers.hp_group_grad(
            zn - e, r, h.T_L, h.eta_L, sub,
            loss_band=(h.loss_exit_low, h.loss_exit_high), loss_scale=s,
        )
        return new

    def process_sample(self, z):
        z = as_finite_vector(z)
        if z.shape[0] != self.p:
            raise ConfigError(f"sample has length {z.shape[0]}, expected {self.p}")
        st = self.state
        L_before = self.basis
        try:
            r, e, k, s = self.decompose(z)
            new_sub = self._update_basis(z / s, r, e, s)
            if not (np.all(np.isfinite(new_sub.g)) and np.all(np.isfinite(new_sub.V))):
                raise DivergenceError("basis update produced non-finite values")
            r_out, e_out = r * s, e * s
            diverged = False
        except DivergenceError:
            r_out, e_out, k, s = st.prev_r.copy(), st.prev_e.copy(), 0, 1.0
            new_sub = st.subspace
            diverged = True
        d = z - L_before @ r_out - e_out
        dec = SampleDecomposition(r_out, e_out, int(k), 0.5 * float(d @ d), diverged, s)
        st.subspace = new_sub
        st.prev_r, st.prev_e = r_out, e_out
        st.t += 1
        if self.config.accumulate_outputs:
            st.R.append(r_out)
            st.E.append(e_out)
        return dec


def run_stream(Z, config, truth=None, keep_lowrank=False):
    """Feed the columns of ``Z`` (p x n) through a fresh engine in order.

    With ``keep_lowrank`` the report also holds ``L r_t`` for every sample,
    using the basis the sample was decomposed against.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] == 0:
        raise ConfigError("stream must be a non-empty p x n matrix")
    p, n = Z.shape
    eng = ORPCAEngine(p, config)
    t0 = time.perf_counter()
    iters = np.zeros(n, dtype=np.int64)
    fid = np.zeros(n)
    div = np.zeros(n, dtype=bool)
    ev = np.zeros(n) if truth is not None else None
    low = np.zeros((p, n)) if keep_lowrank else None
    for t in range(n):
        L = eng.basis
        dec = eng.process_sample(Z[:, t])
        iters[t], fid[t], div[t] = dec.inner_iters, dec.fidelity, dec.diverged
        if low is not None:
            low[:, t] = L @ dec.r_coef
        if ev is not None:
            ev[t] = explained_variance(eng.basis, truth)
    R = E = None
    if config.accumulate_outputs:
        R = np.array(eng.state.R)
        E = np.array(eng.state.E).T
    return StreamReport(eng.basis, R, E, ev, iters, fid, div, time.perf_counter() - t0, low)


class OnlineRobustPCA(TransformerMixin, BaseEstimator):
    """Tuning-free online robust PCA.

    Rows of ``X`` are samples, as usual for estimators. Each row is split
    into a low-rank part ``L r`` and a sparse part ``e``; the basis ``L`` is
    refined after every row.

    Parameters
    ----------
    n_components : int
        Rank of the tracked subspace.
    alpha : float
        Initial scale of the Hadamard factors of both ``r`` and ``e``.
    g0 : float
        Initial value of the row-coupling factor.
    kappa : float
        Outlier threshold in units of the per-sample robust scale.
    max_inner : int
        Cap on alternations per sample.
    tol : float
        Relative change below which the alternation stops.

    Attributes
    ----------
    basis_ : ndarray of shape (n_features, n_components)
    components_ : ndarray of shape (n_components, n_features)
        Transpose of ``basis_``. Columns are not orthonormal.
    sparse_ : ndarray of shape (n_samples, n_features)
        Sparse part of the rows seen by the last ``fit``.
    """

    def __init__(self, n_components=1, alpha=1e-2, g0=1e-1, mu=0.9, kappa=5.0,
                 continuation=2.0, max_inner=50, tol=1e-3, T_r=400, T_L=200):
        self.n_components = n_components
        self.alpha = alpha
        self.g0 = g0
        self.mu = mu
        self.kappa = kappa
        self.continuation = continuation
        self.max_inner = max_inner
        self.tol = tol
        self.T_r = T_r
        self.T_L = T_L

    def _config(self):
        hyper = ImplicitHyperParams(
            alpha_e=self.alpha, alpha_r=self.alpha, g0=self.g0, mu=self.mu,
            kappa=self.kappa, continuation=self.continuation, T_0=self.max_inner,
            T_r=self.T_r, T_L=self.T_L,
        )
        return EngineConfig(rank=self.n_components, hyper=hyper, conv_tol=self.tol,
                            accumulate_outputs=False)

    def _check(self, X, reset):
        X = check_array(X, dtype=np.float64)
        if reset:
            self.n_features_in_ = X.shape[1]
        elif X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def _consume(self, X):
        R = np.empty((X.shape[0], self.n_components))
        E = np.empty_like(X)
        for i, row in enumerate(X):
            dec = self.engine_.process_sample(row)
            R[i], E[i] = dec.r_coef, dec.e
        self.n_samples_seen_ += X.shape[0]
        self.basis_ = self.engine_.basis
        self.components_ = self.basis_.T
        return R, E

    def partial_fit(self, X, y=None):
        first = not hasattr(self, "engine_")
        X = self._check(X, reset=first)
        if first:
            self.engine_ = ORPCAEngine(X.shape[1], self._config())
            self.n_samples_seen_ = 0
        self._consume(X)
        return self

    def fit(self, X, y=None):
        for attr in ("engine_", "basis_", "components_", "sparse_", "n_features_in_"):
            self.__dict__.pop(attr, None)
        X = self._check(X, reset=True)
        self.engine_ = ORPCAEngine(X.shape[1], self._config())
        self.n_samples_seen_ = 0
        self._stream_R, self.sparse_ = self._consume(X)
        return self

    def fit_transform(self, X, y=None):
        self.fit(X)
        return self._stream_R

    def decompose(self, X):
        """Low-rank and sparse parts of each row against the current basis."""
        check_is_fitted(self, "basis_")
        X = self._check(X, reset=False)
        low = np.empty_like(X)
        sparse = np.empty_like(X)
        for i, row in enumerate(X):
            r, e, _, s = self.engine_.decompose(row)
            low[i] = self.basis_ @ r * s
            sparse[i] = e * s
        return low, sparse

    def transform(self, X):
        check_is_fitted(self, "basis_")
        X = self._check(X, reset=False)
        out = np.empty((X.shape[0], self.n_components))
        for i, row in enumerate(X):
            r, _, _, s = self.engine_.decompose(row)
            out[i] = r * s
        return out
