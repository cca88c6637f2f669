"""Subspace and support recovery metrics."""

from __future__ import annotations

import numpy as np

RANK_TOL = 1e-10


def orthonormal_basis(A, tol=RANK_TOL):
    """Thin QR of ``A`` keeping only columns whose pivot exceeds ``tol`` times the largest."""
    A = np.asarray(A, dtype=np.float64)
    if A.size == 0:
        return A[:, :0]
    Q, R = np.linalg.qr(A)
    d = np.abs(np.diag(R))
    if d.max(initial=0.0) == 0.0:
        return Q[:, :0]
    return Q[:, d > tol * d.max()]


def explained_variance(L_est, U_true):
    """Overlap ``||Q_est^T Q_true||_F^2 / r_true`` of the two column spaces.

    Equals 1 on exact subspace recovery and 0 for orthogonal subspaces. An
    all-zero estimate scores 0.
    """
    U_true = np.asarray(U_true, dtype=np.float64)
    L_est = np.asarray(L_est, dtype=np.float64)
    if L_est.shape[0] != U_true.shape[0]:
        raise ValueError(f"row counts differ: {L_est.shape[0]} vs {U_true.shape[0]}")
    Qe = orthonormal_basis(L_est)
    if Qe.shape[1] == 0:
        return 0.0
    Qt = orthonormal_basis(U_true)
    return float(np.linalg.norm(Qe.T @ Qt) ** 2 / U_true.shape[1])


def support_f1(E_est, E_true, threshold):
    E_est = np.asarray(E_est)
    E_true = np.asarray(E_true)
    if E_est.shape != E_true.shape:
        raise ValueError(f"shape mismatch {E_est.shape} vs {E_true.shape}")
    est = np.abs(E_est) > threshold
    true = E_true != 0
    tp = int(np.sum(est & true))
    denom = int(np.sum(est)) + int(np.sum(true))
    return 1.0 if denom == 0 else 2.0 * tp / denom


def mean_trace(traces):
    traces = [np.asarray(t, dtype=np.float64) for t in traces]
    if not traces:
        raise ValueError("no traces to average")
    if len({t.shape for t in traces}) != 1:
        raise ValueError("traces differ in length")
    return np.mean(traces, axis=0)
