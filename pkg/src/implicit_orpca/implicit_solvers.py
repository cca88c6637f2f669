"""Gradient solvers under Hadamard-product parametrizations.

Each unknown is written through squared factors (``e = m**2 - n**2`` for
the sparse part, ``r = u**2 - v**2`` for the coefficients and
``L = g**2 * V`` row-wise for the basis). Plain gradient descent on the
factors started from a small scale then carries an implicit bias: entries
stay near zero unless the data pushes them away, which is what replaces
the explicit l1 and ridge penalties of the classical formulation.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

from .model import DivergenceError, SubspaceState, derive_basis


# --------------------------------------------------------------------------
# sparse part


def hp_grad_budget(max_abs, p_dim, eta, alpha, cap):
    """Iteration budget ``ceil(15/16 * p * log2((max|y| - a^2) / (a * eta)))``.

    Falls back to 1 when the signal sits below the parametrization floor.
    """
    if not (max_abs > alpha * alpha):
        return 1
    arg = (max_abs - alpha * alpha) / (alpha * eta)
    if not arg > 1:
        return 1
    return int(min(cap, math.ceil(15.0 / 16.0 * p_dim * math.log2(arg))))


def auto_eta_e(target):
    """Rate keeping ``eta * 4/p * |target - e|`` at or below 1/2 on entry."""
    p = target.shape[0]
    return p / (8.0 * (float(np.max(np.abs(target), initial=0.0)) + 1.0))


@nb.njit(cache=True)
def _hp_grad_kernel(y, T, eta, m, n):
    p = y.shape[0]
    e = m * m - n * n
    loss0 = 0.0
    for i in range(p):
        loss0 += 0.5 * (y[i] - e[i]) ** 2
    limit = 1e2 * (loss0 + 1.0)
    for k in range(T):
        loss = 0.0
        for i in range(p):
            d = 4.0 / p * (y[i] - e[i])
            m[i] += eta * m[i] * d
            n[i] -= eta * n[i] * d
            e[i] = m[i] * m[i] - n[i] * n[i]
            loss += 0.5 * (y[i] - e[i]) ** 2
        if not (loss <= limit):
            return e, k + 1
    return e, 0


def hp_grad_factors(target, T_e, eta="auto", alpha=1e-2, m=None, n=None):
    """Run the multiplicative sparse recursion and return the factors ``(m, n)``.

    Starts from ``m = n = alpha`` unless explicit factors are passed.
    """
    y = np.ascontiguousarray(target, dtype=np.float64)
    if eta == "auto":
        eta = auto_eta_e(y)
    m = np.full(y.shape, float(alpha)) if m is None else np.array(m, dtype=np.float64)
    n = np.full(y.shape, float(alpha)) if n is None else np.array(n, dtype=np.float64)
    if T_e <= 0:
        return m, n
    _, bad = _hp_grad_kernel(y, int(T_e), float(eta), m, n)
    if bad:
        raise DivergenceError(f"sparse solver diverged at iteration {bad}", iteration=bad)
    return m, n


def hp_grad(target, T_e, eta="auto", alpha=1e-2):
    """Sparse estimate of ``target`` after ``T_e`` fixed-step iterations.

    Each iteration applies ``d = 4/p * (target - e)``,
    ``m *= 1 + eta*d``, ``n *= 1 - eta*d``. Large entries of the target are
    tracked while entries near zero stay around ``alpha**2``.
    """
    m, n = hp_grad_factors(target, T_e, eta, alpha)
    return m * m - n * n


@nb.njit(cache=True)
def _hp_flow_kernel(y, t, alpha):
    # Along the flow m*n stays alpha**2, so e obeys the scalar equation
    # de/dt = 8/p (y - e) sqrt(e**2 + c**2) with c = 2 alpha**2, whose
    # antiderivative is log(R*hypot(e, c) + y*e + c**2) - log(y - e), R = hypot(y, c).
    # Setting it to its value at e = 0 plus R*8t/p and squaring out the
    # hypot gives a quadratic in e with discriminant (R**2 q)**2, where
    # q = q0 exp(-R*8t/p) is the exponentiated antiderivative, inverted.
    # The root below is written so that nothing cancels; y < 0 by symmetry.
    p = y.shape[0]
    c = 2.0 * alpha * alpha
    k = 8.0 / p
    e = np.zeros(p)
    for i in range(p):
        Y = abs(y[i])
        if Y == 0.0:
            continue
        R = math.hypot(Y, c)
        x = R * k * t
        q = Y / (c * (R + c)) * math.exp(-x)
        num = -Y * math.expm1(-x) * (Y + c * q * (R - c))
        den = (Y - c * c * q) * (1.0 + Y * q) + R * R * q
        v = min(num / den, Y)
        e[i] = v if y[i] > 0 else -v
    return e


def flow_time(tau, p, alpha):
    """Time at which an entry of magnitude ``tau`` is essentially tracked."""
    return p * math.log(tau / (alpha * alpha)) / (8.0 * tau)


def hp_grad_flow(target, tau, alpha=1e-2):
    """Sparse estimate from the continuous-time limit of ``hp_grad``.

    The recursion is the Euler discretization of a flow that can be solved
    entry by entry, so instead of choosing a step size the flow is evaluated
    exactly at the time ``flow_time(tau)``. Entries above ``tau`` in
    magnitude are then captured while entries well below it stay near zero.
    A single global step would otherwise be dictated by the largest outlier
    and need a huge number of iterations for the rest of the vector.
    """
    y = np.ascontiguousarray(target, dtype=np.float64)
    tau = max(float(tau), 10.0 * alpha * alpha)
    e = _hp_flow_kernel(y, flow_time(tau, y.shape[0], alpha), float(alpha))
    if not np.all(np.isfinite(e)):
        raise DivergenceError("sparse flow produced non-finite values")
    return e


# --------------------------------------------------------------------------
# coefficients


@nb.njit(cache=True)
def _hp_mom_kernel(b, A, p, mu, T, eta0, alpha, s2, guard):
    r = b.shape[0]
    u = np.full(r, alpha)
    v = np.full(r, alpha)
    vu = np.zeros(r)
    vv = np.zeros(r)
    rr = np.zeros(r)
    d = np.zeros(r)
    for k in range(T):
        mx = 0.0
        for j in range(r):
            acc = b[j]
            for l in range(r):
                acc -= A[j, l] * rr[l]
            d[j] = 4.0 / p * acc
            w = u[j] * u[j] + v[j] * v[j]
            if w > mx:
                mx = w
        eta = eta0
        if guard and s2 > 0.0 and mx > 0.0:
            lim = (1.0 + mu) * p / (16.0 * mx * s2)
            if lim < eta:
                eta = lim
        for j in range(r):
            vu[j] = mu * vu[j] + eta * u[j] * d[j]
            u[j] += vu[j]
            vv[j] = mu * vv[j] - eta * v[j] * d[j]
            v[j] += vv[j]
            rr[j] = u[j] * u[j] - v[j] * v[j]
        for j in range(r):
            if not np.isfinite(rr[j]):
                return rr, k + 1, True
    return rr, T, False


def hp_mom_grad(target, L, mu=0.9, T_r=400, eta="auto", alpha=1e-2, return_iters=False):
    """Coefficients minimizing ``||target - L r||^2`` by heavy-ball descent on ``r = u**2 - v**2``.

    With ``eta="auto"`` the rate starts at ``p / (16 max|L^T target|)`` and is
    capped each iteration by a curvature bound, so the step stays stable
    whatever the conditioning of ``L``. A numeric ``eta`` is used as given.
    """
    y = np.asarray(target, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    p, r = L.shape
    b = L.T @ y
    A = np.ascontiguousarray(L.T @ L)
    M = float(np.max(np.abs(b), initial=0.0))
    if M == 0.0 or T_r <= 0:
        out = np.zeros(r)
        return (out, 0) if return_iters else out
    guard = eta == "auto"
    eta0 = p / (16.0 * M) if guard else float(eta)
    s2 = float(np.linalg.eigvalsh(A)[-1]) if guard else 0.0
    rr, its, bad = _hp_mom_kernel(b, A, p, float(mu), int(T_r), eta0, float(alpha), s2, guard)
    if bad:
        raise DivergenceError(f"coefficient solver diverged at iteration {its}", iteration=its)
    return (rr, its) if return_iters else rr


# --------------------------------------------------------------------------
# basis


def group_gradients(target, r_coef, g, V):
    """Gradients of ``0.5 * ||target - (g**2 * V) r||^2`` with respect to g and V."""
    L = (g * g)[:, None] * V
    G = np.outer(L @ r_coef - target, r_coef)
    grad_V = G * (g * g)[:, None]
    grad_g = 2.0 * np.sum(G * g[:, None] * V, axis=1)
    return grad_g, grad_V


def auto_group_rates(target, r_coef, g, V):
    """Separate rates for g and V, each normalized by its own block curvature.

    With the V rate alone a step removes at most half the residual of any
    row, and the g rate is set the same way from the curvature in g. The g
    rate is further capped so no entry of g moves by more than half its size,
    which keeps the step a descent step when the fit is still far off.
    """
    p = g.shape[0]
    rv = V @ r_coef
    res = target - (g * g) * rv
    cv = float(np.max(g**4)) * float(r_coef @ r_coef)
    cg = float(np.max(4.0 * g**2 * rv**2))
    eta_v = 0.5 * p / cv if cv > 0 else 0.0
    eta_g = 0.5 * p / cg if cg > 0 else 0.0
    q = float(np.max(np.abs(res * rv)))
    if q > 0:
        eta_g = min(eta_g, 0.5 * p / q)
    return eta_g, eta_v


def hp_group_grad(target, r_coef, T_L, eta_L, state, loss_band=(1e-2, 1e2), loss_scale=1.0):
    """Advance the basis factors by gradient steps on ``0.5 * ||target - L r||^2``.

    Per iteration, with ``G = (L r - target) r^T``:
    ``g -= eta_g/p * rowsum(G * g * V)`` and ``V -= eta_v/p * G * g**2``.
    A numeric ``eta_L`` serves both rates; ``"auto"`` picks them from
    ``auto_group_rates`` at every iteration. The loop stops after the first
    iteration whose loss, multiplied by ``loss_scale**2``, leaves
    ``loss_band``. Returns the new state and the number of iterations run.
    """
    y = np.asarray(target, dtype=np.float64)
    rc = np.asarray(r_coef, dtype=np.float64)
    g = state.g.copy()
    V = state.V.copy()
    p = g.shape[0]
    lo, hi = loss_band
    res = y - derive_basis(SubspaceState(g, V)) @ rc
    loss = 0.5 * float(res @ res)
    limit = 1e2 * (loss + 1.0)
    if not np.any(rc):
        return SubspaceState(g, V), 0
    it = 0
    for it in range(1, int(T_L) + 1):
        if eta_L == "auto":
            eta_g, eta_v = auto_group_rates(y, rc, g, V)
            if eta_v == 0.0:
                break
        else:
            eta_g = eta_v = float(eta_L)
        G = np.outer(-res, rc)
        step_g = np.sum(G * g[:, None] * V, axis=1)
        V = V - (eta_v / p) * G * (g * g)[:, None]
        g = g - (eta_g / p) * step_g
        res = y - ((g * g)[:, None] * V) @ rc
        new_loss = 0.5 * float(res @ res)
        if not (np.isfinite(new_loss) and new_loss <= limit):
            raise DivergenceError(
                f"basis solver diverged at iteration {it}", iteration=it, last_loss=loss
            )
        loss = new_loss
        scaled = loss * loss_scale * loss_scale
        if not (lo < scaled < hi):
            break
    return SubspaceState(g, V), it
