"""Domain types and the shared fidelity loss."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Union

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration or dimension mismatch."""


class DivergenceError(ArithmeticError):
    """A solver produced non-finite values or a runaway loss."""

    def __init__(self, message, iteration=None, last_loss=None):
        super().__init__(message)
        self.iteration = iteration
        self.last_loss = last_loss


Rate = Union[float, str]
Budget = Union[int, str]


def as_finite_vector(z, name="z"):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ConfigError(f"{name} must be one-dimensional, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ConfigError(f"{name} contains NaN or Inf")
    return z


@dataclass(frozen=True)
class StreamSample:
    index: int
    z: np.ndarray

    def __post_init__(self):
        if self.index < 1:
            raise ConfigError("sample index is 1-based")
        object.__setattr__(self, "z", as_finite_vector(self.z))


@dataclass
class SubspaceState:
    """Row-coupled basis factors. The basis itself is always derived."""

    g: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=np.float64)
        self.V = np.asarray(self.V, dtype=np.float64)
        if self.V.ndim != 2 or self.g.shape != (self.V.shape[0],):
            raise ConfigError(f"g {self.g.shape} and V {self.V.shape} disagree")

    @classmethod
    def initial(cls, p, rank, g0=0.1):
        if rank < 1 or p < 1:
            raise ConfigError("p and rank must be positive")
        if rank > p:
            raise ConfigError(f"rank {rank} exceeds dimension {p}")
        return cls(np.full(p, float(g0)), np.zeros((p, rank)))

    @property
    def p(self):
        return self.V.shape[0]

    @property
    def rank(self):
        return self.V.shape[1]

    @property
    def L(self):
        return derive_basis(self)

    def copy(self):
        return SubspaceState(self.g.copy(), self.V.copy())


@dataclass
class SampleDecomposition:
    r_coef: np.ndarray
    e: np.ndarray
    inner_iters: int
    fidelity: float
    diverged: bool = False
    scale: float = 1.0


@dataclass
class ImplicitHyperParams:
    """Settings of the implicit solvers.

    ``"auto"`` rates and budgets pick scale-free values at run time, so the
    defaults are meant to be used unchanged on any data set. ``kappa`` is the
    outlier threshold in units of the per-sample robust scale and
    ``continuation`` the factor by which the sparse threshold shrinks per
    alternation.
    """

    alpha_e: float = 1e-2
    alpha_r: float = 1e-2
    g0: float = 1e-1
    eta_e: Rate = "auto"
    eta_r: Rate = "auto"
    eta_L: Rate = "auto"
    T_e: Budget = "auto"
    T_r: int = 400
    T_L: int = 200
    T_0: int = 50
    mu: float = 0.9
    loss_exit_low: float = 1e-2
    loss_exit_high: float = 1e2
    kappa: float = 5.0
    continuation: float = 2.0
    budget_cap: int = 2000

    def __post_init__(self):
        for name in ("alpha_e", "alpha_r", "g0", "kappa"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("eta_e", "eta_r", "eta_L"):
            v = getattr(self, name)
            if v != "auto" and not (isinstance(v, (int, float)) and v > 0):
                raise ConfigError(f"{name} must be positive or 'auto'")
        if self.T_e not in ("auto", "formula") and not (
            isinstance(self.T_e, (int, np.integer)) and self.T_e >= 1
        ):
            raise ConfigError("T_e must be a positive integer, 'formula' or 'auto'")
        for name in ("T_r", "T_L", "T_0", "budget_cap"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if not 0 <= self.mu < 1:
            raise ConfigError("mu must lie in [0, 1)")
        if not 0 < self.loss_exit_low < self.loss_exit_high:
            raise ConfigError("loss exit band must satisfy 0 < low < high")
        if not self.continuation > 1:
            raise ConfigError("continuation factor must exceed 1")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class ExplicitParams:
    lambda1: float
    lambda2: float

    def __post_init__(self):
        if not (self.lambda1 > 0 and self.lambda2 > 0):
            raise ConfigError("lambda1 and lambda2 must be positive")

    @classmethod
    def preset(cls, name, p):
        if name == "default":
            lam = 1.0 / np.sqrt(p)
        elif name == "tuned":
            lam = 1.0
        else:
            raise ConfigError(f"unknown lambda preset {name!r}")
        return cls(lam, lam)


@dataclass
class EngineConfig:
    rank: int
    hyper: ImplicitHyperParams = field(default_factory=ImplicitHyperParams)
    conv_tol: float = 1e-3
    accumulate_outputs: bool = True

    def __post_init__(self):
        if int(self.rank) < 1:
            raise ConfigError("rank must be at least 1")
        if not self.conv_tol > 0:
            raise ConfigError("conv_tol must be positive")

    @property
    def T_0(self):
        return self.hyper.T_0


def fidelity_loss(z, x, e):
    z, x, e = (np.asarray(a, dtype=np.float64) for a in (z, x, e))
    if not z.shape == x.shape == e.shape:
        raise ConfigError(f"shape mismatch {z.shape}, {x.shape}, {e.shape}")
    d = z - x - e
    return 0.5 * float(np.dot(d.ravel(), d.ravel()))


def derive_basis(state):
    """L[i, j] = g[i]**2 * V[i, j]."""
    return (state.g * state.g)[:, None] * state.V
