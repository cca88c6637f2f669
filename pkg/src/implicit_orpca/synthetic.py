"""Seeded low-rank plus sparse-corruption streams.

Random numbers come from numpy's Philox4x32-10 counter-based generator.
Each quantity has its own stream, derived as
``SeedSequence(seed, spawn_key=(stream_id,))`` with

==========  =========  ===============================================
stream id   label      draws
==========  =========  ===============================================
0           U          ``standard_normal((p, r))`` scaled by 1/sqrt(n)
1           Vc         ``standard_normal((n, r))`` scaled by 1/sqrt(n)
2           support    ``choice(p*n, k, replace=False)``, column-major cells
3           values     ``uniform(-magnitude, magnitude, k)``
==========  =========  ===============================================

so a dataset is reproducible from the seed alone, and changing one
quantity (say the corruption level) leaves the others untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ConfigError

GENERATOR_VERSION = "philox4x32-10/v1"
STREAMS = {"U": 0, "Vc": 1, "support": 2, "values": 3}


@dataclass(frozen=True)
class SyntheticConfig:
    p: int
    n: int
    r_true: int
    rho: float
    magnitude: float = 1000.0
    seed: int = 0

    def __post_init__(self):
        if self.p < 1 or self.n < 1 or self.r_true < 1:
            raise ConfigError("p, n and r_true must be positive")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")
        if self.r_true > min(self.p, self.n):
            raise ConfigError("r_true cannot exceed min(p, n)")
        if not self.magnitude > 0:
            raise ConfigError("magnitude must be positive")


@dataclass
class SyntheticDataset:
    U: np.ndarray
    Vc: np.ndarray
    X: np.ndarray
    E: np.ndarray
    Z: np.ndarray
    seed: int


PRESETS = {
    "small": dict(p=40, n=200, r_true=10, rho=0.01),
    "mid": dict(p=400, n=1000, r_true=10, rho=0.01),
}


def preset(name, seed=0, **overrides):
    try:
        base = dict(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    base.update(overrides)
    return SyntheticConfig(seed=seed, **base)


def stream_rng(seed, label):
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAMS[label],))
    return np.random.Generator(np.random.Philox(ss))


def generate(cfg):
    p, n, r = cfg.p, cfg.n, cfg.r_true
    sd = 1.0 / np.sqrt(n)
    U = stream_rng(cfg.seed, "U").standard_normal((p, r)) * sd
    Vc = stream_rng(cfg.seed, "Vc").standard_normal((n, r)) * sd
    X = U @ Vc.T
    k = int(round(cfg.rho * p * n))
    flat = np.zeros(p * n)
    if k:
        cells = stream_rng(cfg.seed, "support").choice(p * n, k, replace=False)
        flat[cells] = stream_rng(cfg.seed, "values").uniform(-cfg.magnitude, cfg.magnitude, k)
    Z = X + flat.reshape((p, n), order="F")
    # store the corruption actually added after rounding, so Z - X - E == 0 exactly
    E = Z - X
    return SyntheticDataset(U, Vc, X, E, Z, cfg.seed)
