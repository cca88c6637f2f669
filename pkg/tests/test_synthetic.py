import numpy as np
import pytest

from implicit_orpca.model import ConfigError
from implicit_orpca.synthetic import SyntheticConfig, generate, preset, stream_rng


def test_clean_when_rho_zero():
    d = generate(SyntheticConfig(20, 30, 3, 0.0, seed=5))
    assert not np.any(d.E)
    assert np.array_equal(d.Z, d.X)


def test_exact_nonzero_count():
    d = generate(SyntheticConfig(40, 200, 10, 0.01, seed=0))
    assert np.count_nonzero(d.E) == 80


@pytest.mark.parametrize("seed", range(5))
def test_dataset_invariants(seed):
    d = generate(preset("small", seed=seed))
    assert np.all(d.Z - d.X - d.E == 0)
    assert np.all(np.abs(d.E) <= 1000.0)
    assert np.array_equal(d.X, d.U @ d.Vc.T)
    assert d.U.shape == (40, 10) and d.Vc.shape == (200, 10)


def test_same_seed_same_bits():
    a = generate(preset("small", seed=11))
    b = generate(preset("small", seed=11))
    for f in ("U", "Vc", "X", "E", "Z"):
        assert getattr(a, f).tobytes() == getattr(b, f).tobytes()


def test_different_seeds_differ():
    assert not np.array_equal(generate(preset("small", seed=1)).U, generate(preset("small", seed=2)).U)


def test_streams_are_independent():
    # changing the corruption level leaves the low-rank part untouched
    a = generate(SyntheticConfig(30, 50, 4, 0.01, seed=9))
    b = generate(SyntheticConfig(30, 50, 4, 0.2, seed=9))
    assert np.array_equal(a.X, b.X)


def test_stream_rng_labels():
    a = stream_rng(3, "U").standard_normal(4)
    b = stream_rng(3, "Vc").standard_normal(4)
    assert not np.array_equal(a, b)
    with pytest.raises(KeyError):
        stream_rng(3, "other")


@pytest.mark.parametrize("seed", range(10))
def test_factor_variance(seed):
    d = generate(SyntheticConfig(40, 200, 10, 0.0, seed=seed))
    for M in (d.U, d.Vc):
        assert abs(np.var(M) * 200 - 1.0) < 0.2
        assert abs(np.mean(M)) < 4 * np.sqrt(1 / 200 / M.size)


def test_support_uniformity():
    p = n = 10
    rho, seeds = 0.1, 1000
    counts = np.zeros((p, n))
    for s in range(seeds):
        counts += generate(SyntheticConfig(p, n, 1, rho, seed=s)).E != 0
    freq = counts / seeds
    se = np.sqrt(rho * (1 - rho) / seeds)
    assert np.all(np.abs(freq - rho) <= 3 * se)


def test_values_span_range():
    d = generate(SyntheticConfig(50, 100, 2, 0.5, magnitude=3.0, seed=0))
    v = d.E[d.E != 0]
    assert v.min() < -2.9 and v.max() > 2.9


def test_presets():
    assert preset("small").p == 40 and preset("small").n == 200
    assert preset("mid").p == 400 and preset("mid").n == 1000
    assert preset("mid").r_true == 10 and preset("mid").rho == 0.01
    with pytest.raises(ConfigError):
        preset("huge")


@pytest.mark.parametrize("kw", [dict(rho=1.5), dict(rho=-0.1), dict(r_true=50), dict(magnitude=0.0),
                                dict(p=0)])
def test_config_validation(kw):
    base = dict(p=40, n=40, r_true=3, rho=0.1)
    base.update(kw)
    with pytest.raises(ConfigError):
        SyntheticConfig(**base)
