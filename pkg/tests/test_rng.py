import numpy as np
import pytest

from hbesafety.rng import CounterRNG, gamma, negbin, poisson

N = 100_000
IDX = np.arange(N, dtype=np.uint64)


def within_3se(sample, mean, var):
    return abs(sample.mean() - mean) <= 3 * np.sqrt(var / sample.size)


def test_words_are_pure_functions():
    a, b = CounterRNG(42), CounterRNG(42)
    assert np.array_equal(a.words(3, IDX[:100], 5), b.words(3, IDX[:100], 5))
    # element i does not depend on which other indices are requested
    assert np.array_equal(a.uniform(3, IDX[50:60]), a.uniform(3, IDX)[50:60])
    assert not np.array_equal(a.uniform(3, IDX[:100]), CounterRNG(43).uniform(3, IDX[:100]))
    assert not np.array_equal(a.uniform(3, IDX[:100]), a.uniform(4, IDX[:100]))


M64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix_mix(z):
    z &= M64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & M64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & M64
    return z ^ (z >> 31)


def reference_word(seed, stream, index, counter):
    key = splitmix_mix(seed + splitmix_mix(stream))
    sub = splitmix_mix(key + index * GOLDEN)
    return splitmix_mix(sub + (counter + 1) * GOLDEN)


def test_known_first_words():
    w = CounterRNG(1).words(0, np.arange(3, dtype=np.uint64), 0)
    assert [int(x) for x in w] == [4720248854425330031, 6180444375122719049, 9366171507420456997]


def test_matches_pure_python_scheme():
    rng = CounterRNG(2**63 + 12345)
    for stream, index, counter in [(0, 0, 0), (7, 123456, 3), (2**20 + 5, 2**40, 17)]:
        got = int(rng.words(stream, np.array([index], dtype=np.uint64), counter)[0])
        assert got == reference_word(2**63 + 12345, stream, index, counter)


def test_uniform_moments():
    u = CounterRNG(1).uniform(0, IDX)
    assert u.min() > 0 and u.max() < 1
    assert within_3se(u, 0.5, 1 / 12)
    assert abs(u.var() - 1 / 12) < 0.002


def test_normal_moments():
    z = CounterRNG(2).normal(0, IDX)
    assert within_3se(z, 0.0, 1.0)
    assert abs(z.var() - 1.0) < 0.02


@pytest.mark.parametrize("shape,scale", [(0.3, 1.0), (1.0, 2.0), (2.0, 0.5), (20.0, 0.1)])
def test_gamma_moments(shape, scale):
    g = gamma(CounterRNG(3), 5, IDX, shape, scale)
    assert np.all(g >= 0)
    assert within_3se(g, shape * scale, shape * scale**2)
    assert abs(g.var() / (shape * scale**2) - 1) < 0.05


@pytest.mark.parametrize("lam", [0.0, 0.5, 3.0, 9.9, 10.0, 40.0, 1000.0])
def test_poisson_moments(lam):
    k = poisson(CounterRNG(4), 7, IDX, lam)
    assert k.dtype == np.int64 and np.all(k >= 0)
    if lam == 0:
        assert np.all(k == 0)
        return
    assert within_3se(k, lam, lam)
    assert abs(k.var() / lam - 1) < 0.03


def test_negbin_variance_law():
    k = negbin(CounterRNG(5), 20, IDX, 2.0, 1.0)
    assert abs(k.var() - 6.0) / 6.0 < 0.10
    assert within_3se(k, 2.0, 6.0)


@pytest.mark.parametrize("mu,kappa", [(0.3, 0.5), (2.0, 0.5), (8.0, 0.2), (25.0, 1.5)])
def test_negbin_mean_law(mu, kappa):
    k = negbin(CounterRNG(6), 20, IDX, mu, kappa)
    var = mu + kappa * mu**2
    assert within_3se(k, mu, var)


def test_negbin_kappa_zero_is_poisson():
    k = negbin(CounterRNG(7), 20, IDX, 3.0, 0.0)
    assert within_3se(k, 3.0, 3.0)
    assert np.array_equal(k, poisson(CounterRNG(7), 21, IDX, 3.0))


def test_sampler_argument_checks():
    with pytest.raises(ValueError):
        gamma(CounterRNG(1), 0, IDX[:3], 0.0)
    with pytest.raises(ValueError):
        poisson(CounterRNG(1), 0, IDX[:3], -1.0)
    with pytest.raises(ValueError):
        negbin(CounterRNG(1), 0, IDX[:3], 1.0, -0.1)
