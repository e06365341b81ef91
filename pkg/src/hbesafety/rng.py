"""Counter-based random streams and the samplers built on them.

Every draw is a pure function of ``(seed, stream, index, counter)``:

    mix(z)   = SplitMix64 finaliser:
               z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
               z ^= z >> 27; z *= 0x94D049BB133111EB
               z ^= z >> 31                      (all arithmetic mod 2**64)
    key      = mix(seed + mix(stream) )
    sub      = mix(key + index * G)              G = 0x9E3779B97F4A7C15
    word     = mix(sub + (counter + 1) * G)
    uniform  = ((word >> 11) + 0.5) * 2**-53     strictly inside (0, 1)

so ``word`` for fixed ``(seed, stream, index)`` is the SplitMix64 sequence
seeded at ``sub``. Sampling for item ``index`` never touches another item's
words, which makes generation order- and thread-independent.

Normals use Box-Muller (cosine branch) on counters ``2c, 2c+1``. Gamma
variates use Marsaglia-Tsang: attempt ``k`` takes a normal from counters
``3k, 3k+1`` and the acceptance uniform from ``3k+2``; shapes below one are
boosted with ``Gamma(a+1) * U**(1/a)``, ``U`` from the companion stream
``stream + BOOST_STREAM_OFFSET``. Poisson variates use inversion (one
uniform) for ``lam < 10`` and Hormann's PTRS rejection (counters ``2k,
2k+1``) otherwise.
"""

from __future__ import annotations

import numpy as np
from scipy import special

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MASK = (1 << 64) - 1
BOOST_STREAM_OFFSET = 1 << 20


def _mix(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


class CounterRNG:
    """Stateless generator keyed by a 64-bit seed."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK

    def _key(self, stream: int) -> np.uint64:
        with np.errstate(over="ignore"):
            s = _mix(np.array([int(stream) & _MASK], dtype=np.uint64))
            return _mix(np.array([self.seed], dtype=np.uint64) + s)[0]

    def words(self, stream: int, index, counter) -> np.ndarray:
        index = np.asarray(index, dtype=np.uint64)
        counter = np.asarray(counter, dtype=np.uint64)
        with np.errstate(over="ignore"):
            sub = _mix(self._key(stream) + index * _GOLDEN)
            return _mix(sub + (counter + np.uint64(1)) * _GOLDEN)

    def uniform(self, stream: int, index, counter=0) -> np.ndarray:
        w = self.words(stream, index, counter)
        return ((w >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53

    def normal(self, stream: int, index, counter=0) -> np.ndarray:
        counter = np.asarray(counter, dtype=np.uint64)
        u1 = self.uniform(stream, index, 2 * counter)
        u2 = self.uniform(stream, index, 2 * counter + 1)
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def gamma(rng: CounterRNG, stream: int, index, shape, scale=1.0) -> np.ndarray:
    """Gamma(shape, scale) variates, one per entry of ``index``."""
    index = np.asarray(index, dtype=np.uint64)
    shape = np.broadcast_to(np.asarray(shape, dtype=float), index.shape)
    scale = np.broadcast_to(np.asarray(scale, dtype=float), index.shape)
    if np.any(shape <= 0):
        raise ValueError("gamma shape must be > 0")
    small = shape < 1.0
    a = np.where(small, shape + 1.0, shape)
    d = a - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty(index.shape)
    todo = np.arange(index.size)
    k = 0
    while todo.size:
        idx = index[todo]
        x = _normal_at(rng, stream, idx, 3 * k)
        u = rng.uniform(stream, idx, 3 * k + 2)
        v = (1.0 + c[todo] * x) ** 3
        with np.errstate(invalid="ignore", divide="ignore"):
            ok = (v > 0) & (np.log(u) < 0.5 * x * x + d[todo] - d[todo] * v + d[todo] * np.log(v))
        out[todo[ok]] = d[todo[ok]] * v[ok]
        todo = todo[~ok]
        k += 1
    if np.any(small):
        u = rng.uniform(stream + BOOST_STREAM_OFFSET, index[small], 0)
        out[small] *= u ** (1.0 / shape[small])
    return out * scale


def _normal_at(rng: CounterRNG, stream: int, index, counter: int) -> np.ndarray:
    u1 = rng.uniform(stream, index, counter)
    u2 = rng.uniform(stream, index, counter + 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def poisson(rng: CounterRNG, stream: int, index, lam) -> np.ndarray:
    """Poisson(lam) variates as int64, one per entry of ``index``."""
    index = np.asarray(index, dtype=np.uint64)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), index.shape)
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("poisson mean must be finite and >= 0")
    out = np.zeros(index.shape, dtype=np.int64)
    low = np.flatnonzero((lam > 0) & (lam < 10.0))
    if low.size:
        out[low] = _poisson_inversion(rng.uniform(stream, index[low], 0), lam[low])
    high = np.flatnonzero(lam >= 10.0)
    if high.size:
        out[high] = _poisson_ptrs(rng, stream, index[high], lam[high])
    return out


def _poisson_inversion(u, lam):
    k = np.zeros(u.shape, dtype=np.int64)
    p = np.exp(-lam)
    cdf = p.copy()
    active = u > cdf
    n = 0
    while np.any(active) and n < 400:
        n += 1
        k[active] += 1
        p[active] *= lam[active] / k[active]
        cdf[active] += p[active]
        active &= u > cdf
        active &= p > 0
    return k


def _poisson_ptrs(rng, stream, index, lam):
    slam = np.sqrt(lam)
    loglam = np.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    out = np.empty(index.shape, dtype=np.int64)
    todo = np.arange(index.size)
    k = 0
    while todo.size:
        idx = index[todo]
        U = rng.uniform(stream, idx, 2 * k) - 0.5
        V = rng.uniform(stream, idx, 2 * k + 1)
        us = 0.5 - np.abs(U)
        a_, b_, lam_ = a[todo], b[todo], lam[todo]
        kk = np.floor((2.0 * a_ / us + b_) * U + lam_ + 0.43)
        quick = (us >= 0.07) & (V <= vr[todo])
        reject = (kk < 0) | ((us < 0.013) & (V > us))
        with np.errstate(divide="ignore", invalid="ignore"):
            lhs = np.log(V) + np.log(invalpha[todo]) - np.log(a_ / (us * us) + b_)
            rhs = -lam_ + kk * loglam[todo] - special.gammaln(kk + 1.0)
        ok = quick | (~reject & (lhs <= rhs))
        out[todo[ok]] = kk[ok].astype(np.int64)
        todo = todo[~ok]
        k += 1
    return out


def negbin(rng: CounterRNG, stream: int, index, mu, kappa: float) -> np.ndarray:
    """Gamma-Poisson mixture with mean ``mu`` and variance ``mu + kappa mu^2``.

    ``kappa == 0`` degenerates to Poisson(mu). The gamma draw uses ``stream``
    and the Poisson draw ``stream + 1``.
    """
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    index = np.asarray(index, dtype=np.uint64)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), index.shape)
    if kappa == 0:
        rate = mu
    else:
        rate = gamma(rng, stream, index, 1.0 / kappa, kappa * mu)
    return poisson(rng, stream + 1, index, rate)
