"""Samplers and log-densities for the distributions used by the chain.

Parameterizations are fixed throughout the package:

* gamma is shape/scale, mean ``shape * scale``;
* inverse-gamma is shape/scale-param with density proportional to
  ``u**(-shape-1) * exp(-scale_param / u)``.

Samplers take a ``numpy.random.Generator``; reproducible streams come from
:class:`RngStream`, a counter-based (Philox) source whose output is a pure
function of ``(seed, iteration, stream, block)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .core import NumericalError

# rejection from the untruncated law when at least this much mass lies in the support
REJECTION_MIN_MASS = 0.1
EMPTY_MASS = 1e-300
_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class RngStream:
    """Counter-based random streams.

    Every ``(iteration, stream, block)`` triple maps to an independent Philox
    counter, so a sweep split into fixed blocks draws the same numbers no
    matter how many workers execute the blocks or in which order.
    """

    seed: int

    def generator(self, iteration: int, stream: int = 0, block: int = 0) -> np.random.Generator:
        key = int(self.seed) & 0xFFFFFFFFFFFFFFFF
        # word 0 is left for Philox's own increment
        counter = [0, int(block), int(stream), int(iteration)]
        return np.random.Generator(np.random.Philox(key=key, counter=counter))


# fixed work-unit size; block boundaries never depend on the worker count
BLOCK_SIZE = 4096


def map_blocks(n: int, fn, executor=None) -> None:
    """Call ``fn(block_id, slice)`` over fixed-size blocks of ``range(n)``.

    ``fn`` must write only to its own slice. With an executor the blocks run
    concurrently; results are identical either way.
    """
    blocks = [(b, slice(b * BLOCK_SIZE, min(n, (b + 1) * BLOCK_SIZE))) for b in range(-(-n // BLOCK_SIZE))]
    if executor is None or len(blocks) == 1:
        for b, sl in blocks:
            fn(b, sl)
    else:
        for f in [executor.submit(fn, b, sl) for b, sl in blocks]:
            f.result()


def _out(x, *inputs):
    if all(np.ndim(v) == 0 for v in inputs):
        return float(np.asarray(x).reshape(-1)[0])
    return x


def _positive(name, v):
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v) & (v > 0)):
        raise ValueError(f"{name} must be finite and > 0")
    return v


def sample_gamma(shape, scale, rng: np.random.Generator, size=None):
    a = _positive("shape", shape)
    s = _positive("scale", scale)
    x = rng.gamma(a, s, size=np.broadcast(a, s).shape if size is None else size)
    # tiny shapes can underflow to exactly 0, outside the open support
    return _out(np.maximum(x, _TINY), shape, scale) if size is None else np.maximum(x, _TINY)


def sample_inverse_gamma(shape, scale_param, rng: np.random.Generator, size=None):
    """Reciprocal of a Gamma(shape, 1/scale_param) draw."""
    a = _positive("shape", shape)
    b = _positive("scale_param", scale_param)
    # the draw count must follow both parameters, not just the shape
    n = np.broadcast(a, b).shape if size is None else size
    g = np.maximum(rng.gamma(a, 1.0, size=n), _TINY)
    u = b / g
    return _out(u, shape, scale_param) if size is None else u


def sample_poisson(mean, rng: np.random.Generator, size=None):
    """Poisson draw; numpy uses inversion for small means and PTRS above 10."""
    lam = np.asarray(mean, dtype=float)
    if np.any(~np.isfinite(lam) | (lam < 0)):
        raise ValueError("Poisson mean must be finite and >= 0")
    k = rng.poisson(lam, size=size)
    return int(k) if size is None and np.ndim(mean) == 0 else k


def sample_bernoulli(p, rng: np.random.Generator, size=None):
    p = np.asarray(p, dtype=float)
    return (rng.random(size=size if size is not None else p.shape) < p).astype(np.int64)


def _tail_masses(a, lo, hi):
    """Lower CDF at lo, upper tail at lo and hi, and the mass of (lo, hi]."""
    p_lo = special.gammainc(a, lo)
    q_lo = special.gammaincc(a, lo)
    hi = np.broadcast_to(hi, np.shape(q_lo))
    fin = np.where(np.isinf(hi), 1.0, hi)
    q_hi = np.where(np.isinf(hi), 0.0, special.gammaincc(a, fin))
    p_hi = np.where(np.isinf(hi), 1.0, special.gammainc(a, fin))
    # difference taken on the tail where both terms are small
    mass = np.where(p_lo < 0.5, p_hi - p_lo, q_lo - q_hi)
    return p_lo, q_lo, q_hi, mass


def sample_truncated_gamma(shape, scale, rng: np.random.Generator, lo=0.0, hi=np.inf):
    """Exact draw from Gamma(shape, scale) restricted to ``(lo, hi]``.

    Rejection from the untruncated gamma where the support holds at least
    10% of its mass, inverse-CDF through the regularized incomplete gamma
    function elsewhere. Draw order is fixed (rejection sites first) so a
    given generator state always yields the same output.
    """
    a = _positive("shape", shape)
    s = _positive("scale", scale)
    if lo < 0 or not hi > lo:
        raise ValueError(f"support ({lo}, {hi}] is empty or negative")
    if lo == 0 and np.isinf(hi):
        return sample_gamma(shape, scale, rng)

    a, s = np.broadcast_arrays(a, s)
    a = a.reshape(-1)
    s = s.reshape(-1)
    zlo, zhi = lo / s, hi / s
    p_lo, q_lo, q_hi, mass = _tail_masses(a, zlo, zhi)
    if np.any(mass < EMPTY_MASS):
        raise NumericalError("truncated gamma support carries numerically zero mass")

    x = np.empty_like(a)
    rej = mass >= REJECTION_MIN_MASS
    idx = np.flatnonzero(rej)
    while idx.size:
        cand = np.maximum(rng.gamma(a[idx], s[idx]), _TINY)
        ok = (cand > lo) & (cand <= hi)
        x[idx[ok]] = cand[ok]
        idx = idx[~ok]

    inv = np.flatnonzero(~rej)
    if inv.size:
        u = rng.random(inv.size)
        ai, si = a[inv], s[inv]
        # invert on whichever tail keeps precision
        upper = p_lo[inv] > 0.5
        z = np.empty(inv.size)
        qt = q_lo[inv] - u * mass[inv]
        z[upper] = special.gammainccinv(ai[upper], qt[upper])
        pt = p_lo[inv] + u * mass[inv]
        z[~upper] = special.gammaincinv(ai[~upper], pt[~upper])
        xi = z * si
        xi = np.clip(xi, np.nextafter(lo, np.inf), hi)
        x[inv] = np.maximum(xi, _TINY)
    return _out(x.reshape(np.shape(np.broadcast_arrays(shape, scale)[0])), shape, scale)


def log_density_gamma(x, shape, scale):
    a = _positive("shape", shape)
    s = _positive("scale", scale)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = special.xlogy(a - 1, x) - x / s - special.gammaln(a) - a * np.log(s)
    return _out(np.where(x > 0, val, -np.inf), x, shape, scale)


def log_truncated_mass(shape, scale, lo=0.0, hi=np.inf):
    """log P(lo < X <= hi) for X ~ Gamma(shape, scale)."""
    a = _positive("shape", shape)
    s = _positive("scale", scale)
    if lo == 0 and np.isinf(hi):
        return _out(np.zeros(np.broadcast(a, s).shape), shape, scale)
    _, _, _, mass = _tail_masses(a, lo / s, hi / s)
    with np.errstate(divide="ignore"):
        return _out(np.log(mass), shape, scale)


def log_density_truncated_gamma(x, shape, scale, lo=0.0, hi=np.inf):
    x = np.asarray(x, dtype=float)
    val = np.asarray(log_density_gamma(x, shape, scale)) - log_truncated_mass(shape, scale, lo, hi)
    return _out(np.where((x > lo) & (x <= hi), val, -np.inf), x, shape, scale)


def log_density_inverse_gamma(u, shape, scale_param):
    a = _positive("shape", shape)
    b = _positive("scale_param", scale_param)
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = a * np.log(b) - special.gammaln(a) - (a + 1) * np.log(u) - b / u
    return _out(np.where(u > 0, val, -np.inf), u, shape, scale_param)


def log_mass_poisson(y, mean):
    lam = np.asarray(mean, dtype=float)
    if np.any(lam < 0):
        raise ValueError("Poisson mean must be >= 0")
    y = np.asarray(y, dtype=float)
    ok = (y >= 0) & (y == np.floor(y))
    with np.errstate(divide="ignore", invalid="ignore"):
        val = special.xlogy(y, lam) - lam - special.gammaln(y + 1)
    return _out(np.where(ok, val, -np.inf), y, mean)


def log_mass_bernoulli(y, p):
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("Bernoulli probability must lie in [0, 1]")
    y = np.asarray(y)
    with np.errstate(divide="ignore"):
        val = np.where(y == 1, np.log(p), np.where(y == 0, np.log1p(-p), -np.inf))
    return _out(val, y, p)
