"""Detector forward models: ideal photon counting (Poisson) and saturating
single-photon detection (Bernoulli), with efficiency maps and fault masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .core import X_FLOOR, as_stack, check_eta, check_intensity, check_mask, check_observation
from .distributions import RngStream

KINDS = ("poisson", "bernoulli")

STREAM_SIMULATE = 101


@dataclass(frozen=True)
class ObservationModel:
    """Observation law plus known detector efficiencies and validity mask.

    ``eta`` has shape (rows, cols); ``mask`` is a boolean stack or ``None``
    (all pixels valid).
    """

    kind: str
    eta: np.ndarray | None = None
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"observation model must be one of {KINDS}, got {self.kind!r}")

    def resolved(self, shape):
        """(eta broadcastable to ``shape``, boolean validity stack)."""
        _, r, c = shape
        eta = check_eta(self.eta, r, c)
        h = np.ones(shape, bool) if self.mask is None else check_mask(self.mask, shape)
        return eta[None], h


def detection_probability(eta, x):
    """P(at least one detection) = 1 - exp(-eta * x)."""
    return -np.expm1(-np.multiply(eta, x))


def log_g(u):
    """log((e^u - 1) / u), stable for tiny and large u."""
    u = np.asarray(u, dtype=float)
    # log(expm1(u)) = u + log1p(-e^-u); where() evaluates both branches
    with np.errstate(all="ignore"):
        small = np.log(np.expm1(np.minimum(u, 1.0)))
        return np.where(u > 1.0, u + np.log1p(-np.exp(-u)), small) - np.log(u)


def loglik_pixel(kind: str, y, eta, x, h=1):
    """Per-pixel log-likelihood; masked pixels (h = 0) contribute 0."""
    y = np.asarray(y, dtype=float)
    ex = np.multiply(eta, x)
    if kind == "bernoulli":
        if np.any((y != 0) & (y != 1)):
            raise ValueError("Bernoulli observations must be 0 or 1")
        with np.errstate(divide="ignore"):
            val = np.where(y == 1, np.log(-np.expm1(-ex)), -ex)
    elif kind == "poisson":
        val = special.xlogy(y, ex) - ex - special.gammaln(y + 1)
    else:
        raise ValueError(f"unknown observation model {kind!r}")
    val = np.where(np.asarray(h) != 0, val, 0.0)
    return float(val) if val.ndim == 0 else val


def loglik_total(model: ObservationModel, y, x) -> float:
    y = as_stack(y)
    x = as_stack(x)
    if y.shape != x.shape:
        raise ValueError(f"shape mismatch: observations {y.shape} vs intensities {x.shape}")
    eta, h = model.resolved(y.shape)
    # masked entries are ignored whatever their stored value
    y = np.where(h, y, 0)
    return float(np.sum(loglik_pixel(model.kind, y, eta, x, h)))


def simulate(model: ObservationModel, x, seed: int = 0) -> np.ndarray:
    """Draw an observation stack at intensities ``x``; masked pixels emit 0.

    Uses one counter-based stream per frame, so output depends only on
    ``seed`` and the inputs.
    """
    x = check_intensity(x)
    eta, h = model.resolved(x.shape)
    stream = RngStream(seed)
    y = np.empty(x.shape, dtype=np.int64)
    for t in range(x.shape[0]):
        rng = stream.generator(0, STREAM_SIMULATE, t)
        mean = eta[0] * x[t]
        if model.kind == "poisson":
            y[t] = rng.poisson(mean)
        else:
            y[t] = rng.random(mean.shape) < detection_probability(1.0, mean)
    y[~h] = 0
    return y


def scale_to_target(x_raw, target_mean: float) -> np.ndarray:
    """Rescale so the average intensity equals ``target_mean``.

    Exact zeros are first lifted to ``X_FLOOR`` because the prior support is
    open at 0.
    """
    if not target_mean > 0:
        raise ValueError("target mean must be > 0")
    x = as_stack(x_raw)
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError("raw intensities must be finite and nonnegative")
    if not x.mean() > 0:
        raise ValueError("raw intensities have zero mean")
    x = np.where(x > 0, x, X_FLOOR)
    return x * (target_mean / x.mean())


def validate_observation(y, kind: str) -> np.ndarray:
    return check_observation(y, kind)
