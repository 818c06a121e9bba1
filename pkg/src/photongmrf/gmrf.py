"""Hidden gamma-MRF prior over intensities.

Each intensity ``x[t, i, j]`` is tied to four spatial auxiliaries in ``U[t]``
and, when the temporal model is on, to ``W[t]`` and ``W[t+1]``. Auxiliaries
are inverse-gamma given their X neighbours; intensities are gamma given their
auxiliaries. Spatial edges carry weight ``alpha / 4`` and temporal edges
``beta / 2``, so the conditionals below all follow from one joint density
(see :func:`log_prior_unnormalized`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .core import Geometry
from .distributions import RngStream, map_blocks, sample_inverse_gamma

STREAM_U = 1
STREAM_W = 2

HYPER_MIN = 1e-3
HYPER_MAX = 1e3

XTILDE_FORMS = ("rate-sum", "additive")


@dataclass
class GmrfState:
    """Current (X, U, W, alpha, beta) of a chain.

    ``alpha`` holds one value per frame (all equal when shared). ``w`` has
    ``frames + 1`` frames and is ``None`` for the per-frame (2D) model.
    """

    x: np.ndarray
    u: np.ndarray
    w: np.ndarray | None
    alpha: np.ndarray
    beta: float = 1.0
    gamma_boundary: float = 1.0
    support: tuple[float, float] = (0.0, np.inf)
    cyclic_time: bool = False
    xtilde_form: str = "rate-sum"
    geometry: Geometry = field(init=False)

    def __post_init__(self):
        self.geometry = Geometry.of(self.x)
        self.alpha = np.broadcast_to(np.asarray(self.alpha, float), (self.geometry.frames,)).copy()
        if self.xtilde_form not in XTILDE_FORMS:
            raise ValueError(f"xtilde_form must be one of {XTILDE_FORMS}")

    @property
    def temporal(self) -> bool:
        return self.w is not None


def _alpha_field(alpha, shape):
    return np.broadcast_to(np.asarray(alpha, float).reshape(-1, 1, 1), shape)


# -- composite statistics, whole fields --------------------------------------

def u_tilde_field(x: np.ndarray) -> np.ndarray:
    """Mean of the four X neighbours of every U site (cyclic)."""
    return (x + np.roll(x, -1, 1) + np.roll(x, -1, 2) + np.roll(x, (-1, -1), (1, 2))) / 4


def x_bar_field(u: np.ndarray) -> np.ndarray:
    """Harmonic mean of the four U neighbours of every X site (cyclic)."""
    inv = 1 / u + 1 / np.roll(u, 1, 1) + 1 / np.roll(u, 1, 2) + 1 / np.roll(u, (1, 1), (1, 2))
    return 4 / inv


def padded_time(x: np.ndarray, gamma_boundary: float, cyclic: bool = False) -> np.ndarray:
    """X with ghost frames at t = 0 and t = T+1 prepended/appended."""
    if cyclic:
        first, last = x[-1:], x[:1]
    else:
        first = last = np.full((1,) + x.shape[1:], float(gamma_boundary))
    return np.concatenate([first, x, last])


def w_tilde_field(x: np.ndarray, gamma_boundary: float, cyclic: bool = False) -> np.ndarray:
    """Mean of the two temporally adjacent X values for W frames 1..T+1."""
    p = padded_time(x, gamma_boundary, cyclic)
    return (p[:-1] + p[1:]) / 2


def w_bar_field(w: np.ndarray) -> np.ndarray:
    """Harmonic mean of W[t] and W[t+1] for every X frame."""
    return 2 / (1 / w[:-1] + 1 / w[1:])


def x_tilde_field(u, w, alpha, beta, form: str = "rate-sum") -> np.ndarray:
    """Scale of the 3D prior conditional of X.

    ``rate-sum`` is ``1 / (alpha / x_bar + beta / w_bar)``, the scale implied
    by the joint density. ``additive`` is the ``x_bar / alpha +
    w_bar / beta`` variant, kept for comparison only: it inflates the prior
    mean by at least a factor 4 and diverges as beta -> 0.
    """
    xb = x_bar_field(u)
    wb = w_bar_field(w)
    a = _alpha_field(alpha, xb.shape)
    if form == "rate-sum":
        return 1 / (a / xb + beta / wb)
    if form == "additive":
        return xb / a + wb / beta
    raise ValueError(f"unknown x_tilde form {form!r}")


# -- single-site views (1-based indices) -------------------------------------

def _site(field, i, j, t):
    return float(field[t - 1, i - 1, j - 1])


def u_tilde(x, i, j, t) -> float:
    Geometry.of(x).check((i, j, t))
    return _site(u_tilde_field(np.asarray(x, float)), i, j, t)


def w_tilde(x, gamma_boundary, i, j, t, cyclic=False) -> float:
    g = Geometry.of(x)
    if not (1 <= t <= g.frames + 1):
        raise IndexError(f"W frame {t} outside 1..{g.frames + 1}")
    g.check((i, j, 1))
    return _site(w_tilde_field(np.asarray(x, float), gamma_boundary, cyclic), i, j, t)


def x_bar(u, i, j, t) -> float:
    Geometry.of(u).check((i, j, t))
    return _site(x_bar_field(np.asarray(u, float)), i, j, t)


def x_tilde(u, w, alpha, beta, i, j, t, form="rate-sum") -> float:
    Geometry.of(u).check((i, j, t))
    return _site(x_tilde_field(np.asarray(u, float), np.asarray(w, float), alpha, beta, form), i, j, t)


# -- conditionals -------------------------------------------------------------

def prior_params(state: GmrfState) -> tuple[np.ndarray, np.ndarray]:
    """(shape, scale) of every X site's gamma conditional given U (and W)."""
    shp = state.x.shape
    a = _alpha_field(state.alpha, shp)
    if state.temporal:
        return a + state.beta, x_tilde_field(state.u, state.w, state.alpha, state.beta, state.xtilde_form)
    return np.array(a), x_bar_field(state.u) / a


def prior_conditional_x(state: GmrfState, i, j, t) -> tuple[float, float, tuple[float, float]]:
    """(shape, scale, support) of the prior conditional at one X site."""
    state.geometry.check((i, j, t))
    shape, scale = prior_params(state)
    return _site(shape, i, j, t), _site(scale, i, j, t), state.support


def sample_U(x, alpha, stream: RngStream, iteration: int, executor=None) -> np.ndarray:
    """Draw every U site independently from IG(alpha, alpha * u_tilde)."""
    ut = u_tilde_field(x).reshape(-1)
    a = np.array(_alpha_field(alpha, x.shape)).reshape(-1)
    out = np.empty_like(ut)

    def block(b, sl):
        rng = stream.generator(iteration, STREAM_U, b)
        out[sl] = sample_inverse_gamma(a[sl], a[sl] * ut[sl], rng)

    map_blocks(out.size, block, executor)
    return out.reshape(x.shape)


def sample_W(x, beta, gamma_boundary, stream: RngStream, iteration: int, cyclic=False, executor=None, temporal=True):
    """Draw every W site independently from IG(beta, beta * w_tilde).

    Under cyclic time W[T+1] is the same variable as W[1].
    """
    if not temporal:
        raise ValueError("W is only defined for the temporal (3D) model")
    wt = w_tilde_field(x, gamma_boundary, cyclic)
    n_free = wt.shape[0] - 1 if cyclic else wt.shape[0]
    flat = wt[:n_free].reshape(-1)
    out = np.empty_like(flat)

    def block(b, sl):
        rng = stream.generator(iteration, STREAM_W, b)
        out[sl] = sample_inverse_gamma(beta, beta * flat[sl], rng)

    map_blocks(out.size, block, executor)
    w = out.reshape((n_free,) + x.shape[1:])
    if cyclic:
        w = np.concatenate([w, w[:1]])
    return w


# -- joint density and hyperparameter gradients --------------------------------

def log_prior_unnormalized(state: GmrfState) -> float:
    """Log joint prior of (X, U, W) up to an (alpha, beta)-dependent constant."""
    x, u = state.x, state.u
    a = _alpha_field(state.alpha, x.shape)
    lx = np.log(x)
    val = np.sum((a - 1) * lx) - np.sum((a + 1) * np.log(u)) - np.sum(a * u_tilde_field(x) / u)
    if state.temporal:
        w = state.w
        wt = w_tilde_field(x, state.gamma_boundary, state.cyclic_time)
        if state.cyclic_time:
            w, wt = w[:-1], wt[:-1]
        b = state.beta
        val += b * np.sum(lx) - (b + 1) * np.sum(np.log(w)) - b * np.sum(wt / w)
    return float(val)


def log_hyper_gradient(state: GmrfState) -> tuple[np.ndarray, float]:
    """Gradient of the log pseudo-likelihood w.r.t. (log alpha_t, log beta).

    Sums the alpha/beta derivatives of every site's conditional log-density
    (gamma for X, inverse-gamma for U and W) at the current sample. Returns
    per-frame alpha components and the beta component (0 in 2D).
    """
    x, u = state.x, state.u
    alpha = _alpha_field(state.alpha, x.shape)
    lx = np.log(x)
    xb = x_bar_field(u)
    ut = u_tilde_field(x)

    # U sites: d/dalpha log IG(u; alpha, alpha * ut)
    g_u = np.log(alpha * ut) + 1 - special.digamma(alpha) - np.log(u) - ut / u

    if not state.temporal:
        rate = alpha / xb
        g_x = np.log(rate) - special.digamma(alpha) + lx + (alpha / rate - x) / xb
        ga = np.sum(alpha * (g_x + g_u), axis=(1, 2))
        return ga, 0.0

    b = state.beta
    wb = w_bar_field(state.w)
    shape = alpha + b
    if state.xtilde_form == "rate-sum":
        rate = alpha / xb + b / wb
        dr_da, dr_db = 1 / xb, 1 / wb
    else:
        s = xb / alpha + wb / b
        rate = 1 / s
        dr_da, dr_db = xb / (alpha * s) ** 2, wb / (b * s) ** 2
    common = np.log(rate) - special.digamma(shape) + lx
    resid = shape / rate - x
    g_xa = common + resid * dr_da
    g_xb = common + resid * dr_db

    w = state.w
    wt = w_tilde_field(x, state.gamma_boundary, state.cyclic_time)
    if state.cyclic_time:
        w, wt = w[:-1], wt[:-1]
    g_w = np.log(b * wt) + 1 - special.digamma(b) - np.log(w) - wt / w

    ga = np.sum(alpha * (g_xa + g_u), axis=(1, 2))
    gb = b * (np.sum(g_xb) + np.sum(g_w))
    return ga, float(gb)
