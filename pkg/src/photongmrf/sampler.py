"""Metropolis-within-Gibbs sampler for Poisson and Bernoulli image denoising.

One iteration refreshes U (and W), then every intensity:

* masked pixel: exact draw from its prior conditional;
* Poisson pixel: exact draw from the conjugate gamma posterior;
* Bernoulli pixel: the Poisson posterior (binary ``y`` read as a count) is
  used as an independence proposal. With ``y = 0`` it is the exact target,
  so the move is always accepted; with ``y = 1`` the acceptance ratio
  reduces to ``g(eta x*) / g(eta x)`` with ``g(u) = (e^u - 1) / u``.

All sweeps are data-parallel over fixed blocks with counter-based streams, so
chains are bit-identical for any worker count.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import X_FLOOR, Geometry, NumericalError, as_stack, check_observation, temporal_boundary_value
from .distributions import (
    RngStream,
    log_density_truncated_gamma,
    map_blocks,
    sample_truncated_gamma,
)
from .gmrf import (
    HYPER_MAX,
    HYPER_MIN,
    XTILDE_FORMS,
    GmrfState,
    log_hyper_gradient,
    log_prior_unnormalized,
    prior_params,
    sample_U,
    sample_W,
)
from .observation import KINDS, ObservationModel, log_g, loglik_pixel

log = logging.getLogger(__name__)

STREAM_X = 3

ADAPT_MODES = ("off", "alpha", "alpha-beta")
SHARING_MODES = ("shared", "per-frame")


@dataclass(frozen=True)
class SamplerConfig:
    """Chain settings.

    Defaults follow the single-image protocol (2000 iterations, 600 burn-in);
    use ``n_mc=3000, n_bi=1000`` for videos.
    """

    n_mc: int = 2000
    n_bi: int = 600
    temporal: bool = False
    model: str = "bernoulli"
    adapt: str = "off"
    alpha0: float = 10.0
    beta0: float = 10.0
    support: tuple[float, float] = (0.0, np.inf)
    seed: int = 0
    thinning: int = 1
    threads: int = 1
    literal_scale: bool = False
    xtilde_form: str = "rate-sum"
    cyclic_time: bool = False
    hyper_sharing: str = "shared"
    quantiles: bool = False

    def validate(self) -> None:
        if self.model not in KINDS:
            raise ValueError(f"model must be one of {KINDS}")
        if not (isinstance(self.n_mc, (int, np.integer)) and isinstance(self.n_bi, (int, np.integer))):
            raise ValueError("n_mc and n_bi must be integers")
        if not 0 <= self.n_bi < self.n_mc:
            raise ValueError(f"need 0 <= n_bi < n_mc, got n_bi={self.n_bi}, n_mc={self.n_mc}")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.kept < 1:
            raise ValueError("thinning leaves no post-burn-in samples")
        if self.kept < 10:
            warnings.warn(f"only {self.kept} samples kept; estimates will be noisy")
        if self.adapt not in ADAPT_MODES:
            raise ValueError(f"adapt must be one of {ADAPT_MODES}")
        if self.adapt == "alpha-beta" and not self.temporal:
            raise ValueError("beta is only defined for the temporal model")
        if self.hyper_sharing not in SHARING_MODES:
            raise ValueError(f"hyper_sharing must be one of {SHARING_MODES}")
        if self.xtilde_form not in XTILDE_FORMS:
            raise ValueError(f"xtilde_form must be one of {XTILDE_FORMS}")
        for name in ("alpha0", "beta0"):
            v = getattr(self, name)
            if not HYPER_MIN <= v <= HYPER_MAX:
                raise ValueError(f"{name} must lie in [{HYPER_MIN}, {HYPER_MAX}]")
        lo, hi = self.support
        if lo < 0 or not hi > lo:
            raise ValueError(f"invalid support ({lo}, {hi}]")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def kept(self) -> int:
        return (self.n_mc - self.n_bi) // self.thinning


@dataclass
class ChainSummary:
    x_mmse: np.ndarray
    x_var: np.ndarray
    accept_rate: np.ndarray
    hyper_trace: np.ndarray  # rows: iteration, alpha (one column per frame if per-frame), beta
    kept: int
    log_post_trace: np.ndarray
    x_quantiles: dict | None = None
    adapt_warnings: int = 0
    final_state: GmrfState | None = field(default=None, repr=False)


# -- single-pixel conditionals ---------------------------------------------------

def poisson_posterior_params(shape, scale, y, eta, literal_scale: bool = False):
    """Gamma posterior (shape, scale) after one Poisson count ``y``.

    The exact conjugate update of a Gamma(shape, scale) prior is
    ``(shape + y, scale / (1 + scale * eta))``; for the 2D prior this is
    ``x_bar / (alpha + x_bar * eta)``. ``literal_scale`` substitutes the 2D
    scale ``x_bar / (1 + x_bar * eta)`` with ``x_bar = shape * scale``, which
    does not target the stated prior; it exists for comparison only.
    """
    shape = np.asarray(shape, float)
    scale = np.asarray(scale, float)
    if literal_scale:
        xb = shape * scale
        return shape + y, xb / (1 + xb * eta)
    return shape + y, scale / (1 + scale * eta)


def posterior_conditional_x_poisson(state: GmrfState, y, eta_ij, i, j, t, literal_scale=False):
    """(shape, scale, support) of a valid pixel's Poisson posterior conditional."""
    state.geometry.check((i, j, t))
    shape, scale = prior_params(state)
    a, s = shape[t - 1, i - 1, j - 1], scale[t - 1, i - 1, j - 1]
    pa, ps = poisson_posterior_params(a, s, y, eta_ij, literal_scale and not state.temporal)
    return float(pa), float(ps), state.support


def log_accept_ratio(x_star, x_cur, eta):
    """Closed-form log acceptance ratio at a y = 1 Bernoulli pixel."""
    return log_g(np.multiply(eta, x_star)) - log_g(np.multiply(eta, x_cur))


def log_accept_ratio_direct(x_star, x_cur, y, eta, prior_shape, prior_scale, prop_shape, prop_scale, support=(0.0, np.inf)):
    """Log acceptance ratio from full densities.

    ``log[f(x*) q(x)] - log[f(x) q(x*)]`` with ``f`` the prior conditional
    times the Bernoulli likelihood and ``q`` the proposal density.
    """
    lo, hi = support

    def log_target_over_proposal(x):
        lp = log_density_truncated_gamma(x, prior_shape, prior_scale, lo, hi)
        ll = loglik_pixel("bernoulli", y, eta, x)
        lq = log_density_truncated_gamma(x, prop_shape, prop_scale, lo, hi)
        return np.asarray(lp) + ll - lq

    return log_target_over_proposal(x_star) - log_target_over_proposal(x_cur)


def update_x(shape, scale, y, eta, valid, x_cur, kind, rng, support=(0.0, np.inf), literal_scale=False):
    """One X-update for a batch of conditionally independent pixels.

    ``shape``/``scale`` are the prior-conditional parameters. Returns the
    new intensities and a boolean acceptance array (always true except for
    rejected Metropolis-Hastings moves). Draw order: proposals for all
    pixels, then (Bernoulli only) one uniform per pixel.
    """
    shape = np.asarray(shape, float)
    scale = np.asarray(scale, float)
    y = np.asarray(y)
    valid = np.asarray(valid, bool)
    ps, pc = poisson_posterior_params(shape, scale, np.where(valid, y, 0), eta, literal_scale)
    ps = np.where(valid, ps, shape)
    pc = np.where(valid, pc, scale)
    lo, hi = support
    cand = np.asarray(sample_truncated_gamma(ps, pc, rng, lo, hi), float)
    if kind == "poisson":
        return cand, np.ones(cand.shape, bool)

    log_rho = np.zeros(cand.shape)
    if literal_scale:
        # proposal no longer matches the target's prior factor: use full densities
        mh = valid
        if mh.any():
            log_rho[mh] = log_accept_ratio_direct(
                cand[mh], x_cur[mh], y[mh], np.broadcast_to(eta, cand.shape)[mh],
                shape[mh], scale[mh], ps[mh], pc[mh], support)
    else:
        mh = valid & (y == 1)
        if mh.any():
            log_rho[mh] = log_accept_ratio(cand[mh], x_cur[mh], np.broadcast_to(eta, cand.shape)[mh])
    nu = rng.random(cand.shape)
    with np.errstate(divide="ignore"):
        accept = np.log(nu) < log_rho
    return np.where(accept, cand, x_cur), accept


def mh_step_bernoulli(state: GmrfState, y, eta_ij, i, j, t, x_current, rng, literal_scale=False):
    """Single-site Metropolis-Hastings move; returns (x_new, accepted)."""
    state.geometry.check((i, j, t))
    shape, scale = prior_params(state)
    s = (t - 1, i - 1, j - 1)
    xn, acc = update_x(
        shape[s], scale[s], np.asarray(y), eta_ij, True, np.asarray(float(x_current)), "bernoulli",
        rng, state.support, literal_scale and not state.temporal)
    return float(xn), bool(acc)


# -- chain ----------------------------------------------------------------------

def box_smooth(y, valid):
    """3x3 cyclic box average over valid pixels, frame by frame."""
    y = np.where(valid, y, 0).astype(float)
    v = valid.astype(float)
    num = np.zeros_like(y)
    den = np.zeros_like(y)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            num += np.roll(y, (di, dj), (1, 2))
            den += np.roll(v, (di, dj), (1, 2))
    fallback = y[valid].mean() if valid.any() else 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / den, fallback)


# fraction of the global moment-matched level used as a floor for the start
INIT_LEVEL_FLOOR = 0.5


def _invert_rate(rate, kind, eta):
    if kind == "bernoulli":
        return -np.log1p(-np.minimum(rate, 0.99)) / eta
    return rate / eta


def initial_intensity(y, kind, eta, valid, support=(0.0, np.inf)) -> np.ndarray:
    """Moment-matched start: invert the smoothed detection rate.

    At low flux most 3x3 windows hold no detection, so the local inversion
    is floored at half of the frame-wide inversion; a start near zero would
    drag every harmonic mean down and take hundreds of sweeps to recover.
    """
    ys = box_smooth(y, valid)
    x = _invert_rate(ys, kind, eta)
    counts = np.sum(np.where(valid, y, 0), axis=(1, 2), keepdims=True)
    n_valid = np.maximum(valid.sum(axis=(1, 2), keepdims=True), 1)
    level = _invert_rate(counts / n_valid, kind, np.mean(eta))
    lo, hi = support
    x = np.maximum(np.maximum(x, INIT_LEVEL_FLOOR * level), X_FLOOR)
    return np.clip(x, np.nextafter(lo, np.inf), hi)


def init_state(y, model: ObservationModel, config: SamplerConfig, executor=None) -> GmrfState:
    y = as_stack(y)
    eta, valid = model.resolved(y.shape)
    stream = RngStream(config.seed)
    gamma = temporal_boundary_value(y, valid)
    x0 = initial_intensity(y, model.kind, eta, valid, config.support)
    alpha = np.full(y.shape[0], float(config.alpha0))
    u0 = sample_U(x0, alpha, stream, 0, executor)
    w0 = None
    if config.temporal:
        w0 = sample_W(x0, config.beta0, gamma, stream, 0, config.cyclic_time, executor)
    return GmrfState(x0, u0, w0, alpha, float(config.beta0), gamma, tuple(config.support),
                     config.cyclic_time, config.xtilde_form)


def x_sweep(state: GmrfState, y, eta, valid, config: SamplerConfig, stream: RngStream, k: int,
            executor=None) -> tuple[GmrfState, np.ndarray]:
    """Update every X site given the current auxiliaries (conditionally independent)."""
    shape, scale = prior_params(state)
    if not np.all(np.isfinite(scale) & (scale > 0)):
        raise NumericalError(f"prior conditional scale left the floating-point range at iteration {k}; "
                             "the chain is too weakly regularized (increase alpha)")
    shp = state.x.shape
    flat = {n: np.ascontiguousarray(np.broadcast_to(a, shp)).reshape(-1)
            for n, a in (("shape", shape), ("scale", scale), ("y", y), ("eta", eta), ("valid", valid))}
    xc = state.x.reshape(-1)
    x_new = np.empty_like(xc)
    acc = np.empty(xc.shape, bool)
    literal = config.literal_scale and not state.temporal

    def block(b, sl):
        rng = stream.generator(k, STREAM_X, b)
        x_new[sl], acc[sl] = update_x(flat["shape"][sl], flat["scale"][sl], flat["y"][sl], flat["eta"][sl],
                                      flat["valid"][sl], xc[sl], config.model, rng, state.support, literal)

    map_blocks(xc.size, block, executor)
    return replace(state, x=x_new.reshape(shp)), acc.reshape(shp)


def gibbs_iteration(state: GmrfState, y, eta, valid, config: SamplerConfig, stream: RngStream, k: int,
                    executor=None) -> tuple[GmrfState, np.ndarray]:
    """One sweep: U, then W (3D), then every X site. Returns (state, accepted)."""
    if k < 1:
        raise ValueError("iterations are numbered from 1")
    u = sample_U(state.x, state.alpha, stream, k, executor)
    w = state.w
    if state.temporal:
        w = sample_W(state.x, state.beta, state.gamma_boundary, stream, k, state.cyclic_time, executor)
    return x_sweep(replace(state, u=u, w=w), y, eta, valid, config, stream, k, executor)


# cap on |change| of log alpha / log beta in one iteration; only binds early on
MAX_LOG_STEP = 0.1


def step_size(k: int, n_sites: int) -> float:
    """Stochastic-approximation step ``(10 / n_sites) * k ** -0.8``."""
    return 10.0 / n_sites * k ** -0.8


def adapt_hyperparameters(state: GmrfState, k: int, config: SamplerConfig):
    """Projected stochastic-approximation step on (log alpha, log beta).

    Returns ``(alpha, beta, ok)``; ``ok`` is false when the gradient was not
    finite and the update was skipped.
    """
    if config.adapt == "off" or k > config.n_bi:
        return state.alpha, state.beta, True
    ga, gb = log_hyper_gradient(state)
    g = state.geometry
    if config.hyper_sharing == "shared":
        ga = np.full_like(ga, ga.sum())
        n_alpha = g.size
    else:
        n_alpha = g.rows * g.cols
    if not (np.all(np.isfinite(ga)) and np.isfinite(gb)):
        return state.alpha, state.beta, False
    lo, hi = np.log(HYPER_MIN), np.log(HYPER_MAX)
    da = np.clip(step_size(k, n_alpha) * ga, -MAX_LOG_STEP, MAX_LOG_STEP)
    alpha = np.exp(np.clip(np.log(state.alpha) + da, lo, hi))
    beta = state.beta
    if config.adapt == "alpha-beta":
        db = np.clip(step_size(k, g.size) * gb, -MAX_LOG_STEP, MAX_LOG_STEP)
        beta = float(np.exp(np.clip(np.log(beta) + db, lo, hi)))
    return alpha, beta, True


def log_posterior(state: GmrfState, model_kind: str, y, eta, valid) -> float:
    return log_prior_unnormalized(state) + float(np.sum(loglik_pixel(model_kind, np.where(valid, y, 0), eta, state.x, valid)))


def run_chain(y, model: ObservationModel, config: SamplerConfig, callback=None) -> ChainSummary:
    """Run ``n_mc`` iterations, discard ``n_bi`` and summarize the kept draws.

    ``callback(k, state)`` is called after every iteration if given.
    """
    config.validate()
    if config.model != model.kind:
        raise ValueError(f"config model {config.model!r} does not match observation model {model.kind!r}")
    y = check_observation(y, model.kind)
    eta, valid = model.resolved(y.shape)
    y = np.where(valid, y, 0)
    geom = Geometry.of(y)
    stream = RngStream(config.seed)

    executor = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    try:
        state = init_state(y, model, config, executor)
        n_alpha_cols = 1 if config.hyper_sharing == "shared" else geom.frames
        trace = np.empty((config.n_mc + 1, n_alpha_cols + 2))
        trace[0] = [0, *state.alpha[:n_alpha_cols], state.beta]
        logp = np.empty(config.n_mc)
        mean = np.zeros(geom.shape)
        m2 = np.zeros(geom.shape)
        acc_count = np.zeros(geom.shape)
        samples = [] if config.quantiles else None
        kept = 0
        bad_updates = 0
        for k in range(1, config.n_mc + 1):
            state, accepted = gibbs_iteration(state, y, eta, valid, config, stream, k, executor)
            if config.adapt != "off" and k <= config.n_bi:
                alpha, beta, ok = adapt_hyperparameters(state, k, config)
                if not ok:
                    bad_updates += 1
                    log.warning("non-finite hyperparameter gradient at iteration %d; update skipped", k)
                state = replace(state, alpha=alpha, beta=beta)
            trace[k] = [k, *state.alpha[:n_alpha_cols], state.beta]
            logp[k - 1] = log_posterior(state, model.kind, y, eta, valid)
            if k > config.n_bi and (k - config.n_bi) % config.thinning == 0:
                kept += 1
                delta = state.x - mean
                mean += delta / kept
                m2 += delta * (state.x - mean)
                acc_count += accepted
                if samples is not None:
                    samples.append(state.x.copy())
            if callback is not None:
                callback(k, state)
    finally:
        if executor is not None:
            executor.shutdown()

    quant = None
    if samples:
        q = np.quantile(np.stack(samples), [0.05, 0.5, 0.95], axis=0)
        quant = {0.05: q[0], 0.5: q[1], 0.95: q[2]}
    return ChainSummary(mean, m2 / kept, acc_count / kept, trace, kept, logp, quant, bad_updates, state)
