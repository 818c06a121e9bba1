from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate, interpolate, stats

from photongmrf.core import DataValidationError
from photongmrf.distributions import RngStream, sample_truncated_gamma
from photongmrf.gmrf import GmrfState
from photongmrf.observation import ObservationModel, simulate
from photongmrf.sampler import (
    SamplerConfig,
    adapt_hyperparameters,
    init_state,
    log_accept_ratio,
    log_accept_ratio_direct,
    mh_step_bernoulli,
    poisson_posterior_params,
    posterior_conditional_x_poisson,
    run_chain,
    step_size,
    update_x,
    x_sweep,
)


def test_posterior_params_3d():
    shape, scale = poisson_posterior_params(2.0, 1.0, 1, 1.0)
    assert (shape, scale) == pytest.approx((3.0, 0.5))
    # quadrature oracle: density proportional to x^2 exp(-2x)
    z = integrate.quad(lambda v: v**2 * np.exp(-2 * v), 0, np.inf)[0]
    m = integrate.quad(lambda v: v**3 * np.exp(-2 * v), 0, np.inf)[0] / z
    assert shape * scale == pytest.approx(m)


def test_posterior_params_2d_conjugate():
    alpha, xbar, eta = 1.0, 2.0, 0.5
    shape, scale = poisson_posterior_params(alpha, xbar / alpha, 0, eta)
    assert (shape, scale) == pytest.approx((1.0, 1.0))
    alpha = 4.0
    _, scale = poisson_posterior_params(alpha, xbar / alpha, 3, 1.0)
    assert scale == pytest.approx(xbar / (alpha + xbar))
    _, literal = poisson_posterior_params(alpha, xbar / alpha, 3, 1.0, literal_scale=True)
    assert literal == pytest.approx(xbar / (1 + xbar))


def test_posterior_reverts_without_information():
    shape, scale = poisson_posterior_params(3.0, 0.4, 0, 1e-14)
    assert (shape, scale) == pytest.approx((3.0, 0.4))


def test_posterior_conditional_view():
    s = GmrfState(np.ones((1, 2, 2)), np.full((1, 2, 2), 2.0), None, 4.0)
    shape, scale, support = posterior_conditional_x_poisson(s, 1, 1.0, 1, 1, 1)
    assert (shape, scale) == pytest.approx((5.0, 2 / 6))


def test_accept_ratio_oracle():
    rho = np.exp(log_accept_ratio(2.0, 1.0, 1.0))
    assert rho == pytest.approx(((np.e**2 - 1) / 2) / (np.e - 1), rel=1e-12)
    direct = log_accept_ratio_direct(2.0, 1.0, 1, 1.0, 3.0, 0.5, 4.0, 0.5 / 1.5)
    assert np.exp(direct) == pytest.approx(rho, rel=1e-12)
    assert log_accept_ratio(1.3, 1.3, 0.7) == 0.0


def test_y0_always_accepts_proposal():
    rng_a, rng_b = np.random.default_rng(3), np.random.default_rng(3)
    n = 1000
    shape, scale = np.full(n, 3.0), np.full(n, 0.2)
    x_cur = np.full(n, 0.5)
    x_new, acc = update_x(shape, scale, np.zeros(n), 1.0, np.ones(n, bool), x_cur, "bernoulli", rng_a)
    ps, pc = poisson_posterior_params(shape, scale, 0, 1.0)
    np.testing.assert_array_equal(x_new, sample_truncated_gamma(ps, pc, rng_b))
    assert acc.all()


def test_masked_pixels_draw_from_prior():
    rng_a, rng_b = np.random.default_rng(4), np.random.default_rng(4)
    shape, scale = np.full(5, 2.0), np.full(5, 0.3)
    x_new, acc = update_x(shape, scale, np.ones(5), 1.0, np.zeros(5, bool), np.ones(5), "bernoulli", rng_a)
    np.testing.assert_array_equal(x_new, sample_truncated_gamma(shape, scale, rng_b))
    assert acc.all()


def test_single_site_step():
    s = GmrfState(np.ones((1, 3, 3)), np.ones((1, 3, 3)), None, 3.0)
    x, acc = mh_step_bernoulli(s, 0, 1.0, 2, 2, 1, 0.8, np.random.default_rng(0))
    assert acc and x > 0
    with pytest.raises(IndexError):
        mh_step_bernoulli(s, 0, 1.0, 4, 1, 1, 0.8, np.random.default_rng(0))


def target_cdf(a, s, eta, support=(0.0, np.inf)):
    lo, hi = support
    top = stats.gamma.ppf(1 - 1e-12, a, scale=s) if np.isinf(hi) else hi
    grid = np.linspace(lo, top, 20001)
    dens = stats.gamma.pdf(grid, a, scale=s) * -np.expm1(-eta * grid)
    cdf = integrate.cumulative_trapezoid(dens, grid, initial=0)
    return interpolate.interp1d(grid, cdf / cdf[-1], bounds_error=False, fill_value=(0.0, 1.0))


def draw_exact(cdf_pts, n, rng):
    grid, cdf = cdf_pts
    return np.interp(rng.random(n), cdf, grid)


@pytest.mark.parametrize("literal", [False, True])
@pytest.mark.parametrize("support", [(0.0, np.inf), (0.0, 1.5)])
def test_update_preserves_exact_conditional(literal, support):
    a, s, eta, n = 2.5, 0.4, 0.8, 20000
    cdf = target_cdf(a, s, eta, support)
    grid = cdf.x
    rng = np.random.default_rng(11)
    x0 = draw_exact((grid, cdf.y), n, rng)
    x1, acc = update_x(np.full(n, a), np.full(n, s), np.ones(n), eta, np.ones(n, bool), x0, "bernoulli", rng,
                       support, literal_scale=False)
    assert stats.kstest(x1, cdf).pvalue > 0.01
    assert 0 < acc.mean() < 1
    if literal:
        # the literal scale only changes the proposal; full-density ratios keep the target
        xl, _ = update_x(np.full(n, a), np.full(n, s), np.ones(n), eta, np.ones(n, bool), x0, "bernoulli", rng,
                         support, literal_scale=True)
        assert stats.kstest(xl, cdf).pvalue > 0.01


def small_data(kind="bernoulli", shape=(1, 24, 24), mean=0.5, seed=0):
    x = np.full(shape, mean)
    return simulate(ObservationModel(kind), x, seed=seed)


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(n_mc=10, n_bi=10).validate()
    with pytest.raises(ValueError):
        SamplerConfig(adapt="beta").validate()
    with pytest.raises(ValueError):
        SamplerConfig(adapt="alpha-beta", temporal=False).validate()
    with pytest.raises(ValueError):
        SamplerConfig(alpha0=0.0).validate()
    with pytest.raises(ValueError):
        SamplerConfig(n_mc=20, n_bi=10, thinning=11).validate()
    with pytest.warns(UserWarning):
        SamplerConfig(n_mc=11, n_bi=10).validate()


def test_rejects_non_binary_bernoulli_input():
    y = small_data("poisson", mean=3.0)
    with pytest.raises(DataValidationError, match="first offending site"):
        run_chain(y, ObservationModel("bernoulli"), SamplerConfig(n_mc=5, n_bi=1))


def test_single_kept_sample():
    y = small_data()
    with pytest.warns(UserWarning):
        s = run_chain(y, ObservationModel("bernoulli"), SamplerConfig(n_mc=6, n_bi=5))
    assert s.kept == 1
    np.testing.assert_array_equal(s.x_mmse, s.final_state.x)
    np.testing.assert_array_equal(s.x_var, 0)


def test_same_seed_same_summary():
    y = small_data()
    cfg = SamplerConfig(n_mc=30, n_bi=10, seed=5, quantiles=True)
    a = run_chain(y, ObservationModel("bernoulli"), cfg)
    b = run_chain(y, ObservationModel("bernoulli"), cfg)
    for f in ("x_mmse", "x_var", "accept_rate", "hyper_trace", "log_post_trace"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    c = run_chain(y, ObservationModel("bernoulli"), replace(cfg, seed=6))
    assert not np.array_equal(a.x_mmse, c.x_mmse)


def test_thread_count_does_not_change_results():
    y = small_data(shape=(2, 48, 48))
    cfg = SamplerConfig(n_mc=12, n_bi=4, temporal=True)
    a = run_chain(y, ObservationModel("bernoulli"), cfg)
    b = run_chain(y, ObservationModel("bernoulli"), replace(cfg, threads=3))
    np.testing.assert_array_equal(a.x_mmse, b.x_mmse)
    np.testing.assert_array_equal(a.accept_rate, b.accept_rate)


def test_poisson_acceptance_is_total():
    y = small_data("poisson")
    s = run_chain(y, ObservationModel("poisson"), SamplerConfig(n_mc=20, n_bi=5, model="poisson"))
    np.testing.assert_array_equal(s.accept_rate, 1.0)


def test_bernoulli_acceptance_only_rejects_detections():
    y = small_data(mean=1.0)
    s = run_chain(y, ObservationModel("bernoulli"), SamplerConfig(n_mc=60, n_bi=10))
    np.testing.assert_array_equal(s.accept_rate[y == 0], 1.0)
    assert s.accept_rate[y == 1].mean() < 1.0


def test_fixed_hyperparameters_stay_fixed():
    s = run_chain(small_data(), ObservationModel("bernoulli"), SamplerConfig(n_mc=20, n_bi=5, alpha0=7.0))
    np.testing.assert_array_equal(s.hyper_trace[:, 1], 7.0)
    np.testing.assert_array_equal(s.hyper_trace[:, 0], np.arange(21))


def test_adaptation_moves_alpha_only_during_burn_in():
    y = small_data(mean=1.0, shape=(1, 32, 32))
    s = run_chain(y, ObservationModel("bernoulli"), SamplerConfig(n_mc=60, n_bi=30, adapt="alpha", alpha0=10.0))
    tr = s.hyper_trace[:, 1]
    assert tr[30] != 10.0
    assert np.all(tr[31:] == tr[30])
    assert np.all((tr >= 1e-3) & (tr <= 1e3))
    assert np.all(np.abs(np.diff(np.log(tr))) <= 0.1 + 1e-12)


def test_adaptation_skips_non_finite_gradient(monkeypatch):
    import photongmrf.sampler as sampler

    monkeypatch.setattr(sampler, "log_hyper_gradient", lambda st: (np.full(st.alpha.shape, np.nan), 0.0))
    s = run_chain(small_data(), ObservationModel("bernoulli"), SamplerConfig(n_mc=10, n_bi=5, adapt="alpha"))
    assert s.adapt_warnings == 5
    np.testing.assert_array_equal(s.hyper_trace[:, 1], 10.0)


def test_per_frame_hyperparameters():
    y = small_data(shape=(3, 16, 16))
    s = run_chain(y, ObservationModel("bernoulli"),
                  SamplerConfig(n_mc=20, n_bi=10, adapt="alpha", hyper_sharing="per-frame"))
    assert s.hyper_trace.shape == (21, 5)


def test_step_size():
    assert step_size(1, 100) == pytest.approx(0.1)
    assert step_size(32, 10) == pytest.approx(1 / 16)


def test_adapt_off_is_identity():
    y = small_data()
    cfg = SamplerConfig()
    st = init_state(y, ObservationModel("bernoulli"), cfg)
    a, b, ok = adapt_hyperparameters(st, 1, cfg)
    assert ok and np.all(a == st.alpha) and b == st.beta


def test_initial_state_is_positive_at_low_flux():
    y = np.zeros((1, 20, 20), int)
    y[0, 3, 3] = 1
    st = init_state(y, ObservationModel("bernoulli"), SamplerConfig())
    assert st.x.min() >= 0.5 * -np.log1p(-1 / 400) * (1 - 1e-12)
    assert np.all(np.isfinite(st.u)) and st.u.min() > 0


def test_x_sweep_with_frozen_auxiliaries_all_masked():
    st = GmrfState(np.ones((1, 8, 8)), np.full((1, 8, 8), 0.5), None, 3.0)
    cfg = SamplerConfig(model="bernoulli")
    y = np.ones((1, 8, 8))
    new, acc = x_sweep(st, y, np.ones((1, 8, 8)), np.zeros((1, 8, 8), bool), cfg, RngStream(0), 1)
    assert acc.all()
    np.testing.assert_array_equal(new.u, st.u)
    assert not np.array_equal(new.x, st.x)


def test_support_respected_in_chain():
    y = small_data(mean=2.0)
    s = run_chain(y, ObservationModel("bernoulli"), SamplerConfig(n_mc=30, n_bi=5, support=(0.0, 1.2)))
    assert s.final_state.x.max() <= 1.2
    assert s.x_mmse.max() <= 1.2


def test_temporal_chain_runs_with_cyclic_time():
    y = small_data(shape=(4, 12, 12))
    s = run_chain(y, ObservationModel("bernoulli"),
                  SamplerConfig(n_mc=20, n_bi=5, temporal=True, cyclic_time=True, adapt="alpha-beta"))
    assert np.all(np.isfinite(s.x_mmse))
    np.testing.assert_array_equal(s.final_state.w[0], s.final_state.w[-1])
