import numpy as np
import pytest

from ecselect.epochs import EpochSet
from ecselect.errors import ConfigError, NumericalError
from ecselect.mvar import (VarModel, aic_value, consistency_check,
                           fit_vieira_morf, fit_windowed, residuals,
                           select_order, stability_check, whiteness_check,
                           window_samples)
from ecselect.synthoracle import GroundTruthSpec, gen_var_epochs

from conftest import random_stable_model


def white_epochs(seed, n_trials, K, n_samples, fs=100.0):
    rng = np.random.default_rng(seed)
    return EpochSet(data=rng.standard_normal((n_trials, K, n_samples)), fs=fs)


# ---------------------------------------------------------------------------
# lattice fit
# ---------------------------------------------------------------------------


def test_fit_white_noise_coefficients_near_zero():
    ep = white_epochs(0, 50, 2, 500)
    model = fit_vieira_morf(ep, 2)
    assert np.max(np.abs(model.coeffs)) < 0.05


def test_fit_recovers_known_var2(var2_spec):
    ep = gen_var_epochs(var2_spec, n_trials=100, n_samples=500)
    model = fit_vieira_morf(ep, 2)
    assert np.max(np.abs(model.coeffs - var2_spec.coeffs)) < 0.05
    rel = np.max(np.abs(model.noise_cov - var2_spec.sigma))
    rel /= np.max(np.abs(var2_spec.sigma))
    assert rel < 0.10


def test_fit_scalar_ar1():
    spec = GroundTruthSpec(coeffs=np.array([[[0.5]]]), sigma=np.eye(1), seed=12)
    ep = gen_var_epochs(spec, 1, 20_000)
    model = fit_vieira_morf(ep, 1)
    assert 0.45 <= model.coeffs[0, 0, 0] <= 0.55


def test_fit_identifiability_floor():
    ep = white_epochs(1, 1, 4, 30)
    with pytest.raises(ConfigError, match="floor"):
        fit_vieira_morf(ep, 8)


def test_fit_singular_covariance_rejected():
    # channel 1 is an exact copy of channel 0
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 1, 300))
    data = np.concatenate([x, x], axis=1)
    with pytest.raises(NumericalError, match="singular"):
        fit_vieira_morf(EpochSet(data=data, fs=100.0), 2)


def test_fit_on_raw_array_requires_fs():
    with pytest.raises(ConfigError, match="fs"):
        fit_vieira_morf(np.zeros((2, 2, 100)), 1)


def test_fits_are_stable_on_random_data():
    # the geometric-mean lattice cannot leave the unit circle
    for seed in range(100):
        ep = white_epochs(1000 + seed, 1, 2, 200)
        model = fit_vieira_morf(ep, 3)
        stable, radius = stability_check(model)
        assert stable and radius < 1.0


def test_noise_cov_is_psd():
    for seed in range(20):
        ep = white_epochs(2000 + seed, 2, 3, 300)
        model = fit_vieira_morf(ep, 2)
        w = np.linalg.eigvalsh(model.noise_cov)
        assert w.min() >= -1e-10


def test_fit_channel_permutation_equivariant(var2_spec):
    ep = gen_var_epochs(var2_spec, 20, 300)
    perm = [2, 0, 1]
    direct = fit_vieira_morf(EpochSet(data=ep.data[:, perm, :], fs=ep.fs), 2)
    base = fit_vieira_morf(ep, 2)
    expected = base.coeffs[:, perm][:, :, perm]
    scale = np.max(np.abs(base.coeffs))
    assert np.max(np.abs(direct.coeffs - expected)) < 1e-9 * max(scale, 1.0)
    assert np.max(np.abs(direct.noise_cov - base.noise_cov[np.ix_(perm, perm)])) < 1e-9


def test_residuals_whiten_fitted_process(var2_spec):
    ep = gen_var_epochs(var2_spec, 50, 400)
    model = fit_vieira_morf(ep, 2)
    e = residuals(model, ep)
    # lag-1 autocorrelation of residuals is near zero
    a = e[:, :, 1:].reshape(-1)
    b = e[:, :, :-1].reshape(-1)
    r1 = np.dot(a, b) / np.dot(a, a)
    assert abs(r1) < 0.02


# ---------------------------------------------------------------------------
# order selection
# ---------------------------------------------------------------------------


def test_aic_penalty_monotone_for_fixed_residual():
    values = [aic_value(0.0, rho, 3, 1000) for rho in range(1, 8)]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_select_order_singleton():
    ep = white_epochs(3, 10, 2, 200)
    sel = select_order(ep, [20])
    assert sel.chosen == 20


def test_select_order_prefers_small_on_white_noise():
    ep = white_epochs(4, 10, 2, 400)
    sel = select_order(ep, [1, 2, 3, 4])
    assert sel.chosen == 1
    assert np.isfinite(sel.aic_values).all()
    idx = sel.candidate_orders.index(sel.chosen)
    assert sel.aic_values[idx] == min(sel.aic_values)


def test_select_order_trial_permutation_invariant():
    ep = white_epochs(5, 8, 2, 300)
    perm = np.random.default_rng(0).permutation(8)
    sel_a = select_order(ep, [1, 2, 3])
    sel_b = select_order(EpochSet(data=ep.data[perm], fs=ep.fs), [1, 2, 3])
    assert np.allclose(sel_a.aic_values, sel_b.aic_values, atol=1e-12)
    assert sel_a.chosen == sel_b.chosen


def test_select_order_empty_candidates():
    with pytest.raises(ConfigError):
        select_order(white_epochs(6, 2, 2, 100), [])


def test_select_order_failed_candidates_excluded():
    # order 40 violates the identifiability floor on short data
    ep = white_epochs(7, 1, 2, 150)
    sel = select_order(ep, [1, 40])
    assert sel.chosen == 1
    assert np.isnan(sel.aic_values[1])
    with pytest.raises(NumericalError, match="all candidate"):
        select_order(ep, [40, 50])


# ---------------------------------------------------------------------------
# validation checks
# ---------------------------------------------------------------------------


def test_stability_check_cases():
    def model_with(a_diag):
        return VarModel(order=1, coeffs=np.array([np.diag(a_diag)]),
                        noise_cov=np.eye(len(a_diag)), fs=100.0, n_obs=100)

    stable, radius = stability_check(model_with([0.0, 0.0]))
    assert stable and radius == 0.0
    stable, radius = stability_check(model_with([1.1, 0.3]))
    assert not stable and radius == pytest.approx(1.1)
    stable, radius = stability_check(model_with([0.5, 0.2]))
    assert stable and radius == pytest.approx(0.5)


def test_whiteness_calibration_on_white_noise():
    # fraction of p < 0.05 across seeds stays near the nominal level
    low = 0
    runs = 200
    for seed in range(runs):
        ep = white_epochs(10_000 + seed, 2, 2, 400)
        model = fit_vieira_morf(ep, 1)
        if whiteness_check(model, ep, max_lag=10) < 0.05:
            low += 1
    assert 0.01 <= low / runs <= 0.10


def test_whiteness_flags_misspecified_model():
    coeffs = np.zeros((3, 1, 1))
    coeffs[0, 0, 0] = 0.3
    coeffs[2, 0, 0] = 0.5
    spec = GroundTruthSpec(coeffs=coeffs, sigma=np.eye(1), seed=13)
    ep = gen_var_epochs(spec, 4, 500)
    model = fit_vieira_morf(ep, 1)
    assert whiteness_check(model, ep, max_lag=10) < 0.01


def test_whiteness_requires_lag_beyond_order():
    ep = white_epochs(8, 2, 2, 200)
    model = fit_vieira_morf(ep, 2)
    with pytest.raises(ConfigError, match="max_lag"):
        whiteness_check(model, ep, max_lag=2)


def test_consistency_exact_on_matched_simulation(var2_spec):
    # the diagnostic simulates with the same seeding scheme as the
    # generator, so a ground-truth model scores exactly 100
    model = VarModel(order=2, coeffs=var2_spec.coeffs,
                     noise_cov=var2_spec.sigma, fs=var2_spec.fs, n_obs=0)
    ep = gen_var_epochs(var2_spec, 5, 300)
    assert consistency_check(model, ep, seed=var2_spec.seed) == pytest.approx(100.0)


def test_consistency_self_fit_high(var2_spec):
    ep = gen_var_epochs(var2_spec, 50, 500)
    model = fit_vieira_morf(ep, 2)
    assert consistency_check(model, ep, seed=99) >= 85.0


def test_consistency_zero_model_on_correlated_data_low():
    spec = GroundTruthSpec(coeffs=np.array([[[0.95]]]), sigma=np.eye(1), seed=14)
    ep = gen_var_epochs(spec, 5, 1000)
    zero = VarModel(order=1, coeffs=np.zeros((1, 1, 1)), noise_cov=np.eye(1),
                    fs=spec.fs, n_obs=0)
    assert consistency_check(zero, ep, seed=0) < 50.0


# ---------------------------------------------------------------------------
# sliding windows
# ---------------------------------------------------------------------------


def test_window_sample_rounding():
    win, step = window_samples(0.5, 0.03, 250.0)
    assert (win, step) == (125, 8)  # 7.5 samples rounds half-up to 8
    assert window_samples(0.5, 0.001, 250.0)[1] == 1  # floor of one sample


def test_windowed_count_formula():
    ep = white_epochs(9, 3, 2, 750, fs=250.0)
    wm = fit_windowed(ep, 2, window_length_s=0.5, step_s=0.03)
    assert wm.n_windows == (750 - 125) // 8 + 1 == 79
    assert wm.window_start_samples[:3] == [0, 8, 16]
    assert all(m is not None for m in wm.models)


def test_window_equal_to_trial_gives_one_window():
    ep = white_epochs(10, 3, 2, 200, fs=100.0)
    wm = fit_windowed(ep, 2, window_length_s=2.0, step_s=0.5)
    assert wm.n_windows == 1


def test_window_longer_than_trial_rejected():
    ep = white_epochs(11, 3, 2, 100, fs=100.0)
    with pytest.raises(ConfigError, match="exceeds"):
        fit_windowed(ep, 2, window_length_s=2.0, step_s=0.5)


def test_window_too_short_for_order_rejected():
    ep = white_epochs(12, 3, 2, 100, fs=100.0)
    with pytest.raises(ConfigError, match="too short"):
        fit_windowed(ep, 10, window_length_s=0.1, step_s=0.1)


def test_windowed_models_agree_on_stationary_data(var2_spec):
    ep = gen_var_epochs(var2_spec, 60, 400)
    wm = fit_windowed(ep, 2, window_length_s=0.5, step_s=0.25)
    first = wm.models[0].coeffs[0]
    for m in wm.models[1:]:
        assert np.max(np.abs(m.coeffs[0] - first)) < 0.1


def test_windowed_thread_pool_matches_serial(var2_spec):
    ep = gen_var_epochs(var2_spec, 10, 300)
    serial = fit_windowed(ep, 2, 0.5, 0.2, workers=1)
    threaded = fit_windowed(ep, 2, 0.5, 0.2, workers=4)
    assert serial.window_start_samples == threaded.window_start_samples
    for a, b in zip(serial.models, threaded.models):
        assert np.array_equal(a.coeffs, b.coeffs)
