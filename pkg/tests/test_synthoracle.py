import numpy as np
import pytest

from ecselect.errors import ConfigError, NumericalError
from ecselect.synthoracle import (GroundTruthSpec, gen_labeled_csp_dataset,
                                  gen_var_epochs, monte_carlo_process_covariance,
                                  oracle_icec)


def test_white_process_sample_covariance():
    spec = GroundTruthSpec(coeffs=np.zeros((1, 3, 3)), sigma=np.eye(3), seed=1)
    ep = gen_var_epochs(spec, n_trials=40, n_samples=500)
    x = ep.data.transpose(1, 0, 2).reshape(3, -1)
    cov = x @ x.T / x.shape[1]
    bound = 3.0 / np.sqrt(x.shape[1])
    assert np.max(np.abs(cov - np.eye(3))) < bound


def test_ar1_autocorrelation():
    spec = GroundTruthSpec(coeffs=np.array([[[0.9]]]), sigma=np.eye(1), seed=2)
    ep = gen_var_epochs(spec, n_trials=1, n_samples=100_000)
    x = ep.data[0, 0]
    x = x - x.mean()
    r1 = np.dot(x[1:], x[:-1]) / np.dot(x, x)
    assert 0.85 <= r1 <= 0.95


def test_generation_deterministic():
    spec = GroundTruthSpec(coeffs=np.array([[[0.5]]]), sigma=np.eye(1), seed=3)
    a = gen_var_epochs(spec, 3, 100)
    b = gen_var_epochs(spec, 3, 100)
    assert np.array_equal(a.data, b.data)


def test_per_trial_streams_are_prefix_stable():
    # growing the trial count must not disturb earlier trials
    spec = GroundTruthSpec(coeffs=np.array([[[0.5]]]), sigma=np.eye(1), seed=4)
    small = gen_var_epochs(spec, 3, 50)
    large = gen_var_epochs(spec, 5, 50)
    assert np.array_equal(small.data, large.data[:3])


def test_unstable_spec_rejected():
    spec = GroundTruthSpec(coeffs=np.array([[[1.05]]]), sigma=np.eye(1), seed=0)
    with pytest.raises(NumericalError, match="unstable"):
        gen_var_epochs(spec, 1, 10)
    with pytest.raises(NumericalError):
        monte_carlo_process_covariance(spec, 100)


def test_burn_in_floor():
    spec = GroundTruthSpec(coeffs=np.zeros((2, 2, 2)), sigma=np.eye(2), seed=0)
    with pytest.raises(ConfigError, match="burn_in"):
        gen_var_epochs(spec, 1, 10, burn_in=5)


def test_random_stable_radius_control():
    for seed in range(5):
        spec = GroundTruthSpec.random_stable(K=4, order=3,
                                             spectral_radius=0.7, seed=seed)
        assert spec.spectral_radius() == pytest.approx(0.7, abs=1e-8)


def test_spec_json_round_trip():
    spec = GroundTruthSpec.random_stable(K=3, order=2, seed=9)
    back = GroundTruthSpec.from_json(spec.to_json())
    assert np.array_equal(back.coeffs, spec.coeffs)
    assert np.array_equal(back.sigma, spec.sigma)
    assert back.edges == spec.edges


def test_edge_list_consistency_enforced():
    coeffs = np.zeros((1, 2, 2))
    coeffs[0, 1, 0] = 0.4
    spec = GroundTruthSpec(coeffs=coeffs, sigma=np.eye(2))
    assert spec.edges == [(1, 0)]
    with pytest.raises(ConfigError, match="edge list"):
        GroundTruthSpec(coeffs=coeffs, sigma=np.eye(2), edges=[(0, 1)])


# ---------------------------------------------------------------------------
# labeled dataset generator
# ---------------------------------------------------------------------------


def test_labeled_dataset_variance_pattern():
    ep = gen_labeled_csp_dataset(K=3, informative_channels=[0], variance_ratio=4.0,
                                 n_trials_per_class=40, seed=5, n_samples=300)
    v = ep.data.var(axis=2)
    v0 = v[ep.labels == 0].mean(axis=0)
    v1 = v[ep.labels == 1].mean(axis=0)
    # class 0 owns informative position 0
    assert v0[0] / v1[0] == pytest.approx(4.0, rel=0.15)
    assert v0[1] / v1[1] == pytest.approx(1.0, rel=0.15)


def test_labeled_dataset_null_ratio_indistinguishable():
    ep = gen_labeled_csp_dataset(K=2, informative_channels=[0], variance_ratio=1.0,
                                 n_trials_per_class=40, seed=6, n_samples=300)
    v = ep.data.var(axis=2)
    assert np.abs(v[ep.labels == 0].mean() - v[ep.labels == 1].mean()) < 0.05


def test_labeled_dataset_coupling_is_stable_and_labeled():
    ep = gen_labeled_csp_dataset(K=6, informative_channels=[0, 1, 2],
                                 variance_ratio=4.0, n_trials_per_class=10,
                                 seed=7, n_samples=200, coupling=0.35)
    assert ep.n_trials == 20
    assert sorted(np.unique(ep.labels)) == [0, 1]
    assert np.all(np.isfinite(ep.data))


def test_labeled_dataset_validates_channels():
    with pytest.raises(ConfigError):
        gen_labeled_csp_dataset(K=3, informative_channels=[5],
                                variance_ratio=2.0, n_trials_per_class=5, seed=0)


# ---------------------------------------------------------------------------
# naive importance oracle
# ---------------------------------------------------------------------------


def test_oracle_star_graph():
    C = np.ones((5, 5))
    C[:, 0] = 10.0
    np.fill_diagonal(C, 0.0)
    rep = oracle_icec(C, 0.3)
    assert rep.ranking[0] == 0
    assert rep.normalized[0] == 1.0


def test_oracle_two_channels_single_entry():
    # with K=2 the top count is ceil(0.3 * 1) = 1, the only incident value
    C = np.array([[0.0, 3.0], [7.0, 0.0]])
    rep = oracle_icec(C, 0.3)
    assert rep.raw.tolist() == [7.0, 3.0]


def test_oracle_worked_three_channel_fixture():
    C = np.array([[0.0, 5.0, 1.0],
                  [2.0, 0.0, 1.0],
                  [4.0, 3.0, 0.0]])
    rep = oracle_icec(C, 0.3)
    assert rep.raw.tolist() == [4.0, 5.0, 1.0]
    assert rep.normalized.tolist() == [0.8, 1.0, 0.2]
    assert rep.ranking == [1, 0, 2]


# ---------------------------------------------------------------------------
# Monte-Carlo stacked covariance
# ---------------------------------------------------------------------------


def test_mc_covariance_scalar_ar1():
    spec = GroundTruthSpec(coeffs=np.array([[[0.5]]]), sigma=np.eye(1), seed=8)
    r = monte_carlo_process_covariance(spec, 1_000_000)
    assert 1.30 <= r[0, 0] <= 1.37  # truth 4/3


def test_mc_covariance_white_offdiagonal():
    spec = GroundTruthSpec(coeffs=np.zeros((2, 2, 2)), sigma=np.eye(2), seed=9)
    r = monte_carlo_process_covariance(spec, 200_000)
    off = r.copy()
    off[np.diag_indices_from(off)] = 0.0
    assert np.max(np.abs(off)) < 3.0 / np.sqrt(200_000)
