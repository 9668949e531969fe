import numpy as np
import pytest
from scipy import stats

from ivxq.dgp import (
    DgpConfig,
    Gaussian,
    GaussianMixture,
    LurConfig,
    StudentT,
    assemble_system,
    default_innovation_cov,
    linear_process_filter,
    parse_error_dist,
    quantile_shift,
    simulate_lur,
    simulate_predictive_system,
)
from ivxq.exceptions import ConfigurationError

from oracles import convolve_filter


# -- linear_process_filter ----------------------------------------------------


def test_identity_filter_is_identity():
    e = np.random.default_rng(0).standard_normal((7, 2))
    np.testing.assert_array_equal(linear_process_filter(e, [np.eye(2)]), e)


def test_impulse_response_of_two_identity_weights():
    e = np.zeros((5, 1))
    e[0] = 1.0
    out = linear_process_filter(e, [np.eye(1), np.eye(1)])
    np.testing.assert_array_equal(out[:, 0], [1, 1, 0, 0, 0])


def test_half_lag_filter_by_hand():
    e = np.array([[1.0], [2.0], [-1.0], [4.0]])
    out = linear_process_filter(e, [np.eye(1), 0.5 * np.eye(1)])
    np.testing.assert_allclose(out[:, 0], [1.0, 2.5, 0.0, 3.5])
    np.testing.assert_allclose(out, convolve_filter(e, [np.eye(1), 0.5 * np.eye(1)]))


def test_filter_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        linear_process_filter(np.zeros((4, 2)), [np.eye(3)])


# -- simulate_lur ------------------------------------------------------------


def test_unit_root_is_random_walk():
    cfg = LurConfig(p=2, c=(0.0, 0.0), burn_in=0)
    v = np.random.default_rng(2).standard_normal((20, 2))
    np.testing.assert_allclose(simulate_lur(cfg, 20, v), np.cumsum(v, axis=0), rtol=1e-13)


def test_zero_innovations_give_zero_path():
    cfg = LurConfig(p=1, c=(7.0,), burn_in=5)
    assert not simulate_lur(cfg, 10, np.zeros((15, 1))).any()


def test_scalar_recursion_with_root_one_half():
    cfg = LurConfig(p=1, c=(5.0,), gamma=1.0, burn_in=0)
    v = np.arange(1.0, 11.0)[:, None]
    x = simulate_lur(cfg, 10, v)[:, 0]
    ref, prev = [], 0.0
    for t in range(10):
        prev = 0.5 * prev + v[t, 0]
        ref.append(prev)
    np.testing.assert_allclose(x, ref, rtol=1e-15)


def test_root_uses_retained_sample_size():
    cfg = LurConfig(p=1, c=(5.0,), burn_in=100)
    v = np.zeros((110, 1))
    v[0] = 1.0
    x = simulate_lur(cfg, 10, v)
    # after the impulse the path decays at 1 - 5/10, not 1 - 5/110
    assert x[0, 0] == pytest.approx(0.5**100)


def test_explosive_root_rejected():
    with pytest.raises(ConfigurationError):
        LurConfig(p=1, c=(30.0,)).root(10)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"c": (-1.0,)},
        {"gamma": 0.0},
        {"gamma": 1.5},
        {"innovation_cov": np.array([[1.0, 2.0], [2.0, 1.0]])},
        {"innovation_cov": np.array([[1.0, 0.1], [0.2, 1.0]])},
        {"filter_weights": (2 * np.eye(1),)},
    ],
)
def test_invalid_lur_config(kwargs):
    with pytest.raises(ConfigurationError):
        LurConfig(p=1, **kwargs)


def test_default_cov_is_positive_definite():
    for p in (1, 2, 4):
        cov = default_innovation_cov(p)
        assert np.linalg.eigvalsh(cov).min() > 0
        assert np.allclose(cov[0, 1:], -0.95)


# -- quantile_shift ----------------------------------------------------------


def test_quantile_shift_values():
    u = np.linspace(-2, 2, 9)
    np.testing.assert_allclose(quantile_shift(u, 0.5, Gaussian()), u, atol=1e-15)
    np.testing.assert_allclose(quantile_shift(u, 0.975, Gaussian()), u - 1.959963984540054)
    np.testing.assert_allclose(quantile_shift(u, 0.5, StudentT(3)), u, atol=1e-15)
    with pytest.raises(ValueError):
        quantile_shift(u, 1.0, Gaussian())


def test_mixture_ppf_inverts_cdf():
    mix = GaussianMixture()
    taus = np.array([0.01, 0.05, 0.3, 0.5, 0.9])
    q = mix.ppf(taus)
    np.testing.assert_allclose(mix.cdf(q), taus, atol=1e-10)


@pytest.mark.parametrize("text", ["gaussian", "t(3)", "mixture(0.8,0,1,-2,2)"])
def test_error_dist_round_trip(text):
    dist = parse_error_dist(text)
    assert parse_error_dist(str(dist)) == dist


# -- simulate_predictive_system ----------------------------------------------


def _cfg(**kw):
    base = dict(lur=LurConfig(p=1, c=(5.0,)), beta=(0.1,), beta2=(0.2,), delta=0.5, seed=9)
    base.update(kw)
    return DgpConfig(**base)


def test_seeded_system_is_bitwise_reproducible():
    a = simulate_predictive_system(_cfg(), 200, tau=0.1, replication=3)
    b = simulate_predictive_system(_cfg(), 200, tau=0.1, replication=3)
    for name in ("y1", "y2", "x1", "x2", "q1"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_replay_from_innovations_is_exact():
    cfg = _cfg(error_dist=StudentT(4))
    s = simulate_predictive_system(cfg, 150, tau=0.05)
    r = assemble_system(cfg, 150, 0.05, s.innovations)
    for name in ("y1", "y2", "x1", "x2", "q1"):
        assert np.array_equal(getattr(s, name), getattr(r, name))


def test_response_equations_hold():
    cfg = _cfg(mu=0.3)
    s = simulate_predictive_system(cfg, 100, tau=0.2)
    x1, x2 = s.lagged()
    u1 = s.innovations["u1"][cfg.lur.burn_in :]
    u2 = s.innovations["u2"][cfg.lur2.burn_in :]
    np.testing.assert_allclose(s.y1, 0.3 + 0.1 * x1[:, 0] + u1, rtol=1e-14)
    q1 = 0.3 + 0.1 * x1[:, 0] + Gaussian().ppf(0.2)
    np.testing.assert_allclose(s.q1, q1, rtol=1e-14)
    np.testing.assert_allclose(s.y2, 0.3 + 0.2 * x2[:, 0] + 0.5 * q1 + u2, rtol=1e-14)


def test_recursion_holds_on_retained_sample():
    cfg = _cfg()
    s = simulate_predictive_system(cfg, 80)
    rho = cfg.lur.root(80)[0]
    v = s.innovations["e1"][cfg.lur.burn_in :]
    x = s.x1[:, 0]
    np.testing.assert_allclose(x[1:], rho * x[:-1] + v[1:, 0], rtol=1e-12, atol=1e-12)
    assert x[0] == pytest.approx(rho * s.x1_init[0] + v[0, 0])


def test_blocks_are_independent_by_default():
    cfg = _cfg()
    corr = []
    for b in range(200):
        s = simulate_predictive_system(cfg, 200, replication=b)
        corr.append(np.corrcoef(np.diff(s.x1[:, 0]), np.diff(s.x2[:, 0]))[0, 1])
    corr = np.array(corr)
    assert abs(corr.mean()) < 4 * corr.std() / np.sqrt(corr.size)


def test_diagonal_covariance_gives_exogenous_regressor():
    lur = LurConfig(p=1, c=(5.0,), innovation_cov=np.eye(2))
    s = simulate_predictive_system(DgpConfig(lur=lur, seed=4), 5000)
    u = s.innovations["u1"]
    e = s.innovations["e1"][:, 0]
    assert abs(np.corrcoef(u, e)[0, 1]) < 4 / np.sqrt(u.size)


def test_endogeneity_sets_innovation_correlation():
    s = simulate_predictive_system(_cfg(), 20000)
    r = np.corrcoef(s.innovations["u1"], s.innovations["e1"][:, 0])[0, 1]
    assert r == pytest.approx(-0.95, abs=0.01)


def test_null_design_has_no_predictability():
    cfg = DgpConfig(lur=LurConfig(p=1, c=(5.0,)), seed=1)
    stats_ = []
    for b in range(300):
        s = simulate_predictive_system(cfg, 200, replication=b)
        x1, _ = s.lagged()
        u = s.innovations["u1"][cfg.lur.burn_in :]
        stats_.append(np.mean(u * x1[:, 0]))
    stats_ = np.array(stats_)
    assert abs(stats_.mean()) < 4 * stats_.std() / np.sqrt(stats_.size)


@pytest.mark.slow
def test_persistence_ordering_of_autocorrelation():
    means, ses = [], []
    for c in (0.0, 5.0, 20.0):
        cfg = DgpConfig(lur=LurConfig(p=1, c=(c,)), seed=3)
        ac = []
        for b in range(500):
            x = simulate_predictive_system(cfg, 500, replication=b).x1[:, 0]
            ac.append(np.corrcoef(x[1:], x[:-1])[0, 1])
        means.append(np.mean(ac))
        ses.append(np.std(ac) / np.sqrt(len(ac)))
    for j in range(2):
        assert means[j] - means[j + 1] > 3 * np.hypot(ses[j], ses[j + 1])


@pytest.mark.slow
def test_burn_in_does_not_change_endpoint_distribution():
    # from a zero start x_n is exactly normal with variance
    # (1 - rho^(2m)) / (1 - rho^2) after m steps; each burn-in's sample is
    # compared with the law implied by the other burn-in
    n, rho = 500, 1.0 - 5.0 / 500
    samples, scales = {}, {}
    for burn in (50, 100):
        cfg = DgpConfig(lur=LurConfig(p=1, c=(5.0,), burn_in=burn, innovation_cov=np.eye(2)), seed=5)
        samples[burn] = np.array(
            [simulate_predictive_system(cfg, n, replication=b).x1[-1, 0] / np.sqrt(n) for b in range(1000)]
        )
        m = n + burn
        scales[burn] = np.sqrt((1 - rho ** (2 * m)) / (1 - rho**2) / n)
    for burn, other in ((50, 100), (100, 50)):
        assert stats.kstest(samples[burn], "norm", args=(0, scales[other])).statistic < 0.05


def test_csv_layout():
    s = simulate_predictive_system(_cfg(), 5)
    text = s.to_csv()
    lines = text.split("\r\n")
    assert lines[0] == "t,y1,y2,x1_1,x2_1"
    assert len([ln for ln in lines if ln]) == 6
    first = lines[1].split(",")
    assert first[0] == "1" and float(first[1]) == s.y1[0]
