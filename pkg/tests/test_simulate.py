import numpy as np
import pytest
from hypothesis import given, strategies as st

from coxbvs.simulate import (
    PAPER_BLOCKS,
    SimulationDesign,
    default_true_effects,
    make_precision,
    paper_design,
    sample_expression,
    simulate_dataset,
    simulate_survival,
    simulate_train_test,
    weibull_from_survival,
    weibull_times,
)


def _partial_corr(omega):
    d = np.sqrt(np.diag(omega))
    return -omega / np.outer(d, d)


def test_single_block_half_is_singular():
    # eigenvalue 1 - 2 * 0.5 of the unscaled 3-block
    with pytest.raises(ValueError, match="singular|positive"):
        make_precision(3, [(0, 1, 2)], 0.5)


@pytest.mark.parametrize("rho", [1 / 3, 0.4, -0.5, 0.2])
def test_single_block_partial_corr_and_unit_variance(rho):
    omega = make_precision(3, [(0, 1, 2)], rho)
    pc = _partial_corr(omega)
    off = ~np.eye(3, dtype=bool)
    np.testing.assert_allclose(pc[off], rho, atol=1e-12)
    np.testing.assert_allclose(np.diag(np.linalg.inv(omega)), 1.0, atol=1e-10)


def test_paper_blocks_third_gives_marginal_correlation_half():
    sigma = np.linalg.inv(make_precision(9, PAPER_BLOCKS, 1 / 3))
    np.testing.assert_allclose(sigma[0, 1], 0.5, atol=1e-12)
    assert sigma[0, 3] == 0.0


def test_empty_blocks_identity():
    np.testing.assert_array_equal(make_precision(4, []), np.eye(4))


def test_paper_design_block_structure():
    omega = make_precision(100, PAPER_BLOCKS)
    mask = np.eye(100, dtype=bool)
    for b in PAPER_BLOCKS:
        mask[np.ix_(b, b)] = True
    assert np.all(omega[~mask] == 0)
    assert np.all(omega[mask] != 0)
    np.testing.assert_array_equal(omega[9:, 9:], np.eye(91))
    np.testing.assert_array_equal(omega, omega.T)
    np.linalg.cholesky(omega)


def test_overlapping_blocks():
    with pytest.raises(ValueError, match="overlap"):
        make_precision(5, [(0, 1), (1, 2)], 0.2)


def test_sample_identity_covariance():
    X = sample_expression(10_000, np.eye(4), 1)
    assert np.max(np.abs(np.cov(X.T) - np.eye(4))) < 0.1


def test_sample_empty():
    assert sample_expression(0, np.eye(3), 0).shape == (0, 3)


def test_sample_block_partial_correlations():
    omega = make_precision(9, PAPER_BLOCKS)
    X = sample_expression(10_000, omega, 2)
    pc = _partial_corr(np.linalg.inv(np.cov(X.T)))
    for b in PAPER_BLOCKS:
        for i in b:
            for j in b:
                if i < j:
                    assert abs(pc[i, j] - 1 / 3) < 0.05


def test_sample_not_pd():
    with pytest.raises(ValueError, match="positive definite"):
        sample_expression(3, np.array([[1.0, 2.0], [2.0, 1.0]]), 0)


def test_sample_reproducible():
    omega = make_precision(9, PAPER_BLOCKS)
    np.testing.assert_array_equal(sample_expression(5, omega, 3), sample_expression(5, omega, 3))


def test_weibull_times_formula():
    assert weibull_times(np.exp(-1), 0.0, 1.0, 1.0) == pytest.approx(1.0)
    assert weibull_times(np.exp(-1), 0.0, 1.0, 2.0) == pytest.approx(1.0)
    assert weibull_times(np.exp(-2), 0.0, 1.0, 2.0) == pytest.approx(np.sqrt(2))
    with pytest.raises(ValueError):
        weibull_times(0.5, 0.0, -1.0, 1.0)


@given(st.floats(0.01, 0.98), st.floats(0.001, 0.01), st.floats(-2, 2), st.floats(0.01, 2))
def test_weibull_monotone_in_u_and_lp(u, du, lp, dlp):
    t = weibull_times(u, lp, 0.3, 1.4)
    assert weibull_times(u + du, lp, 0.3, 1.4) < t
    assert weibull_times(u, lp + dlp, 0.3, 1.4) < t


def test_censoring_rate_near_half():
    design = paper_design(p=20, n=1000, seed=4)
    ds = simulate_dataset(design, design.n_s, 11)
    for s in (1, 2):
        rate = 1 - ds.event[ds.subgroup == s].mean()
        assert abs(rate - 0.5) < 0.05


def test_censoring_without_covariates_flag():
    X = np.zeros((5, 2))
    T1, C1, _, _ = simulate_survival(X, [1, 1], 0.2, 1.3, 5, censoring_covariates=True)
    T2, C2, _, _ = simulate_survival(X, [1, 1], 0.2, 1.3, 5, censoring_covariates=False)
    np.testing.assert_array_equal(T1, T2)
    np.testing.assert_array_equal(C1, C2)  # lp = 0 so both variants agree


def test_observed_pairs():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 3))
    T, C, obs, d = simulate_survival(X, [0.5, -0.5, 0.0], 0.1, 1.2, 9)
    np.testing.assert_array_equal(obs, np.minimum(T, C))
    np.testing.assert_array_equal(d, (T <= C).astype(int))


def test_default_effects():
    b1, b2 = default_true_effects(20)
    np.testing.assert_array_equal(b1[:9], [1, 1, 1, -1, -1, -1, 0, 0, 0])
    assert np.all(b1[6:] == 0)
    np.testing.assert_array_equal(b2[:9], [0, 0, 0, -1, -1, -1, 1, 1, 1])
    b1, b2 = default_true_effects(9)
    assert b2.size == 9 and b2[-1] == 1
    agree = (b1 == b2) & (b1 != 0)
    assert np.flatnonzero(agree).tolist() == [3, 4, 5]
    assert not np.any((b1 != 0) & (b2 != 0) & ~agree)
    with pytest.raises(ValueError):
        default_true_effects(8)


def test_weibull_from_survival_anchors():
    eta, kappa = weibull_from_survival(3, 0.57, 5, 0.42)
    assert np.exp(-eta * 3**kappa) == pytest.approx(0.57)
    assert np.exp(-eta * 5**kappa) == pytest.approx(0.42)


def test_design_validation():
    with pytest.raises(ValueError):
        SimulationDesign(p=5, n_s=(3,), true_effects=[np.zeros(4)], weibull_scale=(1,), weibull_shape=(1,), block_spec=())
    with pytest.raises(ValueError):
        SimulationDesign(p=5, n_s=(3,), true_effects=[np.zeros(5)], weibull_scale=(1,), weibull_shape=(1,),
                         block_spec=((0, 7),))


def test_design_round_trip_and_reproducibility():
    design = paper_design(p=12, n=20, seed=3)
    again = SimulationDesign.from_dict(design.to_dict())
    a_tr, a_te = simulate_train_test(design, 2)
    b_tr, b_te = simulate_train_test(again, 2)
    np.testing.assert_array_equal(a_tr.X, b_tr.X)
    np.testing.assert_array_equal(a_te.time, b_te.time)
    c_tr, _ = simulate_train_test(design, 3)
    assert not np.array_equal(a_tr.X, c_tr.X)
