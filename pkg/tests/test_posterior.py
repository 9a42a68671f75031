import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from coxbvs.coxmodel import BaselineHazardPrior, SelectionPrior
from coxbvs.data import GroupedData
from coxbvs.graph import GraphPrior, MrfPrior
from coxbvs.posterior import (
    bma_coefficients,
    edge_probabilities,
    mpm_coefficients,
    round_half_up,
    select_variables,
    summarize,
)
from coxbvs.sampler import ChainConfig, ChainSamples, PriorConfig, SubgroupData, run_mcmc


def make_samples(beta, gamma, loglik=None, G_within=None, G_between=None):
    beta = np.asarray(beta, dtype=float)
    if beta.ndim == 2:
        beta = beta[:, None, :]
    T, S, p = beta.shape
    gamma = np.asarray(gamma, dtype=np.int8).reshape(T, S, p)
    pairs = [(r, s) for r in range(S) for s in range(r + 1, S)]
    return ChainSamples(
        beta=beta,
        gamma=gamma,
        h=[np.ones((T, 1)) for _ in range(S)],
        G_within=np.zeros((T, S, p * (p - 1) // 2), np.int8) if G_within is None else np.asarray(G_within, np.int8),
        G_between=np.zeros((T, len(pairs), p), np.int8) if G_between is None else np.asarray(G_between, np.int8),
        omega=np.zeros((0, S, p * (p + 1) // 2)),
        loglik=np.zeros((T, S)) if loglik is None else np.asarray(loglik, dtype=float).reshape(T, S),
        iteration=np.arange(T),
        omega_iteration=np.zeros(0, np.int64),
        boundaries=[np.array([0.0, 1.0]) for _ in range(S)],
        baseline=[(2.0, 1.0, 1.0)] * S,
        pairs=pairs,
        config={"seed": 0},
        acceptance=np.zeros((S, p)),
    )


def random_samples(rng, T=40, S=2, p=6):
    gamma = rng.random((T, S, p)) < rng.random((1, S, p))
    beta = np.where(gamma, rng.normal(0.5, 0.7, (T, S, p)), rng.normal(0, 0.0375, (T, S, p)))
    return make_samples(beta, gamma, loglik=rng.normal(size=(T, S)))


# ---------------------------------------------------------------- summarize


def test_hand_built_three_draw_chain():
    beta = [[0.5, 0.01], [0.7, -0.02], [0.0, 0.03]]
    gamma = [[1, 0], [1, 1], [0, 0]]
    s = summarize(make_samples(beta, gamma))
    np.testing.assert_allclose(s.selection_prob, [[2 / 3, 1 / 3]])
    np.testing.assert_allclose(s.marginal_mean, [[0.4, 0.02 / 3]])
    np.testing.assert_allclose(s.marginal_sd[0, 0], np.sqrt(0.26 / 2))
    np.testing.assert_allclose(s.conditional_mean, [[0.6, -0.02]])
    np.testing.assert_allclose(s.conditional_sd[0, 0], np.sqrt(0.02))
    assert np.isnan(s.conditional_sd[0, 1])  # a single selected draw
    np.testing.assert_allclose(s.excluded_mean, [[0.0, 0.02]])
    np.testing.assert_allclose(s.mean_model_size, [1.0])
    assert s.n_draws == 3


def test_always_selected_conditional_equals_marginal():
    rng = np.random.default_rng(0)
    beta = rng.normal(size=(20, 3))
    s = summarize(make_samples(beta, np.ones((20, 3))))
    np.testing.assert_array_equal(s.selection_prob, 1.0)
    np.testing.assert_allclose(s.conditional_mean, s.marginal_mean)
    np.testing.assert_allclose(s.conditional_sd, s.marginal_sd)


def test_never_selected_conditional_undefined():
    rng = np.random.default_rng(1)
    beta = rng.normal(scale=0.03, size=(20, 2))
    s = summarize(make_samples(beta, np.zeros((20, 2))))
    assert not s.conditional_defined.any()
    assert np.isnan(s.conditional_mean).all()
    np.testing.assert_allclose(s.marginal_mean[0], beta.mean(axis=0))


def test_empty_chain_rejected():
    with pytest.raises(ValueError):
        summarize(make_samples(np.zeros((0, 2)), np.zeros((0, 2))))


@given(st.integers(0, 2**31), st.integers(2, 50))
def test_mixture_identity_and_ranges(seed, T):
    s_all = random_samples(np.random.default_rng(seed), T=T)
    s = summarize(s_all)
    assert np.all((s.selection_prob >= 0) & (s.selection_prob <= 1))
    assert np.all(np.nan_to_num(s.conditional_sd) >= 0)
    cond = np.nan_to_num(s.conditional_mean)
    excl = np.nan_to_num(s.excluded_mean)
    np.testing.assert_allclose(s.marginal_mean, s.selection_prob * cond + (1 - s.selection_prob) * excl,
                               rtol=0, atol=1e-10)


def test_frames_and_json():
    s = summarize(random_samples(np.random.default_rng(2), S=2, p=3))
    df = s.to_frame(["a", "b", "c"])
    assert len(df) == 6 and list(df["subgroup"]) == [1, 1, 1, 2, 2, 2] and list(df["name"][:3]) == ["a", "b", "c"]
    within, between = s.edges_frame()
    assert len(within) == 2 * 3 and len(between) == 3
    assert '"n_draws": 40' in s.to_json()


# ---------------------------------------------------------------- selection rule


def test_select_fixed_model():
    gamma = np.zeros((10, 6))
    gamma[:, [1, 4]] = 1
    samples = make_samples(np.zeros((10, 6)), gamma)
    s = summarize(samples)
    assert s.mean_model_size[0] == 2
    assert select_variables(s, samples)[0].tolist() == [1, 4]


def test_select_top_two():
    # mean model size is the sum of selection probabilities on any chain, so
    # probabilities (0.9, 0.9, 0.1) with m* = 2 are set on the summary directly
    s = summarize(make_samples(np.zeros((10, 3)), np.zeros((10, 3))))
    s = dataclasses.replace(s, selection_prob=np.array([[0.9, 0.9, 0.1]]), mean_model_size=np.array([2.0]))
    assert select_variables(s)[0].tolist() == [0, 1]


def test_select_rounds_fractional_size_up():
    gamma = np.array([[1, 1, 1, 0, 0]] * 3 + [[0, 0, 0, 1, 1]] * 2)
    s = summarize(make_samples(np.zeros((5, 5)), gamma))
    assert s.mean_model_size[0] == pytest.approx(2.6)
    assert len(select_variables(s)[0]) == 3
    assert round_half_up(2.5) == 3 and round_half_up(2.4999) == 2


def test_select_ties_go_to_lower_index():
    gamma = np.array([[1, 1, 1, 0]] * 2 + [[0, 0, 0, 1]] * 2)
    s = summarize(make_samples(np.zeros((4, 4)), gamma))
    assert s.mean_model_size[0] == 2
    assert select_variables(s)[0].tolist() == [0, 1]


def test_select_checks_chain_identity():
    a = random_samples(np.random.default_rng(3))
    b = random_samples(np.random.default_rng(4))
    with pytest.raises(ValueError):
        select_variables(summarize(a), b)


@given(st.integers(0, 2**31))
def test_selection_size_is_rounded_mean_size(seed):
    s = summarize(random_samples(np.random.default_rng(seed)))
    for k, sel in enumerate(select_variables(s)):
        assert len(sel) == round_half_up(s.mean_model_size[k])


# ---------------------------------------------------------------- MPM and BMA


def test_mpm_threshold():
    gamma = np.array([[1, 1, 0]] * 51 + [[0, 1, 1]] * 49)
    beta = np.tile([0.8, 0.2, -0.3], (100, 1))
    s = summarize(make_samples(beta, gamma))
    np.testing.assert_allclose(s.selection_prob[0], [0.51, 1.0, 0.49])
    np.testing.assert_allclose(mpm_coefficients(s)[0], [0.8, 0.2, 0.0])
    half = summarize(make_samples(np.ones((4, 1)), [[1], [0], [1], [0]]))
    assert mpm_coefficients(half)[0, 0] == 0.0
    none = summarize(make_samples(np.ones((4, 2)), np.zeros((4, 2))))
    np.testing.assert_array_equal(mpm_coefficients(none), 0.0)


def test_bma_short_chain_averages_everything():
    rng = np.random.default_rng(5)
    beta = rng.normal(size=(100, 3))
    out = bma_coefficients(make_samples(beta, np.zeros((100, 3)), loglik=rng.normal(size=100)))
    np.testing.assert_allclose(out[0], beta.mean(axis=0))


def test_bma_dominant_draw():
    beta = np.vstack([np.tile([1.0, -2.0], (100, 1)), np.random.default_rng(6).normal(size=(50, 2))])
    loglik = np.concatenate([np.full(100, 5.0), np.random.default_rng(7).uniform(-10, 0, 50)])
    np.testing.assert_allclose(bma_coefficients(make_samples(beta, np.zeros((150, 2)), loglik=loglik))[0], [1.0, -2.0])


def test_bma_sorting_oracle():
    rng = np.random.default_rng(8)
    beta = rng.normal(size=(150, 2, 4))
    loglik = np.round(rng.normal(size=(150, 2)), 1)  # ties exercise the stable order
    out = bma_coefficients(make_samples(beta, np.zeros((150, 2, 4)), loglik=loglik))
    for s in range(2):
        top = sorted(range(150), key=lambda k: -loglik[k, s])[:100]
        np.testing.assert_allclose(out[s], beta[top, s].mean(axis=0), rtol=0, atol=1e-14)


@given(st.integers(0, 2**31), st.permutations(list(range(6))))
def test_point_estimates_permutation_equivariant(seed, perm):
    a = random_samples(np.random.default_rng(seed))
    perm = np.array(perm)
    b = make_samples(a.beta[:, :, perm], a.gamma[:, :, perm], loglik=a.loglik)
    np.testing.assert_allclose(mpm_coefficients(summarize(b)), mpm_coefficients(summarize(a))[:, perm], atol=1e-14)
    np.testing.assert_allclose(bma_coefficients(b), bma_coefficients(a)[:, perm], atol=1e-14)


# ---------------------------------------------------------------- edges


def test_edge_counts_four_draws():
    G_within = np.array([[[1, 0, 1]], [[1, 0, 0]], [[1, 1, 0]], [[1, 0, 0]]])
    G_between = np.zeros((4, 0, 3))
    s = make_samples(np.zeros((4, 3)), np.zeros((4, 3)), G_within=G_within, G_between=G_between)
    within, between = edge_probabilities(s)
    assert within[0, 0, 1] == 1.0 and within[0, 1, 0] == 1.0
    assert within[0, 0, 2] == 0.25 and within[0, 1, 2] == 0.25
    assert np.all(np.diag(within[0]) == 0)
    assert between.shape == (0, 3)


def test_between_edge_frequency_recovers_prior():
    c = np.array([0.0, 1.0])
    sg = SubgroupData(np.zeros((0, 3)), GroupedData.empty(c), BaselineHazardPrior())
    pri = PriorConfig(GraphPrior(0.1, 1.0, 1.0, 0.3), MrfPrior(-2.0, 0.0, 0.0), SelectionPrior())
    samples = run_mcmc([sg, sg], ChainConfig(iterations=6000, burn_in=1000, seed=2, priors=pri))
    freq = edge_probabilities(samples)[1].mean()
    assert freq == pytest.approx(0.3, abs=4 * np.sqrt(0.3 * 0.7 / (3 * 5000)))
