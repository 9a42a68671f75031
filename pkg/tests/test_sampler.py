import dataclasses

import numpy as np
import pytest
from scipy import linalg

from coxbvs.coxmodel import BaselineHazardPrior, SelectionPrior
from coxbvs.data import GroupedData, standardize
from coxbvs.graph import GraphPrior, MrfPrior
from coxbvs.sampler import (
    ChainConfig,
    PriorConfig,
    SubgroupData,
    autocorrelation,
    diagnostics,
    init_chain,
    load_chain,
    prepare_subgroups,
    run_mcmc,
    save_chain,
)
from coxbvs.simulate import paper_design, simulate_train_test

PRIORS = PriorConfig(
    graph=GraphPrior(nu0=0.1, nu1=10.0, lam=1.0, pi_edge=2.0 / 9.0),
    mrf=MrfPrior(a=-4.0, b_within=1.0, b_between=1.0),
    selection=SelectionPrior(0.0375, 20.0, 0.02),
)


@pytest.fixture(scope="module")
def small_train():
    train, _ = simulate_train_test(paper_design(p=10, n=40, seed=3), 0)
    train_std, _, _ = standardize(train, None)
    return train_std


def test_init_chain_empty_model():
    rngs = [np.random.default_rng(1), np.random.default_rng(2)]
    st = init_chain(2, 7, [4, 6], rngs)
    assert st.gamma.sum() == 0
    assert st.G.within.sum() == 0 and st.G.between.sum() == 0
    for c in st.cox:
        assert np.all(np.abs(c.beta) <= 0.02)
        assert np.all(c.h > 0)
    assert [c.h.size for c in st.cox] == [4, 6]
    assert all(np.array_equal(o, np.eye(7)) for o in st.omegas)
    again = init_chain(2, 7, [4, 6], [np.random.default_rng(1), np.random.default_rng(2)])
    assert all(np.array_equal(a.beta, b.beta) and np.array_equal(a.h, b.h) for a, b in zip(st.cox, again.cox))


def test_chain_config_validation():
    with pytest.raises(ValueError, match="burn_in"):
        ChainConfig(iterations=100, burn_in=100)
    with pytest.raises(ValueError, match="model"):
        ChainConfig(model="Lasso")
    with pytest.raises(ValueError):
        ChainConfig(thin=0)


def test_config_round_trip():
    cfg = ChainConfig(iterations=50, burn_in=10, seed=4, model="Sub-struct", priors=PRIORS)
    assert ChainConfig.from_dict(cfg.to_dict()) == cfg


def test_chain_shapes_and_determinism(small_train):
    sgs = prepare_subgroups(small_train, "CoxBVS-SL")
    cfg = ChainConfig(iterations=60, burn_in=20, seed=7, priors=PRIORS, omega_thin=5)
    a = run_mcmc(sgs, cfg)
    b = run_mcmc(sgs, cfg)
    assert a.beta.shape == (40, 2, 10)
    assert a.G_within.shape == (40, 2, 45)
    assert a.G_between.shape == (40, 1, 10)
    assert a.omega.shape == (8, 2, 55)
    assert list(a.iteration) == list(range(20, 60))
    for name, arr in a.arrays().items():
        assert np.array_equal(arr, b.arrays()[name]), name
    c = run_mcmc(sgs, dataclasses.replace(cfg, seed=8))
    assert not np.array_equal(a.beta, c.beta)


def test_thinning(small_train):
    sgs = prepare_subgroups(small_train, "Subgroup")
    s = run_mcmc(sgs, ChainConfig(iterations=50, burn_in=10, thin=4, seed=1, model="Subgroup", priors=PRIORS))
    assert list(s.iteration) == list(range(10, 50, 4))
    assert s.omega.shape[0] == 0


def test_store_burn_in(small_train):
    sgs = prepare_subgroups(small_train, "Subgroup")
    s = run_mcmc(sgs, ChainConfig(iterations=30, burn_in=10, seed=1, model="Subgroup", priors=PRIORS,
                                  store_burn_in=True))
    assert s.burn_beta.shape == (10, 2, 10)


def test_subgroup_model_decouples(small_train):
    sgs = prepare_subgroups(small_train, "Subgroup")
    cfg = ChainConfig(iterations=80, burn_in=30, seed=11, model="Subgroup", priors=PRIORS)
    joint = run_mcmc(sgs, cfg)
    for s in range(2):
        alone = run_mcmc([sgs[s]], cfg, subgroup_keys=[s])
        assert np.array_equal(alone.beta[:, 0], joint.beta[:, s])
        assert np.array_equal(alone.gamma[:, 0], joint.gamma[:, s])
        assert np.array_equal(alone.h[0], joint.h[s])


def test_sub_struct_equals_full_model_without_between_coupling(small_train):
    sgs = prepare_subgroups(small_train, "CoxBVS-SL")
    no_between = dataclasses.replace(PRIORS, mrf=MrfPrior(-4.0, 1.0, 0.0))
    full = run_mcmc(sgs, ChainConfig(iterations=60, burn_in=20, seed=2, priors=no_between))
    sub = run_mcmc(sgs, ChainConfig(iterations=60, burn_in=20, seed=2, model="Sub-struct", priors=PRIORS))
    for name in ("beta", "gamma", "G_within", "omega", "loglik"):
        assert np.array_equal(getattr(full, name), getattr(sub, name)), name
    assert sub.G_between.sum() == 0


def test_pooled_needs_one_unit(small_train):
    with pytest.raises(ValueError, match="Pooled"):
        run_mcmc(prepare_subgroups(small_train, "CoxBVS-SL"), ChainConfig(iterations=5, burn_in=1, model="Pooled"))
    pooled = prepare_subgroups(small_train, "Pooled")
    assert len(pooled) == 1 and pooled[0].n == small_train.n


@pytest.mark.slow
def test_desk_scale_precisions_positive_definite():
    train, _ = simulate_train_test(paper_design(p=20, n=100, seed=1), 0)
    train_std, _, _ = standardize(train, None)
    pri = dataclasses.replace(PRIORS, graph=GraphPrior(0.1, 10.0, 1.0, 2.0 / 19.0))
    s = run_mcmc(prepare_subgroups(train_std), ChainConfig(iterations=2000, burn_in=1000, seed=1, priors=pri))
    assert s.omega.shape[0] == 100
    for k in range(s.omega.shape[0]):
        for g in range(2):
            linalg.cholesky(s.omega_matrix(k, g), lower=True)
    assert np.all(np.isfinite(s.loglik))


def test_prior_recovery_without_data():
    # Bernoulli prior: gamma ~ Bern(pi), beta | gamma spike/slab normal, h_g ~ G(a0 dH*, a0)
    c = np.array([0.0, 0.5, 1.0, 2.0])
    bh = BaselineHazardPrior(2.0, 0.8, 1.0)
    pri = PriorConfig(selection=SelectionPrior(0.0375, 20.0, 0.3))
    sg = SubgroupData(np.zeros((0, 2)), GroupedData.empty(c), bh)
    s = run_mcmc([sg], ChainConfig(iterations=100_000, burn_in=1000, seed=3, model="Subgroup", priors=pri))
    g = s.gamma[:, 0].mean()
    assert g == pytest.approx(0.3, rel=0.10)
    mix_sd = np.sqrt(0.3 * 0.75**2 + 0.7 * 0.0375**2)
    np.testing.assert_allclose(s.beta[:, 0].std(axis=0), mix_sd, rtol=0.10)
    shape = bh.increment_shapes(c)
    np.testing.assert_allclose(s.h[0].mean(axis=0), shape / bh.a0, rtol=0.05)
    np.testing.assert_allclose(s.h[0].var(axis=0), shape / bh.a0**2, rtol=0.10)


def test_autocorrelation_constant_and_white_noise():
    assert autocorrelation(np.ones(50)) is None
    x = np.random.default_rng(0).standard_normal(20_000)
    acf = autocorrelation(x, 5)
    assert acf[0] == pytest.approx(1.0)
    assert abs(acf[1]) < 2 / np.sqrt(x.size)


def test_diagnostics(small_train):
    sgs = prepare_subgroups(small_train, "Subgroup")
    s = run_mcmc(sgs, ChainConfig(iterations=80, burn_in=20, seed=1, model="Subgroup", priors=PRIORS))
    beta = s.beta.copy()
    beta[:, 1, 3] = 0.25
    d = diagnostics(dataclasses.replace(s, beta=beta), max_lag=50)
    assert d["autocorrelation"].shape == (2, 10, 51)
    assert d["zero_variance"][1, 3] and d["zero_variance"].sum() == 1
    assert np.all(np.isnan(d["autocorrelation"][1, 3]))
    np.testing.assert_allclose(d["running_mean"][-1], beta.mean(axis=0), rtol=0, atol=1e-14)
    with pytest.raises(ValueError):
        diagnostics(dataclasses.replace(s, beta=beta[:5]))


def test_save_load_round_trip(tmp_path, small_train):
    sgs = prepare_subgroups(small_train, "CoxBVS-SL")
    s = run_mcmc(sgs, ChainConfig(iterations=40, burn_in=10, seed=5, priors=PRIORS, store_burn_in=True))
    m = save_chain(s, tmp_path / "chain", extra={"config_hash": "abc123"})
    assert m["config_hash"] == "abc123" and m["n_draws"] == 30
    first = (tmp_path / "chain.npz").read_bytes()
    back = load_chain(tmp_path / "chain")
    for name, arr in s.arrays().items():
        assert np.array_equal(arr, back.arrays()[name]), name
    assert back.config == s.config and back.pairs == s.pairs
    save_chain(back, tmp_path / "chain", extra={"config_hash": "abc123"})
    assert (tmp_path / "chain.npz").read_bytes() == first
    raw = bytearray(first)
    raw[-30] ^= 0xFF
    (tmp_path / "chain.npz").write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="hash"):
        load_chain(tmp_path / "chain")
