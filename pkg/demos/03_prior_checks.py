"""
Sampler checks without data
===========================

With zero-record subgroups the chain samples the prior, so inclusion
frequencies and precision entries can be compared with known values.
"""

# %%
import numpy as np

from coxbvs.coxmodel import BaselineHazardPrior, SelectionPrior
from coxbvs.data import GroupedData
from coxbvs.graph import GraphPrior, JointAdjacency, MrfPrior, brute_force_mrf_marginals, gibbs_mrf_marginals
from coxbvs.sampler import ChainConfig, PriorConfig, SubgroupData, run_mcmc

# %%
# MRF prior alone: Gibbs frequencies against exact enumeration.
G = JointAdjacency.empty(2, 3)
G.set_within(0, 0, 1, 1)
G.between[0, 2] = 1
prior = MrfPrior(a=-1.0, b_within=1.0, b_between=1.0)
print("exact:", brute_force_mrf_marginals(G, prior).round(4))
print("gibbs:", gibbs_mrf_marginals(G, prior, 200_000, np.random.default_rng(0)).round(4))

# %%
c = np.array([0.0, 0.5, 1.0, 2.0])
sg = SubgroupData(np.zeros((0, 3)), GroupedData.empty(c), BaselineHazardPrior(2.0, 0.5, 1.0))
pri = PriorConfig(GraphPrior(0.05, 0.3, 0.1, 0.2), MrfPrior(-2.0, 0.5, 0.5), SelectionPrior())
samples = run_mcmc([sg, sg], ChainConfig(iterations=20_000, burn_in=2000, seed=3, priors=pri, omega_thin=1))

# %%
iu = np.triu_indices(3)
off = samples.omega[:, :, iu[0] != iu[1]]
print("edge frequency:", samples.G_within.mean().round(3))
print("off-diagonal SD, edge present:", off[samples.G_within == 1].std().round(4), "(slab 0.3)")
print("off-diagonal SD, edge absent:", off[samples.G_within == 0].std().round(4), "(spike 0.05)")
print("baseline increment means:", samples.h[0].mean(axis=0).round(3),
      "prior:", (np.diff(0.5 * c) * 2.0 / 2.0).round(3))
