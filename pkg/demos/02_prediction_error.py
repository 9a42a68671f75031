"""
Prediction error of the joint and the pooled model
==================================================

Integrated Brier scores on an independent test set, with the median
probability model and the likelihood-ranked model average.
"""

# %%
import numpy as np

from coxbvs.evaluate import PredictionModel, default_t_star, integrated_brier, prediction_error_curve
from coxbvs.experiment import fit_model, resolve_priors
from coxbvs.simulate import paper_design, simulate_train_test

train, test = simulate_train_test(paper_design(p=20, n=100, seed=2), replication=0)
priors = resolve_priors("simulation", train.p)
chain = {"iterations": 2000, "burn_in": 1000}

# %%
fits = {model: fit_model(train, model, priors, chain, seed=11) for model in ("CoxBVS-SL", "Pooled")}

# %%
t_star = {s: default_t_star(test.time[test.subgroup == s], test.event[test.subgroup == s]) for s in (1, 2)}
for model, (samples, params) in fits.items():
    for method in ("mpm", "bma"):
        pm = PredictionModel.from_samples(samples, method, params, pooled=(model == "Pooled"))
        ibs = [integrated_brier(pm, test, t_star[s], subgroup=s) for s in (1, 2)]
        print(f"{model:10s} {method}: IBS subgroup 1 {ibs[0]:.4f}, subgroup 2 {ibs[1]:.4f}")

# %%
# Prediction-error curve of the joint model in subgroup 1.
samples, params = fits["CoxBVS-SL"]
pm = PredictionModel.from_samples(samples, "mpm", params)
grid = np.linspace(0, t_star[1], 11)[1:]
for t, bs in zip(grid, prediction_error_curve(pm, test, grid, subgroup=1)):
    print(f"t = {t:5.2f}  BS = {bs:.4f}")
