"""Posterior summaries of a stored chain.

Selection probabilities, marginal and conditional coefficient moments,
the mean-model-size selection rule, median-probability-model and
likelihood-ranked model-averaged coefficients, and edge frequencies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .sampler import ChainSamples

__all__ = [
    "PosteriorSummary",
    "summarize",
    "select_variables",
    "mpm_coefficients",
    "bma_coefficients",
    "edge_probabilities",
    "round_half_up",
]


def round_half_up(x) -> int:
    return int(np.floor(np.asarray(x) + 0.5))


def _sd(x, axis=0):
    # sample SD; undefined (NaN) for fewer than two draws
    n = x.shape[axis]
    if n < 2:
        return np.full(np.delete(x.shape, axis), np.nan)
    return x.std(axis=axis, ddof=1)


@dataclass
class PosteriorSummary:
    """Per-(subgroup, covariate) posterior statistics, arrays of shape (S, p).

    Conditional moments use only draws with the covariate selected and
    are NaN (``conditional_defined`` False) when it never was.
    """

    selection_prob: np.ndarray
    marginal_mean: np.ndarray
    marginal_sd: np.ndarray
    conditional_mean: np.ndarray
    conditional_sd: np.ndarray
    conditional_defined: np.ndarray
    excluded_mean: np.ndarray
    edge_prob_within: np.ndarray
    edge_prob_between: np.ndarray
    mean_model_size: np.ndarray
    pairs: list
    n_draws: int

    @property
    def S(self) -> int:
        return self.selection_prob.shape[0]

    @property
    def p(self) -> int:
        return self.selection_prob.shape[1]

    def to_frame(self, covariate_names=None) -> pd.DataFrame:
        """One row per (subgroup, covariate); subgroups and covariates 1-based."""
        S, p = self.S, self.p
        names = covariate_names or [f"x{i + 1}" for i in range(p)]
        return pd.DataFrame({
            "subgroup": np.repeat(np.arange(1, S + 1), p),
            "covariate": np.tile(np.arange(1, p + 1), S),
            "name": np.tile(np.asarray(names, dtype=object), S),
            "selection_prob": self.selection_prob.ravel(),
            "marginal_mean": self.marginal_mean.ravel(),
            "marginal_sd": self.marginal_sd.ravel(),
            "conditional_mean": self.conditional_mean.ravel(),
            "conditional_sd": self.conditional_sd.ravel(),
        })

    def edges_frame(self) -> tuple[pd.DataFrame, pd.DataFrame]:
        S, p = self.S, self.p
        iu, ju = np.triu_indices(p, 1)
        within = pd.DataFrame({
            "subgroup": np.repeat(np.arange(1, S + 1), iu.size),
            "i": np.tile(iu + 1, S),
            "j": np.tile(ju + 1, S),
            "prob": np.concatenate([self.edge_prob_within[s][iu, ju] for s in range(S)]) if S else [],
        })
        rows = [(r + 1, s + 1, i + 1, self.edge_prob_between[k, i])
                for k, (r, s) in enumerate(self.pairs) for i in range(p)]
        between = pd.DataFrame(rows, columns=["r", "s", "i", "prob"])
        return within, between

    def to_dict(self) -> dict:
        def clean(a):
            return [[None if not np.isfinite(v) else float(v) for v in row] for row in np.asarray(a, dtype=float)]

        return {
            "selection_prob": clean(self.selection_prob),
            "marginal_mean": clean(self.marginal_mean),
            "marginal_sd": clean(self.marginal_sd),
            "conditional_mean": clean(self.conditional_mean),
            "conditional_sd": clean(self.conditional_sd),
            "mean_model_size": [float(v) for v in self.mean_model_size],
            "edge_prob_between": clean(self.edge_prob_between) if self.edge_prob_between.size else [],
            "pairs": [list(pr) for pr in self.pairs],
            "n_draws": self.n_draws,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def edge_probabilities(samples: ChainSamples) -> tuple[np.ndarray, np.ndarray]:
    """Empirical inclusion frequency of every within- and between-subgroup edge."""
    if samples.n_draws == 0:
        raise ValueError("no stored draws")
    S, p = samples.S, samples.p
    iu = np.triu_indices(p, 1)
    within = np.zeros((S, p, p))
    freq = samples.G_within.mean(axis=0)
    for s in range(S):
        within[s][iu] = freq[s]
        within[s] += within[s].T
    return within, samples.G_between.mean(axis=0)


def summarize(samples: ChainSamples) -> PosteriorSummary:
    if samples.n_draws == 0:
        raise ValueError("no stored draws")
    beta = samples.beta
    gam = samples.gamma.astype(bool)
    sel = gam.mean(axis=0)
    n_in = gam.sum(axis=0)
    n_out = (~gam).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cond_mean = np.where(gam, beta, 0.0).sum(axis=0) / n_in
        excl_mean = np.where(~gam, beta, 0.0).sum(axis=0) / n_out
        cond_var = np.where(gam, (beta - cond_mean) ** 2, 0.0).sum(axis=0) / (n_in - 1)
    defined = n_in > 0
    cond_mean = np.where(defined, cond_mean, np.nan)
    cond_sd = np.where(n_in > 1, np.sqrt(np.maximum(cond_var, 0.0)), np.nan)
    within, between = edge_probabilities(samples)
    return PosteriorSummary(
        selection_prob=sel,
        marginal_mean=beta.mean(axis=0),
        marginal_sd=_sd(beta),
        conditional_mean=cond_mean,
        conditional_sd=cond_sd,
        conditional_defined=defined,
        excluded_mean=np.where(n_out > 0, excl_mean, np.nan),
        edge_prob_within=within,
        edge_prob_between=between,
        mean_model_size=gam.sum(axis=2).mean(axis=0),
        pairs=list(samples.pairs),
        n_draws=samples.n_draws,
    )


def select_variables(summary: PosteriorSummary, samples: ChainSamples | None = None) -> list[np.ndarray]:
    """Covariates (0-based) chosen by the mean-model-size rule, per subgroup.

    ``round(m*)`` covariates with the highest selection probability; ties
    go to the lower index.  Passing the chain checks that the summary
    was computed from it.
    """
    if samples is not None and (samples.n_draws != summary.n_draws
                                or not np.array_equal(samples.gamma.mean(axis=0), summary.selection_prob)):
        raise ValueError("summary was not computed from these samples")
    out = []
    for s in range(summary.S):
        m = round_half_up(summary.mean_model_size[s])
        order = np.argsort(-summary.selection_prob[s], kind="stable")
        out.append(np.sort(order[:m]))
    return out


def mpm_coefficients(summary: PosteriorSummary) -> np.ndarray:
    """Marginal posterior means of covariates with selection probability above 1/2."""
    return np.where(summary.selection_prob > 0.5, summary.marginal_mean, 0.0)


def bma_coefficients(samples: ChainSamples, top: int = 100) -> np.ndarray:
    """Average coefficient draws over the ``top`` stored iterations with the
    highest log-likelihood, separately for each subgroup."""
    if samples.n_draws == 0:
        raise ValueError("no stored draws")
    out = np.zeros((samples.S, samples.p))
    k = min(top, samples.n_draws)
    for s in range(samples.S):
        order = np.argsort(-samples.loglik[:, s], kind="stable")[:k]
        out[s] = samples.beta[order, s].mean(axis=0)
    return out
