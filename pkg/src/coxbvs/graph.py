"""Joint covariate graph across subgroups.

The adjacency couples every pair of covariates inside a subgroup and the
same covariate across two subgroups.  Selection indicators get a Markov
random field prior over this graph; within-subgroup edges also switch the
continuous spike-and-slab prior on the subgroup's precision matrix.

Selection indicators are stored as an ``(S, p)`` array; flattened they
follow the order ``gamma_{1,1..p}, gamma_{2,1..p}, ...``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg
from scipy.special import expit

__all__ = [
    "PrecisionError",
    "GraphPrior",
    "MrfPrior",
    "JointAdjacency",
    "mrf_log_prior_unnormalized",
    "neighbor_counts",
    "mrf_conditional_inclusion",
    "column_conditional",
    "update_precision_block",
    "edge_within_log_odds",
    "update_edge_within",
    "update_edges_within",
    "edge_between_log_odds",
    "update_edge_between",
    "update_edges_between",
    "brute_force_mrf_marginals",
    "gibbs_mrf_marginals",
]

_LOG_2PI = np.log(2.0 * np.pi)


class PrecisionError(np.linalg.LinAlgError):
    """A precision update lost positive definiteness."""

    def __init__(self, message: str, column: int | None = None):
        super().__init__(message)
        self.column = column


@dataclass(frozen=True)
class GraphPrior:
    nu0: float = 0.1
    nu1: float = 10.0
    lam: float = 1.0
    pi_edge: float = 0.1

    def __post_init__(self):
        if not (0 < self.nu0 <= self.nu1):
            raise ValueError("need 0 < nu0 <= nu1")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if not 0 < self.pi_edge < 1:
            raise ValueError("edge probability must lie in (0, 1)")


@dataclass(frozen=True)
class MrfPrior:
    a: float = -4.0
    b_within: float = 1.0
    b_between: float = 1.0

    def __post_init__(self):
        if self.b_within < 0 or self.b_between < 0:
            raise ValueError("MRF interaction weights must be nonnegative")


class JointAdjacency:
    """Within-subgroup graphs ``within[s]`` (p x p, symmetric, hollow) and
    same-covariate links ``between[k]`` for the subgroup pair ``pairs[k]``.
    """

    def __init__(self, S: int, p: int, within=None, between=None):
        self.S = S
        self.p = p
        self.pairs = list(itertools.combinations(range(S), 2))
        self.within = np.zeros((S, p, p), dtype=np.int8) if within is None else np.array(within, dtype=np.int8)
        self.between = (
            np.zeros((len(self.pairs), p), dtype=np.int8) if between is None else np.array(between, dtype=np.int8)
        )
        if self.within.shape != (S, p, p) or self.between.shape != (len(self.pairs), p):
            raise ValueError("adjacency shapes do not match (S, p)")
        for s in range(S):
            if np.any(self.within[s] != self.within[s].T) or np.any(np.diag(self.within[s])):
                raise ValueError(f"within-subgroup graph {s} must be symmetric with zero diagonal")

    @classmethod
    def empty(cls, S: int, p: int) -> "JointAdjacency":
        return cls(S, p)

    def copy(self) -> "JointAdjacency":
        return JointAdjacency(self.S, self.p, self.within.copy(), self.between.copy())

    def pair_index(self, r: int, s: int) -> int:
        return self.pairs.index((min(r, s), max(r, s)))

    def set_within(self, s: int, i: int, j: int, value: int) -> None:
        self.within[s, i, j] = self.within[s, j, i] = value

    def full_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """The ``pS x pS`` within-block and between-block parts of G."""
        S, p = self.S, self.p
        Gw = np.zeros((S * p, S * p))
        Gb = np.zeros((S * p, S * p))
        for s in range(S):
            Gw[s * p:(s + 1) * p, s * p:(s + 1) * p] = self.within[s]
        idx = np.arange(p)
        for k, (r, s) in enumerate(self.pairs):
            Gb[r * p + idx, s * p + idx] = self.between[k]
            Gb[s * p + idx, r * p + idx] = self.between[k]
        return Gw, Gb

    def full_matrix(self) -> np.ndarray:
        Gw, Gb = self.full_matrices()
        return Gw + Gb

    def n_edges(self) -> int:
        return int(self.within.sum() // 2 + self.between.sum())


def _as_grid(gamma, S: int, p: int) -> np.ndarray:
    gamma = np.asarray(gamma)
    return gamma.reshape(gamma.shape[:-1] + (S, p)) if gamma.shape[-2:] != (S, p) else gamma


def mrf_log_prior_unnormalized(gamma, G: JointAdjacency, prior: MrfPrior) -> float:
    """``a 1'gamma + b1 gamma'G_within gamma + b2 gamma'G_between gamma``."""
    g = np.asarray(gamma, dtype=float).reshape(-1)
    if g.size != G.S * G.p:
        raise ValueError(f"gamma has {g.size} entries, expected pS={G.S * G.p}")
    Gw, Gb = G.full_matrices()
    return float(prior.a * g.sum() + prior.b_within * g @ Gw @ g + prior.b_between * g @ Gb @ g)


def neighbor_counts(gamma, G: JointAdjacency, s: int, i: int):
    """Active within-subgroup and between-subgroup neighbours of node (s, i).

    ``gamma`` may carry leading batch dimensions.
    """
    g = _as_grid(gamma, G.S, G.p)
    within = g[..., s, :] @ G.within[s, i].astype(g.dtype)
    between = 0
    for k, (r, t) in enumerate(G.pairs):
        if G.between[k, i]:
            if r == s:
                between = between + g[..., t, i]
            elif t == s:
                between = between + g[..., r, i]
    return within, between


def mrf_conditional_inclusion(gamma, G: JointAdjacency, target: tuple[int, int], prior: MrfPrior):
    """P(gamma_si = 1 | rest, G) under the MRF prior."""
    s, i = target
    nw, nb = neighbor_counts(gamma, G, s, i)
    return expit(prior.a + 2.0 * prior.b_within * nw + 2.0 * prior.b_between * nb)


def _log_normal_pdf(x, sd):
    return -0.5 * _LOG_2PI - np.log(sd) - 0.5 * (np.asarray(x) / sd) ** 2


# ---------------------------------------------------------------- precision


def _slab_variances(G_ss: np.ndarray, prior: GraphPrior) -> np.ndarray:
    return np.where(G_ss == 1, prior.nu1**2, prior.nu0**2)


def column_conditional(omega, sigma, G_ss, S_s, n_s: int, j: int, prior: GraphPrior):
    """Conditional of column ``j`` of a precision matrix given the rest.

    Returns a dict with the Gaussian covariance ``C`` and mean ``-C s12``
    of the off-diagonal part, the gamma shape/rate of
    ``v = w22 - w12' Omega11^{-1} w12`` and ``Omega11^{-1}``.
    """
    p = omega.shape[0]
    idx = np.r_[0:j, j + 1:p]
    sig12 = sigma[idx, j]
    inv11 = sigma[np.ix_(idx, idx)] - np.outer(sig12, sig12) / sigma[j, j]
    s22 = S_s[j, j]
    v12 = _slab_variances(G_ss, prior)[idx, j]
    Cinv = (s22 + prior.lam) * inv11 + np.diag(1.0 / v12)
    C = linalg.inv(Cinv)
    return {
        "index": idx,
        "C": 0.5 * (C + C.T),
        "mean": -C @ S_s[idx, j],
        "shape": n_s / 2.0 + 1.0,
        "rate": (s22 + prior.lam) / 2.0,
        "inv11": inv11,
        "Cinv": Cinv,
    }


@lru_cache(maxsize=64)
def _column_indices(p: int):
    out = []
    for j in range(p):
        idx = np.r_[0:j, j + 1:p]
        out.append((idx, np.ix_(idx, idx)))
    return tuple(out)


def update_precision_block(omega, G_ss, S_s, n_s: int, prior: GraphPrior, rng, sigma=None):
    """One column-wise block Gibbs sweep over a subgroup precision matrix.

    Each column in turn is treated as the last one: its off-diagonal part
    is drawn from a Gaussian and the Schur complement of its diagonal from
    a gamma distribution.  ``S_s`` is the unscaled scatter matrix
    ``X'X``.  Returns ``(omega, sigma)`` with ``sigma = omega^{-1}``
    maintained by rank-one updates.
    """
    omega = np.array(omega, dtype=float)
    p = omega.shape[0]
    if sigma is None:
        try:
            c = linalg.cho_factor(omega, lower=True)
        except linalg.LinAlgError as exc:
            raise PrecisionError("input precision is not positive definite") from exc
        sigma = linalg.cho_solve(c, np.eye(p))
    else:
        sigma = np.array(sigma, dtype=float)
    V = _slab_variances(G_ss, prior)
    lam = prior.lam
    shape = n_s / 2.0 + 1.0
    columns = _column_indices(p)
    diag = np.diag_indices(p - 1)
    for j in range(p):
        if p == 1:
            v = rng.gamma(shape, 2.0 / (S_s[0, 0] + lam))
            omega[0, 0] = v
            sigma[0, 0] = 1.0 / v
            break
        idx, block = columns[j]
        sig12 = sigma[idx, j]
        inv11 = sigma[block] - np.outer(sig12, sig12) / sigma[j, j]
        inv11 = 0.5 * (inv11 + inv11.T)
        s22 = S_s[j, j]
        Cinv = (s22 + lam) * inv11
        Cinv[diag] += 1.0 / V[idx, j]
        try:
            L = linalg.cholesky(Cinv, lower=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise PrecisionError(f"column {j}: conditional precision not positive definite", column=j) from exc
        mean = -linalg.cho_solve((L, True), S_s[idx, j], check_finite=False)
        z = rng.standard_normal(p - 1)
        u = mean + linalg.solve_triangular(L, z, lower=True, trans="T", check_finite=False)
        v = rng.gamma(shape, 2.0 / (s22 + lam))
        w = inv11 @ u
        omega[idx, j] = u
        omega[j, idx] = u
        omega[j, j] = v + u @ w
        sigma[block] = inv11 + np.outer(w, w) / v
        sigma[idx, j] = -w / v
        sigma[j, idx] = -w / v
        sigma[j, j] = 1.0 / v
    if not np.all(np.isfinite(omega)):
        raise PrecisionError("non-finite precision entries after sweep")
    return omega, sigma


# ---------------------------------------------------------------- edges


def edge_within_log_odds(omega_ij, gamma_si, gamma_sj, graph_prior: GraphPrior, mrf: MrfPrior):
    pi = graph_prior.pi_edge
    return (
        np.log(pi) - np.log1p(-pi)
        + _log_normal_pdf(omega_ij, graph_prior.nu1) - _log_normal_pdf(omega_ij, graph_prior.nu0)
        + 2.0 * mrf.b_within * np.asarray(gamma_si) * np.asarray(gamma_sj)
    )


def update_edge_within(G: JointAdjacency, target, omega_ij: float, gamma, graph_prior: GraphPrior,
                       mrf: MrfPrior, rng) -> int:
    """Gibbs draw of one within-subgroup edge indicator; updates ``G`` in place."""
    s, i, j = target
    if not i < j:
        raise ValueError("within-subgroup edge needs i < j")
    g = _as_grid(gamma, G.S, G.p)
    prob = expit(edge_within_log_odds(omega_ij, g[s, i], g[s, j], graph_prior, mrf))
    bit = int(rng.random() < prob)
    G.set_within(s, i, j, bit)
    return bit


def update_edges_within(G: JointAdjacency, s: int, omega, gamma, graph_prior: GraphPrior, mrf: MrfPrior, rng):
    """Scan all edges of subgroup ``s`` in lexicographic order.

    The conditional of each edge involves only its own precision entry and
    the two endpoint indicators, so drawing all of them from one vector of
    uniforms is the same as the sequential scan.
    """
    g = _as_grid(gamma, G.S, G.p)
    iu, ju = np.triu_indices(G.p, k=1)
    prob = expit(edge_within_log_odds(omega[iu, ju], g[s, iu], g[s, ju], graph_prior, mrf))
    bits = (rng.random(iu.size) < prob).astype(np.int8)
    G.within[s, iu, ju] = bits
    G.within[s, ju, iu] = bits
    return bits


def edge_between_log_odds(gamma_ri, gamma_si, graph_prior: GraphPrior, mrf: MrfPrior):
    pi = graph_prior.pi_edge
    return np.log(pi) - np.log1p(-pi) + 2.0 * mrf.b_between * np.asarray(gamma_ri) * np.asarray(gamma_si)


def update_edge_between(G: JointAdjacency, target, gamma, graph_prior: GraphPrior, mrf: MrfPrior, rng) -> int:
    r, s, i = target
    if not r < s:
        raise ValueError("between-subgroup edge needs r < s")
    g = _as_grid(gamma, G.S, G.p)
    prob = expit(edge_between_log_odds(g[r, i], g[s, i], graph_prior, mrf))
    bit = int(rng.random() < prob)
    G.between[G.pair_index(r, s), i] = bit
    return bit


def update_edges_between(G: JointAdjacency, gamma, graph_prior: GraphPrior, mrf: MrfPrior, rng):
    g = _as_grid(gamma, G.S, G.p)
    for k, (r, s) in enumerate(G.pairs):
        prob = expit(edge_between_log_odds(g[r], g[s], graph_prior, mrf))
        G.between[k] = (rng.random(G.p) < prob).astype(np.int8)
    return G.between


# ---------------------------------------------------------------- oracles


def brute_force_mrf_marginals(G: JointAdjacency, prior: MrfPrior, max_nodes: int = 20) -> np.ndarray:
    """Exact inclusion probabilities by summing over all 2^(pS) configurations."""
    m = G.S * G.p
    if m > max_nodes:
        raise ValueError(f"pS={m} too large for enumeration (limit {max_nodes})")
    Gw, Gb = G.full_matrices()
    Q = prior.b_within * Gw + prior.b_between * Gb
    states = ((np.arange(2**m)[:, None] >> np.arange(m)[None, :]) & 1).astype(float)
    logw = prior.a * states.sum(axis=1) + np.einsum("ki,ij,kj->k", states, Q, states)
    w = np.exp(logw - logw.max())
    return (w @ states / w.sum()).reshape(G.S, G.p)


def gibbs_mrf_marginals(G: JointAdjacency, prior: MrfPrior, sweeps: int, rng, chains: int = 1000,
                        burn_in: int = 100) -> np.ndarray:
    """Inclusion frequencies from systematic-scan Gibbs on the MRF prior alone.

    ``chains`` independent chains advance together; ``sweeps`` counts the
    retained sweeps summed over chains.
    """
    per_chain = max(1, -(-sweeps // chains))
    gamma = np.zeros((chains, G.S, G.p))
    total = np.zeros((G.S, G.p))
    for t in range(burn_in + per_chain):
        for s in range(G.S):
            for i in range(G.p):
                prob = mrf_conditional_inclusion(gamma, G, (s, i), prior)
                gamma[:, s, i] = rng.random(chains) < prob
        if t >= burn_in:
            total += gamma.sum(axis=0)
    return total / (per_chain * chains)
