"""Synthetic multi-subgroup survival data.

Gaussian covariates with block-structured precision, Weibull event and
censoring times drawn by inverse transform.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .data import Dataset

__all__ = [
    "SimulationDesign",
    "PAPER_BLOCKS",
    "SURVIVAL_ANCHORS",
    "make_precision",
    "sample_expression",
    "weibull_times",
    "simulate_survival",
    "default_true_effects",
    "weibull_from_survival",
    "paper_design",
    "simulate_dataset",
    "simulate_train_test",
]

# genes 1-3, 4-6 and 7-9 (0-based here)
PAPER_BLOCKS = ((0, 1, 2), (3, 4, 5), (6, 7, 8))

# (S(3 years), S(5 years)) per subgroup
SURVIVAL_ANCHORS = {1: (0.57, 0.42), 2: (0.75, 0.62)}

# A 3-block with partial correlation 0.5 is singular (eigenvalue 1 - 2 * 0.5).
# 1/3 is the positive-association block whose genes have marginal correlation 0.5.
PAPER_PARTIAL_CORR = 1.0 / 3.0


def make_precision(p: int, blocks: Sequence[Sequence[int]] = (), partial_corr: float = PAPER_PARTIAL_CORR) -> np.ndarray:
    """Block precision matrix whose implied covariance has unit diagonal.

    Within each block (0-based indices) the partial correlation
    ``-w_ij / sqrt(w_ii w_jj)`` equals ``partial_corr``; all other pairs
    are conditionally independent.
    """
    omega = np.eye(p)
    seen: set[int] = set()
    for block in blocks:
        block = list(block)
        if seen.intersection(block):
            raise ValueError(f"blocks overlap at {sorted(seen.intersection(block))}")
        if any(i < 0 or i >= p for i in block):
            raise ValueError(f"block {block} outside 0..{p - 1}")
        seen.update(block)
        for a in block:
            for b in block:
                if a != b:
                    omega[a, b] = -partial_corr
    try:
        linalg.cholesky(omega, lower=True)
    except linalg.LinAlgError as exc:
        raise ValueError(f"partial correlation {partial_corr} gives a non-positive-definite precision") from exc
    if np.min(linalg.eigvalsh(omega)) <= 1e-12:
        raise ValueError(f"partial correlation {partial_corr} gives a singular precision")
    # rescale so that diag(inv(omega)) == 1; partial correlations are scale free
    d = np.sqrt(np.diag(linalg.inv(omega)))
    omega = omega * np.outer(d, d)
    omega = 0.5 * (omega + omega.T)
    linalg.cholesky(omega, lower=True)
    return omega


def sample_expression(n: int, precision: np.ndarray, seed) -> np.ndarray:
    """Draw ``n`` rows from N(0, precision^-1)."""
    precision = np.asarray(precision, dtype=float)
    p = precision.shape[0]
    rng = np.random.default_rng(seed)
    try:
        L = linalg.cholesky(precision, lower=True)
    except linalg.LinAlgError as exc:
        raise ValueError("precision matrix is not positive definite") from exc
    z = rng.standard_normal((p, n))
    # precision = L L' so L'^{-1} z has covariance precision^{-1}
    return linalg.solve_triangular(L, z, lower=True, trans="T").T


def weibull_times(u, linear_predictor, eta: float, kappa: float) -> np.ndarray:
    """Inverse transform of U ~ U(0,1) for cumulative hazard ``eta t^kappa exp(lp)``."""
    if eta <= 0 or kappa <= 0:
        raise ValueError("Weibull scale and shape must be positive")
    u = np.asarray(u, dtype=float)
    return (-np.log(u) / (eta * np.exp(linear_predictor))) ** (1.0 / kappa)


def simulate_survival(X, beta, eta: float, kappa: float, seed, censoring_covariates: bool = True):
    """Simulate Weibull event times and independent Weibull censoring times.

    Censoring times use the same scale and shape; with
    ``censoring_covariates`` they also carry the covariate effect, which
    makes ``P(T <= C) = 1/2`` for every patient.

    Returns ``(T, C, observed_time, event)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    lp = X @ np.asarray(beta, dtype=float) if X.shape[0] else np.zeros(0)
    rng = np.random.default_rng(seed)
    u_event = rng.uniform(size=lp.shape[0])
    u_cens = rng.uniform(size=lp.shape[0])
    T = weibull_times(u_event, lp, eta, kappa)
    C = weibull_times(u_cens, lp if censoring_covariates else np.zeros_like(lp), eta, kappa)
    event = (T <= C).astype(np.int64)
    return T, C, np.minimum(T, C), event


def default_true_effects(p: int) -> tuple[np.ndarray, np.ndarray]:
    """Effects of the two simulated subgroups: genes 4-6 shared, 1-3 and 7-9 specific."""
    if p < 9:
        raise ValueError(f"need p >= 9 for the default effects, got {p}")
    b1 = np.zeros(p)
    b2 = np.zeros(p)
    b1[0:3] = 1.0
    b1[3:6] = -1.0
    b2[3:6] = -1.0
    b2[6:9] = 1.0
    return b1, b2


def weibull_from_survival(t1: float, s1: float, t2: float, s2: float) -> tuple[float, float]:
    """Weibull (eta, kappa) with ``exp(-eta t^kappa)`` passing through two survival points."""
    if not (0 < s2 < s1 < 1 and 0 < t1 < t2):
        raise ValueError("need 0 < t1 < t2 and 1 > s1 > s2 > 0")
    kappa = np.log(np.log(s2) / np.log(s1)) / np.log(t2 / t1)
    eta = -np.log(s1) / t1**kappa
    return float(eta), float(kappa)


@dataclass
class SimulationDesign:
    p: int
    n_s: tuple[int, ...]
    true_effects: list
    weibull_scale: tuple[float, ...]
    weibull_shape: tuple[float, ...]
    partial_corr: float = PAPER_PARTIAL_CORR
    block_spec: tuple = PAPER_BLOCKS
    seed: int = 0
    censoring_covariates: bool = True
    n_test: tuple[int, ...] | None = field(default=None)

    def __post_init__(self):
        self.n_s = tuple(int(n) for n in self.n_s)
        self.true_effects = [np.asarray(b, dtype=float) for b in self.true_effects]
        S = len(self.n_s)
        if len(self.true_effects) != S or len(self.weibull_scale) != S or len(self.weibull_shape) != S:
            raise ValueError("effects, scales and shapes must be given for every subgroup")
        for s, b in enumerate(self.true_effects):
            if b.shape != (self.p,):
                raise ValueError(f"true_effects[{s}] has length {b.size}, expected p={self.p}")
        flat = [i for blk in self.block_spec for i in blk]
        if len(flat) != len(set(flat)) or any(i < 0 or i >= self.p for i in flat):
            raise ValueError("blocks must be disjoint index sets within 0..p-1")
        if self.n_test is None:
            self.n_test = self.n_s

    @property
    def S(self) -> int:
        return len(self.n_s)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["true_effects"] = [b.tolist() for b in self.true_effects]
        d["block_spec"] = [list(b) for b in self.block_spec]
        d["n_s"] = list(self.n_s)
        d["n_test"] = list(self.n_test)
        d["weibull_scale"] = list(self.weibull_scale)
        d["weibull_shape"] = list(self.weibull_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationDesign":
        d = dict(d)
        d["block_spec"] = tuple(tuple(b) for b in d.get("block_spec", PAPER_BLOCKS))
        if d.get("n_test") is not None:
            d["n_test"] = tuple(d["n_test"])
        return cls(**d)


def paper_design(p: int = 100, n: int = 100, seed: int = 0, **kwargs) -> SimulationDesign:
    """Two-subgroup design with the survival anchors.

    The default effects need ``p >= 9``; smaller designs pass
    ``true_effects`` (and a matching ``block_spec``) explicitly.
    """
    effects = kwargs.pop("true_effects", None)
    if effects is None:
        effects = list(default_true_effects(p))
    params = [weibull_from_survival(3.0, s3, 5.0, s5) for s3, s5 in SURVIVAL_ANCHORS.values()]
    return SimulationDesign(
        p=p,
        n_s=(n, n),
        true_effects=effects,
        weibull_scale=tuple(e for e, _ in params),
        weibull_shape=tuple(k for _, k in params),
        seed=seed,
        **kwargs,
    )


def simulate_dataset(design: SimulationDesign, n_s: Sequence[int], seed) -> Dataset:
    """One dataset with ``n_s[s]`` patients in subgroup ``s + 1``."""
    omega = make_precision(design.p, design.block_spec, design.partial_corr)
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = seq.spawn(2 * design.S)
    times, events, Xs, groups = [], [], [], []
    for s in range(design.S):
        X = sample_expression(n_s[s], omega, streams[2 * s])
        _, _, t, d = simulate_survival(
            X, design.true_effects[s], design.weibull_scale[s], design.weibull_shape[s],
            streams[2 * s + 1], censoring_covariates=design.censoring_covariates,
        )
        times.append(t)
        events.append(d)
        Xs.append(X)
        groups.append(np.full(n_s[s], s + 1))
    return Dataset(
        np.concatenate(times), np.concatenate(events), np.vstack(Xs), np.concatenate(groups),
        n_subgroups=design.S, covariate_names=[f"gene{j + 1}" for j in range(design.p)],
    )


def simulate_train_test(design: SimulationDesign, replication: int = 0) -> tuple[Dataset, Dataset]:
    """Independent training and test sets for one replication of the design."""
    train_seq, test_seq = np.random.SeedSequence([design.seed, replication]).spawn(2)
    return simulate_dataset(design, design.n_s, train_seq), simulate_dataset(design, design.n_test, test_seq)
