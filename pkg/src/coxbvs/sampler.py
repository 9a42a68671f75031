"""MCMC driver for the subgroup Cox models.

One iteration runs, in order: precision sweeps per subgroup, the graph
scan, the selection-indicator scan, the coefficient scan and the hazard
increment redraw.  The baseline variants skip or restrict the graph
steps:

* ``CoxBVS-SL``  full model
* ``Sub-struct`` between-subgroup links held at zero
* ``Subgroup``   no graph, independent Bernoulli selection prior
* ``Pooled``     as ``Subgroup`` on the concatenated data (S = 1)

Every block draws from its own random stream derived from the chain
seed, so variants that agree on a block produce identical draws there.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .coxmodel import (
    BaselineHazardPrior,
    CoxSubgroupState,
    SelectionPrior,
    _BetaWorkspace,
    fit_weibull_baseline,
    grouped_log_likelihood,
    update_beta,
    update_gamma,
    update_hazard_increments,
)
from .data import Dataset, GroupedData, build_grouped_data
from .graph import (
    GraphPrior,
    JointAdjacency,
    MrfPrior,
    PrecisionError,
    update_edges_between,
    update_edges_within,
    update_precision_block,
)

__all__ = [
    "MODELS",
    "PriorConfig",
    "ChainConfig",
    "SubgroupData",
    "ChainState",
    "ChainSamples",
    "ChainError",
    "prepare_subgroups",
    "init_chain",
    "run_mcmc",
    "diagnostics",
    "autocorrelation",
    "save_chain",
    "load_chain",
]

MODELS = ("CoxBVS-SL", "Sub-struct", "Subgroup", "Pooled")


@dataclass(frozen=True)
class PriorConfig:
    graph: GraphPrior = field(default_factory=GraphPrior)
    mrf: MrfPrior = field(default_factory=MrfPrior)
    selection: SelectionPrior = field(default_factory=SelectionPrior)
    a0: float = 2.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PriorConfig":
        return cls(
            graph=GraphPrior(**d.get("graph", {})),
            mrf=MrfPrior(**d.get("mrf", {})),
            selection=SelectionPrior(**d.get("selection", {})),
            a0=d.get("a0", 2.0),
        )


@dataclass(frozen=True)
class ChainConfig:
    iterations: int = 2000
    burn_in: int = 1000
    seed: int = 0
    model: str = "CoxBVS-SL"
    thin: int = 1
    priors: PriorConfig = field(default_factory=PriorConfig)
    omega_thin: int = 10
    store_burn_in: bool = False

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; choose from {MODELS}")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError(f"need 0 <= burn_in < iterations, got {self.burn_in}/{self.iterations}")
        if self.thin < 1 or self.omega_thin < 1:
            raise ValueError("thinning intervals must be >= 1")

    @property
    def uses_graph(self) -> bool:
        return self.model in ("CoxBVS-SL", "Sub-struct")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["priors"] = self.priors.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ChainConfig":
        d = dict(d)
        d["priors"] = PriorConfig.from_dict(d.get("priors", {}))
        return cls(**d)


@dataclass
class SubgroupData:
    """Standardized covariates, interval grouping and baseline prior of one subgroup."""

    X: np.ndarray
    grouped: GroupedData
    baseline: BaselineHazardPrior

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.scatter = self.X.T @ self.X

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def prepare_subgroups(train: Dataset, model: str = "CoxBVS-SL", a0: float = 2.0) -> list[SubgroupData]:
    """Group each subgroup's (already standardized) training data and fit its
    Weibull baseline; the Pooled model gets one subgroup with all records."""
    data = train.pooled() if model == "Pooled" else train
    out = []
    for s in range(1, data.S + 1):
        idx = np.flatnonzero(data.subgroup == s)
        t, d = data.time[idx], data.event[idx]
        eta, kappa = fit_weibull_baseline(t, d)
        out.append(SubgroupData(data.X[idx], build_grouped_data(t, d), BaselineHazardPrior(a0, eta, kappa)))
    return out


@dataclass
class ChainState:
    cox: list[CoxSubgroupState]
    gamma: np.ndarray  # (S, p) int8, shared view for the MRF scan
    G: JointAdjacency
    omegas: list[np.ndarray]
    sigmas: list[np.ndarray]

    def dump(self) -> dict:
        return {
            "beta": [c.beta.tolist() for c in self.cox],
            "gamma": self.gamma.tolist(),
            "h": [c.h.tolist() for c in self.cox],
            "G_within": self.G.within.tolist(),
            "G_between": self.G.between.tolist(),
            "omega": [o.tolist() for o in self.omegas],
        }


class ChainError(RuntimeError):
    def __init__(self, message: str, iteration: int, state: dict):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration
        self.state = state


class _Streams:
    def __init__(self, seed: int, S: int, keys: Sequence[int]):
        def gen(*key):
            return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))

        self.omega = [gen(0, s) for s in range(S)]
        self.within = [gen(1, s) for s in range(S)]
        self.between = gen(2)
        self.cox = [gen(3, k) for k in keys]


def init_chain(S: int, p: int, J: Sequence[int], rngs: Sequence[np.random.Generator]) -> ChainState:
    """Empty-model starting values: no edges, identity precision, no
    selected covariates, coefficients U(-0.02, 0.02), increments G(1, 1)."""
    cox = []
    for s in range(S):
        beta = rngs[s].uniform(-0.02, 0.02, size=p)
        h = rngs[s].gamma(1.0, 1.0, size=J[s])
        cox.append(CoxSubgroupState(beta, np.zeros(p, dtype=np.int8), np.maximum(h, np.finfo(float).tiny)))
    return ChainState(
        cox=cox,
        gamma=np.zeros((S, p), dtype=np.int8),
        G=JointAdjacency.empty(S, p),
        omegas=[np.eye(p) for _ in range(S)],
        sigmas=[np.eye(p) for _ in range(S)],
    )


@dataclass
class ChainSamples:
    """Post-burn-in draws.

    ``h`` is a list (one array per subgroup) because subgroups have their
    own partitions.  ``omega`` holds the upper triangle (with diagonal) of
    every ``omega_thin``-th stored draw.
    """

    beta: np.ndarray
    gamma: np.ndarray
    h: list[np.ndarray]
    G_within: np.ndarray
    G_between: np.ndarray
    omega: np.ndarray
    loglik: np.ndarray
    iteration: np.ndarray
    omega_iteration: np.ndarray
    boundaries: list[np.ndarray]
    baseline: list[tuple[float, float, float]]
    pairs: list[tuple[int, int]]
    config: dict
    acceptance: np.ndarray
    burn_beta: np.ndarray | None = None
    burn_loglik: np.ndarray | None = None

    @property
    def n_draws(self) -> int:
        return self.beta.shape[0]

    @property
    def S(self) -> int:
        return self.beta.shape[1]

    @property
    def p(self) -> int:
        return self.beta.shape[2]

    def within_matrix(self, draw: int, s: int) -> np.ndarray:
        p = self.p
        G = np.zeros((p, p), dtype=np.int8)
        iu = np.triu_indices(p, 1)
        G[iu] = self.G_within[draw, s]
        return G + G.T

    def omega_matrix(self, k: int, s: int) -> np.ndarray:
        p = self.p
        iu = np.triu_indices(p)
        W = np.zeros((p, p))
        W[iu] = self.omega[k, s]
        return W + np.triu(W, 1).T

    def arrays(self) -> dict[str, np.ndarray]:
        out = {
            "beta": self.beta,
            "gamma": self.gamma,
            "G_within": self.G_within,
            "G_between": self.G_between,
            "omega": self.omega,
            "loglik": self.loglik,
            "iteration": self.iteration,
            "omega_iteration": self.omega_iteration,
            "acceptance": self.acceptance,
            "pairs": np.array(self.pairs, dtype=np.int64).reshape(-1, 2),
            "baseline": np.array(self.baseline, dtype=float).reshape(-1, 3),
        }
        for s, (h, c) in enumerate(zip(self.h, self.boundaries)):
            out[f"h_{s}"] = h
            out[f"boundaries_{s}"] = c
        if self.burn_beta is not None:
            out["burn_beta"] = self.burn_beta
            out["burn_loglik"] = self.burn_loglik
        return out


def _check_inputs(subgroups: Sequence[SubgroupData], config: ChainConfig):
    if not subgroups:
        raise ValueError("no subgroups")
    p = {sg.p for sg in subgroups}
    if len(p) != 1:
        raise ValueError(f"subgroups disagree on p: {sorted(p)}")
    if config.model == "Pooled" and len(subgroups) != 1:
        raise ValueError("Pooled model expects a single pooled subgroup (see prepare_subgroups)")


def run_mcmc(subgroups: Sequence[SubgroupData], config: ChainConfig,
             subgroup_keys: Sequence[int] | None = None, progress=None) -> ChainSamples:
    """Run one chain and return its stored draws.

    ``subgroup_keys`` selects the random stream of each subgroup's Cox
    updates (default ``0..S-1``); matching keys reproduce a subgroup's
    draws across runs that share the seed.
    """
    _check_inputs(subgroups, config)
    S, p = len(subgroups), subgroups[0].p
    keys = list(range(S)) if subgroup_keys is None else list(subgroup_keys)
    streams = _Streams(config.seed, S, keys)
    pri = config.priors
    state = init_chain(S, p, [sg.grouped.J for sg in subgroups], streams.cox)
    use_graph = config.uses_graph
    mrf = pri.mrf if use_graph else None
    if config.model == "Sub-struct":
        mrf = MrfPrior(pri.mrf.a, pri.mrf.b_within, 0.0)

    n_keep = len(range(config.burn_in, config.iterations, config.thin))
    n_omega = len(range(0, n_keep, config.omega_thin)) if use_graph else 0
    n_within = p * (p - 1) // 2
    iu = np.triu_indices(p, 1)
    iu_diag = np.triu_indices(p)
    beta = np.zeros((n_keep, S, p))
    gamma = np.zeros((n_keep, S, p), dtype=np.int8)
    hs = [np.zeros((n_keep, sg.grouped.J)) for sg in subgroups]
    G_within = np.zeros((n_keep, S, n_within), dtype=np.int8)
    G_between = np.zeros((n_keep, len(state.G.pairs), p), dtype=np.int8)
    omega = np.zeros((n_omega, S, iu_diag[0].size))
    loglik = np.zeros((n_keep, S))
    iteration = np.zeros(n_keep, dtype=np.int64)
    omega_iteration = np.zeros(n_omega, dtype=np.int64)
    accepted = np.zeros((S, p))
    burn_beta = np.zeros((config.burn_in, S, p)) if config.store_burn_in else None
    burn_ll = np.zeros((config.burn_in, S)) if config.store_burn_in else None

    k = 0
    for t in range(config.iterations):
        try:
            if use_graph:
                for s, sg in enumerate(subgroups):
                    state.omegas[s], state.sigmas[s] = update_precision_block(
                        state.omegas[s], state.G.within[s], sg.scatter, sg.n, pri.graph,
                        streams.omega[s], sigma=state.sigmas[s],
                    )
                for s in range(S):
                    update_edges_within(state.G, s, state.omegas[s], state.gamma, pri.graph, mrf, streams.within[s])
                if config.model == "CoxBVS-SL" and S > 1:
                    update_edges_between(state.G, state.gamma, pri.graph, mrf, streams.between)
        except PrecisionError as exc:
            raise ChainError(f"precision update failed ({exc})", t, state.dump()) from exc

        for s in range(S):
            update_gamma(state.cox[s], s, state.G, state.gamma, pri.selection, mrf, streams.cox[s])

        adapt = 1.0 / (t + 1) ** 0.6 if t < config.burn_in else 0.0
        for s, sg in enumerate(subgroups):
            cs = state.cox[s]
            ws = _BetaWorkspace(cs, sg.grouped, sg.X)
            for i in range(p):
                if update_beta(cs, i, sg.grouped, sg.X, pri.selection, streams.cox[s], adapt_step=adapt, workspace=ws):
                    if t >= config.burn_in:
                        accepted[s, i] += 1
            update_hazard_increments(cs, sg.grouped, sg.X, sg.baseline, streams.cox[s])

        lls = np.array([grouped_log_likelihood(state.cox[s].beta, state.cox[s].h, sg.grouped, sg.X)
                        for s, sg in enumerate(subgroups)])
        if not np.all(np.isfinite(lls)):
            raise ChainError(f"non-finite log-likelihood {lls.tolist()}", t, state.dump())

        if t < config.burn_in:
            if burn_beta is not None:
                burn_beta[t] = [c.beta for c in state.cox]
                burn_ll[t] = lls
        elif (t - config.burn_in) % config.thin == 0:
            beta[k] = [c.beta for c in state.cox]
            gamma[k] = state.gamma
            for s in range(S):
                hs[s][k] = state.cox[s].h
                G_within[k, s] = state.G.within[s][iu]
            G_between[k] = state.G.between
            loglik[k] = lls
            iteration[k] = t
            if use_graph and k % config.omega_thin == 0:
                j = k // config.omega_thin
                omega_iteration[j] = t
                for s in range(S):
                    omega[j, s] = state.omegas[s][iu_diag]
            k += 1
        if progress is not None:
            progress(t)

    return ChainSamples(
        beta=beta, gamma=gamma, h=hs, G_within=G_within, G_between=G_between, omega=omega,
        loglik=loglik, iteration=iteration, omega_iteration=omega_iteration,
        boundaries=[sg.grouped.boundaries for sg in subgroups],
        baseline=[(sg.baseline.a0, sg.baseline.eta, sg.baseline.kappa) for sg in subgroups],
        pairs=list(state.G.pairs), config=config.to_dict(),
        acceptance=accepted / max(config.iterations - config.burn_in, 1),
        burn_beta=burn_beta, burn_loglik=burn_ll,
    )


# ---------------------------------------------------------------- diagnostics


def autocorrelation(x, max_lag: int = 50):
    """Sample autocorrelation of a 1-D series; None when the series is constant."""
    x = np.asarray(x, dtype=float)
    x = x - x.mean()
    var = np.dot(x, x)
    if var <= 0:
        return None
    n = x.size
    lags = min(max_lag, n - 1)
    return np.array([np.dot(x[: n - k], x[k:]) / var for k in range(lags + 1)])


def diagnostics(samples: ChainSamples, max_lag: int = 50) -> dict:
    """Trace, running-mean and autocorrelation series of every coefficient.

    Autocorrelations of constant series are reported as NaN with the
    ``zero_variance`` flag set.
    """
    draws = samples.beta
    if draws.shape[0] < 10:
        raise ValueError("need at least 10 stored draws for diagnostics")
    T, S, p = draws.shape
    lags = min(max_lag, T - 1)
    acf = np.full((S, p, lags + 1), np.nan)
    zero_var = np.zeros((S, p), dtype=bool)
    for s in range(S):
        for i in range(p):
            a = autocorrelation(draws[:, s, i], lags)
            if a is None:
                zero_var[s, i] = True
            else:
                acf[s, i] = a
    running = np.cumsum(draws, axis=0) / np.arange(1, T + 1)[:, None, None]
    return {
        "iteration": samples.iteration,
        "trace": draws,
        "running_mean": running,
        "autocorrelation": acf,
        "zero_variance": zero_var,
        "loglik_trace": samples.loglik,
    }


# ---------------------------------------------------------------- persistence


def _write_npz(path: Path, arrays: dict[str, np.ndarray]) -> None:
    """Deterministic npz: fixed entry order and timestamps."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(arrays):
            member = io.BytesIO()
            np.lib.format.write_array(member, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, member.getvalue())
    path.write_bytes(buf.getvalue())


def save_chain(samples: ChainSamples, path, extra: dict | None = None) -> dict:
    """Write ``<path>.npz`` (draw columns) and ``<path>.json`` (manifest).

    The manifest records the chain configuration and the SHA-256 of the
    binary file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    npz = path.with_suffix(".npz")
    arrays = samples.arrays()
    if extra and "config_hash" in extra:
        arrays["config_hash"] = np.frombuffer(extra["config_hash"].encode(), dtype=np.uint8)
    _write_npz(npz, arrays)
    manifest = {
        "format": "coxbvs-chain/1",
        "data_file": npz.name,
        "sha256": hashlib.sha256(npz.read_bytes()).hexdigest(),
        "config": samples.config,
        "seed": samples.config["seed"],
        "n_draws": samples.n_draws,
        "S": samples.S,
        "p": samples.p,
        **(extra or {}),
    }
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_chain(path) -> ChainSamples:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    npz = path.with_suffix(".npz")
    digest = hashlib.sha256(npz.read_bytes()).hexdigest()
    if digest != manifest["sha256"]:
        raise ValueError(f"{npz}: content hash mismatch")
    with np.load(npz) as z:
        S = int(manifest["S"])
        return ChainSamples(
            beta=z["beta"], gamma=z["gamma"], h=[z[f"h_{s}"] for s in range(S)],
            G_within=z["G_within"], G_between=z["G_between"], omega=z["omega"],
            loglik=z["loglik"], iteration=z["iteration"], omega_iteration=z["omega_iteration"],
            boundaries=[z[f"boundaries_{s}"] for s in range(S)],
            baseline=[tuple(r) for r in z["baseline"].tolist()],
            pairs=[tuple(r) for r in z["pairs"].tolist()],
            config=manifest["config"], acceptance=z["acceptance"],
            burn_beta=z["burn_beta"] if "burn_beta" in z.files else None,
            burn_loglik=z["burn_loglik"] if "burn_loglik" in z.files else None,
        )
