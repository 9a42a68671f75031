"""Survival prediction and inverse-probability-of-censoring weighted Brier scores.

The predicted survival of a patient is ``exp(-exp(b'x) H0(t))`` with
``H0`` the piecewise-linear cumulative baseline built from posterior-mean
hazard increments.  Past the last partition point ``H0`` continues along
the Weibull centring slope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coxmodel import cumulative_baseline_at
from .data import Dataset, StandardizationParams
from .posterior import bma_coefficients, mpm_coefficients, summarize
from .sampler import ChainSamples

__all__ = [
    "StepFunction",
    "PredictionModel",
    "kaplan_meier",
    "km_censoring",
    "predict_survival",
    "brier_score",
    "brier_score_from_predictions",
    "integrated_brier",
    "default_t_star",
    "prediction_error_curve",
    "CensoringSupportError",
]


class CensoringSupportError(ValueError):
    """An inverse-probability weight would divide by a zero censoring survival."""


@dataclass
class StepFunction:
    """Right-continuous step function, equal to ``initial`` before the first jump."""

    times: np.ndarray
    values: np.ndarray
    initial: float = 1.0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("jump times must be strictly increasing")

    def __call__(self, t):
        k = np.searchsorted(self.times, t, side="right")
        vals = np.concatenate([[self.initial], self.values])
        return vals[k]

    def left_limit(self, t):
        k = np.searchsorted(self.times, t, side="left")
        vals = np.concatenate([[self.initial], self.values])
        return vals[k]


def kaplan_meier(time, event) -> StepFunction:
    """Product-limit estimator with risk set ``#{t_i >= t}``."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event).astype(bool)
    if time.size == 0:
        raise ValueError("empty sample")
    jumps = np.unique(time[event])
    at_risk = time.size - np.searchsorted(np.sort(time), jumps, side="left")
    deaths = np.array([np.count_nonzero(time[event] == u) for u in jumps], dtype=float)
    return StepFunction(jumps, np.cumprod(1.0 - deaths / at_risk))


def km_censoring(time, event) -> StepFunction:
    """Kaplan-Meier curve of the censoring distribution (indicators flipped)."""
    return kaplan_meier(time, 1 - np.asarray(event))


@dataclass
class PredictionModel:
    """Plug-in survival model per subgroup (one unit for the Pooled model).

    ``baselines`` holds ``(h, boundaries, eta, kappa)`` per unit; the
    Weibull pair sets the cumulative-hazard slope beyond the last boundary.
    """

    coefficients: np.ndarray
    baselines: list
    standardization: StandardizationParams | None = None
    pooled: bool = False

    def __post_init__(self):
        self.coefficients = np.atleast_2d(np.asarray(self.coefficients, dtype=float))
        if len(self.baselines) != self.coefficients.shape[0]:
            raise ValueError("need one baseline per coefficient vector")
        for h, c, _, _ in self.baselines:
            if np.any(np.asarray(h) <= 0):
                raise ValueError("baseline increments must be positive")
            if len(c) != len(h) + 1:
                raise ValueError("boundaries must have one more entry than increments")

    @property
    def p(self) -> int:
        return self.coefficients.shape[1]

    def unit(self, subgroup: int) -> int:
        return 0 if self.pooled else int(subgroup) - 1

    def cumulative_baseline(self, subgroup: int, t):
        h, c, eta, kappa = self.baselines[self.unit(subgroup)]
        slope = eta * kappa * c[-1] ** (kappa - 1.0)
        return cumulative_baseline_at(h, c, t, slope_beyond=slope)

    def slope_beyond(self, subgroup: int) -> float:
        _, c, eta, kappa = self.baselines[self.unit(subgroup)]
        return float(eta * kappa * c[-1] ** (kappa - 1.0))

    def risk(self, X_std, subgroup) -> np.ndarray:
        """``exp(b'x)`` per row of standardized covariates."""
        X_std = np.atleast_2d(np.asarray(X_std, dtype=float))
        units = np.array([self.unit(s) for s in np.broadcast_to(subgroup, X_std.shape[:1])], dtype=int)
        return np.exp(np.einsum("ij,ij->i", X_std, self.coefficients[units]))

    @classmethod
    def from_samples(cls, samples: ChainSamples, method: str = "mpm",
                     standardization: StandardizationParams | None = None, pooled: bool = False,
                     top: int = 100) -> "PredictionModel":
        if method == "mpm":
            coef = mpm_coefficients(summarize(samples))
        elif method == "bma":
            coef = bma_coefficients(samples, top=top)
        else:
            raise ValueError(f"method must be 'mpm' or 'bma', got {method!r}")
        baselines = [
            (samples.h[s].mean(axis=0), samples.boundaries[s], eta, kappa)
            for s, (_, eta, kappa) in enumerate(samples.baseline)
        ]
        return cls(coef, baselines, standardization, pooled)

    def standardized(self, test: Dataset) -> np.ndarray:
        if self.standardization is None:
            return test.X
        return self.standardization.transform(test.X, test.subgroup)


def predict_survival(model: PredictionModel, x, t, subgroup: int = 1):
    """Survival probability at ``t`` for one standardized covariate row."""
    r = model.risk(np.asarray(x, dtype=float)[None, :], subgroup)[0]
    return np.exp(-r * model.cumulative_baseline(subgroup, t))


def _restrict(test: Dataset, subgroup):
    if subgroup is None:
        return np.arange(test.n)
    idx = np.flatnonzero(test.subgroup == subgroup)
    if idx.size == 0:
        raise ValueError(f"no test records in subgroup {subgroup}")
    return idx


def _ipcw_weights(time, event, t, cens: StepFunction):
    before = time <= t
    g_own = cens.left_limit(time)
    g_t = cens(t)
    need_own = before & (event == 1)
    if np.any(g_own[need_own] <= 0) or (np.any(~before) and g_t <= 0):
        raise CensoringSupportError(
            f"censoring survival estimate is 0 at a weighted point (t={t}); choose a smaller t*"
        )
    with np.errstate(divide="ignore"):
        return np.where(before, np.where(event == 1, 1.0 / g_own, 0.0), 1.0 / g_t)


def brier_score_from_predictions(surv, time, event, t: float, cens: StepFunction | None = None) -> float:
    """Weighted Brier score at ``t`` given predicted survival probabilities."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    cens = km_censoring(time, event) if cens is None else cens
    w = _ipcw_weights(time, event, t, cens)
    alive = (time > t).astype(float)
    return float(np.mean(w * (alive - np.asarray(surv, dtype=float)) ** 2))


def brier_score(model: PredictionModel, test: Dataset, t: float, subgroup: int | None = None) -> float:
    """Brier score at ``t`` on raw (unstandardized) test data.

    With ``subgroup`` set, only that subgroup's records enter, and the
    censoring curve is estimated from them alone.
    """
    idx = _restrict(test, subgroup)
    X = model.standardized(test)[idx]
    grp = test.subgroup[idx]
    r = model.risk(X, grp)
    H = np.array([model.cumulative_baseline(g, t) for g in grp])
    return brier_score_from_predictions(np.exp(-r * H), test.time[idx], test.event[idx], t)


def default_t_star(time, event, threshold: float = 0.05) -> float:
    """Largest event time at which the censoring survival exceeds ``threshold``."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    cens = km_censoring(time, event)
    ev = np.unique(time[event == 1])
    ok = ev[cens(ev) > threshold]
    if ok.size == 0:
        raise CensoringSupportError("no event time with censoring survival above the threshold")
    return float(ok[-1])


def _expint(k, length):
    # integral of exp(-k u) over [0, length], k >= 0
    k = np.asarray(k, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(k * length < 1e-12, length * (1 - 0.5 * k * length), -np.expm1(-k * length) / k)


def integrated_brier(model: PredictionModel, test: Dataset, t_star: float | None = None,
                     subgroup: int | None = None) -> float:
    """Time-averaged Brier score over ``(0, t_star]``, integrated exactly.

    Between consecutive breakpoints (observed test times, baseline
    partition points, ``t_star``) the indicator and weights are constant
    and each prediction is ``exp(-r (A + B u))``, so every piece has a
    closed form.
    """
    idx = _restrict(test, subgroup)
    time = test.time[idx].astype(float)
    event = test.event[idx]
    grp = test.subgroup[idx]
    if t_star is None:
        t_star = default_t_star(time, event)
    if not t_star > 0:
        raise ValueError("t_star must be positive")
    cens = km_censoring(time, event)
    r = model.risk(model.standardized(test)[idx], grp)

    cuts = [0.0, t_star, *time[time < t_star]]
    for g in np.unique(grp):
        c = model.baselines[model.unit(g)][1]
        cuts.extend(c[c < t_star])
    cuts = np.unique(np.asarray(cuts))
    cuts = cuts[cuts <= t_star]

    H_at = {g: model.cumulative_baseline(g, cuts) for g in np.unique(grp)}
    H_cuts = np.array([H_at[g] for g in grp])  # (n, K)
    g_own = cens.left_limit(time)
    total = np.zeros(time.size)
    for k in range(cuts.size - 1):
        a, b = cuts[k], cuts[k + 1]
        L = b - a
        alive = time >= b
        if np.any(alive):
            g_a = cens(a)
            if g_a <= 0:
                raise CensoringSupportError(f"censoring survival is 0 on ({a}, {b}]; choose a smaller t*")
            w = np.where(alive, 1.0 / g_a, 0.0)
        else:
            w = np.zeros(time.size)
        dead = (~alive) & (event == 1)
        if np.any(g_own[dead] <= 0):
            raise CensoringSupportError("censoring survival is 0 at an event time; choose a smaller t*")
        w = np.where(dead, 1.0 / np.where(dead, g_own, 1.0), w)
        A = H_cuts[:, k]
        B = (H_cuts[:, k + 1] - A) / L
        ind = alive.astype(float)
        surv_int = np.exp(-r * A) * _expint(r * B, L)
        sq_int = np.exp(-2 * r * A) * _expint(2 * r * B, L)
        total += w * (ind * L - 2 * ind * surv_int + sq_int)
    return float(total.mean() / t_star)


def prediction_error_curve(model: PredictionModel, test: Dataset, times, subgroup: int | None = None) -> np.ndarray:
    """Brier scores at every entry of ``times`` (vectorized over time points)."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    idx = _restrict(test, subgroup)
    time = test.time[idx].astype(float)
    event = test.event[idx]
    grp = test.subgroup[idx]
    cens = km_censoring(time, event)
    r = model.risk(model.standardized(test)[idx], grp)
    H = np.empty((idx.size, times.size))
    for g in np.unique(grp):
        H[grp == g] = model.cumulative_baseline(g, times)
    surv = np.exp(-r[:, None] * H)
    before = time[:, None] <= times[None, :]
    g_t = cens(times)
    g_own = cens.left_limit(time)
    if np.any((g_own <= 0) & (event == 1) & before.any(axis=1)) or np.any((g_t <= 0) & (~before).any(axis=0)):
        raise CensoringSupportError("censoring survival is 0 at a weighted point; choose a smaller t*")
    with np.errstate(divide="ignore"):
        w_own = np.where(event == 1, 1.0 / g_own, 0.0)
        w = np.where(before, w_own[:, None], 1.0 / g_t[None, :])
    return (w * ((~before).astype(float) - surv) ** 2).mean(axis=0)
