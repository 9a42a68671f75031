"""Grouped-data Cox model with gamma-process baseline hazard.

Likelihood, Weibull centring of the baseline prior, and the per-subgroup
Gibbs/Metropolis updates for selection indicators, coefficients and
hazard increments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import expit

from .data import GroupedData
from .graph import JointAdjacency, MrfPrior

__all__ = [
    "BaselineHazardPrior",
    "SelectionPrior",
    "CoxSubgroupState",
    "WeibullFitError",
    "patient_exposure",
    "grouped_log_likelihood",
    "beta_log_conditional",
    "newton_proposal",
    "fit_weibull_baseline",
    "gamma_log_odds",
    "update_gamma",
    "update_beta",
    "hazard_posterior_params",
    "update_hazard_increments",
    "cumulative_baseline_at",
]

_LOG_2PI = np.log(2.0 * np.pi)
TARGET_ACCEPTANCE = 0.44


@dataclass(frozen=True)
class BaselineHazardPrior:
    """Gamma-process prior centred at ``H*(t) = eta t^kappa``."""

    a0: float = 2.0
    eta: float = 1.0
    kappa: float = 1.0

    def __post_init__(self):
        if min(self.a0, self.eta, self.kappa) <= 0:
            raise ValueError("a0, eta and kappa must be positive")

    def H_star(self, t):
        return self.eta * np.asarray(t, dtype=float) ** self.kappa

    def increment_shapes(self, boundaries) -> np.ndarray:
        return self.a0 * np.diff(self.H_star(boundaries))


@dataclass(frozen=True)
class SelectionPrior:
    tau: float = 0.0375
    c: float = 20.0
    bernoulli_pi: float = 0.02

    def __post_init__(self):
        if self.tau <= 0 or self.c <= 1:
            raise ValueError("need tau > 0 and c > 1")
        if not 0 < self.bernoulli_pi < 1:
            raise ValueError("Bernoulli inclusion probability must lie in (0, 1)")

    def sd(self, gamma):
        return np.where(np.asarray(gamma) == 1, self.c * self.tau, self.tau)


@dataclass
class CoxSubgroupState:
    beta: np.ndarray
    gamma: np.ndarray
    h: np.ndarray
    proposal_sd: np.ndarray = field(default=None)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=np.int8)
        self.h = np.asarray(self.h, dtype=float)
        if self.proposal_sd is None:
            self.proposal_sd = np.full(self.beta.size, 0.5)
        if np.any(self.h <= 0):
            raise ValueError("hazard increments must be positive")

    def copy(self) -> "CoxSubgroupState":
        return CoxSubgroupState(self.beta.copy(), self.gamma.copy(), self.h.copy(), self.proposal_sd.copy())


class WeibullFitError(RuntimeError):
    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace or []


# ---------------------------------------------------------------- likelihood


def patient_exposure(h, gd: GroupedData) -> tuple[np.ndarray, np.ndarray]:
    """Per-patient summed increments over intervals at risk without failing,
    and the increment of the failure interval (0 for censored patients).
    """
    h = np.asarray(h, dtype=float)
    before = np.concatenate([[0.0], np.cumsum(h)])[gd.interval]
    own = h[gd.interval] if gd.n else np.zeros(0)
    event = gd.event == 1
    exposure = before + np.where(event, 0.0, own)
    return exposure, np.where(event, own, 0.0)


def _log1mexp(z):
    # log(1 - exp(-z)) for z >= 0
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(z > 0.6931, np.log1p(-np.exp(-z)), np.log(-np.expm1(-z)))


def grouped_log_likelihood(beta, h, gd: GroupedData, X) -> float:
    """Grouped-data Cox log-likelihood.

    Returns ``-inf`` when an event falls in an interval with zero hazard.
    """
    h = np.asarray(h, dtype=float)
    if h.size != gd.J:
        raise ValueError(f"{h.size} increments for {gd.J} intervals")
    if gd.n == 0:
        return 0.0
    lp = np.asarray(X, dtype=float) @ np.asarray(beta, dtype=float)
    exposure, h_event = patient_exposure(h, gd)
    risk = np.exp(lp)
    ev = gd.event == 1
    return float(-np.sum(exposure * risk) + np.sum(_log1mexp(h_event[ev] * risk[ev])))


def _likelihood_terms(lp, x, exposure, h_event, ev):
    """Log-likelihood and its first two derivatives along covariate ``x``."""
    risk = np.exp(lp)
    ll = -np.dot(exposure, risk)
    d1 = -np.dot(exposure * risk, x)
    d2 = -np.dot(exposure * risk, x * x)
    if np.any(ev):
        z = h_event[ev] * risk[ev]
        xe = x[ev]
        q = -np.expm1(-z)  # 1 - exp(-z)
        ez = np.exp(-z)
        ll += np.sum(np.log(q))
        phi = z * ez / q  # d/d(lp) log(1 - exp(-z))
        dphi = z * ez * (q - z) / (q * q)
        d1 += np.dot(phi, xe)
        d2 += np.dot(dphi, xe * xe)
    return ll, d1, d2


def beta_log_conditional(b, i, beta, h, gd: GroupedData, X, sd: float):
    """Log full conditional of coefficient ``i`` at value ``b`` (up to a constant),
    with its first and second derivatives."""
    X = np.asarray(X, dtype=float)
    exposure, h_event = patient_exposure(h, gd)
    lp = X @ beta + (b - beta[i]) * X[:, i]
    ll, d1, d2 = _likelihood_terms(lp, X[:, i], exposure, h_event, gd.event == 1)
    return ll - 0.5 * b * b / sd**2, d1 - b / sd**2, d2 - 1.0 / sd**2


def newton_proposal(b, d1, d2, fallback_sd):
    """Mean and SD of the Gaussian proposal built at ``b``.

    A Newton step on the log conditional where it is locally concave,
    otherwise a random walk with the adaptive fallback scale.
    """
    if d2 < 0 and np.isfinite(d1) and np.isfinite(d2):
        return b - d1 / d2, np.sqrt(-1.0 / d2), True
    return b, fallback_sd, False


def _log_normal(x, mu, sd):
    return -0.5 * _LOG_2PI - np.log(sd) - 0.5 * ((x - mu) / sd) ** 2


# ---------------------------------------------------------------- baseline fit


def fit_weibull_baseline(time, event) -> tuple[float, float]:
    """Censored-data MLE of ``(eta, kappa)`` for cumulative hazard ``eta t^kappa``.

    The scale is profiled out and the shape found by bracketing the root
    of the profile score.
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=np.int64)
    D = int(event.sum())
    if D < 2:
        raise WeibullFitError(f"need at least 2 events to fit a Weibull baseline, got {D}")
    ref = np.exp(np.mean(np.log(time)))
    lt = np.log(time / ref)
    sum_event_lt = float(np.sum(lt[event == 1]))
    trace: list[tuple[float, float]] = []

    def score(log_kappa):
        k = np.exp(log_kappa)
        w = np.exp(k * lt - np.max(k * lt))
        val = D / k + sum_event_lt - D * np.dot(w, lt) / w.sum()
        trace.append((float(k), float(val)))
        return val

    lo, hi = np.log(1e-3), np.log(1e3)
    if score(lo) <= 0 or score(hi) >= 0:
        raise WeibullFitError(
            "no root of the Weibull shape score in [1e-3, 1e3] (degenerate times?)", trace
        )
    try:
        log_kappa, res = optimize.brentq(score, lo, hi, xtol=1e-12, full_output=True)
    except (RuntimeError, ValueError) as exc:
        raise WeibullFitError(f"shape root search failed: {exc}", trace) from exc
    if not res.converged:
        raise WeibullFitError("shape root search did not converge", trace)
    kappa = float(np.exp(log_kappa))
    eta_scaled = D / np.sum((time / ref) ** kappa)
    return float(eta_scaled * ref ** (-kappa)), kappa


# ---------------------------------------------------------------- updates


def gamma_log_odds(beta_si, mrf_log_odds, sel: SelectionPrior):
    """Log odds of inclusion: MRF (or Bernoulli) prior odds plus slab/spike density ratio."""
    return mrf_log_odds + _log_normal(beta_si, 0.0, sel.c * sel.tau) - _log_normal(beta_si, 0.0, sel.tau)


def update_gamma(state: CoxSubgroupState, s: int, G: JointAdjacency | None, all_gamma: np.ndarray,
                 sel: SelectionPrior, mrf: MrfPrior | None, rng) -> np.ndarray:
    """Sequential Gibbs scan over the selection indicators of subgroup ``s``.

    With ``mrf=None`` the prior is independent Bernoulli with
    ``sel.bernoulli_pi``.  ``all_gamma`` (S x p) is updated in place so
    later subgroups see the new values.
    """
    p = state.beta.size
    u = rng.random(p)
    if mrf is None:
        pi = sel.bernoulli_pi
        prior_lo = np.full(p, np.log(pi) - np.log1p(-pi))
        prob = expit(gamma_log_odds(state.beta, prior_lo, sel))
        state.gamma[:] = u < prob
        all_gamma[s] = state.gamma
        return state.gamma
    slab_ratio = gamma_log_odds(state.beta, 0.0, sel)
    within = G.within[s]
    links = [(k, t if r == s else r) for k, (r, t) in enumerate(G.pairs) if s in (r, t)]
    for i in range(p):
        nw = float(all_gamma[s] @ within[i])
        nb = 0.0
        for k, other in links:
            if G.between[k, i]:
                nb += all_gamma[other, i]
        lo = mrf.a + 2.0 * mrf.b_within * nw + 2.0 * mrf.b_between * nb + slab_ratio[i]
        all_gamma[s, i] = u[i] < expit(lo)
    state.gamma[:] = all_gamma[s]
    return state.gamma


class _BetaWorkspace:
    """Cached linear predictor and exposures for a coefficient scan."""

    def __init__(self, state: CoxSubgroupState, gd: GroupedData, X: np.ndarray):
        self.X = X
        self.lp = X @ state.beta if gd.n else np.zeros(0)
        self.exposure, self.h_event = patient_exposure(state.h, gd)
        self.ev = gd.event == 1

    def terms(self, i, b, beta_i, sd):
        x = self.X[:, i]
        lp = self.lp + (b - beta_i) * x
        ll, d1, d2 = _likelihood_terms(lp, x, self.exposure, self.h_event, self.ev)
        return ll - 0.5 * b * b / sd**2, d1 - b / sd**2, d2 - 1.0 / sd**2


def update_beta(state: CoxSubgroupState, i: int, gd: GroupedData, X, sel: SelectionPrior, rng,
                adapt_step: float = 0.0, workspace: _BetaWorkspace | None = None) -> bool:
    """Metropolis-Hastings update of coefficient ``i`` with a derivative-based proposal.

    The proposal is rebuilt at the proposed value to evaluate the reverse
    move, so the acceptance ratio carries the exact asymmetry correction.
    ``adapt_step > 0`` (burn-in only) tunes the fallback random-walk scale
    toward 44% acceptance.  Returns whether the proposal was accepted.
    """
    ws = workspace if workspace is not None else _BetaWorkspace(state, gd, np.asarray(X, dtype=float))
    sd = float(sel.c * sel.tau if state.gamma[i] == 1 else sel.tau)
    cur = float(state.beta[i])
    f_cur, d1, d2 = ws.terms(i, cur, cur, sd)
    mu_f, sd_f, newton_f = newton_proposal(cur, d1, d2, state.proposal_sd[i])
    prop = mu_f + sd_f * rng.standard_normal()
    f_prop, e1, e2 = ws.terms(i, prop, cur, sd)
    mu_b, sd_b, newton_b = newton_proposal(prop, e1, e2, state.proposal_sd[i])
    log_r = (f_prop - _log_normal(prop, mu_f, sd_f)) - (f_cur - _log_normal(cur, mu_b, sd_b))
    accept = bool(np.log(rng.random()) < log_r) if np.isfinite(log_r) else False
    if accept:
        if gd.n:
            ws.lp += (prop - cur) * ws.X[:, i]
        state.beta[i] = prop
    if adapt_step > 0 and not (newton_f and newton_b):
        state.proposal_sd[i] *= np.exp(adapt_step * (float(accept) - TARGET_ACCEPTANCE))
    return accept


def hazard_posterior_params(beta, gd: GroupedData, X, bh: BaselineHazardPrior):
    """Gamma shape and rate of each increment given the coefficients."""
    shape = bh.increment_shapes(gd.boundaries) + gd.event_counts
    rate = np.full(gd.J, bh.a0)
    if gd.n:
        risk = np.exp(np.asarray(X, dtype=float) @ np.asarray(beta, dtype=float))
        total = np.bincount(gd.interval, weights=risk, minlength=gd.J)
        cens = gd.event == 0
        own_cens = np.bincount(gd.interval[cens], weights=risk[cens], minlength=gd.J)
        later = np.cumsum(total[::-1])[::-1] - total
        rate += later + own_cens
    return shape, rate


def update_hazard_increments(state: CoxSubgroupState, gd: GroupedData, X, bh: BaselineHazardPrior, rng):
    shape, rate = hazard_posterior_params(state.beta, gd, X, bh)
    h = rng.gamma(shape, 1.0 / rate)
    # gamma draws with tiny shape can underflow to 0
    state.h = np.maximum(h, np.finfo(float).tiny)
    return state.h


def cumulative_baseline_at(h, boundaries, t, slope_beyond: float = 0.0):
    """Piecewise-linear cumulative baseline hazard through the partition points.

    Past the last boundary it continues linearly with ``slope_beyond``.
    """
    h = np.asarray(h, dtype=float)
    c = np.asarray(boundaries, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    knots = np.concatenate([[0.0], np.cumsum(h)])
    out = np.interp(t_arr, c, knots)
    beyond = t_arr > c[-1]
    out = np.where(beyond, knots[-1] + slope_beyond * (t_arr - c[-1]), out)
    return out if out.ndim else float(out)
