"""Cox proportional hazards regression for current status data.

Semiparametric maximum likelihood over (beta, Lambda0) by alternating an
iterative-convex-minorant update of the baseline cumulative hazard with a
damped Newton step on the coefficients. Inference is by nonparametric
bootstrap (Wald and percentile intervals, group chi-square tests).
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import kernels
from .data_model import Dataset, split_respondents

_SEPARATION_BOUND = 50.0


@dataclass
class CoxFit:
    """Fitted coefficients and baseline cumulative hazard step function."""

    beta: np.ndarray
    times: np.ndarray       # unique respondent response times (sorted)
    cumhaz: np.ndarray      # Lambda0 at each time, nondecreasing
    loglik: float
    converged: bool
    iterations: int
    separation: bool
    covariate_names: tuple = ()

    def baseline_cumhaz(self, t):
        """Lambda0(t): right-continuous step, 0 before the first time."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        idx = np.searchsorted(self.times, t, side="right") - 1
        out = np.where(idx >= 0, self.cumhaz[np.maximum(idx, 0)], 0.0)
        return out

    def to_json(self, path=None):
        payload = {
            "beta": self.beta.tolist(),
            "covariate_names": list(self.covariate_names),
            "times": self.times.tolist(),
            "cumhaz": self.cumhaz.tolist(),
            "loglik": self.loglik,
            "converged": self.converged,
            "iterations": self.iterations,
            "separation": self.separation,
        }
        if path is not None:
            with open(path, "w") as f:
                json.dump(payload, f, indent=2, sort_keys=True)
        return payload


@dataclass
class BootstrapSummary:
    """Bootstrap SEs, intervals, and group tests for a Cox fit."""

    beta: np.ndarray
    beta_se: np.ndarray
    wald_ci: np.ndarray        # (p, 2)
    percentile_ci: np.ndarray  # (p, 2)
    pvalues: np.ndarray        # two-sided normal from Wald z
    B: int
    B_used: int
    n_dropped: int
    flagged: bool              # degenerate SEs or > 10% dropped replicates
    group_tests: list = field(default_factory=list)
    covariate_names: tuple = ()
    samples: np.ndarray | None = field(default=None, repr=False)

    def to_json(self, path=None):
        payload = {
            "beta": self.beta.tolist(),
            "beta_se": self.beta_se.tolist(),
            "wald_ci": self.wald_ci.tolist(),
            "percentile_ci": self.percentile_ci.tolist(),
            "pvalues": self.pvalues.tolist(),
            "B": self.B,
            "B_used": self.B_used,
            "n_dropped": self.n_dropped,
            "flagged": self.flagged,
            "group_tests": [
                {"group": g, "chi_square": s, "df": df, "p": p}
                for (g, s, df, p) in self.group_tests
            ],
            "covariate_names": list(self.covariate_names),
        }
        if path is not None:
            with open(path, "w") as f:
                json.dump(payload, f, indent=2, sort_keys=True)
        return payload

    def to_table_csv(self, path, reference_rows=()):
        """Hazard-ratio table: one row per covariate, optional (ref) rows.

        reference_rows: iterable of (position, label) pairs naming omitted
        reference levels; rendered with blank statistics.
        """
        rows = []
        for j, name in enumerate(self.covariate_names or
                                 [f"x{j}" for j in range(len(self.beta))]):
            hr = math.exp(self.beta[j])
            lo, hi = math.exp(self.wald_ci[j, 0]), math.exp(self.wald_ci[j, 1])
            p = float(self.pvalues[j])
            rows.append([name, f"{hr:.3f}", f"{lo:.3f}", f"{hi:.3f}",
                         f"{p:.4f}", int(p < 0.05)])
        for pos, label in sorted(reference_rows, key=lambda t: t[0]):
            rows.insert(pos, [f"{label} (ref)", "1.000", "", "", "", 0])
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["risk_factor", "hazard_ratio", "ci_lower",
                             "ci_upper", "p_value", "significant"])
            writer.writerows(rows)


def cs_loglik(beta, cumhaz_at_y, d: Dataset) -> float:
    """Current-status Cox log likelihood at (beta, Lambda0(y_i)) values."""
    beta = np.asarray(beta, dtype=np.float64)
    lam = np.asarray(cumhaz_at_y, dtype=np.float64)
    if len(lam) != d.n or len(beta) != d.p:
        raise ValueError("dimension mismatch")
    if np.any(lam < 0):
        raise ValueError("cumulative hazard must be nonnegative")
    u = lam * np.exp(d.w @ beta)
    return float(kernels.cs_loglik(u, d.delta.astype(np.float64)))


def cs_loglik_grad(beta, cumhaz_at_y, d: Dataset) -> np.ndarray:
    """Analytic gradient of cs_loglik in beta.

    d loglik / d beta = X^T [u * (delta * e^{-u}/(1-e^{-u}) - (1-delta))].
    """
    beta = np.asarray(beta, dtype=np.float64)
    lam = np.asarray(cumhaz_at_y, dtype=np.float64)
    u = lam * np.exp(d.w @ beta)
    ev = d.delta > 0.5
    s = np.maximum(-np.expm1(-u), 1e-300)
    dldu = np.where(ev, np.exp(-u) / s, -1.0)
    return d.w.T @ (u * dldu)


def fit_cox(d: Dataset, init=None, tol=1e-9, max_iter=500) -> CoxFit:
    """Fit the current-status Cox model on respondents.

    Nonrespondent rows (y = c0) are excluded: they carry no bracketing
    information on the event time under this design, and the regression is
    complete-case valid when the model holds.
    """
    resp, _ = split_respondents(d)
    if resp.n == 0:
        raise ValueError("no respondents to fit")
    times, gidx = np.unique(resp.y, return_inverse=True)
    if resp.p > 0:
        rank = np.linalg.matrix_rank(resp.w - resp.w.mean(axis=0))
        if rank < resp.p:
            raise ValueError("design matrix is rank deficient")
    # initial cumulative hazard from the pooled event fraction
    p_event = float(np.clip(np.mean(resp.delta), 1e-3, 1 - 1e-3))
    lam0 = np.full(len(times), -math.log1p(-p_event))
    beta0 = np.zeros(resp.p) if init is None else np.asarray(init, dtype=np.float64)
    if len(beta0) != resp.p:
        raise ValueError("init has wrong dimension")
    beta, lam, ll, it, conv = kernels.cox_fit(
        resp.w, resp.delta.astype(np.float64), gidx.astype(np.int64),
        lam0, beta0, tol, max_iter, 1e-10)
    separation = bool(np.any(np.abs(beta) > _SEPARATION_BOUND))
    return CoxFit(beta=np.asarray(beta), times=times, cumhaz=np.asarray(lam),
                  loglik=float(ll), converged=bool(conv), iterations=int(it),
                  separation=separation, covariate_names=d.covariate_names)


def _wald_p(z):
    return 2.0 * stats.norm.sf(np.abs(z))


def bootstrap_cox(d: Dataset, B: int, seed=0, groups=None, tol=1e-9,
                  max_iter=500, resample="full") -> BootstrapSummary:
    """Nonparametric bootstrap for the current-status Cox fit.

    Resamples n rows with replacement from the full cohort (respondent
    filtering is applied inside each refit); set resample="respondents" to
    resample the respondent subset instead. groups maps a label to a list
    of coefficient indices for joint chi-square Wald tests.
    """
    if B < 2:
        raise ValueError("need B >= 2 bootstrap replicates")
    if resample not in ("full", "respondents"):
        raise ValueError(f"unknown resample scheme: {resample}")
    point = fit_cox(d, tol=tol, max_iter=max_iter)
    base = d if resample == "full" else split_respondents(d)[0]
    ss = np.random.SeedSequence(seed)
    child_seeds = ss.spawn(B)
    samples = []
    n_dropped = 0
    for b in range(B):
        rng = np.random.default_rng(child_seeds[b])
        idx = rng.integers(0, base.n, size=base.n)
        boot = base.subset(idx)
        try:
            fit = fit_cox(boot, tol=tol, max_iter=max_iter)
        except (ValueError, np.linalg.LinAlgError):
            n_dropped += 1
            continue
        if not fit.converged or fit.separation:
            n_dropped += 1
            continue
        samples.append(fit.beta)
    if len(samples) < 2:
        raise ValueError("fewer than 2 usable bootstrap replicates")
    S = np.asarray(samples)
    se = S.std(axis=0, ddof=1)
    beta = point.beta
    wald = np.column_stack([beta - 1.96 * se, beta + 1.96 * se])
    pct = np.column_stack([np.quantile(S, 0.025, axis=0),
                           np.quantile(S, 0.975, axis=0)])
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, beta / se, np.inf * np.sign(beta))
    pvals = _wald_p(z)
    degenerate = bool(np.any(se == 0.0))
    flagged = degenerate or (n_dropped > 0.1 * B)
    tests = []
    if groups:
        cov = np.cov(S, rowvar=False).reshape(d.p, d.p)
        for label, idxs in groups.items():
            idxs = list(idxs)
            bg = beta[idxs]
            Sg = cov[np.ix_(idxs, idxs)]
            try:
                stat = float(bg @ np.linalg.solve(Sg, bg))
            except np.linalg.LinAlgError:
                stat = float("nan")
            df = len(idxs)
            p = float(stats.chi2.sf(stat, df)) if np.isfinite(stat) else float("nan")
            tests.append((label, max(stat, 0.0) if np.isfinite(stat) else stat,
                          df, p))
    return BootstrapSummary(
        beta=beta, beta_se=se, wald_ci=wald, percentile_ci=pct, pvalues=pvals,
        B=B, B_used=len(samples), n_dropped=n_dropped, flagged=flagged,
        group_tests=tests, covariate_names=d.covariate_names, samples=S)
