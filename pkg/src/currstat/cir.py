"""Extended causal isotonic regression for current status data.

One-step debiased estimation of the cumulative pseudo-outcome curve,
isotonic step via the greatest convex minorant, scale-factor estimation,
and Chernoff-quantile pointwise confidence intervals. Also supports the
complete-case variant and the classical NPMLE as baselines.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .data_model import Dataset, split_respondents
from .isotonic import gcm_left_derivative, monotone_hermite, numeric_derivative
from .nuisance import (NuisanceFit, default_ensemble_spec, empirical_cdf,
                       fit_density, fit_mu)

# 0.975 quantile of Chernoff's distribution (location of the maximum of
# two-sided Brownian motion minus a parabola), computed numerically and
# cross-checked against published tables.
CHERNOFF_Q975 = 0.998181

MODES = ("extended", "complete_case", "npmle")

# Default derivative step for scale-factor estimation, as a fraction of
# the estimation window; calibrated so that pointwise CI coverage is near
# nominal in simulation pilots.
DERIV_STEP_FRACTION = 0.05


@dataclass(frozen=True)
class CIRConfig:
    """Estimation window, grid, and mode for the CIR fit."""

    t0: float
    t1: float
    mode: str = "extended"
    eval_times: np.ndarray | None = None
    n_grid: int = 100
    chernoff_q975: float = CHERNOFF_Q975
    deriv_step: float | None = None
    tau_floor: float = 1e-8

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode: {self.mode}")
        if not self.t0 < self.t1:
            raise ValueError("require t0 < t1")
        if self.eval_times is not None:
            et = np.asarray(self.eval_times, dtype=np.float64)
            if np.any((et < self.t0) | (et > self.t1)):
                raise ValueError("eval grid must lie within [t0, t1]")
            object.__setattr__(self, "eval_times", et)


@dataclass
class CIREstimate:
    """Estimated distribution/survival values with pointwise CIs."""

    times: np.ndarray
    theta: np.ndarray       # estimated distribution function values
    survival: np.ndarray    # 1 - theta
    tau: np.ndarray         # scale factors
    ci_lower: np.ndarray    # on the survival scale
    ci_upper: np.ndarray
    tau_floored: np.ndarray  # per-point "CI unreliable" flag
    n: int
    mode: str
    knots: np.ndarray = field(repr=False, default=None)
    knot_theta: np.ndarray = field(repr=False, default=None)
    metadata: dict = field(default_factory=dict, repr=False)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["time", "survival", "ci_lower", "ci_upper",
                             "tau", "ci_unreliable"])
            for i in range(len(self.times)):
                writer.writerow([repr(float(self.times[i])),
                                 repr(float(self.survival[i])),
                                 repr(float(self.ci_lower[i])),
                                 repr(float(self.ci_upper[i])),
                                 repr(float(self.tau[i])),
                                 int(self.tau_floored[i])])

    def to_json(self, path=None):
        payload = {
            "mode": self.mode,
            "n": self.n,
            "times": self.times.tolist(),
            "theta": self.theta.tolist(),
            "survival": self.survival.tolist(),
            "tau": self.tau.tolist(),
            "ci_lower": self.ci_lower.tolist(),
            "ci_upper": self.ci_upper.tolist(),
            "ci_unreliable": self.tau_floored.astype(int).tolist(),
            "metadata": self.metadata,
        }
        if path is not None:
            with open(path, "w") as f:
                json.dump(payload, f, indent=2, sort_keys=True)
        return payload


def fit_nuisances(d: Dataset, mode: str, mu_spec=None, density_bins=(3, 5, 10, 20),
                  folds=10, seed=0, g_floor=None) -> NuisanceFit | None:
    """Fit (mu, g, F, Q) for the given CIR mode; None for npmle."""
    if mode == "npmle":
        return None
    work = d if mode == "extended" else split_respondents(d)[0]
    spec = mu_spec or default_ensemble_spec(folds=folds)
    kwargs = {} if g_floor is None else {"g_floor": g_floor}
    mu = fit_mu(work, spec, seed=seed)
    g = fit_density(work, bins=density_bins, folds=folds, seed=seed + 1, **kwargs)
    return NuisanceFit(mu=mu, g=g, F=empirical_cdf(work.y), w_sample=work.w)


def one_step_gamma(d: Dataset, mu, g, F, y0: float) -> float:
    """One-step debiased estimate of the cumulative pseudo-outcome at y0.

    Plug-in double sum over (Y_i, W_j) plus the sample mean of the
    influence-function correction. Nonrespondent rows (Y = c0) contribute
    only through their covariates, since every indicator term vanishes for
    y0 < c0.
    """
    support = F.support
    masses = F.masses
    in_win = support <= y0
    us = support[in_win]
    ms = masses[in_win]
    if len(us) == 0:
        return float(np.mean(np.zeros(d.n)))
    # mu on the grid of support times x all sample covariates
    M = mu.predict_cross(us, d.w)  # (len(us), n)
    theta_hat = M.mean(axis=1)
    gamma_plug = float(ms @ theta_hat)
    # influence function, averaged over observations
    ind = d.y <= y0
    resid = np.zeros(d.n)
    if np.any(ind):
        mu_at = mu.predict(d.y[ind], d.w[ind])
        g_at = g.predict_g(d.y[ind], d.w[ind]) if g is not None else 1.0
        resid[ind] = (d.delta[ind] - mu_at) / g_at
    integral_term = ms @ M  # per-subject integral of mu over the window
    theta_at_y = np.zeros(d.n)
    if np.any(ind):
        pos = np.searchsorted(us, d.y[ind])
        theta_at_y[ind] = theta_hat[np.minimum(pos, len(us) - 1)]
    eif = resid + integral_term + theta_at_y - 2.0 * gamma_plug
    return gamma_plug + float(np.mean(eif))


def _gamma_cusum(work: Dataset, nuisances, mode: str):
    """Gamma_n at each unique response time, via the cumulative-sum form.

    With empirical F_n and Q_n the one-step estimator collapses to
    Gamma_n(y0) = (1/n) sum_{i: Y_i <= y0} [theta_n(Y_i) + a_i] with
    a_i = (delta_i - mu(Y_i, W_i)) / g(Y_i, W_i).
    """
    resp = work.y < work.c0
    ry = work.y[resp]
    rdelta = work.delta[resp].astype(np.float64)
    rw = work.w[resp]
    us, inv = np.unique(ry, return_inverse=True)
    if mode == "npmle":
        const = float(np.mean(work.delta))
        theta_hat = np.full(len(us), const)
        a = rdelta - const  # g == 1
    else:
        M = nuisances.mu.predict_cross(us, work.w)
        theta_hat = M.mean(axis=1)
        mu_at = nuisances.mu.predict(ry, rw)
        g_at = nuisances.g.predict_g(ry, rw)
        a = (rdelta - mu_at) / g_at
    contrib = theta_hat[inv] + a
    order = np.argsort(ry, kind="stable")
    cum = np.cumsum(contrib[order]) / work.n
    # value at the last observation of each tie group
    sorted_inv = inv[order]
    last_of_group = np.r_[sorted_inv[1:] != sorted_inv[:-1], True]
    gamma_u = cum[last_of_group]
    return us, gamma_u, theta_hat


def _default_eval_grid(y, t0, t1, n_grid):
    """Grid evenly spaced on the empirical quantile scale within [t0, t1]."""
    ys = np.sort(y)
    qlo = np.searchsorted(ys, t0, side="right") / len(ys)
    qhi = np.searchsorted(ys, t1, side="right") / len(ys)
    qlo = min(max(qlo, 1e-9), 1.0)
    qhi = min(max(qhi, qlo), 1.0)
    qs = np.linspace(qlo, qhi, n_grid)
    grid = np.quantile(ys, np.clip(qs, 0, 1))
    return np.clip(grid, t0, t1)


def _marginal_hist_density(y_resp, n_bins=10):
    """Simple quantile-binned marginal density of respondent times."""
    qs = np.quantile(y_resp, np.linspace(0, 1, n_bins + 1))
    qs[0] -= 1e-9
    qs[-1] += 1e-9
    edges = np.unique(qs)
    counts, _ = np.histogram(y_resp, bins=edges)
    dens = counts / (len(y_resp) * np.diff(edges))

    def f(t):
        idx = np.clip(np.searchsorted(edges, t, side="right") - 1,
                      0, len(dens) - 1)
        return dens[idx]
    return f


def smooth_step_curve(knots, values):
    """Monotone Hermite smoothing of an isotonic step estimate.

    Interpolates one point per constant block (at the block-midpoint
    abscissa) so that flat runs within a block do not force the spline
    derivative to zero at every interior knot.
    """
    knots = np.asarray(knots, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    # block boundaries: where the fitted value changes
    change = np.r_[True, np.diff(values) > 1e-12]
    block_id = np.cumsum(change) - 1
    nblocks = block_id[-1] + 1
    xs = np.empty(nblocks)
    vs = np.empty(nblocks)
    for b in range(nblocks):
        sel = block_id == b
        xs[b] = 0.5 * (knots[sel][0] + knots[sel][-1])
        vs[b] = values[sel][0]
    if nblocks < 2:
        # degenerate flat fit: constant curve over the knot range
        xs = np.array([knots[0], knots[-1]])
        vs = np.array([values[0], values[0]])
    return monotone_hermite(xs, vs)


def scale_factor(d: Dataset, mu, g, theta_curve, y0: float,
                 deriv_step=None, tau_floor=1e-8) -> float:
    """tau_n(y0) = 4 theta_n'(y0) kappa_n(y0) / f_n(y0), floored.

    kappa is the covariate-averaged conditional variance over the density
    ratio; theta' comes from numerical differentiation of a monotone
    Hermite smoothing of the step estimate.
    """
    if theta_curve.kind == "hermite":
        smooth = theta_curve
    else:
        if len(theta_curve.knots) < 2:
            raise ValueError("need at least 2 knots to smooth")
        smooth = smooth_step_curve(theta_curve.knots, theta_curve.values)
    span = smooth.knots[-1] - smooth.knots[0]
    # bandwidth-style step: a wide central difference stabilizes the
    # derivative of the step estimate (tiny steps undercover badly)
    h = deriv_step if deriv_step is not None else max(span, 1e-12) * DERIV_STEP_FRACTION
    dtheta = numeric_derivative(smooth, y0, h)
    mu_at = mu.predict(np.full(d.n, y0), d.w)
    g_at = g.predict_g(np.full(d.n, y0), d.w) if g is not None else np.ones(d.n)
    kappa = float(np.mean(mu_at * (1.0 - mu_at) / g_at))
    f_val = float(g.predict_f(y0)) if g is not None else None
    if f_val is None or f_val <= 0:
        raise ValueError("outside response-time support (f_n(y0) = 0)")
    return max(4.0 * dtheta * kappa / f_val, tau_floor)


def chernoff_ci(theta: float, tau: float, n: int, level=0.95,
                q975=CHERNOFF_Q975):
    """Pointwise CI from the cube-root limit with Chernoff quantiles."""
    if abs(level - 0.95) > 1e-12:
        raise ValueError("only the 0.95 level is supported")
    half = q975 * (tau / n) ** (1.0 / 3.0)
    return (float(np.clip(theta - half, 0.0, 1.0)),
            float(np.clip(theta + half, 0.0, 1.0)))


def fit_cir(d: Dataset, cfg: CIRConfig, nuisances: NuisanceFit | None = None,
            seed: int = 0) -> CIREstimate:
    """Run the full CIR pipeline and evaluate on the configured grid."""
    if not (d.b0 <= cfg.t0 and cfg.t1 <= d.c0):
        raise ValueError("window [t0, t1] must lie within [b0, c0]")
    work = d if cfg.mode in ("extended", "npmle") else split_respondents(d)[0]
    if cfg.mode != "npmle" and nuisances is None:
        nuisances = fit_nuisances(d, cfg.mode, seed=seed)

    us, gamma_u, _ = _gamma_cusum(work, nuisances, cfg.mode)
    win = (us >= cfg.t0) & (us <= cfg.t1)
    if np.sum(win) < 3:
        raise ValueError("insufficient support: fewer than 3 unique "
                         "response times in the estimation window")
    knots = us[win]
    Fw = empirical_cdf(work.y)
    x = Fw(knots)
    psi = gcm_left_derivative(np.r_[0.0, x], np.r_[0.0, gamma_u[win]])
    knot_theta = np.clip(psi.values, 0.0, 1.0)
    knot_theta = np.maximum.accumulate(knot_theta)

    eval_times = (cfg.eval_times if cfg.eval_times is not None
                  else _default_eval_grid(work.y, cfg.t0, cfg.t1, cfg.n_grid))
    idx = np.clip(np.searchsorted(knots, eval_times, side="right") - 1,
                  0, len(knots) - 1)
    theta = knot_theta[idx]

    # scale factors and CIs
    smooth = smooth_step_curve(knots, knot_theta)
    span = cfg.t1 - cfg.t0
    h = cfg.deriv_step if cfg.deriv_step is not None else span * DERIV_STEP_FRACTION
    if cfg.mode == "npmle":
        const = float(np.mean(work.delta))
        kappa_grid = np.full(len(eval_times), const * (1.0 - const))
        resp_y = work.y[work.y < work.c0]
        f_fn = _marginal_hist_density(resp_y)
        f_grid = f_fn(eval_times)
        g_meta = {}
        mu_meta = {"npmle_pooled_mean": const}
    else:
        mu_mat = nuisances.mu.predict_cross(eval_times, work.w)
        g_mat = np.empty_like(mu_mat)
        for i, t in enumerate(eval_times):
            g_mat[i] = nuisances.g.predict_g(np.full(work.n, t), work.w)
        kappa_grid = np.mean(mu_mat * (1.0 - mu_mat) / g_mat, axis=1)
        f_grid = nuisances.g.predict_f(eval_times)
        g_meta = nuisances.g.metadata
        mu_meta = nuisances.mu.metadata
    if np.any(f_grid <= 0):
        raise ValueError("outside response-time support (f_n = 0 on grid)")
    dtheta = np.array([numeric_derivative(smooth, t, h) for t in eval_times])
    tau_raw = 4.0 * dtheta * kappa_grid / f_grid
    tau = np.maximum(tau_raw, cfg.tau_floor)
    floored = tau_raw <= cfg.tau_floor

    half = cfg.chernoff_q975 * (tau / work.n) ** (1.0 / 3.0)
    survival = 1.0 - theta
    ci_lower = np.clip(survival - half, 0.0, 1.0)
    ci_upper = np.clip(survival + half, 0.0, 1.0)

    return CIREstimate(
        times=eval_times, theta=theta, survival=survival, tau=tau,
        ci_lower=ci_lower, ci_upper=ci_upper, tau_floored=floored,
        n=work.n, mode=cfg.mode, knots=knots, knot_theta=knot_theta,
        metadata={"t0": cfg.t0, "t1": cfg.t1, "mu": mu_meta, "g": g_meta})
