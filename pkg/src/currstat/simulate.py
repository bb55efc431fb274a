"""Monte Carlo studies: data generation, scenarios, and metrics.

The generating process draws covariates W = (W1, W2, W3) uniformly on
{-1, 1}^3 and event/response times T, Y* independently given W from a
Weibull with shape 0.75 and scale exp(0.4 w1 - 0.2 w2). Response times
are coarsened to a 50-point marginal-quantile grid; follow-up is cut off
at c0, with Y* >= c0 encoded as nonresponse.
"""

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .cir import CIRConfig, fit_cir, fit_nuisances
from .cox import bootstrap_cox
from .data_model import Dataset
from .nuisance import default_ensemble_spec

SCENARIO_CUTOFFS = {"S1": 2.1, "S2": 1.8, "S3": 1.65}


@dataclass(frozen=True)
class DGPSpec:
    """Weibull proportional-hazards generating process with coarsening."""

    c0: float
    shape: float = 0.75
    scale_coefs: tuple = (0.4, -0.2, 0.0)
    grid_size: int = 50

    def __post_init__(self):
        if self.shape <= 0:
            raise ValueError("shape must be positive")
        if self.grid_size < 2:
            raise ValueError("grid size must be >= 2")

    @property
    def p(self):
        return len(self.scale_coefs)

    def true_beta(self):
        """PH coefficients implied by the Weibull scale model.

        Scale exp(s(w)) with shape a gives hazard multiplier e^{-a s(w)},
        so beta = -shape * scale_coefs.
        """
        return -self.shape * np.asarray(self.scale_coefs)

    def marginal_cdf(self, t):
        """Marginal distribution of T (and of Y*, which shares its law)."""
        t = np.asarray(t, dtype=np.float64)
        out = np.zeros_like(t, dtype=np.float64)
        for s in self._scale_levels():
            out += (1.0 - np.exp(-np.power(np.maximum(t, 0.0) * np.exp(-s),
                                           self.shape)))
        return out / len(self._scale_levels())

    def true_theta(self, t):
        """theta_0(t) = P(T <= t); equals the marginal CDF."""
        return self.marginal_cdf(t)

    def true_survival(self, t):
        return 1.0 - self.marginal_cdf(t)

    def _scale_levels(self):
        # w3 has coefficient 0 in the default spec but enumerate anyway
        levels = []
        p = self.p
        for bits in range(2 ** p):
            w = [1.0 if (bits >> j) & 1 else -1.0 for j in range(p)]
            levels.append(float(np.dot(w, self.scale_coefs)))
        return levels

    def coarsening_grid(self):
        """Grid point k is the ((k - 0.5)/m)-quantile of the marginal."""
        m = self.grid_size
        qs = (np.arange(1, m + 1) - 0.5) / m
        hi = 1.0
        while self.marginal_cdf(hi) < qs[-1]:
            hi *= 2.0
        return np.array([brentq(lambda t, q=q: float(self.marginal_cdf(t)) - q,
                                1e-12, hi) for q in qs])


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation cell: scenario cutoff, sample size, replication."""

    name: str
    n: int
    reps: int
    seed: int
    c0: float | None = None
    t0: float = 0.02
    t1: float = 1.5

    def __post_init__(self):
        if self.c0 is None:
            if self.name not in SCENARIO_CUTOFFS:
                raise ValueError(f"unknown scenario {self.name!r} and no c0 given")
            object.__setattr__(self, "c0", SCENARIO_CUTOFFS[self.name])
        if not self.t1 < self.c0:
            raise ValueError("require t1 < c0")
        if self.n < 1 or self.reps < 0:
            raise ValueError("n must be >= 1 and reps >= 0")

    def dgp(self):
        return DGPSpec(c0=self.c0)


def generate(dgp: DGPSpec, n: int, seed) -> tuple:
    """Draw one dataset; returns (Dataset, latent record dict).

    Y* is snapped to the nearest coarsening grid point before the cutoff
    is applied; delta is the event status at the recorded response time.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    p = dgp.p
    w = rng.choice(np.array([-1.0, 1.0]), size=(n, p))
    scale = np.exp(w @ np.asarray(dgp.scale_coefs))
    t = scale * rng.weibull(dgp.shape, size=n)
    ystar_cont = scale * rng.weibull(dgp.shape, size=n)
    grid = dgp.coarsening_grid()
    mids = 0.5 * (grid[:-1] + grid[1:])
    ystar = grid[np.searchsorted(mids, ystar_cont)]
    y = np.minimum(ystar, dgp.c0)
    delta = ((ystar < dgp.c0) & (t <= y)).astype(np.int64)
    # generator self-check on the censoring identity
    assert np.array_equal(delta == 1, (ystar < dgp.c0) & (t <= y))
    names = tuple(f"w{j + 1}" for j in range(p))
    d = Dataset(w=w, y=y, delta=delta, covariate_names=names,
                c0=dgp.c0, b0=float(min(grid[0], np.min(y)) * 0.5))
    latent = {"t": t, "y_star": ystar, "y_star_continuous": ystar_cont}
    return d, latent


def eval_grid(scn: ScenarioSpec, n_grid: int = 100) -> np.ndarray:
    """Evaluation times evenly spaced on the marginal quantile scale.

    Times are aligned to the coarsening grid so each one sits exactly on
    a potential jump location of the step estimate.
    """
    dgp = scn.dgp()
    grid = dgp.coarsening_grid()
    m = dgp.grid_size
    inside = np.flatnonzero((grid >= scn.t0) & (grid <= scn.t1))
    if len(inside) == 0:
        raise ValueError("no coarsening grid points inside [t0, t1]")
    qs = np.linspace(float(dgp.marginal_cdf(scn.t0)),
                     float(dgp.marginal_cdf(scn.t1)), n_grid)
    idx = np.clip(np.ceil(qs * m).astype(int) - 1, inside[0], inside[-1])
    return grid[idx]


@dataclass
class MetricsReport:
    """Aggregated replicate-level metrics for one scenario."""

    scenario: str
    n: int
    times: np.ndarray | None = None
    cir: dict = field(default_factory=dict)   # mode -> summary dict
    cox: dict = field(default_factory=dict)   # "n=..,B=.." -> summary dict
    error: str | None = None
    seed: int | None = None

    def to_json(self, path=None):
        def clean(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (np.floating, np.integer)):
                return v.item()
            return v
        payload = {
            "scenario": self.scenario,
            "n": self.n,
            "seed": self.seed,
            "times": None if self.times is None else self.times.tolist(),
            "cir": clean(self.cir),
            "cox": clean(self.cox),
            "error": self.error,
        }
        if path is not None:
            with open(path, "w") as f:
                json.dump(payload, f, indent=2, sort_keys=True)
        return payload

    def to_csv(self, path):
        """Long-format pointwise metrics: one row per (mode, grid point)."""
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["scenario", "mode", "n", "time", "bias",
                             "coverage"])
            for mode, summ in sorted(self.cir.items()):
                bias = summ.get("bias")
                cov = summ.get("coverage")
                if bias is None or self.times is None:
                    continue
                for j in range(len(self.times)):
                    writer.writerow([self.scenario, mode, self.n,
                                     repr(float(self.times[j])),
                                     repr(float(bias[j])),
                                     repr(float(cov[j]))])


def _interior_mean(values, frac=0.8):
    """Mean over the central `frac` share of grid points."""
    k = len(values)
    drop = int(round(k * (1.0 - frac) / 2.0))
    return float(np.mean(values[drop:k - drop])) if k > 2 * drop else float(np.mean(values))


def _cir_replicate(args):
    (scn, rep_seed, modes, times, mu_spec, density_bins, folds) = args
    d, _ = generate(scn.dgp(), scn.n, rep_seed)
    s0 = scn.dgp().true_survival(times)
    out = {}
    for mode in modes:
        try:
            nuis = fit_nuisances(d, mode, mu_spec=mu_spec,
                                 density_bins=density_bins, folds=folds,
                                 seed=rep_seed)
            cfg = CIRConfig(t0=scn.t0, t1=scn.t1, mode=mode, eval_times=times)
            est = fit_cir(d, cfg, nuisances=nuis)
            err = est.survival - s0
            hit = ((est.ci_lower <= s0) & (s0 <= est.ci_upper)).astype(float)
            out[mode] = (err, hit)
        except (ValueError, np.linalg.LinAlgError) as exc:
            out[mode] = str(exc)
    return out


def run_cir_study(scn: ScenarioSpec, modes=("extended", "complete_case"),
                  mu_spec=None, density_bins=(3, 5, 10, 20), folds=10,
                  n_grid=100, workers=1) -> MetricsReport:
    """Replicate the pointwise bias/coverage study for the CIR modes."""
    report = MetricsReport(scenario=scn.name, n=scn.n, seed=scn.seed)
    if scn.reps == 0:
        report.error = "zero replicates requested"
        return report
    times = eval_grid(scn, n_grid=n_grid)
    report.times = times
    rep_seeds = [int(s.generate_state(1)[0])
                 for s in np.random.SeedSequence(scn.seed).spawn(scn.reps)]
    jobs = [(scn, rs, tuple(modes), times, mu_spec, density_bins, folds)
            for rs in rep_seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_cir_replicate, jobs, chunksize=1))
    else:
        results = [_cir_replicate(j) for j in jobs]
    for mode in modes:
        errs, hits, failures = [], [], []
        for r in results:
            val = r[mode]
            if isinstance(val, str):
                failures.append(val)
            else:
                errs.append(val[0])
                hits.append(val[1])
        summ = {"n_ok": len(errs), "n_failed": len(failures),
                "failures": failures[:10]}
        if errs:
            E = np.asarray(errs)
            H = np.asarray(hits)
            bias = E.mean(axis=0)
            cov = H.mean(axis=0)
            summ.update({
                "bias": bias,
                "coverage": cov,
                "integrated_abs_bias": float(np.trapezoid(np.abs(bias), times)),
                "interior_coverage": _interior_mean(cov),
            })
        report.cir[mode] = summ
    return report


def _bootstrap_replicate(args):
    (scn, n, B, rep_seed, true_beta) = args
    d, _ = generate(scn.dgp(), n, rep_seed)
    try:
        bs = bootstrap_cox(d, B=B, seed=rep_seed)
    except (ValueError, np.linalg.LinAlgError) as exc:
        return str(exc)
    wald_hit = ((bs.wald_ci[:, 0] <= true_beta)
                & (true_beta <= bs.wald_ci[:, 1])).astype(float)
    pct_hit = ((bs.percentile_ci[:, 0] <= true_beta)
               & (true_beta <= bs.percentile_ci[:, 1])).astype(float)
    return wald_hit, pct_hit, bs.beta, bool(bs.flagged)


def run_bootstrap_study(scn: ScenarioSpec, n_list, B_list, reps=None,
                        workers=1) -> MetricsReport:
    """Coverage of bootstrap Wald/percentile CIs for the Cox coefficients."""
    reps = scn.reps if reps is None else reps
    report = MetricsReport(scenario=scn.name, n=0, seed=scn.seed)
    if reps == 0:
        report.error = "zero replicates requested"
        return report
    dgp = scn.dgp()
    true_beta = dgp.true_beta()
    root = np.random.SeedSequence(scn.seed)
    for n in n_list:
        for B in B_list:
            cell_ss = np.random.SeedSequence(
                entropy=root.entropy, spawn_key=(int(n), int(B)))
            rep_seeds = [int(s.generate_state(1)[0])
                         for s in cell_ss.spawn(reps)]
            jobs = [(scn, n, B, rs, true_beta) for rs in rep_seeds]
            if workers > 1:
                with ProcessPoolExecutor(max_workers=workers) as ex:
                    results = list(ex.map(_bootstrap_replicate, jobs,
                                          chunksize=1))
            else:
                results = [_bootstrap_replicate(j) for j in jobs]
            wald, pct, betas, failures, n_flagged = [], [], [], [], 0
            for r in results:
                if isinstance(r, str):
                    failures.append(r)
                    continue
                wald.append(r[0])
                pct.append(r[1])
                betas.append(r[2])
                n_flagged += int(r[3])
            key = f"n={n},B={B}"
            summ = {"n_ok": len(wald), "n_failed": len(failures),
                    "n_flagged": n_flagged, "degenerate": B < 10,
                    "failures": failures[:10]}
            if wald:
                summ.update({
                    "wald_coverage": np.asarray(wald).mean(axis=0),
                    "percentile_coverage": np.asarray(pct).mean(axis=0),
                    "mean_beta": np.asarray(betas).mean(axis=0),
                    "true_beta": true_beta,
                })
            report.cox[key] = summ
    return report
