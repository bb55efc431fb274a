"""Tests for the CIR estimator: one-step, GCM step, scale factor, CIs."""

import numpy as np
import pytest

from _oracles import OracleG, OracleMu, gamma0
from currstat.cir import (CHERNOFF_Q975, CIRConfig, _gamma_cusum, chernoff_ci,
                          fit_cir, fit_nuisances, one_step_gamma, scale_factor,
                          smooth_step_curve)
from currstat.data_model import Dataset
from currstat.isotonic import MonotoneCurve, WeightedSeries, monotone_hermite, pava
from currstat.nuisance import empirical_cdf, lean_ensemble_spec
from currstat.simulate import DGPSpec, generate


class ConstantMu:
    def __init__(self, c):
        self.c = c
        self.metadata = {}

    def predict(self, y, w):
        return np.full(np.atleast_2d(w).shape[0], self.c)

    def predict_cross(self, ys, w):
        return np.full((len(np.atleast_1d(ys)), np.atleast_2d(w).shape[0]),
                       self.c)


class ConstantG:
    def __init__(self, g=1.0, f=0.5):
        self.gval = g
        self.fval = f
        self.metadata = {}

    def predict_g(self, y, w):
        return np.full(np.atleast_2d(w).shape[0], self.gval)

    def predict_g_cross(self, y0, w):
        return np.full(np.atleast_2d(w).shape[0], self.gval)

    def predict_f(self, y):
        if np.isscalar(y):
            return self.fval
        return np.full(len(np.atleast_1d(y)), self.fval)


def coarse_dataset(n=200, seed=0, c0=10.0):
    """Random current-status data on a coarse time grid."""
    rng = np.random.default_rng(seed)
    grid = np.linspace(0.5, 8.0, 25)
    y = rng.choice(grid, size=n)
    nonresp = rng.uniform(size=n) < 0.15
    y[nonresp] = c0
    t = rng.exponential(3.0, size=n)
    delta = np.where(~nonresp, (t <= y).astype(int), 0)
    w = rng.normal(size=(n, 2))
    return Dataset(w=w, y=y, delta=delta, covariate_names=("a", "b"),
                   c0=c0, b0=0.1)


def npmle_oracle(d, t0, t1):
    """Direct NPMLE: pava of event indicators over respondent times."""
    resp = d.y < d.c0
    ry, rd = d.y[resp], d.delta[resp].astype(float)
    us, inv = np.unique(ry, return_inverse=True)
    means = np.bincount(inv, weights=rd) / np.bincount(inv)
    counts = np.bincount(inv).astype(float)
    fit = pava(WeightedSeries(x=us, v=means, w=counts))

    def evaluate(t):
        # value attached to the largest knot <= t
        idx = np.clip(np.searchsorted(us, t, side="right") - 1, 0, len(us) - 1)
        return fit.values[idx]
    return evaluate


class TestOneStepGamma:
    def test_constant_mu_reduces_to_empirical_cusum(self):
        d = coarse_dataset(300, seed=1)
        F = empirical_cdf(d.y)
        mu = ConstantMu(0.37)
        g = ConstantG(1.0)
        for y0 in [1.0, 3.3, 6.0]:
            expected = float(np.mean(d.delta * (d.y <= y0)))
            got = one_step_gamma(d, mu, g, F, y0)
            assert got == pytest.approx(expected, abs=1e-12)

    def test_below_all_observations(self):
        d = coarse_dataset(100, seed=2)
        F = empirical_cdf(d.y)
        assert one_step_gamma(d, ConstantMu(0.5), ConstantG(1.0), F, 0.01) == 0.0

    def test_matches_cusum_form_with_fitted_nuisances(self):
        d, _ = generate(DGPSpec(c0=1.65), 300, 3)
        nuis = fit_nuisances(d, "extended", mu_spec=lean_ensemble_spec(folds=5),
                             density_bins=(5,), folds=5, seed=0)
        us, gamma_u, _ = _gamma_cusum(d, nuis, "extended")
        for j in range(0, len(us), 7):
            direct = one_step_gamma(d, nuis.mu, nuis.g, nuis.F, us[j])
            assert direct == pytest.approx(gamma_u[j], abs=1e-10)

    def test_root_n_shrinkage_with_oracle_nuisances(self):
        dgp = DGPSpec(c0=1.65)
        mu, g = OracleMu(dgp), OracleG(dgp)
        y0 = 1.0
        g0 = gamma0(dgp, y0)
        errs = {}
        for n in (500, 4500):
            e = []
            for s in range(8):
                d, _ = generate(dgp, n, 100 + s)
                F = empirical_cdf(d.y)
                e.append(abs(one_step_gamma(d, mu, g, F, y0) - g0))
            errs[n] = np.median(e)
        ratio = errs[500] / errs[4500]
        assert 1.5 < ratio < 6.5  # ~ sqrt(9) = 3 with slack


class TestFitCir:
    def test_npmle_equals_direct_pava(self):
        d = coarse_dataset(250, seed=4)
        cfg = CIRConfig(t0=0.2, t1=9.0, mode="npmle")
        est = fit_cir(d, cfg)
        oracle = npmle_oracle(d, 0.2, 9.0)
        assert np.allclose(est.theta, np.clip(oracle(est.times), 0, 1),
                           atol=1e-10)

    def test_npmle_median_indicator_step(self):
        rng = np.random.default_rng(5)
        y = np.sort(rng.uniform(1, 9, 300))
        med = np.median(y)
        delta = (y >= med).astype(int)
        d = Dataset(w=np.zeros((300, 1)), y=y, delta=delta,
                    covariate_names=("a",), c0=10.0, b0=0.1)
        est = fit_cir(d, CIRConfig(t0=1.2, t1=8.8, mode="npmle"))
        assert np.all(est.theta[est.times < med - 0.5] < 0.1)
        assert np.all(est.theta[est.times > med + 0.5] > 0.9)

    def test_theta_monotone_and_cis_ordered(self):
        d, _ = generate(DGPSpec(c0=1.65), 500, 6)
        nuis = fit_nuisances(d, "extended", mu_spec=lean_ensemble_spec(folds=5),
                             density_bins=(5, 10), folds=5, seed=1)
        est = fit_cir(d, CIRConfig(t0=0.02, t1=1.5), nuisances=nuis)
        assert np.all(np.diff(est.theta) >= -1e-12)
        assert np.all(est.theta >= 0) and np.all(est.theta <= 1)
        assert np.all(est.ci_lower <= est.survival + 1e-12)
        assert np.all(est.survival <= est.ci_upper + 1e-12)
        assert np.all((est.ci_lower >= 0) & (est.ci_upper <= 1))

    def test_insufficient_support(self):
        d = coarse_dataset(200, seed=7)
        with pytest.raises(ValueError, match="insufficient support"):
            fit_cir(d, CIRConfig(t0=0.45, t1=0.55, mode="npmle"))

    def test_increasing_transform_invariance(self):
        d = coarse_dataset(300, seed=8)
        t0, t1 = 0.6, 8.5
        est = fit_cir(d, CIRConfig(t0=t0, t1=t1, mode="npmle",
                                   eval_times=np.linspace(1, 8, 40)))
        phi = lambda v: np.asarray(v) ** 2  # strictly increasing on y > 0
        d2 = Dataset(w=d.w, y=phi(d.y), delta=d.delta,
                     covariate_names=d.covariate_names, c0=phi(d.c0),
                     b0=phi(d.b0))
        est2 = fit_cir(d2, CIRConfig(t0=phi(t0), t1=phi(t1), mode="npmle",
                                     eval_times=phi(np.linspace(1, 8, 40))))
        assert np.allclose(est.theta, est2.theta, atol=1e-12)

    def test_extended_close_to_npmle_when_w_independent(self):
        # W carries no information, so the corrections vanish
        rng = np.random.default_rng(9)
        n = 2000
        grid = np.linspace(0.2, 4.0, 30)
        y = rng.choice(grid, size=n)
        t = rng.exponential(2.0, size=n)
        delta = (t <= y).astype(int)
        w = rng.normal(size=(n, 2))
        d = Dataset(w=w, y=y, delta=delta, covariate_names=("a", "b"),
                    c0=5.0, b0=0.05)
        times = np.linspace(0.4, 3.8, 50)
        nuis = fit_nuisances(d, "extended", mu_spec=lean_ensemble_spec(folds=5),
                             density_bins=(5, 10), folds=5, seed=2)
        ext = fit_cir(d, CIRConfig(t0=0.3, t1=3.9, eval_times=times),
                      nuisances=nuis)
        npm = fit_cir(d, CIRConfig(t0=0.3, t1=3.9, mode="npmle",
                                   eval_times=times))
        assert np.max(np.abs(ext.theta - npm.theta)) < 0.02

    def test_complete_case_close_to_extended_when_response_independent(self):
        d, _ = generate(DGPSpec(c0=1.65, scale_coefs=(0.0, 0.0, 0.0)), 2000, 10)
        times = np.linspace(0.1, 1.4, 40)
        spec = lean_ensemble_spec(folds=5)
        ext = fit_cir(d, CIRConfig(t0=0.02, t1=1.5, eval_times=times),
                      nuisances=fit_nuisances(d, "extended", mu_spec=spec,
                                              density_bins=(5,), folds=5,
                                              seed=3))
        cc = fit_cir(d, CIRConfig(t0=0.02, t1=1.5, mode="complete_case",
                                  eval_times=times),
                     nuisances=fit_nuisances(d, "complete_case", mu_spec=spec,
                                             density_bins=(5,), folds=5,
                                             seed=3))
        assert np.max(np.abs(ext.theta - cc.theta)) < 0.05

    def test_serialization(self, tmp_path):
        d = coarse_dataset(200, seed=11)
        est = fit_cir(d, CIRConfig(t0=0.6, t1=8.5, mode="npmle"))
        est.to_csv(tmp_path / "c.csv")
        payload = est.to_json(tmp_path / "c.json")
        assert (tmp_path / "c.csv").exists()
        assert len(payload["survival"]) == len(est.times)


class TestScaleFactor:
    def test_arithmetic_example(self):
        d = coarse_dataset(100, seed=12)
        curve = monotone_hermite([0.0, 10.0], [0.0, 1.0])  # slope 0.1
        tau = scale_factor(d, ConstantMu(0.5), ConstantG(1.0, f=0.5),
                           curve, 5.0)
        assert tau == pytest.approx(4 * 0.1 * 0.25 / 0.5, rel=1e-6)

    def test_flat_region_floored(self):
        d = coarse_dataset(100, seed=13)
        flat = MonotoneCurve(knots=[0.0, 5.0, 10.0], values=[0.3, 0.3, 0.3],
                             kind="step-left")
        tau = scale_factor(d, ConstantMu(0.5), ConstantG(1.0, f=0.5),
                           flat, 5.0, tau_floor=1e-8)
        assert tau == 1e-8

    def test_kappa_halves_when_g_doubles(self):
        d = coarse_dataset(100, seed=14)
        curve = monotone_hermite([0.0, 10.0], [0.0, 1.0])
        t1 = scale_factor(d, ConstantMu(0.5), ConstantG(1.0, f=0.5), curve, 5.0)
        t2 = scale_factor(d, ConstantMu(0.5), ConstantG(2.0, f=0.5), curve, 5.0)
        assert t2 == pytest.approx(t1 / 2, rel=1e-9)

    def test_zero_density_errors(self):
        d = coarse_dataset(100, seed=15)
        curve = monotone_hermite([0.0, 10.0], [0.0, 1.0])
        with pytest.raises(ValueError, match="support"):
            scale_factor(d, ConstantMu(0.5), ConstantG(1.0, f=0.0), curve, 5.0)


class TestChernoffCI:
    def test_half_width_value(self):
        lo, hi = chernoff_ci(0.5, 0.2, 1000)
        half = 0.998181 * (0.2 / 1000) ** (1 / 3)
        assert hi - lo == pytest.approx(2 * half, abs=1e-12)
        assert half == pytest.approx(0.0584, abs=2e-4)

    def test_doubling_n(self):
        lo1, hi1 = chernoff_ci(0.5, 0.2, 1000)
        lo2, hi2 = chernoff_ci(0.5, 0.2, 2000)
        assert (hi2 - lo2) / (hi1 - lo1) == pytest.approx(2 ** (-1 / 3),
                                                          abs=1e-12)

    def test_degenerate_tau(self):
        lo, hi = chernoff_ci(0.5, 0.0, 1000)
        assert lo == hi == 0.5

    def test_clipping(self):
        lo, hi = chernoff_ci(0.99, 5.0, 10)
        assert hi == 1.0

    def test_constant_value(self):
        assert CHERNOFF_Q975 == 0.998181

    def test_unsupported_level(self):
        with pytest.raises(ValueError):
            chernoff_ci(0.5, 0.2, 100, level=0.9)


class TestSmoothStepCurve:
    def test_blocks_collapse_to_midpoints(self):
        c = smooth_step_curve([1.0, 2.0, 3.0, 4.0], [0.2, 0.2, 0.5, 0.5])
        assert np.allclose(c.knots, [1.5, 3.5])
        assert c(1.5) == pytest.approx(0.2)
        assert c(3.5) == pytest.approx(0.5)

    def test_degenerate_flat(self):
        c = smooth_step_curve([1.0, 2.0], [0.3, 0.3])
        assert c(1.5) == pytest.approx(0.3)
        assert c.derivative(1.5) == pytest.approx(0.0)
