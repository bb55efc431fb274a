"""Tests for the current-status Cox fitter and bootstrap inference."""

import csv
import math

import numpy as np
import pytest

import currstat.cox as cox_mod
from currstat.cir import CIRConfig, fit_cir
from currstat.cox import (BootstrapSummary, bootstrap_cox, cs_loglik,
                          cs_loglik_grad, fit_cox)
from currstat.data_model import Dataset
from currstat.simulate import DGPSpec, generate


def single_obs(delta):
    return Dataset(w=np.zeros((1, 1)), y=[1.0], delta=[delta],
                   covariate_names=("a",), c0=5.0, b0=0.1)


class TestLoglik:
    def test_censored_value(self):
        d = single_obs(0)
        assert cs_loglik([0.0], [1.0], d) == pytest.approx(-1.0)

    def test_event_value(self):
        d = single_obs(1)
        assert cs_loglik([0.0], [1.0], d) == pytest.approx(
            math.log(1 - math.exp(-1)))

    def test_event_with_zero_hazard_is_minus_inf(self):
        d = single_obs(1)
        assert cs_loglik([0.0], [0.0], d) == -np.inf

    def test_dimension_mismatch(self):
        d = single_obs(0)
        with pytest.raises(ValueError, match="dimension"):
            cs_loglik([0.0, 1.0], [1.0], d)
        with pytest.raises(ValueError, match="dimension"):
            cs_loglik([0.0], [1.0, 1.0], d)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            n = int(rng.integers(20, 80))
            p = int(rng.integers(1, 4))
            w = rng.normal(size=(n, p))
            y = rng.uniform(0.5, 4.0, size=n)
            delta = (rng.uniform(size=n) < 0.5).astype(int)
            d = Dataset(w=w, y=y, delta=delta,
                        covariate_names=tuple(f"x{j}" for j in range(p)),
                        c0=5.0, b0=0.1)
            beta = rng.normal(scale=0.5, size=p)
            lam = rng.uniform(0.1, 2.0, size=n)
            g = cs_loglik_grad(beta, lam, d)
            h = 1e-6
            for j in range(p):
                e = np.zeros(p)
                e[j] = h
                fd = (cs_loglik(beta + e, lam, d)
                      - cs_loglik(beta - e, lam, d)) / (2 * h)
                assert abs(g[j] - fd) <= 1e-6 * max(abs(fd), 1.0)


class TestFitCox:
    def test_no_covariates_matches_npmle(self):
        d, _ = generate(DGPSpec(c0=1.65), 400, 1)
        resp = d.y < d.c0
        d0 = Dataset(w=np.zeros((d.n, 0)), y=d.y, delta=d.delta,
                     covariate_names=(), c0=d.c0, b0=d.b0)
        fit = fit_cox(d0)
        theta_cox = 1.0 - np.exp(-fit.cumhaz)
        est = fit_cir(d.subset(resp),
                      CIRConfig(t0=float(fit.times[0]),
                                t1=float(fit.times[-1]), mode="npmle",
                                eval_times=fit.times))
        assert np.allclose(theta_cox, est.theta, atol=1e-6)

    def test_duplicated_rows_same_beta(self):
        d, _ = generate(DGPSpec(c0=1.65), 300, 2)
        idx = np.r_[np.arange(d.n), np.arange(d.n)]
        d2 = d.subset(idx)
        f1 = fit_cox(d)
        f2 = fit_cox(d2)
        assert np.allclose(f1.beta, f2.beta, atol=1e-6)

    def test_scaling_equivariance(self):
        d, _ = generate(DGPSpec(c0=1.65), 500, 3)
        c = 2.5
        w2 = d.w.copy()
        w2[:, 0] *= c
        d2 = Dataset(w=w2, y=d.y, delta=d.delta,
                     covariate_names=d.covariate_names, c0=d.c0, b0=d.b0)
        f1 = fit_cox(d)
        f2 = fit_cox(d2)
        assert f2.beta[0] == pytest.approx(f1.beta[0] / c, abs=1e-5)
        assert np.allclose(f2.beta[1:], f1.beta[1:], atol=1e-5)
        assert f2.loglik == pytest.approx(f1.loglik, abs=1e-7)

    def test_loglik_nondecreasing_in_iterations(self):
        d, _ = generate(DGPSpec(c0=1.65), 300, 4)
        lls = [fit_cox(d, max_iter=k, tol=0.0).loglik for k in range(1, 8)]
        assert np.all(np.diff(lls) >= -1e-9)

    def test_cumhaz_nondecreasing_nonnegative(self):
        d, _ = generate(DGPSpec(c0=1.65), 300, 5)
        fit = fit_cox(d)
        assert np.all(fit.cumhaz >= 0)
        assert np.all(np.diff(fit.cumhaz) >= -1e-12)
        assert np.isfinite(fit.loglik)

    def test_rank_deficient_design(self):
        rng = np.random.default_rng(6)
        n = 100
        w = np.column_stack([rng.normal(size=n)] * 2)  # perfectly collinear
        y = rng.uniform(0.5, 4.0, size=n)
        delta = (rng.uniform(size=n) < 0.5).astype(int)
        d = Dataset(w=w, y=y, delta=delta, covariate_names=("a", "b"),
                    c0=5.0, b0=0.1)
        with pytest.raises(ValueError, match="rank"):
            fit_cox(d)

    def test_baseline_cumhaz_step_evaluation(self):
        d, _ = generate(DGPSpec(c0=1.65), 200, 7)
        fit = fit_cox(d)
        assert fit.baseline_cumhaz(np.array([fit.times[0] / 2]))[0] == 0.0
        assert fit.baseline_cumhaz(np.array([fit.times[-1] + 1]))[0] == \
            pytest.approx(fit.cumhaz[-1])

    def test_warm_start_init(self):
        d, _ = generate(DGPSpec(c0=1.65), 300, 8)
        cold = fit_cox(d)
        warm = fit_cox(d, init=cold.beta)
        assert np.allclose(cold.beta, warm.beta, atol=1e-5)


class TestBootstrap:
    def test_degenerate_identical_resamples_flagged(self, monkeypatch):
        d, _ = generate(DGPSpec(c0=1.65), 200, 9)

        class FixedRng:
            def integers(self, lo, hi, size):
                return np.arange(size) % (hi - lo)

        monkeypatch.setattr(cox_mod.np.random, "default_rng",
                            lambda *_a, **_k: FixedRng())
        bs = bootstrap_cox(d, B=2, seed=0)
        assert np.allclose(bs.beta_se, 0.0)
        assert bs.flagged

    def test_requires_two_replicates(self):
        d, _ = generate(DGPSpec(c0=1.65), 200, 10)
        with pytest.raises(ValueError):
            bootstrap_cox(d, B=1, seed=0)

    def test_single_coefficient_group_matches_wald(self):
        d, _ = generate(DGPSpec(c0=1.65), 400, 11)
        bs = bootstrap_cox(d, B=40, seed=1, groups={"g1": [0]})
        label, stat, df, p = bs.group_tests[0]
        z = bs.beta[0] / bs.beta_se[0]
        assert df == 1
        assert stat == pytest.approx(z * z, rel=1e-6)
        assert p == pytest.approx(bs.pvalues[0], rel=1e-6)

    def test_wald_ci_shape(self):
        d, _ = generate(DGPSpec(c0=1.65), 300, 12)
        bs = bootstrap_cox(d, B=25, seed=2)
        assert np.allclose(bs.wald_ci[:, 0], bs.beta - 1.96 * bs.beta_se)
        assert np.allclose(bs.wald_ci[:, 1], bs.beta + 1.96 * bs.beta_se)
        assert bs.B_used + bs.n_dropped == 25

    def test_seed_reproducible(self):
        d, _ = generate(DGPSpec(c0=1.65), 250, 13)
        b1 = bootstrap_cox(d, B=15, seed=3)
        b2 = bootstrap_cox(d, B=15, seed=3)
        assert np.array_equal(b1.samples, b2.samples)

    def test_respondent_resampling_flag(self):
        d, _ = generate(DGPSpec(c0=1.65), 250, 14)
        br = bootstrap_cox(d, B=10, seed=4, resample="respondents")
        assert isinstance(br, BootstrapSummary)
        with pytest.raises(ValueError, match="resample"):
            bootstrap_cox(d, B=10, seed=4, resample="bogus")

    def test_table_csv_format(self, tmp_path):
        d, _ = generate(DGPSpec(c0=1.65), 300, 15)
        bs = bootstrap_cox(d, B=20, seed=5)
        path = tmp_path / "table.csv"
        bs.to_table_csv(path, reference_rows=[(0, "w0")])
        with open(path) as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["risk_factor", "hazard_ratio", "ci_lower",
                           "ci_upper", "p_value", "significant"]
        assert rows[1][0] == "w0 (ref)"
        assert rows[1][1] == "1.000"
        assert len(rows) == 1 + 1 + 3
        assert rows[2][5] in ("0", "1")
