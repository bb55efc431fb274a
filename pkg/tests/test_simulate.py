"""Tests for data generation, scenarios, and metric aggregation."""

import numpy as np
import pytest

from currstat.nuisance import lean_ensemble_spec
from currstat.simulate import (SCENARIO_CUTOFFS, DGPSpec, MetricsReport,
                               ScenarioSpec, eval_grid, generate,
                               run_bootstrap_study, run_cir_study)


class TestDGPSpec:
    def test_true_beta_mapping(self):
        dgp = DGPSpec(c0=2.1)
        assert np.allclose(dgp.true_beta(), [-0.30, 0.15, 0.0])

    def test_marginal_cdf_limits(self):
        dgp = DGPSpec(c0=2.1)
        assert dgp.marginal_cdf(np.array([0.0]))[0] == 0.0
        assert dgp.true_survival(np.array([0.0]))[0] == 1.0
        assert dgp.marginal_cdf(np.array([100.0]))[0] == pytest.approx(1.0)

    def test_survival_closed_form_at_t1(self):
        dgp = DGPSpec(c0=2.1)
        # direct mixture evaluation as an independent cross-check
        t = 1.5
        acc = 0.0
        for w1 in (-1, 1):
            for w2 in (-1, 1):
                acc += 0.25 * np.exp(-(t * np.exp(-(0.4 * w1 - 0.2 * w2)))
                                     ** 0.75)
        assert float(dgp.true_survival(np.array([t]))[0]) == pytest.approx(acc)

    def test_coarsening_grid_is_quantile_spaced(self):
        dgp = DGPSpec(c0=2.1)
        grid = dgp.coarsening_grid()
        assert len(grid) == 50
        qs = dgp.marginal_cdf(grid)
        assert np.allclose(qs, (np.arange(1, 51) - 0.5) / 50, atol=1e-8)

    def test_validation(self):
        with pytest.raises(ValueError):
            DGPSpec(c0=2.1, shape=-1.0)
        with pytest.raises(ValueError):
            DGPSpec(c0=2.1, grid_size=1)


class TestScenarioSpec:
    def test_named_cutoffs(self):
        assert SCENARIO_CUTOFFS == {"S1": 2.1, "S2": 1.8, "S3": 1.65}
        scn = ScenarioSpec(name="S2", n=500, reps=10, seed=0)
        assert scn.c0 == 1.8

    def test_t1_before_cutoff(self):
        with pytest.raises(ValueError):
            ScenarioSpec(name="S3", n=500, reps=10, seed=0, c0=1.4)

    def test_unknown_scenario_needs_c0(self):
        with pytest.raises(ValueError):
            ScenarioSpec(name="X9", n=500, reps=10, seed=0)
        scn = ScenarioSpec(name="X9", n=500, reps=10, seed=0, c0=3.0)
        assert scn.c0 == 3.0


class TestGenerate:
    def test_deterministic(self):
        dgp = DGPSpec(c0=1.8)
        d1, l1 = generate(dgp, 500, 42)
        d2, l2 = generate(dgp, 500, 42)
        assert np.array_equal(d1.y, d2.y)
        assert np.array_equal(d1.delta, d2.delta)
        assert np.array_equal(d1.w, d2.w)
        assert np.array_equal(l1["t"], l2["t"])

    def test_latent_censoring_identity(self):
        dgp = DGPSpec(c0=1.65)
        d, lat = generate(dgp, 2000, 7)
        expect = ((lat["y_star"] < dgp.c0) & (lat["t"] <= d.y)).astype(int)
        assert np.array_equal(d.delta, expect)
        assert np.array_equal(d.y, np.minimum(lat["y_star"], dgp.c0))

    def test_coarsening_to_at_most_50_values(self):
        dgp = DGPSpec(c0=1.65)
        _, lat = generate(dgp, 5000, 8)
        assert len(np.unique(lat["y_star"])) <= 50

    def test_nonresponse_fraction_matches_closed_form(self):
        # empirical P(Y* >= c0) vs the analytic marginal, n = 1e5
        dgp = DGPSpec(c0=1.65)
        d, _ = generate(dgp, 100000, 9)
        frac = float(np.mean(d.y == dgp.c0))
        p = 1.0 - float(dgp.marginal_cdf(np.array([dgp.c0]))[0])
        se = np.sqrt(p * (1 - p) / 100000)
        assert abs(frac - p) < 2 * se + 0.01  # snapping shifts the cut slightly

    def test_t1_quantile_positions(self):
        # t1 = 1.5 sits near the 90/95/97.5 percentile of respondent times
        for name, target in (("S1", 0.10), ("S2", 0.05), ("S3", 0.025)):
            dgp = DGPSpec(c0=SCENARIO_CUTOFFS[name])
            d, _ = generate(dgp, 100000, 10)
            resp = d.y < dgp.c0
            frac = float(np.mean(d.y[resp] > 1.5))
            assert abs(frac - target) < 0.01

    def test_covariates_are_signs(self):
        d, _ = generate(DGPSpec(c0=2.1), 500, 11)
        assert set(np.unique(d.w)) <= {-1.0, 1.0}
        assert d.p == 3


class TestEvalGrid:
    def test_grid_inside_window_and_on_knots(self):
        scn = ScenarioSpec(name="S3", n=1000, reps=1, seed=0)
        times = eval_grid(scn)
        assert len(times) == 100
        assert times.min() >= scn.t0 and times.max() <= scn.t1
        grid = scn.dgp().coarsening_grid()
        assert np.all(np.isin(times, grid))
        assert np.all(np.diff(times) >= 0)


class TestStudies:
    def test_zero_reps_flagged(self):
        scn = ScenarioSpec(name="S3", n=200, reps=0, seed=0)
        rep = run_cir_study(scn)
        assert rep.error == "zero replicates requested"
        rep2 = run_bootstrap_study(scn, n_list=[200], B_list=[10], reps=0)
        assert rep2.error == "zero replicates requested"

    def test_cir_study_deterministic_and_reported(self, tmp_path):
        scn = ScenarioSpec(name="S3", n=250, reps=2, seed=5)
        kwargs = dict(mu_spec=lean_ensemble_spec(folds=5),
                      density_bins=(5,), folds=5)
        r1 = run_cir_study(scn, **kwargs)
        r2 = run_cir_study(scn, **kwargs)
        assert r1.to_json() == r2.to_json()
        s = r1.cir["extended"]
        assert s["n_ok"] == 2
        assert len(s["bias"]) == 100
        assert np.all((s["coverage"] >= 0) & (s["coverage"] <= 1))
        assert s["integrated_abs_bias"] >= 0
        r1.to_csv(tmp_path / "m.csv")
        r1.to_json(tmp_path / "m.json")
        header = (tmp_path / "m.csv").read_text().splitlines()[0]
        assert header == "scenario,mode,n,time,bias,coverage"

    def test_bootstrap_study_smoke_degenerate_cell(self):
        scn = ScenarioSpec(name="S1", n=150, reps=2, seed=6)
        rep = run_bootstrap_study(scn, n_list=[150], B_list=[2], reps=2)
        cell = rep.cox["n=150,B=2"]
        assert cell["degenerate"]  # B = 2 flagged as a smoke cell
        assert cell["n_ok"] + cell["n_failed"] == 2
        if cell["n_ok"]:
            assert len(cell["wald_coverage"]) == 3

    def test_metrics_report_json_round(self, tmp_path):
        rep = MetricsReport(scenario="S3", n=100, seed=1)
        rep.cir["extended"] = {"bias": np.array([0.1]), "n_ok": 1}
        payload = rep.to_json(tmp_path / "r.json")
        assert payload["cir"]["extended"]["bias"] == [0.1]
