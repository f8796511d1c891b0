import numpy as np
import pytest

from _support import dense_ubre, irls_logit, random_dataset
from bgeva.data import Dataset, SimulationConfig, SplitPlan, simulate
from bgeva.fit import (
    FitConfig,
    FitError,
    PenalizedObjective,
    QuadraticObjective,
    WorkingModel,
    fit,
    fit_inner,
    fit_tau_grid,
    initial_delta,
    predict,
    predict_detail,
    select_lambda,
    trust_region_maximize,
    ubre,
    with_fixed_lambdas,
)
from bgeva.likelihood import (
    LinearTerm,
    WorkingState,
    build_design,
    parse_terms,
    penalized_loglik,
    score,
)
from bgeva.links import LinkKind, link

GEV = LinkKind("gev", -0.25)
LOGIT = LinkKind("logit")


def gaussian_working(design, z):
    """Working state with unit weights, i.e. a plain penalized least-squares problem."""
    n = design.n
    one = np.ones(n)
    return WorkingState(np.zeros(n), np.full(n, 0.5), np.zeros(n), one, one, z, 0.0,
                        np.ones(n, dtype=bool))


@pytest.fixture(scope="module")
def sine_sim():
    cfg = SimulationConfig(3000, GEV, linear=(1.0,), nonlinear=(("sine", 1.0),),
                           target_rate=0.2, seed=11)
    return simulate(cfg)


@pytest.fixture(scope="module")
def sine_fit(sine_sim):
    terms = parse_terms(smooth=["x2"], linear=["x1"], k=10)
    return fit(terms, sine_sim.data, GEV)


class TestFitConfig:
    @pytest.mark.parametrize("kwargs", [dict(tol_delta=0), dict(max_inner=0),
                                        dict(tau_metric="auc"), dict(log10_lambda_range=(2, 1))])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            FitConfig(**kwargs)

    def test_dict_roundtrip(self):
        cfg = FitConfig(fixed_lambdas=(1.0, 2.0), seed=5)
        assert FitConfig.from_dict(cfg.to_dict()) == cfg


class TestTrustRegion:
    def test_quadratic_one_step(self):
        rng = np.random.default_rng(0)
        M = rng.normal(size=(5, 5))
        A = M @ M.T + 5 * np.eye(5)
        b = rng.normal(size=5)
        cfg = FitConfig(trust_radius_init=1e3)
        x, _, trace = trust_region_maximize(QuadraticObjective(A, b), np.zeros(5), cfg)
        assert trace.accepted == 1
        np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-12)

    def test_small_radius_still_converges(self):
        A = np.diag([1.0, 100.0])
        b = np.array([50.0, -20.0])
        x, _, trace = trust_region_maximize(QuadraticObjective(A, b), np.zeros(2),
                                            FitConfig(trust_radius_init=0.01))
        assert trace.converged
        np.testing.assert_allclose(x, b / np.diag(A), rtol=1e-9)

    def test_accepted_steps_monotone_and_feasible(self, sine_sim):
        design = build_design(parse_terms(smooth=["x1", "x2"], k=10), sine_sim.data, GEV)
        start = initial_delta(design, sine_sim.data.response)
        delta, _, trace = fit_inner(design, [1.0, 1.0], start)
        assert trace.converged
        assert np.all(np.diff(trace.objective) >= 0)
        assert np.min(1 + GEV.tau * design.B @ delta) >= GEV.domain_eps

    def test_infeasible_steps_rejected(self):
        # a tiny dataset pushes the tau = -1 fit against its support edge
        data = random_dataset(60, 1, 3, rate=0.5)
        lk = LinkKind("gev", -1.0)
        design = build_design(parse_terms(linear=["x1"]), data, lk)
        delta, _, trace = fit_inner(design, [], initial_delta(design, data.response),
                                    FitConfig(trust_radius_init=50.0))
        assert np.all(lk.feasible(design.B @ delta))
        assert np.all(np.diff(trace.objective) >= 0)

    def test_infeasible_start(self, sine_sim):
        design = build_design(parse_terms(linear=["x1"]), sine_sim.data, GEV)
        with pytest.raises(FitError):
            fit_inner(design, [], np.array([10.0, 0.0]))

    def test_penalized_objective_matches_likelihood(self, sine_sim):
        design = build_design(parse_terms(smooth=["x2"], k=8), sine_sim.data, GEV)
        delta = initial_delta(design, sine_sim.data.response)
        delta[2] = 0.1
        obj = PenalizedObjective(design, [2.0])
        f, g, H, J = obj.derivatives(delta)
        assert f == pytest.approx(penalized_loglik(design, delta, [2.0]), rel=1e-14)
        np.testing.assert_allclose(g, score(design, delta) - design.penalty_matrix([2.0]) @ delta)
        assert obj.value(np.r_[100.0, np.zeros(design.q - 1)]) == -np.inf


class TestUbre:
    def test_saturated_interpolation(self):
        data = random_dataset(8, 1, 0)
        design = build_design(parse_terms(smooth=["x1"], k=8), data, LOGIT)
        assert design.q == design.n == 8
        z = design.B @ np.random.default_rng(1).normal(size=8)
        value, edf = ubre(gaussian_working(design, z), design, [0.0])
        assert value == pytest.approx(1.0, abs=1e-8)
        assert edf == pytest.approx(8.0, abs=1e-8)

    def test_huge_lambda_leaves_null_spaces(self):
        data = random_dataset(300, 3, 2)
        design = build_design(parse_terms(smooth=["x2", "x3"], linear=["x1"], k=8), data, LOGIT)
        z = np.random.default_rng(3).normal(size=300)
        _, edf = ubre(gaussian_working(design, z), design, [1e10, 1e10])
        # intercept + one linear term + the linear null direction of each smooth
        assert edf == pytest.approx(1 + 1 + 2, abs=1e-3)

    @pytest.mark.parametrize("seed", range(5))
    def test_dense_hat_oracle(self, seed):
        rng = np.random.default_rng(seed)
        data = random_dataset(30, 1, seed)
        design = build_design(parse_terms(smooth=["x1"], k=7), data, LOGIT)
        W = rng.uniform(0.1, 2.0, 30)
        z = rng.normal(size=30)
        ws = WorkingState(np.zeros(30), np.zeros(30), np.zeros(30), W, W, z, 0.0,
                          np.ones(30, dtype=bool))
        lam = 10 ** rng.uniform(-2, 2)
        value, edf = ubre(ws, design, [lam])
        ref_value, ref_edf = dense_ubre(design.B, W, z, design.penalty_matrix([lam]))
        assert abs(edf - ref_edf) < 1e-8
        assert abs(value - ref_value) < 1e-8

    def test_edf_decreases_along_lambda_ladder(self):
        data = random_dataset(200, 2, 4)
        design = build_design(parse_terms(smooth=["x1", "x2"], k=10), data, LOGIT)
        wm = WorkingModel(gaussian_working(design, np.random.default_rng(0).normal(size=200)),
                          design)
        edfs = [wm.evaluate([lam, 1.0])[1] for lam in 10.0 ** np.arange(-2, 3)]
        assert np.all(np.diff(edfs) < 0)


class TestSelectLambda:
    def _design(self, n, k, seed):
        x = np.random.default_rng(seed).uniform(-1, 1, n)
        data = Dataset(np.r_[1.0, np.zeros(n - 1)], x[:, None], ("x",))
        return build_design(parse_terms(smooth=["x"], k=k), data, LOGIT), x

    def test_straight_line_gets_heavy_smoothing(self):
        design, x = self._design(500, 10, 0)
        # with little noise the trace term dominates and pushes lambda to the top of the range
        z = 2 * x + 0.1 * np.random.default_rng(1).normal(size=500)
        state = select_lambda(gaussian_working(design, z), design)
        assert state.edf_per_term[0] < 1.2
        assert state.lambdas[0] > 1e2

    def test_wiggly_truth_gets_light_smoothing(self):
        design, x = self._design(5000, 10, 2)
        z = 2 * np.sin(4 * np.pi * x) + 0.3 * np.random.default_rng(3).normal(size=5000)
        state = select_lambda(gaussian_working(design, z), design)
        assert state.edf_per_term[0] > 10 / 2
        assert state.lambdas[0] < 1e-2

    def test_returns_arg_min(self):
        design, x = self._design(400, 10, 4)
        z = np.sin(2 * x) + 0.5 * np.random.default_rng(5).normal(size=400)
        state = select_lambda(gaussian_working(design, z), design)
        assert all(state.ubre <= v + 1e-12 for _, v in state.evaluations)
        assert 0 < state.edf_total <= design.q
        assert 0 < state.edf_per_term[0] <= 9


class TestFit:
    def test_components(self, sine_fit, sine_sim):
        m = sine_fit
        assert m.converged
        assert m.grad_norm < 1e-4 * (1 + abs(m.penalized_loglik))
        assert m.n == sine_sim.data.n and m.q == 1 + 1 + 9
        assert 1 < m.edf("x2") < 9
        ev = np.linalg.eigvalsh(m.V)
        assert ev.min() >= -1e-8 * ev.max()
        assert np.array_equal(m.V, m.V.T)

    def test_linear_coefficient_within_three_se(self):
        sim = simulate(SimulationConfig(5000, GEV, linear=(1.0, -0.5), target_rate=0.1, seed=3))
        m = fit(parse_terms(linear=["x1", "x2"]), sim.data, GEV)
        se = np.sqrt(np.diag(m.V))
        assert abs(m.delta[0] - sim.intercept) < 3 * se[0]
        assert abs(m.delta[1] - 1.0) < 3 * se[1]
        assert abs(m.delta[2] + 0.5) < 3 * se[2]

    def test_unpenalized_logit_matches_irls(self):
        data = random_dataset(400, 3, 9, rate=0.4)
        m = fit(parse_terms(linear=["x1", "x2", "x3"]), data, LOGIT)
        beta = irls_logit(m.design.B, data.response)
        assert np.max(np.abs(m.delta - beta)) < 1e-6
        p = 1 / (1 + np.exp(-m.design.B @ beta))
        info = (m.design.B.T * (p * (1 - p))) @ m.design.B
        np.testing.assert_allclose(m.V, np.linalg.inv(info), rtol=1e-6)

    def test_large_fixed_lambda_equals_linear_fit(self, sine_sim):
        cfg = FitConfig(fixed_lambdas=(1e10,))
        smooth = fit(parse_terms(smooth=["x1"], k=10), sine_sim.data, GEV, cfg)
        linear = fit(parse_terms(linear=["x1"]), sine_sim.data, GEV)
        x = sine_sim.data.column("x1")
        f = smooth.design.B[:, smooth.design.layout["x1"]] @ smooth.coef("x1")
        slope, icpt = np.polyfit(x, f, 1)
        assert abs(slope - linear.delta[1]) < 1e-3
        assert abs(smooth.delta[0] + icpt - linear.delta[0]) < 1e-3

    def test_bit_identical_refit(self, sine_sim, sine_fit):
        again = fit(sine_fit.terms, sine_sim.data, GEV)
        assert again.delta.tobytes() == sine_fit.delta.tobytes()
        assert again.V.tobytes() == sine_fit.V.tobytes()
        assert again.smoothing.lambdas.tobytes() == sine_fit.smoothing.lambdas.tobytes()

    def test_single_class_rejected(self):
        d = Dataset(np.zeros(50), np.linspace(0, 1, 50), ("x",))
        with pytest.raises(Exception, match="class"):
            fit(parse_terms(linear=["x"]), d, LOGIT)

    def test_fixed_lambda_length_checked(self, sine_sim):
        with pytest.raises(ValueError):
            fit(parse_terms(smooth=["x1"], k=6), sine_sim.data, GEV, FitConfig(fixed_lambdas=(1, 2)))
        assert with_fixed_lambdas(FitConfig(), [3.0]).fixed_lambdas == (3.0,)

    def test_iteration_cap_reports_non_convergence(self, sine_sim):
        m = fit(parse_terms(smooth=["x2"], k=10), sine_sim.data, GEV, FitConfig(max_inner=1))
        assert m.converged is False


class TestPredict:
    def test_training_rows_reproduce_fitted_values(self, sine_fit, sine_sim):
        p = predict(sine_fit, sine_sim.data)
        from bgeva.links import inverse_link

        assert np.array_equal(p, inverse_link(GEV, sine_fit.design.B @ sine_fit.delta))

    def test_intercept_only_constant(self, sine_sim):
        m = fit(parse_terms(linear=["x1"]), sine_sim.data, LOGIT)
        m.delta[:] = 0.0
        m.delta[0] = link(LOGIT, 0.05)
        assert np.allclose(predict(m, sine_sim.data), 0.05, rtol=1e-14)

    def test_monotone_in_positive_linear_coefficient(self, sine_fit):
        assert sine_fit.coef("x1")[0] > 0
        x = np.linspace(-1, 1, 50)
        grid = Dataset(np.zeros(50), np.column_stack([x, np.full(50, 0.2)]), ("x1", "x2"))
        assert np.all(np.diff(predict(sine_fit, grid)) >= 0)

    def test_flags_extrapolation_and_clamping(self, sine_fit):
        d = Dataset(np.zeros(3), np.array([[0.0, 0.0], [0.0, 1.5], [40.0, 0.0]]), ("x1", "x2"))
        pr = predict_detail(sine_fit, d)
        # only smooth terms have a fitted range; x1 enters linearly
        assert pr.extrapolated.tolist() == [False, True, False]
        assert pr.clamped.tolist() == [False, False, True]
        assert np.all((pr.pd > 0) & (pr.pd < 1))

    def test_missing_column(self, sine_fit):
        d = Dataset(np.zeros(2), np.zeros((2, 1)), ("x1",))
        with pytest.raises(Exception, match="x2"):
            predict(sine_fit, d)


class TestTauGrid:
    def test_single_value_grid(self, sine_sim):
        cfg = FitConfig(tau_grid=(-0.5,))
        best, table = fit_tau_grid(parse_terms(smooth=["x2"], linear=["x1"], k=8),
                                   sine_sim.data, SplitPlan.holdout(0.2, 1), cfg)
        assert best.link.tau == -0.5
        assert len(table) == 1 and table[0]["selected"]
        assert {"mae_plus", "mse_plus", "auc", "h_measure"} <= set(table[0])

    def test_table_exposes_all_metrics(self, sine_sim):
        cfg = FitConfig(tau_grid=(-1.0, -0.5, -0.25))
        best, table = fit_tau_grid(parse_terms(smooth=["x2"], linear=["x1"], k=8),
                                   sine_sim.data, SplitPlan.holdout(0.2, 1), cfg)
        ok = [r for r in table if "error" not in r]
        assert sum(r["selected"] for r in table) == 1
        assert max(r["h_measure"] for r in ok) == next(r for r in table if r["selected"])["h_measure"]
        assert best.link.tau == next(r for r in table if r["selected"])["tau"]

    def test_ties_prefer_minus_quarter(self):
        from bgeva.fit import _tau_key

        keys = sorted([(-1.0, 0.5), (-0.5, 0.5), (-0.25, 0.5), (-0.75, 0.5)],
                      key=lambda r: _tau_key(r[0], r[1], "h_measure"))
        assert keys[0][0] == -0.25
        # equal distance from -0.25: the larger tau wins
        assert sorted([-0.5, 0.0], key=lambda t: _tau_key(t, 1.0, "mae_plus"))[0] == 0.0

    @pytest.mark.slow
    def test_winner_adjacent_to_true_tau(self):
        hits = 0
        for seed in range(10):
            sim = simulate(SimulationConfig(20_000, GEV, linear=(3.0,), nonlinear=(("sine", 2.0),),
                                            target_rate=0.05, seed=seed))
            best, _ = fit_tau_grid(parse_terms(smooth=sim.data.names), sim.data,
                                   SplitPlan.holdout(0.1, seed), FitConfig())
            hits += best.link.tau in (-0.5, -0.25)
        assert hits >= 8


def test_linear_term_ordering_irrelevant_to_layout():
    data = random_dataset(100, 2, 1)
    d = build_design((LinearTerm("x2"), LinearTerm("x1")), data, LOGIT)
    assert list(d.layout) == ["(Intercept)", "x2", "x1"]
