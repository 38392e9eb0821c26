import math
from itertools import combinations

import numpy as np
import pytest

from mnl_ucb import assortment as A
from mnl_ucb.core import NO_PURCHASE, ContextSlice, empirical_fisher_m, expected_revenue, sample_purchase
from mnl_ucb.policy import (BaselineConfig, BaselineState, MleUcbPolicy, MnlUcbBaseline, UcbConfig, UcbState,
                            baseline_observe, default_hyperparams, inv_sqrt_psd, mle_ucb_step,
                            mnl_ucb_baseline_step, optimistic_utilities, record_observation, ucb_bound)


class TestHyperparameters:
    def test_experiment_recipe(self):
        cfg = default_hyperparams(10_000, 5, 10, "experiment")
        assert cfg.t0 == 100
        np.testing.assert_allclose(cfg.omega, math.sqrt(5 * math.log(100_000)))
        assert cfg.tau == pytest.approx(0.1)

    def test_theory_recipe(self):
        cfg = default_hyperparams(16, 1, 1, "theory")
        assert cfg.t0 == 3 and cfg.tau == 1.0
        np.testing.assert_allclose(cfg.omega, math.sqrt(math.log(16)))

    def test_theory_with_instance_constants(self):
        cfg = default_hyperparams(100, 2, 3, "theory", rho=2.0, nu=1.5)
        np.testing.assert_allclose(cfg.omega, math.sqrt(2 * math.log(2.0 * 1.5 * 100 * 3)))

    def test_radius_is_inverse_capacity(self):
        assert default_hyperparams(100, 2, 4).tau == 0.25

    def test_overrides_win(self):
        cfg = default_hyperparams(100, 2, 4, tau=math.inf, omega=0.0, t0=7, solver="brute")
        assert (cfg.t0, cfg.tau, cfg.omega, cfg.solver) == (7, math.inf, 0.0, "brute")

    @pytest.mark.parametrize("args", [(3, 2, 2), (100, 0, 2), (100, 2, 0)])
    def test_rejects_small_inputs(self, args):
        with pytest.raises(ValueError):
            default_hyperparams(*args)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            default_hyperparams(100, 2, 2, "fast")

    @pytest.mark.parametrize("kw", [dict(t0=0), dict(tau=-1.0), dict(omega=-1.0), dict(solver="lp"),
                                    dict(refresh_every=0), dict(ridge=-1.0)])
    def test_config_validation(self, kw):
        base = dict(t0=1, tau=1.0, omega=1.0)
        base.update(kw)
        with pytest.raises(ValueError):
            UcbConfig(**base)


class TestUcbBound:
    def test_inverse_square_root(self, rng):
        a = rng.normal(size=(4, 4))
        m = a @ a.T + np.eye(4)
        w = inv_sqrt_psd(m)
        np.testing.assert_allclose(w @ m @ w, np.eye(4), atol=1e-10)
        with pytest.raises(np.linalg.LinAlgError):
            inv_sqrt_psd(np.zeros((2, 2)))
        np.testing.assert_allclose(inv_sqrt_psd(np.zeros((2, 2)), floor=4.0), 0.5 * np.eye(2))

    def test_zero_width(self, rng):
        ctx = ContextSlice(rng.normal(size=(5, 2)), rng.uniform(size=5))
        theta = rng.normal(size=2)
        assert ucb_bound(theta, np.eye(2), ctx, (0, 3), 0.0) == expected_revenue(theta, ctx, (0, 3))
        assert ucb_bound(theta, np.eye(2), ctx, (), 2.0) == 0.0

    def test_scalar_width(self):
        ctx = ContextSlice([[2.0], [1.0]], [0.5, 0.7])
        theta, fisher, omega = np.array([0.3]), np.array([[9.0]]), 0.8
        m = empirical_fisher_m(theta, ctx, (0, 1))[0, 0]
        expect = expected_revenue(theta, ctx, (0, 1)) + min(1.0, omega * math.sqrt(m / 9.0))
        np.testing.assert_allclose(ucb_bound(theta, fisher, ctx, (0, 1), omega), expect, rtol=1e-12)

    def test_subproblem_objective_equals_bound(self, rng):
        cfg = UcbConfig(t0=5, tau=math.inf, omega=1.3, ridge=0.0)
        state = UcbState.initial(3, 3)
        state.theta_pilot = state.theta_hat = rng.normal(size=3)
        a = rng.normal(size=(3, 3))
        state.fisher = a @ a.T + 0.5 * np.eye(3)
        ctx = ContextSlice(rng.normal(size=(7, 3)), rng.uniform(size=7))
        from mnl_ucb.policy import build_subproblem

        sub = build_subproblem(state, ctx, cfg, 3)
        for s in combinations(range(7), 2):
            np.testing.assert_allclose(A.objective(sub, s), ucb_bound(state.theta_hat, state.fisher, ctx, s, 1.3),
                                       rtol=1e-9)


class TestMleUcbStep:
    def test_exploration_offers_singletons_without_estimation(self, rng):
        cfg = UcbConfig(t0=10, tau=0.5, omega=1.0)
        state = UcbState.initial(2, 3)
        for t in range(10):
            ctx = ContextSlice(rng.normal(size=(6, 2)), rng.uniform(size=6))
            s, state = mle_ucb_step(state, ctx, cfg, 3, rng)
            assert len(s) == 1
            assert state.theta_pilot is None and state.theta_hat is None
            state = record_observation(state, ctx, s, NO_PURCHASE)
        s, state = mle_ucb_step(state, ctx, cfg, 3, rng)
        assert state.theta_pilot is not None and state.theta_hat is not None

    def test_pure_exploitation_with_brute_maximizes_estimated_revenue(self, rng):
        theta0 = np.array([0.5, -0.4])
        pol = MleUcbPolicy(UcbConfig(t0=15, tau=math.inf, omega=0.0, solver="brute"), 3, 2)
        for t in range(40):
            ctx = ContextSlice(rng.normal(size=(6, 2)), rng.uniform(size=6))
            s = pol.select(ctx, rng)
            if t >= 15:
                theta_hat = pol.state.theta_hat
                best = max(expected_revenue(theta_hat, ctx, c) for n in range(4) for c in combinations(range(6), n))
                np.testing.assert_allclose(expected_revenue(theta_hat, ctx, s), best, atol=1e-12)
            pol.observe(ctx, s, sample_purchase(theta0, ctx, s, rng))

    def test_every_choice_maximizes_the_bound(self, rng):
        theta0 = np.array([0.7])
        pol = MleUcbPolicy(UcbConfig(t0=8, tau=math.inf, omega=1.0, solver="brute"), 2, 1)
        for t in range(60):
            ctx = ContextSlice(rng.normal(size=(5, 1)), rng.uniform(size=5))
            s = pol.select(ctx, rng)
            if t >= 8:
                st = pol.state
                fisher = st.fisher + pol.config.ridge * np.eye(1)
                chosen = ucb_bound(st.theta_hat, fisher, ctx, s, 1.0)
                for n in range(3):
                    for c in combinations(range(5), n):
                        assert chosen >= ucb_bound(st.theta_hat, fisher, ctx, c, 1.0) - 1e-9
            pol.observe(ctx, s, sample_purchase(theta0, ctx, s, rng))

    def test_extreme_estimate_gives_finite_subproblem(self, rng):
        # separable exploration data can push the pilot to norm ~1e3
        from mnl_ucb.policy import build_subproblem

        d = 5
        cfg = UcbConfig(t0=1, tau=0.2, omega=7.0)
        theta = np.zeros(d)
        theta[0] = 900.0
        state = UcbState.initial(d, 4)
        state.theta_hat = theta
        state.fisher = np.diag([2e-6, 0.02, 0.05, 0.4, 0.5])
        ctx = ContextSlice(np.vstack([[0.8, 0, 0, 0, 0], rng.normal(size=(9, d))]), rng.uniform(0.5, 0.8, size=10))
        sub = build_subproblem(state, ctx, cfg, 4)
        assert np.all(np.isfinite(sub.utilities)) and np.all(np.isfinite(sub.x))
        g = A.greedy_swap(sub, rng)
        b = A.brute_force(sub)
        assert np.isfinite(g.objective) and g.objective <= b.objective + 1e-12

    @pytest.mark.parametrize("solver", ["greedy", "brute", "dp_univariate", "dp_multivariate"])
    def test_solvers_run(self, rng, solver):
        d = 1 if solver == "dp_univariate" else 2
        cfg = UcbConfig(t0=40, tau=1.0, omega=1.0, solver=solver, n_directions=4)
        pol = MleUcbPolicy(cfg, 2, d)
        theta0 = np.full(d, 0.3)
        for _ in range(50):
            ctx = ContextSlice(rng.normal(size=(5, d)), rng.uniform(size=5))
            s = pol.select(ctx, rng)
            assert len(s) <= 2
            pol.observe(ctx, s, sample_purchase(theta0, ctx, s, rng))
        assert pol.state.faults == []

    def test_solver_failure_falls_back_to_greedy(self, rng):
        cfg = UcbConfig(t0=3, tau=1.0, omega=1.0, solver="dp_univariate")
        pol = MleUcbPolicy(cfg, 2, 2)
        for _ in range(5):
            ctx = ContextSlice(rng.normal(size=(5, 2)), rng.uniform(size=5))
            s = pol.select(ctx, rng)
            pol.observe(ctx, s, NO_PURCHASE)
        assert len(pol.state.faults) == 2 and "d = 1" in pol.state.faults[0]["error"]

    def test_refresh_every_reuses_estimate(self, rng):
        cfg = UcbConfig(t0=5, tau=math.inf, omega=1.0, refresh_every=4)
        pol = MleUcbPolicy(cfg, 2, 2)
        estimates = []
        theta0 = np.array([0.4, 0.2])
        for _ in range(13):
            ctx = ContextSlice(rng.normal(size=(5, 2)), rng.uniform(size=5))
            s = pol.select(ctx, rng)
            estimates.append(None if pol.state.theta_hat is None else pol.state.theta_hat.copy())
            pol.observe(ctx, s, sample_purchase(theta0, ctx, s, rng))
        # refreshed at t = 6 and t = 10
        np.testing.assert_array_equal(estimates[5], estimates[8])
        assert not np.array_equal(estimates[8], estimates[9])
        assert pol.metadata()["refresh_every"] == 4

    def test_build_subproblem_needs_estimates(self, rng):
        pol = MleUcbPolicy(UcbConfig(t0=3, tau=1.0, omega=1.0), 2, 2)
        with pytest.raises(RuntimeError):
            pol.build_subproblem(ContextSlice(np.ones((3, 2)), [0.5] * 3))

    def test_metadata_keeps_json_safe_radius(self):
        assert MleUcbPolicy(UcbConfig(t0=3, tau=math.inf, omega=1.0), 2, 2).metadata()["tau"] is None


    @pytest.mark.slow
    def test_bound_covers_true_revenue(self):
        # theory-mode width, unconstrained local MLE; at most 5% of periods may undercover
        from mnl_ucb.sim import gen_slice_section6, gen_theta0

        N, K, d, T = 20, 4, 3, 600
        misses = total = 0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            theta0 = gen_theta0(d, rng)
            cfg = default_hyperparams(T, d, K, "theory", tau=math.inf)
            pol = MleUcbPolicy(cfg, K, d)
            for t in range(T):
                ctx = gen_slice_section6(theta0, N, d, rng)
                s = pol.select(ctx, rng)
                if t >= cfg.t0:
                    st = pol.state
                    bound = ucb_bound(st.theta_hat, st.fisher + cfg.ridge * np.eye(d), ctx, s, cfg.omega)
                    misses += bound < expected_revenue(theta0, ctx, s)
                    total += 1
                pol.observe(ctx, s, sample_purchase(theta0, ctx, s, rng))
        assert misses / total <= 0.05


class TestBaseline:
    def test_first_epoch_uses_capped_widths(self):
        state = BaselineState.initial(6)
        opt = optimistic_utilities(state, BaselineConfig(), 1)
        np.testing.assert_array_equal(opt, np.ones(6))
        ctx = ContextSlice(np.zeros((6, 1)), [0.1, 0.9, 0.3, 0.8, 0.2, 0.7])
        s, state = mnl_ucb_baseline_step(state, ctx, 3)
        # equal optimistic utilities: the highest revenues win
        assert s == (1, 3, 5)

    def test_epoch_repeats_until_no_purchase(self):
        state = BaselineState.initial(4)
        ctx = ContextSlice(np.zeros((4, 1)), [0.5, 0.6, 0.7, 0.8])
        s, state = mnl_ucb_baseline_step(state, ctx, 2)
        state = baseline_observe(state, s, s[0])
        s2, state = mnl_ucb_baseline_step(state, ctx, 2)
        assert s2 == s and state.epoch_index == 1
        state = baseline_observe(state, s, NO_PURCHASE)
        assert state.current is None
        np.testing.assert_array_equal(state.purchases[list(s)], [1, 0])
        np.testing.assert_array_equal(state.epochs[list(s)], [1, 1])

    def test_always_purchased_item_has_unit_mean(self):
        state = BaselineState.initial(3)
        for _ in range(100):
            state.current = (0,)
            state = baseline_observe(state, (0,), 0)
            state = baseline_observe(state, (0,), NO_PURCHASE)
        assert state.mean_utilities()[0] == 1.0

    def test_widths_follow_formula(self):
        state = BaselineState.initial(4)
        state.purchases[:] = [2, 0, 5, 1]
        state.epochs[:] = [4, 2, 10, 0]
        cfg = BaselineConfig(width_scale=48.0, bonus_scale=48.0, utility_cap=np.inf)
        opt = optimistic_utilities(state, cfg, 3)
        log_term = math.log(math.sqrt(4) * 3 + 1)
        vbar = np.array([0.5, 0.0, 0.5])
        n = np.array([4, 2, 10])
        np.testing.assert_allclose(opt[:3], vbar + np.sqrt(vbar * 48 * log_term / n) + 48 * log_term / n)
        assert opt[3] == np.inf

    def test_regret_sublinear_on_stationary_instance(self):
        from mnl_ucb.sim import InstanceConfig, PolicySpec, run_episode

        cfg = InstanceConfig(N=10, K=3, d=3, T=5000, feature_mode="fixed_features")
        tr = run_episode(cfg, PolicySpec(kind="mnl-ucb").build(cfg), 3)
        assert tr.average_regret(5000) < tr.average_regret(500)

    def test_policy_object(self, rng):
        pol = MnlUcbBaseline(5, 2)
        ctx = ContextSlice(np.zeros((5, 1)), rng.uniform(size=5))
        s = pol.select(ctx, rng)
        pol.observe(ctx, s, NO_PURCHASE)
        assert pol.metadata()["epochs"] == 1
