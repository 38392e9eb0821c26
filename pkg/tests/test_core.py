import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mnl_ucb.core import (NO_PURCHASE, ContextSlice, ObservationLog, as_assortment, choice_probabilities,
                          cumulative_fisher, empirical_fisher_m, expected_revenue, instance_stats, log_likelihood,
                          sample_purchase)
from mnl_ucb.sim import gen_slice_section6, gen_theta0


def zero_util_slice(n=3, d=2, revenues=None):
    # rows orthogonal to theta = (0, 1): every utility is zero
    feats = np.zeros((n, d))
    feats[:, 0] = np.arange(1, n + 1)
    return ContextSlice(feats, np.full(n, 0.6) if revenues is None else revenues)


@st.composite
def triples(draw, max_d=4, max_n=6):
    d = draw(st.integers(1, max_d))
    n = draw(st.integers(1, max_n))
    seed = draw(st.integers(0, 2**31))
    scale = draw(st.sampled_from([0.1, 1.0, 5.0, 30.0]))
    rng = np.random.default_rng(seed)
    ctx = ContextSlice(rng.normal(size=(n, d)), rng.uniform(size=n))
    k = draw(st.integers(0, n))
    s = tuple(sorted(rng.choice(n, size=k, replace=False).tolist()))
    return rng.normal(size=d) * scale, ctx, s


class TestContextSlice:
    def test_vector_becomes_column(self):
        ctx = ContextSlice([1.0, 2.0], [0.1, 0.2])
        assert ctx.features.shape == (2, 1)
        assert ctx.dim == 1 and ctx.n_items == 2

    @pytest.mark.parametrize("feats,revs", [
        (np.ones((2, 2)), [0.1]),
        (np.ones((2, 2)), [0.1, 1.5]),
        (np.ones((2, 2)), [-0.1, 0.5]),
        (np.array([[np.nan, 0.0]]), [0.5]),
        (np.ones((2, 2, 2)), [0.1, 0.2]),
    ])
    def test_rejects_bad_input(self, feats, revs):
        with pytest.raises(ValueError):
            ContextSlice(feats, revs)

    def test_arrays_are_read_only(self):
        ctx = zero_util_slice()
        with pytest.raises(ValueError):
            ctx.features[0, 0] = 3.0


class TestAssortment:
    def test_sorted_tuple(self):
        assert as_assortment([3, 1], 5) == (1, 3)

    @pytest.mark.parametrize("items,cap", [([1, 1], None), ([5], None), ([-1], None), ([0, 1, 2], 2)])
    def test_rejects(self, items, cap):
        with pytest.raises(ValueError):
            as_assortment(items, 5, cap)


class TestChoiceProbabilities:
    theta = np.array([0.0, 1.0])

    def test_empty_assortment(self):
        assert choice_probabilities(self.theta, zero_util_slice(), ()) == {NO_PURCHASE: 1.0}

    def test_single_zero_utility(self):
        p = choice_probabilities(self.theta, zero_util_slice(), (1,))
        assert p == pytest.approx({1: 0.5, NO_PURCHASE: 0.5})

    def test_two_zero_utilities(self):
        p = choice_probabilities(self.theta, zero_util_slice(), (0, 2))
        assert p == pytest.approx({0: 1 / 3, 2: 1 / 3, NO_PURCHASE: 1 / 3})

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            choice_probabilities(np.zeros(3), zero_util_slice(), (0,))

    def test_huge_utilities_do_not_overflow(self):
        ctx = ContextSlice(np.array([[800.0], [799.0]]), [0.5, 0.5])
        p = choice_probabilities([1.0], ctx, (0, 1))
        np.testing.assert_allclose(p[0] / p[1], math.e, rtol=1e-12)
        assert p[NO_PURCHASE] >= 0.0

    @given(triples())
    def test_normalized_and_positive(self, tr):
        theta, ctx, s = tr
        p = choice_probabilities(theta, ctx, s)
        assert set(p) == set(s) | {NO_PURCHASE}
        assert abs(sum(p.values()) - 1.0) <= 1e-12
        assert all(v >= 0 for v in p.values())

    @given(triples())
    def test_ratio_matches_utility_difference(self, tr):
        theta, ctx, s = tr
        if len(s) < 2:
            return
        theta = theta / max(1.0, np.abs(ctx.features @ theta).max()) * 3
        p = choice_probabilities(theta, ctx, s)
        i, j = s[0], s[1]
        np.testing.assert_allclose(np.log(p[i] / p[j]), (ctx.features[i] - ctx.features[j]) @ theta, atol=1e-9)


class TestExpectedRevenue:
    theta = np.array([0.0, 1.0])

    def test_forced_values(self):
        ctx = zero_util_slice(revenues=[0.5, 0.6, 0.8])
        assert expected_revenue(self.theta, ctx, ()) == 0.0
        assert expected_revenue(self.theta, ctx, (1,)) == pytest.approx(0.3)
        assert expected_revenue(self.theta, ctx, (0, 2)) == pytest.approx((0.5 + 0.8) / 3)

    @given(triples())
    def test_bounded_by_max_revenue(self, tr):
        theta, ctx, s = tr
        rev = expected_revenue(theta, ctx, s)
        top = ctx.revenues[list(s)].max() if s else 0.0
        assert -1e-15 <= rev <= top + 1e-12


class TestSamplePurchase:
    def test_empty(self, rng):
        assert sample_purchase([0.0, 1.0], zero_util_slice(), (), rng) == NO_PURCHASE

    def test_monte_carlo_frequency(self):
        rng = np.random.default_rng(7)
        ctx = zero_util_slice()
        draws = [sample_purchase([0.0, 1.0], ctx, (2,), rng) for _ in range(100_000)]
        assert abs(np.mean(np.array(draws) == 2) - 0.5) <= 0.01

    def test_same_seed_same_draws(self):
        ctx = zero_util_slice()
        a = [sample_purchase([0.0, 1.0], ctx, (0, 1), np.random.default_rng(3)) for _ in range(5)]
        b = [sample_purchase([0.0, 1.0], ctx, (0, 1), np.random.default_rng(3)) for _ in range(5)]
        assert a == b


def neg_log_prob(theta, feats, i):
    util = np.concatenate([[0.0], feats @ theta])
    m = util.max()
    return m + math.log(np.exp(util - m).sum()) - util[i + 1]


def fd_hessian(f, x, h=1e-4):
    d = x.shape[0]
    out = np.empty((d, d))
    eye = np.eye(d) * h
    for a in range(d):
        for b in range(d):
            out[a, b] = (f(x + eye[a] + eye[b]) - f(x + eye[a] - eye[b]) - f(x - eye[a] + eye[b])
                         + f(x - eye[a] - eye[b])) / (4 * h * h)
    return out


class TestEmpiricalFisher:
    def test_empty(self):
        np.testing.assert_array_equal(empirical_fisher_m([0.0, 1.0], zero_util_slice(), ()), np.zeros((2, 2)))

    def test_scalar_forced_value(self):
        ctx = ContextSlice([[2.0]], [0.5])
        np.testing.assert_allclose(empirical_fisher_m([0.0], ctx, (0,)), [[1.0]])

    def test_finite_difference_hessian(self, rng):
        for _ in range(50):
            d, n = int(rng.integers(1, 6)), int(rng.integers(1, 7))
            ctx = ContextSlice(rng.normal(size=(n, d)), rng.uniform(size=n))
            theta = rng.normal(size=d)
            s = tuple(sorted(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False).tolist()))
            m = empirical_fisher_m(theta, ctx, s)
            feats = ctx.features[list(s)]
            for i in (-1, int(rng.integers(len(s)))):
                h = fd_hessian(lambda th: neg_log_prob(th, feats, i), theta)
                np.testing.assert_allclose(m, h, atol=1e-5)

    @given(triples())
    def test_symmetric_psd(self, tr):
        theta, ctx, s = tr
        m = empirical_fisher_m(theta, ctx, s)
        np.testing.assert_array_equal(m, m.T)
        assert np.linalg.eigvalsh(m)[0] >= -1e-9 * max(1.0, np.abs(m).max())


def random_log(rng, n=40, d=3, n_items=6, k=3):
    log = ObservationLog(d, max_size=k)
    theta = rng.normal(size=d)
    entries = []
    for _ in range(n):
        ctx = ContextSlice(rng.normal(size=(n_items, d)), rng.uniform(size=n_items))
        s = tuple(sorted(rng.choice(n_items, size=int(rng.integers(1, k + 1)), replace=False).tolist()))
        buy = sample_purchase(theta, ctx, s, rng)
        log.append(ctx, s, buy)
        entries.append((ctx, s, buy))
    return log, entries


class TestObservationLog:
    def test_append_validates(self):
        log = ObservationLog(2, max_size=2)
        ctx = zero_util_slice()
        with pytest.raises(ValueError):
            log.append(ctx, (0,), 1)
        with pytest.raises(ValueError):
            log.append(ContextSlice(np.ones((2, 3)), [0.1, 0.2]), (0,), 0)

    def test_grows_beyond_hints(self, rng):
        log = ObservationLog(2, max_size=1, capacity_hint=1)
        ctx = ContextSlice(rng.normal(size=(5, 2)), rng.uniform(size=5))
        for t in range(9):
            log.append(ctx, tuple(range(1 + t % 4)), NO_PURCHASE)
        feats, sizes, chosen = log.arrays()
        assert len(log) == 9 and feats.shape[1] == 4
        np.testing.assert_array_equal(sizes, [1 + t % 4 for t in range(9)])
        ctx0, s0, buy0 = log.entry(0)
        np.testing.assert_array_equal(ctx0.features, ctx.features[[0]])
        assert s0 == (0,) and buy0 == NO_PURCHASE

    def test_entry_roundtrip(self, rng):
        log, entries = random_log(rng)
        for (ctx, s, buy), (lctx, ls, lbuy) in zip(entries, log):
            np.testing.assert_array_equal(lctx.features, ctx.features[list(s)])
            np.testing.assert_array_equal(lctx.revenues, ctx.revenues[list(s)])
            assert ls == tuple(range(len(s)))
            assert lbuy == (NO_PURCHASE if buy == NO_PURCHASE else s.index(buy))

    def test_singleton_flag(self):
        log = ObservationLog(2, max_size=2)
        ctx = zero_util_slice()
        log.append(ctx, (0,), 0)
        assert log.is_singleton()
        log.append(ctx, (0, 1), NO_PURCHASE)
        assert not log.is_singleton()


class TestLogLikelihood:
    def test_single_entry(self):
        log = ObservationLog(2)
        log.append(zero_util_slice(), (1,), 1)
        assert log_likelihood([0.0, 1.0], log) == pytest.approx(math.log(0.5))

    def test_additive(self):
        log = ObservationLog(2)
        log.append(zero_util_slice(), (1,), 1)
        log.append(zero_util_slice(), (1,), 1)
        assert log_likelihood([0.0, 1.0], log) == pytest.approx(2 * math.log(0.5))

    def test_matches_product_of_probabilities(self, rng):
        log, entries = random_log(rng)
        theta = rng.normal(size=3)
        direct = sum(math.log(choice_probabilities(theta, ctx, s)[buy]) for ctx, s, buy in entries)
        np.testing.assert_allclose(log_likelihood(theta, log), direct, rtol=1e-12)

    def test_empty_log(self):
        with pytest.raises(ValueError):
            log_likelihood([0.0], ObservationLog(1))


class TestCumulativeFisher:
    def test_empty_log(self):
        np.testing.assert_array_equal(cumulative_fisher([0.0, 0.0], ObservationLog(2), ridge=0.0), np.zeros((2, 2)))

    def test_sum_of_entries_plus_ridge_once(self, rng):
        log, entries = random_log(rng, n=7)
        theta = rng.normal(size=3)
        expect = 0.3 * np.eye(3) + sum(empirical_fisher_m(theta, ctx, s) for ctx, s, _ in entries)
        np.testing.assert_allclose(cumulative_fisher(theta, log, ridge=0.3), expect, atol=1e-12)

    def test_single_entry(self, rng):
        log, entries = random_log(rng, n=1)
        theta = rng.normal(size=3)
        ctx, s, _ = entries[0]
        np.testing.assert_allclose(cumulative_fisher(theta, log, ridge=1e-6),
                                   1e-6 * np.eye(3) + empirical_fisher_m(theta, ctx, s), atol=1e-14)


class TestInstanceStats:
    def test_all_zero_features(self):
        st_ = instance_stats([1.0, 0.0], [ContextSlice(np.zeros((3, 2)), [0.5] * 3)], 1)
        assert (st_.nu, st_.rho, st_.lambda0) == (0.0, 1.0, 0.0)

    def test_single_feature(self):
        st_ = instance_stats([0.0, 0.0], [ContextSlice([[1.0, 0.0]], [0.5])], 1)
        assert (st_.nu, st_.rho, st_.lambda0) == (1.0, 1.0, 0.0)

    def test_exact_rho_pairs_extreme_utilities(self):
        ctx = ContextSlice([[1.0], [-2.0]], [0.5, 0.5])
        st_ = instance_stats([1.0], [ctx], 1, exact_rho=True, capacity=2)
        assert st_.rho == pytest.approx(math.e**2)
        assert st_.rho_exact == pytest.approx(math.e**3)

    def test_section6_features_have_positive_lambda0(self):
        rng = np.random.default_rng(0)
        theta0 = gen_theta0(5, rng)
        slices = [gen_slice_section6(theta0, 100, 5, rng) for _ in range(100)]
        st_ = instance_stats(theta0, slices, 100)
        assert st_.lambda0 > 0
        np.testing.assert_allclose(st_.nu, 2.0)
