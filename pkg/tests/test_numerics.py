"""Numeric primitives: stability, hand values, and seeded-stream contracts."""

import numpy as np
import pytest

from airbn.numerics import (
    MEAN_EPS,
    RandomStream,
    bernoulli_logpmf,
    bernoulli_sample,
    logsumexp,
    mix_ids,
    normalize_log_weights,
    normalize_log_weights_rows,
    sigmoid,
)


class TestLogsumexp:
    def test_two_equal_terms(self):
        assert logsumexp(np.array([0.0, 0.0])) == pytest.approx(np.log(2.0), abs=1e-12)

    def test_single_entry_is_identity(self):
        for x in (-3.7, 0.0, 12.5):
            assert logsumexp(np.array([x])) == x

    def test_no_overflow_on_large_entries(self):
        assert logsumexp(np.array([1000.0, 1000.0])) == pytest.approx(
            1000.0 + np.log(2.0), abs=1e-12
        )

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            v = rng.normal(size=rng.integers(1, 20))
            c = rng.normal() * 100
            assert logsumexp(v + c) == pytest.approx(logsumexp(v) + c, rel=1e-12)

    def test_partial_neg_inf_ok(self):
        assert logsumexp(np.array([0.0, -np.inf])) == pytest.approx(0.0, abs=1e-12)

    def test_all_neg_inf_raises(self):
        with pytest.raises(ValueError, match="degenerate weight vector"):
            logsumexp(np.array([-np.inf, -np.inf]))

    def test_empty_raises(self):
        with pytest.raises(ValueError, match="degenerate"):
            logsumexp(np.array([]))


class TestNormalizeLogWeights:
    def test_equal_weights(self):
        w, deg = normalize_log_weights(np.log([1.0, 1.0]))
        np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-15)
        assert not deg

    def test_three_to_one(self):
        # hand evaluation: exp(ln 3) / (3 + 1) = 0.75
        w, deg = normalize_log_weights(np.log([3.0, 1.0]))
        np.testing.assert_allclose(w, [0.75, 0.25], atol=1e-15)
        assert not deg

    def test_single_support_point(self):
        w, deg = normalize_log_weights(np.array([0.0, -np.inf]))
        np.testing.assert_allclose(w, [1.0, 0.0])
        assert not deg

    def test_sums_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            lw = rng.normal(size=rng.integers(1, 30)) * 50
            w, _ = normalize_log_weights(lw)
            assert abs(w.sum() - 1.0) < 1e-12
            w2, _ = normalize_log_weights(lw + 123.456)
            np.testing.assert_allclose(w, w2, atol=1e-12)

    def test_degenerate_falls_back_to_uniform(self):
        w, deg = normalize_log_weights(np.array([-np.inf, -np.inf, -np.inf]))
        assert deg
        np.testing.assert_allclose(w, [1 / 3] * 3)
        w, deg = normalize_log_weights(np.array([0.0, np.nan]))
        assert deg

    def test_rowwise_matches_single(self):
        rng = np.random.default_rng(4)
        lw = rng.normal(size=(6, 9)) * 10
        w_rows, dead = normalize_log_weights_rows(lw)
        assert not dead.any()
        for i in range(6):
            w, _ = normalize_log_weights(lw[i])
            np.testing.assert_allclose(w_rows[i], w, atol=1e-14)

    def test_rowwise_dead_row_isolated(self):
        lw = np.array([[0.0, 1.0], [-np.inf, -np.inf]])
        w, dead = normalize_log_weights_rows(lw)
        assert list(dead) == [False, True]
        np.testing.assert_allclose(w[1], [0.5, 0.5])
        assert abs(w[0].sum() - 1.0) < 1e-12


class TestBernoulliLogpmf:
    def test_uniform(self):
        v = bernoulli_logpmf(np.array([1.0, 0.0]), np.array([0.5, 0.5]))
        assert v == pytest.approx(2 * np.log(0.5), abs=1e-12)

    def test_near_deterministic(self):
        v = bernoulli_logpmf(np.array([1.0]), np.array([1.0 - MEAN_EPS]))
        assert v == pytest.approx(np.log1p(-MEAN_EPS), abs=1e-15)

    def test_hand_value(self):
        v = bernoulli_logpmf(np.array([1.0, 1.0, 0.0]), np.array([0.9, 0.8, 0.3]))
        assert v == pytest.approx(np.log(0.9) + np.log(0.8) + np.log(0.7), abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            bernoulli_logpmf(np.array([1.0, 0.0]), np.array([0.5]))

    @pytest.mark.parametrize("h", [1, 3, 7, 10])
    def test_total_mass_is_one(self, h):
        rng = np.random.default_rng(h)
        mu = rng.uniform(0.05, 0.95, size=h)
        bits = ((np.arange(2**h)[:, None] >> np.arange(h)) & 1).astype(float)
        total = np.exp(bernoulli_logpmf(bits, mu)).sum()
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_broadcasts_over_rows(self):
        bits = np.array([[1.0, 0.0], [0.0, 0.0]])
        mu = np.array([0.25, 0.75])
        v = bernoulli_logpmf(bits, mu)
        assert v.shape == (2,)
        assert v[0] == pytest.approx(np.log(0.25) + np.log(0.25))


class TestBernoulliSample:
    def test_degenerate_means(self):
        rng = RandomStream(1)
        assert bernoulli_sample(np.zeros(50), rng).sum() == 0
        assert bernoulli_sample(np.ones(50), rng).sum() == 50

    def test_law_of_large_numbers(self):
        rng = RandomStream(2)
        draws = bernoulli_sample(np.full((100_000, 4), 0.5), rng)
        np.testing.assert_allclose(draws.mean(axis=0), 0.5, atol=0.01)

    def test_identical_streams_replay(self):
        a = bernoulli_sample(np.full(1000, 0.3), RandomStream(9, 4))
        b = bernoulli_sample(np.full(1000, 0.3), RandomStream(9, 4))
        np.testing.assert_array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = bernoulli_sample(np.full(1000, 0.5), RandomStream(9, 4))
        b = bernoulli_sample(np.full(1000, 0.5), RandomStream(9, 5))
        assert not np.array_equal(a, b)


class TestRandomStream:
    def test_substream_is_stable(self):
        s = RandomStream(7)
        assert s.substream(1, 2).stream_id == s.substream(1, 2).stream_id
        assert s.substream(1, 2).stream_id != s.substream(2, 1).stream_id

    def test_mix_ids_no_trivial_collisions(self):
        seen = {mix_ids(a, b) for a in range(40) for b in range(40)}
        assert len(seen) == 1600

    def test_substream_does_not_consume_parent(self):
        s = RandomStream(7)
        first = s.uniform(3)
        t = RandomStream(7)
        _ = t.substream(5).uniform(10)
        np.testing.assert_array_equal(first, t.uniform(3))


class TestSigmoid:
    def test_extremes_and_midpoint(self):
        assert sigmoid(np.array([0.0]))[0] == 0.5
        assert sigmoid(np.array([1000.0]))[0] == 1.0
        assert sigmoid(np.array([-1000.0]))[0] == 0.0

    def test_matches_definition(self):
        z = np.linspace(-30, 30, 101)
        np.testing.assert_allclose(sigmoid(z), 1.0 / (1.0 + np.exp(-z)), rtol=1e-12)
