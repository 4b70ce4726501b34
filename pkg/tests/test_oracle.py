"""Enumeration oracle: exact marginals, posteriors, bounds, KLs, gradients.

The oracle itself is validated against independently hand-written pmfs
on 1-2 bit models, so the shared code paths cannot hide a shared bug.
"""

import numpy as np
import pytest

from airbn.model import (
    FactorizedPrior,
    GenerativeParams,
    LayerParams,
    init_generative,
    joint_logp,
)
from airbn.numerics import sigmoid
from airbn.oracle import (
    bit_patterns,
    exact_grad,
    exact_kl,
    exact_L1,
    exact_logp,
    exact_logp_rows,
    exact_posterior,
    finite_difference,
    latent_configs,
)
from airbn.recognition import VariationalState, initial_means
from conftest import random_gen, random_rec


def one_unit_model(w, b_vis, b_prior):
    """1 visible, 1 latent unit; every quantity computable by hand."""
    return GenerativeParams(
        layers=[LayerParams(W=np.array([[w]]), b=np.array([b_vis]))],
        prior=FactorizedPrior(b=np.array([b_prior])),
    )


def hand_logp_x1(w, b_vis, b_prior):
    """p(x=1) for the 1-unit model, from first principles."""
    p_h1 = 1 / (1 + np.exp(-b_prior))
    p_x1_h1 = 1 / (1 + np.exp(-(w + b_vis)))
    p_x1_h0 = 1 / (1 + np.exp(-b_vis))
    return np.log(p_h1 * p_x1_h1 + (1 - p_h1) * p_x1_h0)


class TestExactLogp:
    def test_independence_model(self):
        # zero weights: x independent of h, logp = bernoulli pmf at sigma(b)
        gen = one_unit_model(0.0, 0.4, -0.3)
        got = exact_logp(gen, np.array([1.0]))
        assert got == pytest.approx(np.log(sigmoid(np.array([0.4]))[0]), abs=1e-12)

    def test_two_term_mixture_by_hand(self):
        w, bv, bp = 1.7, -0.5, 0.9
        gen = one_unit_model(w, bv, bp)
        assert exact_logp(gen, np.array([1.0])) == pytest.approx(
            hand_logp_x1(w, bv, bp), abs=1e-12
        )

    @pytest.mark.parametrize("dims", [[3, 4], [4, 2, 3]])
    def test_marginal_normalizes_over_x(self, dims):
        gen = random_gen(13, dims, scale=1.2)
        total = sum(np.exp(exact_logp(gen, x)) for x in bit_patterns(dims[0]))
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_cap_refused(self):
        gen = init_generative([2, 21], "factorized")
        with pytest.raises(ValueError, match="enumeration refused"):
            exact_logp(gen, np.zeros(2))

    def test_rows_variant_agrees(self):
        gen = random_gen(14, [3, 2, 2], scale=1.1)
        xs = bit_patterns(3)
        rows = exact_logp_rows(gen, xs)
        singles = np.array([exact_logp(gen, x) for x in xs])
        np.testing.assert_allclose(rows, singles, atol=1e-10)

    def test_chunked_enumeration_agrees(self):
        gen = random_gen(15, [2, 9], scale=0.8)
        x = np.array([1.0, 0.0])
        # force multi-chunk enumeration
        parts = []
        from airbn.oracle import iter_latent_configs
        from airbn.numerics import logsumexp

        for hs in iter_latent_configs(gen.latent_dims, chunk_bits=4):
            parts.append(logsumexp(joint_logp(gen, x, hs)))
        chunked = logsumexp(np.asarray(parts))
        assert chunked == pytest.approx(exact_logp(gen, x), abs=1e-12)


class TestExactPosterior:
    def test_exchangeable_units_equal_means(self):
        w = np.array([[1.1, 1.1]])
        gen = GenerativeParams(
            layers=[LayerParams(W=w, b=np.array([0.2]))],
            prior=FactorizedPrior(b=np.zeros(2)),
        )
        summary = exact_posterior(gen, np.array([1.0]))
        assert summary.posterior_mean[0][0] == pytest.approx(
            summary.posterior_mean[0][1], abs=1e-12
        )

    def test_independence_gives_prior_marginals(self):
        gen = one_unit_model(0.0, 0.3, 0.7)
        summary = exact_posterior(gen, np.array([1.0]))
        assert summary.posterior_mean[0][0] == pytest.approx(
            sigmoid(np.array([0.7]))[0], abs=1e-12
        )

    def test_one_unit_bayes_by_hand(self):
        w, bv, bp = 2.0, -1.0, 0.5
        gen = one_unit_model(w, bv, bp)
        p_h1 = 1 / (1 + np.exp(-bp))
        p_x1_h1 = 1 / (1 + np.exp(-(w + bv)))
        p_x1 = np.exp(hand_logp_x1(w, bv, bp))
        expected = p_x1_h1 * p_h1 / p_x1
        summary = exact_posterior(gen, np.array([1.0]))
        assert summary.posterior_mean[0][0] == pytest.approx(expected, abs=1e-12)

    def test_posterior_sums_to_one(self, small_gen):
        summary = exact_posterior(small_gen, np.array([1.0, 0.0, 1.0, 1.0]))
        assert summary.posterior.sum() == pytest.approx(1.0, abs=1e-10)
        for m in summary.posterior_mean:
            assert np.all(m >= 0.0) and np.all(m <= 1.0)


class TestExactL1AndKL:
    def _state_from_posterior(self, gen, x):
        summary = exact_posterior(gen, x)
        return VariationalState(mu=[m[None, :].copy() for m in summary.posterior_mean])

    def test_tight_bound_at_posterior_one_unit(self):
        gen = one_unit_model(1.5, -0.4, 0.2)
        x = np.array([1.0])
        state = self._state_from_posterior(gen, x)
        # a 1-unit factorized q can represent the exact posterior
        assert exact_L1(gen, x, state) == pytest.approx(exact_logp(gen, x), abs=1e-10)
        assert exact_kl(gen, x, state, direction="exclusive") == pytest.approx(0.0, abs=1e-10)
        assert exact_kl(gen, x, state, direction="inclusive") == pytest.approx(0.0, abs=1e-10)

    def test_bound_below_logp_and_gap_is_kl(self, small_gen):
        rec = random_rec(11, small_gen)
        x = np.array([[1.0, 0.0, 0.0, 1.0]])
        state = initial_means(rec, x - 0.5)
        l1 = exact_L1(small_gen, x, state, 0)
        logp = exact_logp(small_gen, x[0])
        kl = exact_kl(small_gen, x, state, 0, "exclusive")
        assert l1 <= logp + 1e-12
        assert logp - l1 == pytest.approx(kl, abs=1e-10)

    def test_kl_nonnegative_random(self):
        rng = np.random.default_rng(8)
        for trial in range(40):
            gen = random_gen(100 + trial, [2, 3], scale=1.0)
            state = VariationalState(mu=[rng.uniform(0.05, 0.95, (1, 3))])
            x = np.array([[1.0, 0.0]])
            assert exact_kl(gen, x, state, 0, "exclusive") >= -1e-12
            assert exact_kl(gen, x, state, 0, "inclusive") >= -1e-12

    def test_one_bit_kl_by_hand(self):
        # q = 0.5 vs p = 0.75 on a single bit
        gen = one_unit_model(0.0, 0.0, np.log(3.0))  # posterior = prior = 0.75
        state = VariationalState(mu=[np.array([[0.5]])])
        x = np.array([[1.0]])
        exc = 0.5 * np.log(0.5 / 0.75) + 0.5 * np.log(0.5 / 0.25)
        inc = 0.75 * np.log(0.75 / 0.5) + 0.25 * np.log(0.25 / 0.5)
        assert exact_kl(gen, x, state, 0, "exclusive") == pytest.approx(exc, abs=1e-12)
        assert exact_kl(gen, x, state, 0, "inclusive") == pytest.approx(inc, abs=1e-12)


class TestExactGrad:
    def test_score_identity_zero(self, small_gen):
        rec = random_rec(12, small_gen)
        x = np.array([[1.0, 1.0, 0.0, 0.0]])
        state = initial_means(rec, x - 0.5)
        score = exact_grad(
            small_gen, x, "score_phi", state, rec=rec, x_centered=x - 0.5
        )
        for g in score.values():
            np.testing.assert_allclose(g, 0.0, atol=1e-10)

    def test_matches_finite_differences(self, small_gen):
        rec = random_rec(12, small_gen)
        x = np.array([[0.0, 1.0, 1.0, 0.0]])
        state = initial_means(rec, x - 0.5)
        exact = exact_grad(small_gen, x, "L1_theta", state)
        fd = finite_difference(
            lambda: exact_L1(small_gen, x, state, 0), dict(small_gen.arrays())
        )
        for name in exact:
            np.testing.assert_allclose(exact[name], fd[name], atol=1e-6)

    def test_independence_model_closed_form(self):
        # x independent of h: visible-bias gradient is x - sigma(b)
        gen = one_unit_model(0.0, 0.35, -0.1)
        state = VariationalState(mu=[np.array([[0.6]])])
        x = np.array([[1.0]])
        g = exact_grad(gen, x, "L1_theta", state)
        assert g["layer0.b"][0] == pytest.approx(
            1.0 - sigmoid(np.array([0.35]))[0], abs=1e-12
        )

    def test_selfnorm_uses_posterior_weights(self, tiny_gen):
        x = np.array([[1.0, 0.0]])
        state = VariationalState(mu=[np.full((1, 2), 0.5)])
        g = exact_grad(tiny_gen, x, "LK_selfnorm_theta", state)
        # prior-bias gradient must equal posterior mean minus prior mean
        post = exact_posterior(tiny_gen, x[0])
        expected = post.posterior_mean[0] - sigmoid(tiny_gen.prior.b)
        np.testing.assert_allclose(g["prior.b"], expected, atol=1e-10)


class TestEnumerationOrder:
    def test_permuting_latent_units_preserves_marginal(self):
        gen = random_gen(19, [3, 4], scale=1.0)
        x = np.array([1.0, 1.0, 0.0])
        base = exact_logp(gen, x)
        perm = np.random.default_rng(1).permutation(4)
        permuted = GenerativeParams(
            layers=[
                LayerParams(W=gen.layers[0].W[:, perm].copy(), b=gen.layers[0].b.copy())
            ],
            prior=FactorizedPrior(b=gen.prior.b[perm].copy()),
        )
        assert exact_logp(permuted, x) == pytest.approx(base, abs=1e-10)

    def test_config_table_covers_all_states(self):
        configs = latent_configs([2, 3])
        stacked = np.hstack(configs)
        assert stacked.shape == (32, 5)
        codes = stacked @ (2 ** np.arange(5))
        assert sorted(codes.astype(int)) == list(range(32))
