"""Shared helpers: random small models with non-trivial structure."""

import pytest

from airbn.model import GenerativeParams, init_generative
from airbn.numerics import RandomStream
from airbn.recognition import RecognitionParams, init_recognition


def random_gen(
    seed: int,
    layer_dims,
    prior_kind: str = "factorized",
    scale: float = 1.0,
    hidden_dims=None,
) -> GenerativeParams:
    """Generative params with N(0, scale) weights (structure, not near-uniform)."""
    rng = RandomStream(seed, 31)
    gen = init_generative(layer_dims, prior_kind, rng, hidden_dims=hidden_dims)
    g = rng.generator
    for _, arr in gen.arrays():
        arr[...] = g.normal(0.0, scale, size=arr.shape)
    if prior_kind == "autoregressive":
        gen.prior.enforce_triangular()
    return gen


def random_rec(seed: int, gen: GenerativeParams, scale: float = 0.5, tanh_dims=None) -> RecognitionParams:
    rng = RandomStream(seed, 32)
    rec = init_recognition(gen, rng, tanh_dims=tanh_dims)
    g = rng.generator
    for _, arr in rec.arrays():
        arr[...] = g.normal(0.0, scale, size=arr.shape)
    return rec


@pytest.fixture
def tiny_gen():
    """2 visible, 2 latent, single layer: 16 joint states, fully enumerable."""
    return random_gen(5, [2, 2], scale=1.2)


@pytest.fixture
def small_gen():
    """4 visible, 6 latent, single layer (the unbiasedness workhorse)."""
    return random_gen(9, [4, 6], scale=1.0)
