"""Layered Bernoulli generative model with factorized or autoregressive prior.

The joint density is p(x, h) = p(x | h_1) p(h_L) prod_l p(h_l | h_{l+1}):
stacked sigmoid-of-linear Bernoulli conditionals over a top-layer prior.
All densities evaluate in log domain on raw binary vectors; batched inputs
(rows = samples) are supported everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import RandomStream, bernoulli_logpmf, clamp_mean, sigmoid

# Joint enumeration above this many latent bits is refused (2^20 states).
ENUMERATION_CAP_BITS = 20

INIT_WEIGHT_STD = 0.01


@dataclass
class LayerParams:
    """One conditional layer: mean = sigmoid(W h + b).

    ``hidden`` optionally inserts a deterministic tanh stage before the
    stochastic output (the DARN-style configuration), in which case
    mean = sigmoid(W tanh(V h + c) + b) with hidden = (V, c).
    """

    W: np.ndarray  # [out x in]
    b: np.ndarray  # [out]
    hidden: "LayerParams | None" = None

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.ndim != 1 or self.W.shape[0] != self.b.shape[0]:
            raise ValueError(f"inconsistent layer shapes W{self.W.shape} b{self.b.shape}")

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    @property
    def in_dim(self) -> int:
        return self.hidden.in_dim if self.hidden is not None else self.W.shape[1]


@dataclass
class FactorizedPrior:
    """Independent Bernoulli prior with unit logits b."""

    b: np.ndarray

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=np.float64)

    @property
    def dim(self) -> int:
        return self.b.shape[0]


@dataclass
class AutoregressivePrior:
    """Prior where unit i conditions on units j < i through W_r.

    W_r must be strictly lower-triangular; this is enforced here and
    re-enforced after every parameter update.
    """

    W_r: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W_r = np.asarray(self.W_r, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        h = self.b.shape[0]
        if self.W_r.shape != (h, h):
            raise ValueError(f"W_r must be square [{h}x{h}], got {self.W_r.shape}")
        self.enforce_triangular()

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    def enforce_triangular(self) -> None:
        """Zero everything on/above the diagonal, in place."""
        self.W_r *= strict_lower_mask(self.dim)


def strict_lower_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n)), k=-1)


@dataclass
class GenerativeParams:
    """All weights and biases of the generative model.

    ``layers[0]`` maps h_1 to the observation means; ``layers[l]`` maps
    h_{l+1} to h_l means; the prior sits on the top layer h_L.
    """

    layers: list[LayerParams]
    prior: FactorizedPrior | AutoregressivePrior

    def __post_init__(self):
        dims = self.layer_dims
        for lo, hi, layer in zip(dims[:-1], dims[1:], self.layers):
            if layer.out_dim != lo or layer.in_dim != hi:
                raise ValueError(
                    f"layer chain mismatch: expected [{lo} x {hi}], "
                    f"got [{layer.out_dim} x {layer.in_dim}]"
                )
        if self.prior.dim != dims[-1]:
            raise ValueError("prior dimension does not match top layer width")

    @property
    def layer_dims(self) -> list[int]:
        """[D, H_1, ..., H_L] from the observation down the chain."""
        return [self.layers[0].out_dim] + [l.in_dim for l in self.layers]

    @property
    def visible_dim(self) -> int:
        return self.layers[0].out_dim

    @property
    def latent_dims(self) -> list[int]:
        return [l.in_dim for l in self.layers]

    @property
    def total_latent_bits(self) -> int:
        return int(sum(self.latent_dims))

    def arrays(self):
        """Yield (name, array) pairs over every parameter tensor."""
        for i, layer in enumerate(self.layers):
            yield f"layer{i}.W", layer.W
            yield f"layer{i}.b", layer.b
            if layer.hidden is not None:
                yield f"layer{i}.hidden.W", layer.hidden.W
                yield f"layer{i}.hidden.b", layer.hidden.b
        if isinstance(self.prior, AutoregressivePrior):
            yield "prior.W_r", self.prior.W_r
        yield "prior.b", self.prior.b


def init_generative(
    layer_dims: list[int],
    prior_kind: str = "factorized",
    rng: RandomStream | None = None,
    hidden_dims: dict[int, int] | None = None,
) -> GenerativeParams:
    """Fresh parameters: N(0, 0.01) weights, zero biases.

    ``layer_dims`` is [D, H_1, ..., H_L]; ``hidden_dims`` optionally maps a
    layer index to the width of a deterministic tanh stage inside it.
    """
    rng = rng or RandomStream(0)
    gen = rng.generator
    layers = []
    for i in range(len(layer_dims) - 1):
        out_d, in_d = layer_dims[i], layer_dims[i + 1]
        hidden = None
        if hidden_dims and i in hidden_dims:
            hd = hidden_dims[i]
            hidden = LayerParams(
                W=gen.normal(0.0, INIT_WEIGHT_STD, size=(hd, in_d)), b=np.zeros(hd)
            )
            w = gen.normal(0.0, INIT_WEIGHT_STD, size=(out_d, hd))
        else:
            w = gen.normal(0.0, INIT_WEIGHT_STD, size=(out_d, in_d))
        layers.append(LayerParams(W=w, b=np.zeros(out_d), hidden=hidden))
    h_top = layer_dims[-1]
    if prior_kind == "factorized":
        prior = FactorizedPrior(b=np.zeros(h_top))
    elif prior_kind == "autoregressive":
        w_r = gen.normal(0.0, INIT_WEIGHT_STD, size=(h_top, h_top)) * strict_lower_mask(h_top)
        prior = AutoregressivePrior(W_r=w_r, b=np.zeros(h_top))
    else:
        raise ValueError(f"unknown prior kind {prior_kind!r}")
    return GenerativeParams(layers=layers, prior=prior)


def layer_mean(layer: LayerParams, h_above: np.ndarray) -> np.ndarray:
    """Bernoulli means sigmoid(W h + b), clamped; h_above may be batched."""
    h_above = np.asarray(h_above, dtype=np.float64)
    if h_above.shape[-1] != layer.in_dim:
        raise ValueError(
            f"dimension mismatch: layer expects {layer.in_dim}, got {h_above.shape[-1]}"
        )
    u = h_above
    if layer.hidden is not None:
        u = np.tanh(u @ layer.hidden.W.T + layer.hidden.b)
    return clamp_mean(sigmoid(u @ layer.W.T + layer.b))


def prior_mean(prior: FactorizedPrior | AutoregressivePrior, h_top: np.ndarray) -> np.ndarray:
    """Per-unit Bernoulli means of the top prior, given the (same) h_top.

    For the autoregressive prior the strictly lower-triangular W_r means
    unit i's logit only reads h_j for j < i, so a single matmul evaluates
    all conditional means in index order.
    """
    if isinstance(prior, FactorizedPrior):
        mu = sigmoid(prior.b)
        return clamp_mean(np.broadcast_to(mu, np.asarray(h_top).shape).copy())
    h_top = np.asarray(h_top, dtype=np.float64)
    # entries on/above the diagonal are structurally zero; masking here keeps
    # the density (and its finite differences) independent of them
    w_r = prior.W_r * strict_lower_mask(prior.dim)
    return clamp_mean(sigmoid(h_top @ w_r.T + prior.b))


def prior_logp(prior: FactorizedPrior | AutoregressivePrior, h_top: np.ndarray) -> np.ndarray:
    """Log-probability of top-layer configurations under the prior."""
    h_top = np.asarray(h_top, dtype=np.float64)
    if h_top.shape[-1] != prior.dim:
        raise ValueError(
            f"dimension mismatch: prior dim {prior.dim}, got {h_top.shape[-1]}"
        )
    if isinstance(prior, FactorizedPrior):
        return bernoulli_logpmf(h_top, clamp_mean(sigmoid(prior.b)))
    return bernoulli_logpmf(h_top, prior_mean(prior, h_top))


def joint_logp(
    params: GenerativeParams, x: np.ndarray, h: list[np.ndarray]
) -> np.ndarray:
    """log p(x, h) = log p(x|h_1) + sum_l log p(h_l|h_{l+1}) + log p(h_L).

    ``x`` and every ``h[l]`` may carry matching leading batch axes.
    """
    if len(h) != len(params.layers):
        raise ValueError(f"expected {len(params.layers)} latent layers, got {len(h)}")
    targets = [x] + list(h[:-1])
    total = prior_logp(params.prior, h[-1])
    for layer, target, inp in zip(params.layers, targets, h):
        total = total + bernoulli_logpmf(target, layer_mean(layer, inp))
    return total


def sample_prior(
    prior: FactorizedPrior | AutoregressivePrior, rng: RandomStream, n: int = 1
) -> np.ndarray:
    """n top-layer samples; autoregressive units are drawn in index order."""
    if isinstance(prior, FactorizedPrior):
        mu = clamp_mean(sigmoid(prior.b))
        u = rng.uniform((n, prior.dim))
        return (u < mu).astype(np.float64)
    h = np.zeros((n, prior.dim))
    u = rng.uniform((n, prior.dim))
    for i in range(prior.dim):
        logit = h[:, :i] @ prior.W_r[i, :i] + prior.b[i]
        h[:, i] = (u[:, i] < clamp_mean(sigmoid(logit))).astype(np.float64)
    return h


def ancestral_sample(
    params: GenerativeParams, rng: RandomStream, n: int = 1
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Sample (x, h) jointly: prior first, then each layer downward.

    Returns ``x`` of shape [n x D] and per-layer latents [n x H_l]
    ordered as in ``params.layers`` (h_1 first).
    """
    h_top = sample_prior(params.prior, rng, n)
    hs = [h_top]
    for layer in reversed(params.layers[1:]):
        mu = layer_mean(layer, hs[0])
        hs.insert(0, (rng.uniform(mu.shape) < mu).astype(np.float64))
    mu_x = layer_mean(params.layers[0], hs[0])
    x = (rng.uniform(mu_x.shape) < mu_x).astype(np.float64)
    return x, hs
