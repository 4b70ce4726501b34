"""Recognition network: deterministic chain from x to initial variational means.

The chain is fully deterministic: each deeper stochastic layer's means are
computed from the previous layer's *means*, never from samples.  Optional
tanh stages provide extra deterministic capacity for DARN-style configs.
The resulting factorized q is evaluated and sampled here as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import GenerativeParams, LayerParams, INIT_WEIGHT_STD
from .numerics import RandomStream, bernoulli_logpmf, clamp_mean, sigmoid


@dataclass
class Stage:
    """One stage of the recognition chain.

    ``kind`` is "mean" (sigmoid output, emits one stochastic layer's
    variational means) or "tanh" (deterministic feature stage).
    """

    params: LayerParams
    kind: str = "mean"

    def __post_init__(self):
        if self.kind not in ("mean", "tanh"):
            raise ValueError(f"unknown stage kind {self.kind!r}")


@dataclass
class RecognitionParams:
    """Ordered stages mapping (centered) input to per-layer means."""

    stages: list[Stage]

    def __post_init__(self):
        if not any(s.kind == "mean" for s in self.stages):
            raise ValueError("recognition network needs at least one mean stage")

    @property
    def n_stochastic(self) -> int:
        return sum(1 for s in self.stages if s.kind == "mean")

    def arrays(self):
        for i, stage in enumerate(self.stages):
            yield f"stage{i}.W", stage.params.W
            yield f"stage{i}.b", stage.params.b


@dataclass
class VariationalState:
    """Per-layer Bernoulli means for a batch: mu[l] has shape [batch x H_l].

    This is the object the refinement loop iterates on; every entry stays
    inside the clamp interval.
    """

    mu: list[np.ndarray]

    @property
    def batch_size(self) -> int:
        return self.mu[0].shape[0]

    @property
    def layer_dims(self) -> list[int]:
        return [m.shape[1] for m in self.mu]

    def copy(self) -> "VariationalState":
        return VariationalState([m.copy() for m in self.mu])

    def row(self, item: int) -> "VariationalState":
        return VariationalState([m[item : item + 1].copy() for m in self.mu])


def init_recognition(
    gen: GenerativeParams,
    rng: RandomStream | None = None,
    tanh_dims: dict[int, int] | None = None,
) -> RecognitionParams:
    """Recognition net mirroring the generative hierarchy one-to-one.

    ``tanh_dims`` maps a stochastic-stage index to a deterministic tanh
    stage width inserted before it (placed between the previous output
    and that stage's means).
    """
    rng = rng or RandomStream(0)
    g = rng.generator
    dims = gen.layer_dims  # [D, H_1, ..., H_L]
    stages: list[Stage] = []
    in_dim = dims[0]
    for idx, out_dim in enumerate(dims[1:]):
        if tanh_dims and idx in tanh_dims:
            hd = tanh_dims[idx]
            stages.append(
                Stage(
                    LayerParams(W=g.normal(0.0, INIT_WEIGHT_STD, size=(hd, in_dim)), b=np.zeros(hd)),
                    kind="tanh",
                )
            )
            in_dim = hd
        stages.append(
            Stage(
                LayerParams(W=g.normal(0.0, INIT_WEIGHT_STD, size=(out_dim, in_dim)), b=np.zeros(out_dim)),
                kind="mean",
            )
        )
        in_dim = out_dim
    return RecognitionParams(stages=stages)


def center(x: np.ndarray, mean_image: np.ndarray) -> np.ndarray:
    """Subtract the training-set mean image (recognition input only)."""
    x = np.asarray(x, dtype=np.float64)
    mean_image = np.asarray(mean_image, dtype=np.float64)
    if x.shape[-1] != mean_image.shape[-1]:
        raise ValueError(
            f"dimension mismatch: x has {x.shape[-1]} columns, mean_image {mean_image.shape[-1]}"
        )
    return x - mean_image


def forward_activations(
    params: RecognitionParams, x_centered: np.ndarray
) -> list[np.ndarray]:
    """Outputs of every stage in order (training needs the intermediates)."""
    u = np.atleast_2d(np.asarray(x_centered, dtype=np.float64))
    outs = []
    for stage in params.stages:
        z = u @ stage.params.W.T + stage.params.b
        u = np.tanh(z) if stage.kind == "tanh" else clamp_mean(sigmoid(z))
        outs.append(u)
    return outs


def initial_means(params: RecognitionParams, x_centered: np.ndarray) -> VariationalState:
    """Run the deterministic chain and collect the per-layer means."""
    outs = forward_activations(params, x_centered)
    mu = [o for o, s in zip(outs, params.stages) if s.kind == "mean"]
    return VariationalState(mu=mu)


def q_logpmf(state: VariationalState, h: list[np.ndarray], item: int | None = None) -> np.ndarray:
    """log q(h | x) = sum over layers of factorized Bernoulli log-pmfs.

    With ``item`` given, ``h[l]`` may carry leading sample axes and is
    scored against that row's means; otherwise shapes must broadcast
    against the full [batch x H_l] means.
    """
    if len(h) != len(state.mu):
        raise ValueError(f"expected {len(state.mu)} latent layers, got {len(h)}")
    total = 0.0
    for h_l, mu_l in zip(h, state.mu):
        m = mu_l[item] if item is not None else mu_l
        total = total + bernoulli_logpmf(h_l, m)
    return total


def q_sample(
    state: VariationalState, item: int, count: int, rng: RandomStream
) -> list[np.ndarray]:
    """``count`` independent factorized draws for one batch row.

    Returns per-layer [count x H_l] 0/1 arrays.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    samples = []
    for mu_l in state.mu:
        u = rng.uniform((count, mu_l.shape[1]))
        samples.append((u < mu_l[item]).astype(np.float64))
    return samples


def q_sample_batch(
    state: VariationalState, count: int, rng: RandomStream
) -> list[np.ndarray]:
    """``count`` draws per batch row at once: per-layer [batch x count x H_l]."""
    samples = []
    for mu_l in state.mu:
        b, h = mu_l.shape
        u = rng.uniform((b, count, h))
        samples.append((u < mu_l[:, None, :]).astype(np.float64))
    return samples


def q_logpmf_batch(state: VariationalState, h: list[np.ndarray]) -> np.ndarray:
    """log q for per-layer [batch x K x H_l] samples; returns [batch x K]."""
    total = 0.0
    for h_l, mu_l in zip(h, state.mu):
        total = total + bernoulli_logpmf(h_l, mu_l[:, None, :])
    return total
