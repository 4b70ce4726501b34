"""Gradient estimators, the E/M training step, the RWS baseline, and RMSprop.

A training step is: E-step — run the recognition network and refine its
means; M-step — draw fresh posterior samples, form the configured
gradient estimates (ascent direction on the bound), average over the
batch, and apply the optimizer.  All gradients are closed-form: each
stochastic Bernoulli output contributes a pre-activation residual
(target - mean) which propagates linearly through the weights, through
optional tanh stages, and (for the recognition net) through the
deterministic inter-layer mean chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .inference import ImportanceSet, _row_diagnostics, _weights_batch, air_step_batch
from .model import (
    AutoregressivePrior,
    FactorizedPrior,
    GenerativeParams,
    ancestral_sample,
    prior_mean,
    sigmoid,
    strict_lower_mask,
)
from .numerics import RandomStream, clamp_mean, normalize_log_weights_rows
from .recognition import (
    RecognitionParams,
    center,
    forward_activations,
    initial_means,
    q_sample_batch,
)

ESTIMATORS = ("air", "air_rw", "air_rw_ikl", "rws")


class NonFiniteGradientError(RuntimeError):
    """Raised when a gradient tensor turns non-finite; names the tensor."""

    def __init__(self, param_name: str):
        super().__init__(f"non-finite gradient for parameter {param_name!r}")
        self.param_name = param_name


@dataclass
class GradientBundle:
    """Ascent-direction gradients mirroring the parameter containers."""

    d_theta: dict[str, np.ndarray]
    d_phi: dict[str, np.ndarray]
    estimator_tag: str

    def check_finite(self) -> None:
        for name, g in list(self.d_theta.items()) + list(self.d_phi.items()):
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(name)


@dataclass
class BatchMetrics:
    """Per-batch diagnostics emitted by a training step."""

    l1_hat: float
    lk_hat: float
    ess_norm: float
    degenerate_frac: float


def _as_bk(samples: list[np.ndarray]) -> list[np.ndarray]:
    """Promote per-layer [K x H] sample arrays to [1 x K x H]."""
    return [s[None, :, :] if s.ndim == 2 else s for s in samples]


def grad_theta_weighted(
    gen: GenerativeParams,
    x: np.ndarray,
    samples: list[np.ndarray],
    weights: np.ndarray,
) -> dict[str, np.ndarray]:
    """Batch-averaged weighted gradient of log p(x, h) w.r.t. theta.

    ``samples`` are per-layer [B x K x H_l], ``weights`` [B x K] with rows
    summing to 1; the result is (1/B) sum_b sum_k w[b,k] grad log p(x_b, h^bk),
    keyed like ``GenerativeParams.arrays``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    b = x.shape[0]
    grads: dict[str, np.ndarray] = {}
    targets = [x[:, None, :]] + samples[:-1]
    for i, (layer, tgt, inp) in enumerate(zip(gen.layers, targets, samples)):
        u = inp
        if layer.hidden is not None:
            u = np.tanh(inp @ layer.hidden.W.T + layer.hidden.b)
        mu = clamp_mean(sigmoid(u @ layer.W.T + layer.b))
        wd = weights[:, :, None] * (tgt - mu)  # [B x K x out]
        grads[f"layer{i}.W"] = np.einsum("bko,bki->oi", wd, u) / b
        grads[f"layer{i}.b"] = wd.sum(axis=(0, 1)) / b
        if layer.hidden is not None:
            du = wd @ layer.W  # [B x K x hd]
            gz = du * (1.0 - u * u)
            grads[f"layer{i}.hidden.W"] = np.einsum("bkh,bki->hi", gz, inp) / b
            grads[f"layer{i}.hidden.b"] = gz.sum(axis=(0, 1)) / b
    h_top = samples[-1]
    if isinstance(gen.prior, FactorizedPrior):
        delta = h_top - clamp_mean(sigmoid(gen.prior.b))
        grads["prior.b"] = (weights[:, :, None] * delta).sum(axis=(0, 1)) / b
    else:
        wd = weights[:, :, None] * (h_top - prior_mean(gen.prior, h_top))
        dwr = np.einsum("bko,bki->oi", wd, h_top) / b
        grads["prior.W_r"] = dwr * strict_lower_mask(gen.prior.dim)
        grads["prior.b"] = wd.sum(axis=(0, 1)) / b
    return grads


def grad_theta_uniform(
    gen: GenerativeParams, x: np.ndarray, samples: list[np.ndarray], n: int | None = None
) -> dict[str, np.ndarray]:
    """(1/N) sum_n grad log p(x, h^(n)) over refined-posterior samples."""
    samples = _as_bk(samples)
    b, k = samples[0].shape[:2]
    if n is not None and n != k:
        raise ValueError(f"n={n} does not match sample count {k}")
    return grad_theta_weighted(gen, x, samples, np.full((b, k), 1.0 / k))


def grad_theta_reweighted(
    gen: GenerativeParams, x: np.ndarray, iset: ImportanceSet
) -> dict[str, np.ndarray]:
    """Importance-weighted gradient sum_k w_tilde^(k) grad log p(x, h^(k))."""
    return grad_theta_weighted(gen, x, _as_bk(iset.samples), iset.w_tilde[None, :])


def grad_phi_weighted(
    rec: RecognitionParams,
    x_centered: np.ndarray,
    samples: list[np.ndarray],
    weights: np.ndarray,
) -> dict[str, np.ndarray]:
    """Batch-averaged weighted score: sum_k w grad_phi log q_0(h^(k) | x).

    Samples are constants; the gradient backpropagates through the
    deterministic mean chain (deeper means are functions of shallower
    ones).  Per-sample backprop is linear in the output residuals, so the
    weighted aggregation happens on the residuals first.
    """
    x_centered = np.atleast_2d(np.asarray(x_centered, dtype=np.float64))
    b = x_centered.shape[0]
    outs = forward_activations(rec, x_centered)
    inputs = [x_centered] + outs[:-1]
    # aggregated residual per mean stage: sum_k w (h - mu)
    residuals: list[np.ndarray | None] = []
    layer_idx = 0
    for stage, out in zip(rec.stages, outs):
        if stage.kind == "mean":
            agg = np.einsum("bk,bkh->bh", weights, samples[layer_idx])
            wsum = weights.sum(axis=1, keepdims=True)
            residuals.append(agg - wsum * out)
            layer_idx += 1
        else:
            residuals.append(None)
    grads: dict[str, np.ndarray] = {}
    g_u = np.zeros_like(outs[-1])
    for s in range(len(rec.stages) - 1, -1, -1):
        stage, u, inp = rec.stages[s], outs[s], inputs[s]
        if stage.kind == "mean":
            gz = residuals[s] + g_u * u * (1.0 - u)
        else:
            gz = g_u * (1.0 - u * u)
        grads[f"stage{s}.W"] = gz.T @ inp / b
        grads[f"stage{s}.b"] = gz.sum(axis=0) / b
        g_u = gz @ stage.params.W
    return grads


def grad_phi_exclusive(
    rec: RecognitionParams,
    x_centered: np.ndarray,
    samples: list[np.ndarray],
    n: int | None = None,
) -> dict[str, np.ndarray]:
    """(1/N) sum_n grad_phi log q_0(h^(n) | x): fit q_0 to refined samples."""
    samples = _as_bk(samples)
    b, k = samples[0].shape[:2]
    if n is not None and n != k:
        raise ValueError(f"n={n} does not match sample count {k}")
    return grad_phi_weighted(rec, x_centered, samples, np.full((b, k), 1.0 / k))


def grad_phi_inclusive(
    rec: RecognitionParams, x_centered: np.ndarray, iset: ImportanceSet
) -> dict[str, np.ndarray]:
    """Importance-weighted score sum_k w_tilde^(k) grad_phi log q_0(h^(k) | x)."""
    return grad_phi_weighted(rec, x_centered, _as_bk(iset.samples), iset.w_tilde[None, :])


@dataclass
class OptimizerState:
    """RMSprop accumulators; one squared-average per parameter tensor."""

    lr: float
    rho: float = 0.9
    eps: float = 1e-6
    sq_avg: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def rmsprop_update(
    opt: OptimizerState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]
) -> None:
    """In-place RMSprop descent step: p <- p - lr * g / (sqrt(a) + eps)."""
    opt.step += 1
    for name, p in params.items():
        g = grads[name]
        a = opt.sq_avg.get(name)
        if a is None:
            a = np.zeros_like(p)
            opt.sq_avg[name] = a
        a *= opt.rho
        a += (1.0 - opt.rho) * g * g
        p -= opt.lr * g / (np.sqrt(a) + opt.eps)


def finetune_schedule(
    epoch: int, base_lr: float, main_epochs: int, decay: float
) -> float:
    """Constant lr during the main phase, 1/(1+decay*age) decay after."""
    if epoch < main_epochs:
        return base_lr
    return base_lr / (1.0 + decay * (epoch - main_epochs))


def early_stopping(history: list[float], patience: int) -> tuple[bool, int]:
    """Track the best validation bound; stop after ``patience`` flat epochs.

    Returns ``(should_stop, best_epoch_index)``; ties keep the earliest.
    """
    if not history:
        raise ValueError("history must be non-empty")
    best_idx = 0
    for i, v in enumerate(history):
        if v > history[best_idx]:
            best_idx = i
    return (len(history) - 1 - best_idx) >= patience, best_idx


def _estimator_weights(
    estimator: str, log_w: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(theta weights, phi weights, degenerate row mask) for an estimator."""
    b, k = log_w.shape
    uniform = np.full((b, k), 1.0 / k)
    w_tilde, dead = normalize_log_weights_rows(log_w)
    if estimator == "air":
        return uniform, uniform, dead
    if estimator == "air_rw":
        return w_tilde, uniform, dead
    if estimator in ("air_rw_ikl", "rws"):
        return w_tilde, w_tilde, dead
    raise ValueError(f"unknown estimator {estimator!r}")


def _apply_bundle(
    gen: GenerativeParams,
    rec: RecognitionParams,
    bundle: GradientBundle,
    opt_theta: OptimizerState,
    opt_phi: OptimizerState,
) -> None:
    """Descend on the negated ascent bundle; keep W_r strictly triangular."""
    bundle.check_finite()
    neg_theta = {k: -v for k, v in bundle.d_theta.items()}
    neg_phi = {k: -v for k, v in bundle.d_phi.items()}
    if "prior.W_r" in neg_theta:
        neg_theta["prior.W_r"] *= strict_lower_mask(gen.prior.dim)
    rmsprop_update(opt_theta, dict(gen.arrays()), neg_theta)
    rmsprop_update(opt_phi, dict(rec.arrays()), neg_phi)
    if isinstance(gen.prior, AutoregressivePrior):
        gen.prior.enforce_triangular()


def compute_step_bundle(
    gen: GenerativeParams,
    rec: RecognitionParams,
    x_batch: np.ndarray,
    mean_image: np.ndarray,
    cfg,
    rng: RandomStream,
    t_steps: int | None = None,
) -> tuple[GradientBundle, BatchMetrics]:
    """E-step + gradient bundle for one batch, without touching parameters.

    ``t_steps`` overrides the configured refinement length (the RWS
    baseline passes 0).  Consumes ``rng`` sequentially: refinement draws
    first, then the N gradient samples.
    """
    t = cfg.t_steps if t_steps is None else t_steps
    x_batch = np.asarray(x_batch, dtype=np.float64)
    b = x_batch.shape[0]
    xc = center(x_batch, mean_image)
    state = initial_means(rec, xc)
    n_dead = 0
    for _ in range(t):
        state, _, ndeg = air_step_batch(
            gen, x_batch, state, cfg.gamma, cfg.m_samples, rng, with_diagnostics=False
        )
        n_dead += ndeg
    samples = q_sample_batch(state, cfg.n_samples, rng)
    log_w = _weights_batch(gen, x_batch, state, samples, bihm=False)
    w_theta, w_phi, dead = _estimator_weights(cfg.estimator, log_w)
    n_dead += int(dead.sum())
    d_theta = grad_theta_weighted(gen, x_batch, samples, w_theta)
    d_phi = grad_phi_weighted(rec, xc, samples, w_phi)
    bundle = GradientBundle(d_theta=d_theta, d_phi=d_phi, estimator_tag=cfg.estimator)
    l1, lk, ess = _row_diagnostics(log_w, dead)
    metrics = BatchMetrics(
        l1_hat=float(np.mean(l1)),
        lk_hat=float(np.mean(lk)),
        ess_norm=float(np.mean(ess)) / cfg.n_samples,
        degenerate_frac=n_dead / (b * (t + 1)),
    )
    return bundle, metrics


def evaluate_bound(
    gen: GenerativeParams,
    rec: RecognitionParams,
    x_rows: np.ndarray,
    mean_image: np.ndarray,
    cfg,
    rng: RandomStream,
    t_steps: int,
    n_samples: int | None = None,
) -> BatchMetrics:
    """Bound/ESS diagnostics for a set of rows, without any gradients."""
    x_rows = np.asarray(x_rows, dtype=np.float64)
    state = initial_means(rec, center(x_rows, mean_image))
    n_dead = 0
    for _ in range(t_steps):
        state, _, ndeg = air_step_batch(
            gen, x_rows, state, cfg.gamma, cfg.m_samples, rng, with_diagnostics=False
        )
        n_dead += ndeg
    n = n_samples or cfg.valid_samples
    samples = q_sample_batch(state, n, rng)
    log_w = _weights_batch(gen, x_rows, state, samples, bihm=False)
    _, dead = normalize_log_weights_rows(log_w)
    n_dead += int(dead.sum())
    l1, lk, ess = _row_diagnostics(log_w, dead)
    return BatchMetrics(
        l1_hat=float(np.mean(l1)),
        lk_hat=float(np.mean(lk)),
        ess_norm=float(np.mean(ess)) / n,
        degenerate_frac=n_dead / (x_rows.shape[0] * (t_steps + 1)),
    )


def air_train_step(
    gen: GenerativeParams,
    rec: RecognitionParams,
    x_batch: np.ndarray,
    mean_image: np.ndarray,
    cfg,
    rng: RandomStream,
    opt_theta: OptimizerState,
    opt_phi: OptimizerState,
) -> BatchMetrics:
    """One refined E/M step; updates parameters in place."""
    bundle, metrics = compute_step_bundle(gen, rec, x_batch, mean_image, cfg, rng)
    _apply_bundle(gen, rec, bundle, opt_theta, opt_phi)
    return metrics


def rws_train_step(
    gen: GenerativeParams,
    rec: RecognitionParams,
    x_batch: np.ndarray,
    mean_image: np.ndarray,
    cfg,
    rng: RandomStream,
    opt_theta: OptimizerState,
    opt_phi: OptimizerState,
) -> BatchMetrics:
    """Reweighted wake-sleep baseline: no refinement (T = 0).

    Wake phase reweights both the model gradient and the recognition
    score with normalized importance weights from q_0; the optional
    sleep phase (off by default) additionally fits the recognition net
    to dreamed (x, h) pairs from the model.
    """
    bundle, metrics = compute_step_bundle(gen, rec, x_batch, mean_image, cfg, rng, t_steps=0)
    bundle.estimator_tag = "rws"
    if getattr(cfg, "rws_sleep", False):
        x_dream, h_dream = ancestral_sample(gen, rng, n=x_batch.shape[0])
        d_sleep = grad_phi_weighted(
            rec,
            center(x_dream, mean_image),
            [h[:, None, :] for h in h_dream],
            np.ones((x_dream.shape[0], 1)),
        )
        for name in bundle.d_phi:
            bundle.d_phi[name] = 0.5 * (bundle.d_phi[name] + d_sleep[name])
    _apply_bundle(gen, rec, bundle, opt_theta, opt_phi)
    return metrics
