"""Brute-force enumeration ground truth for small models.

Every stochastic estimator in the library is tested against exact values
computed here by summing over all latent configurations.  The oracle
reuses the production density code paths (``joint_logp``, ``q_logpmf``,
the weighted gradient cores) so a bug cannot hide on one side of a
comparison; only the enumeration itself is independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ENUMERATION_CAP_BITS, GenerativeParams, joint_logp
from .numerics import logsumexp
from .recognition import RecognitionParams, VariationalState, initial_means, q_logpmf
from .training import grad_phi_weighted, grad_theta_weighted


@dataclass
class ExactSummary:
    """Exact marginal, posterior table, and posterior means for one x."""

    logp_x: float
    configs: list[np.ndarray]  # per layer, [n_configs x H_l]
    posterior: np.ndarray  # [n_configs], sums to 1
    posterior_mean: list[np.ndarray]  # per layer, [H_l]


def check_cap(latent_dims: list[int]) -> None:
    bits = int(sum(latent_dims))
    if bits > ENUMERATION_CAP_BITS:
        raise ValueError(
            f"enumeration refused: {bits} latent bits exceeds the "
            f"{ENUMERATION_CAP_BITS}-bit cap"
        )


def bit_patterns(n_bits: int, offset: int = 0, count: int | None = None) -> np.ndarray:
    """Rows ``offset .. offset+count`` of the [2^n x n] binary code table."""
    if count is None:
        count = (1 << n_bits) - offset
    idx = np.arange(offset, offset + count, dtype=np.int64)
    return ((idx[:, None] >> np.arange(n_bits)) & 1).astype(np.float64)


def latent_configs(
    latent_dims: list[int], offset: int = 0, count: int | None = None
) -> list[np.ndarray]:
    """Per-layer slices of the full latent configuration table.

    Configuration c's bits are laid out layer 1 first, low bit first;
    results are delivered as per-layer [count x H_l] arrays.
    """
    check_cap(latent_dims)
    total = int(sum(latent_dims))
    table = bit_patterns(total, offset, count)
    out, col = [], 0
    for h in latent_dims:
        out.append(np.ascontiguousarray(table[:, col : col + h]))
        col += h
    return out


def iter_latent_configs(latent_dims: list[int], chunk_bits: int = 16):
    """Yield the configuration table in chunks of at most 2^chunk_bits rows."""
    check_cap(latent_dims)
    total_rows = 1 << int(sum(latent_dims))
    step = 1 << chunk_bits
    for offset in range(0, total_rows, step):
        yield latent_configs(latent_dims, offset, min(step, total_rows - offset))


def exact_logp(gen: GenerativeParams, x: np.ndarray) -> float:
    """log p(x) by marginalizing the joint over all latent configurations."""
    x = np.asarray(x, dtype=np.float64)
    parts = [
        logsumexp(joint_logp(gen, x, hs)) for hs in iter_latent_configs(gen.latent_dims)
    ]
    return float(logsumexp(np.asarray(parts)))


def exact_logp_rows(gen: GenerativeParams, x_rows: np.ndarray) -> np.ndarray:
    """Vectorized ``exact_logp`` for many rows sharing one enumeration pass.

    Splits log p(x, h) into the x-dependent observation term (a [rows x
    configs] matrix product) plus the x-independent latent-chain term.
    """
    from .model import layer_mean, prior_logp
    from .numerics import bernoulli_logpmf

    x_rows = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
    out = np.full(x_rows.shape[0], -np.inf)
    for hs in iter_latent_configs(gen.latent_dims):
        mu1 = layer_mean(gen.layers[0], hs[0])  # [C x D]
        obs = x_rows @ np.log(mu1).T + (1.0 - x_rows) @ np.log1p(-mu1).T  # [R x C]
        chain = prior_logp(gen.prior, hs[-1])
        for layer, tgt, inp in zip(gen.layers[1:], hs[:-1], hs[1:]):
            chain = chain + bernoulli_logpmf(tgt, layer_mean(layer, inp))
        out = np.logaddexp(out, logsumexp(obs + chain, axis=1))
    return out


def exact_posterior(gen: GenerativeParams, x: np.ndarray) -> ExactSummary:
    """Exact posterior table p(h | x) and its per-layer means."""
    check_cap(gen.latent_dims)
    x = np.asarray(x, dtype=np.float64)
    configs = latent_configs(gen.latent_dims)
    log_joint = joint_logp(gen, x, configs)
    logp_x = float(logsumexp(log_joint))
    post = np.exp(log_joint - logp_x)
    post = post / post.sum()
    means = [post @ h for h in configs]
    return ExactSummary(logp_x=logp_x, configs=configs, posterior=post, posterior_mean=means)


def q_probs(state: VariationalState, configs: list[np.ndarray], item: int) -> np.ndarray:
    """Exact q(h | x) over an enumerated configuration table."""
    return np.exp(q_logpmf(state, configs, item))


def exact_L1(
    gen: GenerativeParams, x: np.ndarray, state: VariationalState, item: int = 0
) -> float:
    """Exact E_q[log p(x,h) - log q(h|x)] over the factorized q."""
    check_cap(gen.latent_dims)
    x = np.asarray(x, dtype=np.float64)
    x_row = x[item] if x.ndim == 2 else x
    configs = latent_configs(gen.latent_dims)
    log_q = q_logpmf(state, configs, item)
    log_joint = joint_logp(gen, x_row, configs)
    q = np.exp(log_q)
    return float(np.sum(q * (log_joint - log_q)))


def exact_kl(
    gen: GenerativeParams,
    x: np.ndarray,
    state: VariationalState,
    item: int = 0,
    direction: str = "exclusive",
) -> float:
    """Exact KL between q and the true posterior, either direction."""
    check_cap(gen.latent_dims)
    x = np.asarray(x, dtype=np.float64)
    x_row = x[item] if x.ndim == 2 else x
    configs = latent_configs(gen.latent_dims)
    log_q = q_logpmf(state, configs, item)
    log_joint = joint_logp(gen, x_row, configs)
    log_post = log_joint - logsumexp(log_joint)
    if direction == "exclusive":
        q = np.exp(log_q)
        return float(np.sum(q * (log_q - log_post)))
    if direction == "inclusive":
        post = np.exp(log_post)
        return float(np.sum(post * (log_post - log_q)))
    raise ValueError(f"unknown KL direction {direction!r}")


def exact_grad(
    gen: GenerativeParams,
    x: np.ndarray,
    objective: str,
    state: VariationalState,
    rec: RecognitionParams | None = None,
    x_centered: np.ndarray | None = None,
    item: int = 0,
) -> dict[str, np.ndarray]:
    """Enumeration-exact expectations of the per-sample gradients.

    Objectives: ``L1_theta`` (q-weighted model gradient), ``LK_selfnorm_theta``
    (posterior-weighted model gradient, the large-K limit of the reweighted
    estimator), ``score_phi`` (q-weighted recognition score, which is the
    zero vector when the weights come from q_0 itself), and
    ``score_phi_posterior`` (posterior-weighted score, the inclusive-KL
    target).
    """
    check_cap(gen.latent_dims)
    x = np.asarray(x, dtype=np.float64)
    x_row = x[item] if x.ndim == 2 else x
    configs = latent_configs(gen.latent_dims)
    if objective in ("L1_theta", "score_phi"):
        weights = q_probs(state, configs, item)
    elif objective in ("LK_selfnorm_theta", "score_phi_posterior"):
        weights = exact_posterior(gen, x_row).posterior
    else:
        raise ValueError(f"unknown objective {objective!r}")
    sample_view = [h[None, :, :] for h in configs]
    if objective.startswith("score_phi"):
        if rec is None or x_centered is None:
            raise ValueError("score objectives need rec and x_centered")
        xc_row = np.atleast_2d(x_centered)[item]
        return grad_phi_weighted(rec, xc_row, sample_view, weights[None, :])
    return grad_theta_weighted(gen, x_row, sample_view, weights[None, :])


def score_objective(
    rec: RecognitionParams,
    x_centered_row: np.ndarray,
    configs: list[np.ndarray],
    weights: np.ndarray,
) -> float:
    """sum_h w(h) log q_0(h | x; phi) with frozen weights.

    This is the scalar whose phi-gradient the score estimators compute;
    finite-difference tests differentiate it directly.
    """
    state = initial_means(rec, x_centered_row)
    return float(np.sum(weights * q_logpmf(state, configs, 0)))


def finite_difference(
    objective, params: dict[str, np.ndarray], delta: float = 1e-5
) -> dict[str, np.ndarray]:
    """Central finite differences of a scalar objective over parameter tensors.

    ``params`` maps names to the live arrays the objective reads; each
    coordinate is perturbed in place and restored.
    """
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + delta
            hi = objective()
            flat[i] = orig - delta
            lo = objective()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * delta)
        grads[name] = g
    return grads
