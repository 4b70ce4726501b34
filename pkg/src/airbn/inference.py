"""Importance weighting, bound estimation, ESS, and the refinement loop.

A proposal q (factorized, parameterized by per-layer means) is scored
against the generative joint to produce importance weights
w = p(x, h) / q(h | x).  From one set of weighted samples we estimate the
single-sample bound, the K-sample bound, and the effective sample size.
The refinement operator moves the means toward the weighted posterior
mean with a damped convex-combination update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import GenerativeParams, joint_logp
from .numerics import (
    RandomStream,
    clamp_mean,
    logsumexp,
    normalize_log_weights,
    normalize_log_weights_rows,
)
from .recognition import (
    VariationalState,
    q_logpmf,
    q_logpmf_batch,
    q_sample,
    q_sample_batch,
)


@dataclass
class ImportanceSet:
    """K weighted posterior samples for one data point."""

    samples: list[np.ndarray]  # per layer, [K x H_l]
    log_w: np.ndarray  # [K]
    w_tilde: np.ndarray  # [K], sums to 1
    degenerate: bool

    @property
    def k(self) -> int:
        return self.log_w.shape[0]


@dataclass
class RefinementTrace:
    """Per-step diagnostics over T refinement iterations (T+1 entries).

    Each field is a [T+1 x batch] array; entry t describes the proposal
    q_t before the (t+1)-th update, entry T the final proposal.
    """

    l1_hat: np.ndarray
    lk_hat: np.ndarray
    ess: np.ndarray
    n_samples: int
    degenerate_count: int = 0

    @property
    def n_steps(self) -> int:
        return self.l1_hat.shape[0] - 1

    @property
    def ess_normalized(self) -> np.ndarray:
        return self.ess / float(self.n_samples)


def bihm_log_weights(
    gen: GenerativeParams,
    x: np.ndarray,
    samples: list[np.ndarray],
    state: VariationalState,
    item: int,
) -> np.ndarray:
    """Geometric-mean weights: half the standard log-weights per sample."""
    x_row = np.asarray(x, dtype=np.float64)[item]
    lw = joint_logp(gen, x_row, samples) - q_logpmf(state, samples, item)
    return 0.5 * lw


def importance_set(
    gen: GenerativeParams,
    x: np.ndarray,
    state: VariationalState,
    item: int,
    k: int,
    rng: RandomStream,
    bihm: bool = False,
) -> ImportanceSet:
    """Draw K samples from q and weight them against the joint."""
    if k < 1:
        raise ValueError("k must be >= 1")
    samples = q_sample(state, item, k, rng)
    x_row = np.asarray(x, dtype=np.float64)[item]
    log_w = joint_logp(gen, x_row, samples) - q_logpmf(state, samples, item)
    if bihm:
        log_w = 0.5 * log_w
    w_tilde, degenerate = normalize_log_weights(log_w)
    return ImportanceSet(samples=samples, log_w=log_w, w_tilde=w_tilde, degenerate=degenerate)


def lowerbound_L1(iset: ImportanceSet) -> float:
    """Monte Carlo estimate of E_q[log w]: the single-sample bound."""
    return float(np.mean(iset.log_w))


def estimate_LK(iset: ImportanceSet) -> float:
    """log of the average importance weight: the K-sample bound."""
    return float(logsumexp(iset.log_w)) - np.log(iset.k)


def effective_sample_size(iset: ImportanceSet) -> float:
    """(sum w)^2 / sum w^2, evaluated in log domain."""
    if iset.degenerate:
        return float(1.0 / np.sum(iset.w_tilde**2))
    lse1 = logsumexp(iset.log_w)
    lse2 = logsumexp(2.0 * iset.log_w)
    return float(np.exp(2.0 * lse1 - lse2))


def _row_diagnostics(log_w: np.ndarray, dead: np.ndarray):
    """Per-row (l1, lk, ess) for a [B x K] log-weight matrix.

    Dead rows get -inf bounds and the uniform-fallback ESS (= K).
    """
    b, k = log_w.shape
    safe = np.where(dead[:, None], 0.0, log_w)
    l1 = np.mean(safe, axis=1)
    lse1 = logsumexp(safe, axis=1)
    lse2 = logsumexp(2.0 * safe, axis=1)
    lk = lse1 - np.log(k)
    ess = np.exp(2.0 * lse1 - lse2)
    if dead.any():
        l1 = np.where(dead, -np.inf, l1)
        lk = np.where(dead, -np.inf, lk)
        ess = np.where(dead, float(k), ess)
    return l1, lk, ess


def _weights_batch(
    gen: GenerativeParams,
    x: np.ndarray,
    state: VariationalState,
    samples: list[np.ndarray],
    bihm: bool,
):
    """Log-weights [B x K] for per-layer [B x K x H_l] samples."""
    x = np.asarray(x, dtype=np.float64)
    log_w = joint_logp(gen, x[:, None, :], samples) - q_logpmf_batch(state, samples)
    if bihm:
        log_w = 0.5 * log_w
    return log_w


def air_step_batch(
    gen: GenerativeParams,
    x: np.ndarray,
    state: VariationalState,
    gamma: float,
    m: int,
    rng: RandomStream,
    bihm: bool = False,
    with_diagnostics: bool = True,
):
    """One refinement update for every batch row at once.

    Returns ``(new_state, (l1, lk, ess) row arrays, degenerate_count)``;
    the diagnostics tuple is None when not requested (training fast path).
    Rows whose weights degenerate keep their current means.
    """
    samples = q_sample_batch(state, m, rng)
    log_w = _weights_batch(gen, x, state, samples, bihm)
    w_tilde, dead = normalize_log_weights_rows(log_w)
    new_mu = []
    any_dead = bool(dead.any())
    for mu_l, h_l in zip(state.mu, samples):
        mu_hat = np.einsum("bk,bkh->bh", w_tilde, h_l)
        upd = clamp_mean((1.0 - gamma) * mu_l + gamma * mu_hat)
        new_mu.append(np.where(dead[:, None], mu_l, upd) if any_dead else upd)
    diag = _row_diagnostics(log_w, dead) if with_diagnostics else None
    return VariationalState(new_mu), diag, int(dead.sum())


def air_step(
    gen: GenerativeParams,
    x: np.ndarray,
    state: VariationalState,
    item: int,
    gamma: float,
    m: int,
    rng: RandomStream,
    bihm: bool = False,
) -> list[np.ndarray]:
    """Single-item refinement update; returns the new per-layer means."""
    if not (0.0 < gamma <= 1.0):
        raise ValueError("gamma must be in (0, 1]")
    if m < 1:
        raise ValueError("m must be >= 1")
    row = state.row(item)
    x_row = np.asarray(x, dtype=np.float64)[item : item + 1]
    new_state, _, _ = air_step_batch(gen, x_row, row, gamma, m, rng, bihm)
    return [mu_l[0] for mu_l in new_state.mu]


def refine(
    gen: GenerativeParams,
    x: np.ndarray,
    state0: VariationalState,
    t_steps: int,
    gamma: float,
    m: int,
    rng: RandomStream,
    bihm: bool = False,
    want_trace: bool = True,
) -> tuple[VariationalState, RefinementTrace | None]:
    """Apply T refinement updates to the whole batch.

    The trace holds T+1 diagnostic entries (one per proposal q_0 .. q_T);
    the final entry costs one extra M-sample draw.  ``want_trace=False``
    skips all diagnostics and extra draws (the training fast path).
    """
    if t_steps < 0:
        raise ValueError("t_steps must be >= 0")
    state = state0.copy()
    if not want_trace:
        for _ in range(t_steps):
            state, _, _ = air_step_batch(
                gen, x, state, gamma, m, rng, bihm, with_diagnostics=False
            )
        return state, None
    l1_rows, lk_rows, ess_rows = [], [], []
    n_degenerate = 0
    for _ in range(t_steps):
        state, (l1, lk, ess), ndeg = air_step_batch(gen, x, state, gamma, m, rng, bihm)
        l1_rows.append(l1)
        lk_rows.append(lk)
        ess_rows.append(ess)
        n_degenerate += ndeg
    # final diagnostics at q_T (diagnostic-only draw, no update)
    samples = q_sample_batch(state, m, rng)
    log_w = _weights_batch(gen, x, state, samples, bihm)
    _, dead = normalize_log_weights_rows(log_w)
    l1, lk, ess = _row_diagnostics(log_w, dead)
    l1_rows.append(l1)
    lk_rows.append(lk)
    ess_rows.append(ess)
    trace = RefinementTrace(
        l1_hat=np.stack(l1_rows),
        lk_hat=np.stack(lk_rows),
        ess=np.stack(ess_rows),
        n_samples=m,
        degenerate_count=n_degenerate,
    )
    return state, trace


def bound_estimates_chunked(
    gen: GenerativeParams,
    x: np.ndarray,
    state: VariationalState,
    k_total: int,
    rng: RandomStream,
    chunk: int = 2000,
    bihm: bool = False,
):
    """Per-row (l1, lk, ess) at a large K, accumulated chunk by chunk.

    Keeps only running log-sums in memory so K = 10^5 works on any box.
    """
    x = np.asarray(x, dtype=np.float64)
    b = x.shape[0]
    sum_lw = np.zeros(b)
    run_lse1 = np.full(b, -np.inf)
    run_lse2 = np.full(b, -np.inf)
    done = 0
    while done < k_total:
        k = min(chunk, k_total - done)
        samples = q_sample_batch(state, k, rng)
        log_w = _weights_batch(gen, x, state, samples, bihm)
        sum_lw += np.sum(log_w, axis=1)
        run_lse1 = np.logaddexp(run_lse1, logsumexp(log_w, axis=1))
        run_lse2 = np.logaddexp(run_lse2, logsumexp(2.0 * log_w, axis=1))
        done += k
    l1 = sum_lw / k_total
    lk = run_lse1 - np.log(k_total)
    ess = np.exp(2.0 * run_lse1 - run_lse2)
    return l1, lk, ess
