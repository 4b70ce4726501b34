"""Stable scalar/vector primitives and seeded random streams.

Everything downstream (densities, importance weights, bound estimates)
is built on these helpers, so they are deliberately small, float64-only,
and paranoid about -inf / overflow corner cases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

# Bernoulli means are clamped into [MEAN_EPS, 1 - MEAN_EPS] before any log,
# so a saturated sigmoid can never poison a log-weight with -inf.
MEAN_EPS = 1e-7

_MIX_GAMMA = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    """One round of the splitmix64 finalizer (64-bit integer hash)."""
    x = (x + _MIX_GAMMA) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def mix_ids(*ids: int) -> int:
    """Mix integer identifiers into a single 64-bit stream id.

    Used to derive per-purpose / per-datapoint substream ids without
    collisions between e.g. (epoch=1, batch=2) and (epoch=2, batch=1).
    """
    h = 0
    for i in ids:
        h = _splitmix64(h ^ (int(i) & _MASK64))
    return h


@dataclass
class RandomStream:
    """Counter-based random stream keyed by (seed, stream_id).

    Identical (seed, stream_id) pairs replay identical sample sequences
    regardless of what other streams were consumed; distinct stream_ids
    give statistically independent sequences (Philox 2x64 key).
    """

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator | None = field(default=None, repr=False, compare=False)

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            key = ((int(self.seed) & _MASK64) << 64) | (int(self.stream_id) & _MASK64)
            self._gen = np.random.Generator(np.random.Philox(key=key))
        return self._gen

    def substream(self, *ids: int) -> "RandomStream":
        """Fresh stream for a sub-purpose; does not touch this stream's state."""
        return RandomStream(self.seed, mix_ids(self.stream_id, *ids))

    def uniform(self, shape) -> np.ndarray:
        return self.generator.random(shape)

    def normal(self, shape) -> np.ndarray:
        return self.generator.standard_normal(shape)


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically safe logistic function (never overflows)."""
    return expit(np.asarray(z, dtype=np.float64))


def clamp_mean(mu: np.ndarray) -> np.ndarray:
    """Clamp Bernoulli means into [MEAN_EPS, 1 - MEAN_EPS]."""
    return np.clip(mu, MEAN_EPS, 1.0 - MEAN_EPS)


def logsumexp(v, axis=None):
    """log(sum(exp(v))) with max-subtraction; exact for single entries.

    Entries may be -inf, but a fully degenerate input (no finite entry
    along the reduction) raises, because it means every importance
    weight underflowed.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("degenerate weight vector: empty input")
    vmax = np.max(v, axis=axis, keepdims=True)
    if not np.all(np.isfinite(vmax)):
        raise ValueError("degenerate weight vector: no finite entry")
    out = np.log(np.sum(np.exp(v - vmax), axis=axis, keepdims=True)) + vmax
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def normalize_log_weights(log_w: np.ndarray) -> tuple[np.ndarray, bool]:
    """Normalize log-weights to probabilities summing to 1.

    Returns ``(w_tilde, degenerate)``.  A degenerate vector (all entries
    -inf or non-finite) falls back to uniform weights with the flag set,
    so callers can keep going while surfacing the event in metrics.
    """
    log_w = np.asarray(log_w, dtype=np.float64)
    finite = np.isfinite(log_w)
    if not finite.any() or np.isnan(log_w).any() or np.isposinf(log_w).any():
        k = log_w.shape[-1]
        return np.full(log_w.shape, 1.0 / k), True
    shifted = log_w - np.max(log_w, axis=-1, keepdims=True)
    w = np.exp(shifted)
    return w / np.sum(w, axis=-1, keepdims=True), False


def normalize_log_weights_rows(log_w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise weight normalization for a [rows x K] matrix.

    Returns ``(w_tilde, degenerate_rows)`` where degenerate rows got the
    uniform fallback.  This is the batched path used inside refinement.
    A non-finite row maximum flags the row: nan and +inf propagate into
    the max, and an all--inf row has max -inf.
    """
    log_w = np.asarray(log_w, dtype=np.float64)
    vmax = np.max(log_w, axis=-1, keepdims=True)
    row_dead = ~np.isfinite(vmax[..., 0])
    if row_dead.any():
        safe = np.where(row_dead[..., None], 0.0, log_w)
        vmax = np.max(safe, axis=-1, keepdims=True)
        w = np.exp(safe - vmax)
        w_tilde = w / np.sum(w, axis=-1, keepdims=True)
        w_tilde[row_dead] = 1.0 / log_w.shape[-1]
        return w_tilde, row_dead
    w = np.exp(log_w - vmax)
    return w / np.sum(w, axis=-1, keepdims=True), row_dead


def bernoulli_logpmf(bits: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Sum of independent Bernoulli log-pmfs along the last axis.

    ``bits`` must be 0/1 valued; ``mu`` is clamped before the logs.
    Broadcasts like numpy, reducing the trailing (unit) axis.  When the
    means broadcast across a sample axis (one mean row scoring many bit
    vectors, the importance-sampling hot path), the sum collapses to a
    matrix product of the bits with log(mu) - log(1-mu).
    """
    bits = np.asarray(bits, dtype=np.float64)
    mu = clamp_mean(np.asarray(mu, dtype=np.float64))
    if bits.shape[-1] != mu.shape[-1]:
        raise ValueError(
            f"dimension mismatch: bits last axis {bits.shape[-1]} vs mu {mu.shape[-1]}"
        )
    if mu.size < bits.size:
        s = np.log1p(-mu)
        d = np.log(mu) - s
        if mu.ndim <= 1:
            return bits @ d + np.sum(s, axis=-1)
        if mu.ndim == bits.ndim and mu.shape[-2] == 1 and bits.shape[:-2] == mu.shape[:-2]:
            return np.matmul(bits, np.swapaxes(d, -1, -2))[..., 0] + np.sum(s, axis=-1)
    elif (
        bits.size < mu.size
        and bits.ndim == mu.ndim
        and bits.shape[-2] == 1
        and bits.shape[:-2] == mu.shape[:-2]
    ):
        # fixed bit rows scored under many mean rows (one x, K sampled means)
        s = np.log1p(-mu)
        d = np.log(mu) - s
        return np.matmul(d, np.swapaxes(bits, -1, -2))[..., 0] + np.sum(s, axis=-1)
    return np.sum(bits * np.log(mu) + (1.0 - bits) * np.log1p(-mu), axis=-1)


def bernoulli_sample(mu: np.ndarray, rng: RandomStream) -> np.ndarray:
    """Draw independent Bernoulli bits with the given means (0.0/1.0 array)."""
    mu = np.asarray(mu, dtype=np.float64)
    u = rng.uniform(mu.shape)
    return (u < mu).astype(np.float64)
