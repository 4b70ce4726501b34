"""Oracle-vs-estimator check battery behind the ``oracle-check`` command.

Runs the full desk-scale verification suite against a model that fits
inside the enumeration cap: weight normalization, ESS bounds, bound
ordering, unbiasedness, gradient agreement with finite differences, the
score identity, and refinement improvement.  Produces a machine-readable
verdict with a stable schema.
"""

from __future__ import annotations

import numpy as np

from .inference import (
    air_step_batch,
    effective_sample_size,
    estimate_LK,
    importance_set,
    lowerbound_L1,
)
from .model import GenerativeParams
from .numerics import RandomStream
from .oracle import (
    exact_grad,
    exact_L1,
    exact_logp,
    exact_posterior,
    finite_difference,
    latent_configs,
    score_objective,
)
from .recognition import RecognitionParams, center, initial_means
from .training import grad_phi_weighted

CHECK_SCHEMA = 1


def _rel_err(a: dict[str, np.ndarray], b: dict[str, np.ndarray]) -> float:
    worst = 0.0
    for name in a:
        denom = max(np.max(np.abs(a[name])), 1e-8)
        worst = max(worst, float(np.max(np.abs(a[name] - b[name])) / denom))
    return worst


def oracle_battery(
    gen: GenerativeParams,
    rec: RecognitionParams,
    x_rows: np.ndarray,
    rng: RandomStream,
    corrupt: str | None = None,
) -> dict:
    """Run every check and return the verdict report.

    ``corrupt`` is a test hook: "weight-normalization" scales the
    normalized weights before the normalization check, which must then
    fail by name (negative control for the battery itself).
    """
    checks: list[dict] = []

    def record(name: str, ok: bool, detail: str) -> None:
        checks.append({"name": name, "pass": bool(ok), "detail": detail})

    x_rows = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
    mean_image = x_rows.mean(axis=0)
    xc = center(x_rows, mean_image)
    state = initial_means(rec, xc)
    n_rows = x_rows.shape[0]

    # normalized weights and ESS bounds
    k = 25
    sets = [
        importance_set(gen, x_rows, state, i, k, rng.substream(10, i))
        for i in range(n_rows)
    ]
    scale = 1.05 if corrupt == "weight-normalization" else 1.0
    sums = [float(np.sum(scale * s.w_tilde)) for s in sets]
    worst = max(abs(s - 1.0) for s in sums)
    record("weights_sum_to_one", worst <= 1e-12, f"max |sum-1| = {worst:.3e}")
    ess = [effective_sample_size(s) for s in sets]
    ok = all(1.0 - 1e-9 <= e <= k + 1e-9 for e in ess)
    record("ess_in_bounds", ok, f"ess range [{min(ess):.3f}, {max(ess):.3f}] with K={k}")

    # bound ordering and unbiasedness on the first row, replicated
    reps = 400
    x0 = x_rows[:1]
    logp = exact_logp(gen, x0[0])
    l1s, lk5s, lk25s, p_hats = [], [], [], []
    for r in range(reps):
        s25 = importance_set(gen, x0, state.row(0), 0, 25, rng.substream(11, r))
        l1s.append(lowerbound_L1(s25))
        lk25s.append(estimate_LK(s25))
        s5 = importance_set(gen, x0, state.row(0), 0, 5, rng.substream(12, r))
        lk5s.append(estimate_LK(s5))
        p_hats.append(np.exp(estimate_LK(s25)))
    def mean_se(v):
        v = np.asarray(v)
        return float(v.mean()), float(v.std(ddof=1) / np.sqrt(len(v)))
    m1, se1 = mean_se(l1s)
    m5, se5 = mean_se(lk5s)
    m25, se25 = mean_se(lk25s)
    ordering_ok = (
        m1 <= m5 + 3 * np.hypot(se1, se5)
        and m5 <= m25 + 3 * np.hypot(se5, se25)
        and m25 <= logp + 3 * se25
    )
    record(
        "bound_ordering",
        ordering_ok,
        f"E[L1]={m1:.4f} E[LK5]={m5:.4f} E[LK25]={m25:.4f} logp={logp:.4f}",
    )
    mp, sep = mean_se(p_hats)
    p_true = np.exp(logp)
    record(
        "lk_unbiased",
        abs(mp - p_true) <= 3 * sep,
        f"mean exp(LK)={mp:.6f} vs p(x)={p_true:.6f} (3se={3 * sep:.6f})",
    )

    # gradient agreement with central finite differences
    theta_exact = exact_grad(gen, x0[0], "L1_theta", state.row(0))
    theta_fd = finite_difference(
        lambda: exact_L1(gen, x0[0], state.row(0)), dict(gen.arrays())
    )
    err = _rel_err(theta_exact, theta_fd)
    record("grad_theta_matches_fd", err <= 1e-4, f"max rel err {err:.3e}")

    # phi gradient checked with posterior weights (q_0's own weights would
    # give the zero score-identity gradient, which cannot anchor a relative
    # comparison)
    configs = latent_configs(gen.latent_dims)
    weights = exact_posterior(gen, x0[0]).posterior
    phi_exact = grad_phi_weighted(
        rec, xc[0], [h[None, :, :] for h in configs], weights[None, :]
    )
    phi_fd = finite_difference(
        lambda: score_objective(rec, xc[0], configs, weights), dict(rec.arrays())
    )
    err = _rel_err(phi_exact, phi_fd)
    record("grad_phi_matches_fd", err <= 1e-4, f"max rel err {err:.3e}")

    score = exact_grad(gen, x0[0], "score_phi", state.row(0), rec=rec, x_centered=xc[:1])
    worst = max(float(np.max(np.abs(g))) for g in score.values())
    record("score_identity_zero", worst <= 1e-10, f"max |score| = {worst:.3e}")

    # refinement must improve the exact bound wherever it is meaningfully
    # loose, and never degrade a tight start by more than 0.01 nats
    refined = state.copy()
    for t in range(20):
        refined, _, _ = air_step_batch(gen, x_rows, refined, 0.1, 20, rng.substream(13, t))
    ok_rows = []
    for i in range(n_rows):
        before = exact_L1(gen, x_rows[i], state, i)
        after = exact_L1(gen, x_rows[i], refined, i)
        loose = before < exact_logp(gen, x_rows[i]) - 0.05
        ok_rows.append(after > before if loose else after >= before - 0.01)
    frac = float(np.mean(ok_rows))
    record("refine_improves_exact_L1", frac >= 0.9, f"ok on {frac:.0%} of rows")

    return {
        "schema": CHECK_SCHEMA,
        "checks": checks,
        "all_pass": all(c["pass"] for c in checks),
    }
