"""Command-line surface tying everything into reproducible experiments.

Subcommands: ``train``, ``eval``, ``refine``, ``sample``, ``oracle-check``.
Every command is deterministic given (config, seed); the only
non-reproducible output is the wall_s timing column in metrics files.

Exit codes: 0 success, 1 check failure, 2 config/usage error, 3 I/O
error, 4 numeric/validation abort.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, build_models, load_checkpoint, save_checkpoint
from .checks import oracle_battery
from .config import (
    ConfigError,
    ExperimentConfig,
    apply_setting,
    load_config,
    load_preset,
)
from .data import (
    BinaryDataset,
    batches,
    binarize,
    load_bmat,
    load_idx,
    make_splits,
    save_bmat,
    synth_teacher,
)
from .inference import bound_estimates_chunked, refine
from .model import ENUMERATION_CAP_BITS, GenerativeParams, ancestral_sample, init_generative
from .numerics import RandomStream
from .recognition import center, initial_means, q_sample_batch
from .training import (
    NonFiniteGradientError,
    OptimizerState,
    air_train_step,
    early_stopping,
    evaluate_bound,
    finetune_schedule,
    rws_train_step,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

METRICS_SCHEMA = "# schema=1"
METRICS_HEADER = "phase,epoch,split,estimator,L1_hat,LK_hat,ess_norm,degenerate_frac,lr,wall_s"

def make_teacher(cfg: ExperimentConfig) -> GenerativeParams:
    """Frozen teacher model, reproducible from the teacher seed alone.

    Weights are drawn at the configured scale; near-zero init would make
    the synthetic task trivial (posterior equal to the prior).
    """
    rng = RandomStream(cfg.teacher_seed, 900)
    gen = init_generative(cfg.teacher_layer_dims, cfg.teacher_prior, rng)
    g = rng.generator
    for _, arr in gen.arrays():
        if arr.ndim == 2:
            arr[...] = g.normal(0.0, cfg.teacher_weight_std, size=arr.shape)
        else:
            arr[...] = g.normal(0.0, cfg.teacher_bias_std, size=arr.shape)
    if cfg.teacher_prior == "autoregressive":
        gen.prior.enforce_triangular()
    return gen


def resolve_datasets(cfg: ExperimentConfig) -> dict[str, BinaryDataset]:
    if cfg.data_kind == "teacher":
        teacher = make_teacher(cfg)
        n = {"train": cfg.n_train, "valid": cfg.n_valid, "test": cfg.n_test}
        return synth_teacher(teacher, n, RandomStream(cfg.teacher_seed, 901))
    if cfg.data_kind == "bmat":
        return make_splits(
            load_bmat(cfg.data_train), load_bmat(cfg.data_valid), load_bmat(cfg.data_test)
        )
    if cfg.data_kind == "idx":
        train = binarize(load_idx(cfg.data_train))
        test = binarize(load_idx(cfg.data_test))
        if cfg.data_valid:
            valid = binarize(load_idx(cfg.data_valid))
        else:
            # held-out validation: last 10000 training rows
            train, valid = train[:-10000], train[-10000:]
        return make_splits(train, valid, test)
    raise ConfigError(f"unknown data kind {cfg.data_kind!r}")


def _fmt(v: float) -> str:
    return repr(float(v))


class MetricsWriter:
    def __init__(self, path: Path):
        self.path = path
        path.write_text(METRICS_SCHEMA + "\n" + METRICS_HEADER + "\n")

    def row(self, phase, epoch, split, estimator, m, lr, wall_s) -> None:
        line = ",".join(
            [
                phase,
                str(epoch),
                split,
                estimator,
                _fmt(m.l1_hat),
                _fmt(m.lk_hat),
                _fmt(m.ess_norm),
                _fmt(m.degenerate_frac),
                _fmt(lr),
                f"{wall_s:.3f}",
            ]
        )
        with open(self.path, "a") as f:
            f.write(line + "\n")


def _chunked(n: int, size: int):
    for start in range(0, n, size):
        yield start, min(n, start + size)


def run_training(cfg: ExperimentConfig, log=print) -> dict[str, Path]:
    """Main + fine-tune training with early stopping; returns output paths."""
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    root = RandomStream(cfg.seed)
    splits = resolve_datasets(cfg)
    train_ds, valid_ds = splits["train"], splits["valid"]
    gen, rec = build_models(cfg, root.substream(100))
    opt_theta = OptimizerState(lr=cfg.lr)
    opt_phi = OptimizerState(lr=cfg.lr)
    writer = MetricsWriter(out / "metrics.csv")
    step_fn = rws_train_step if cfg.estimator == "rws" else air_train_step
    best_path, last_path = out / "best.ckpt", out / "last.ckpt"

    def checkpoint(epoch: int) -> Checkpoint:
        return Checkpoint(gen, rec, opt_theta, opt_phi, cfg, epoch, cfg.seed)

    total = cfg.epochs + cfg.finetune_epochs
    history: list[float] = []
    for epoch in range(total):
        t0 = time.perf_counter()
        lr = finetune_schedule(epoch, cfg.lr, cfg.epochs, cfg.finetune_decay)
        opt_theta.lr = opt_phi.lr = lr
        phase = "main" if epoch < cfg.epochs else "finetune"
        sums = np.zeros(4)
        n_batches = 0
        for b_idx, idx in enumerate(
            batches(train_ds, cfg.batch_size, root.substream(1, epoch), shuffle=True)
        ):
            try:
                m = step_fn(
                    gen, rec, train_ds.rows[idx], train_ds.mean_image, cfg,
                    root.substream(2, epoch, b_idx), opt_theta, opt_phi,
                )
            except NonFiniteGradientError as exc:
                raise NonFiniteGradientError(
                    f"{exc.param_name} (epoch {epoch}, batch {b_idx})"
                ) from exc
            sums += (m.l1_hat, m.lk_hat, m.ess_norm, m.degenerate_frac)
            n_batches += 1
        train_m = _MeanMetrics(*(sums / n_batches))
        wall = time.perf_counter() - t0
        writer.row(phase, epoch, "train", cfg.estimator, train_m, lr, wall)
        valid_m = _validation_bound(gen, rec, valid_ds, cfg, root.substream(3, epoch))
        writer.row(phase, epoch, "valid", cfg.estimator, valid_m, lr, wall)
        history.append(valid_m.l1_hat)
        stop, best = early_stopping(history, cfg.patience)
        if best == epoch:
            save_checkpoint(best_path, checkpoint(epoch + 1))
        log(
            f"epoch {epoch} [{phase}] train L1={train_m.l1_hat:.4f} "
            f"valid L1={valid_m.l1_hat:.4f} ess_norm={train_m.ess_norm:.3f}"
        )
        if stop:
            log(f"early stop at epoch {epoch} (best epoch {best})")
            break
    save_checkpoint(last_path, checkpoint(len(history)))
    if not best_path.exists():
        save_checkpoint(best_path, checkpoint(len(history)))
    return {"best": best_path, "last": last_path, "metrics": writer.path}


class _MeanMetrics:
    def __init__(self, l1, lk, ess, deg):
        self.l1_hat, self.lk_hat, self.ess_norm, self.degenerate_frac = l1, lk, ess, deg


def _validation_bound(gen, rec, valid_ds, cfg, rng, chunk_rows: int = 500):
    t = 0 if cfg.estimator == "rws" else cfg.t_steps
    sums, n = np.zeros(4), 0
    for ci, (lo, hi) in enumerate(_chunked(valid_ds.n, chunk_rows)):
        m = evaluate_bound(
            gen, rec, valid_ds.rows[lo:hi], valid_ds.mean_image, cfg,
            rng.substream(ci), t,
        )
        w = hi - lo
        sums += np.asarray([m.l1_hat, m.lk_hat, m.ess_norm, m.degenerate_frac]) * w
        n += w
    return _MeanMetrics(*(sums / n))


def eval_rows(
    gen,
    rec,
    rows: np.ndarray,
    mean_image: np.ndarray,
    k_eval: int,
    t_refine: int,
    gamma: float,
    m_samples: int,
    seed: int,
    chunk_rows: int = 100,
) -> dict:
    """Per-row bound estimates with and without refinement at test.

    The refined and unrefined estimates share random-number substreams
    (common random numbers), so their per-row difference isolates the
    effect of refinement.  Sampling is chunked to keep K=100000 in memory.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    root = RandomStream(seed, 500)
    width = rows.shape[1] + sum(m.shape[1] for m in initial_means(rec, rows[:1]).mu)
    per = {"l1": [], "lk": [], "ess": []}
    out = {"unrefined": {k: [] for k in per}, "refined": {k: [] for k in per}}
    for ci, (lo, hi) in enumerate(_chunked(rows.shape[0], chunk_rows)):
        chunk = rows[lo:hi]
        sample_chunk = max(16, int(2_000_000 / max(1, chunk.shape[0] * width)))
        state0 = initial_means(rec, center(chunk, mean_image))
        state_t, _ = refine(
            gen, chunk, state0, t_refine, gamma, m_samples,
            root.substream(ci, 1), want_trace=False,
        )
        for tag, state in (("unrefined", state0), ("refined", state_t)):
            l1, lk, ess = bound_estimates_chunked(
                gen, chunk, state, k_eval, root.substream(ci, 2), chunk=sample_chunk
            )
            out[tag]["l1"].extend(l1.tolist())
            out[tag]["lk"].extend(lk.tolist())
            out[tag]["ess"].extend(ess.tolist())
    report = {"schema": 1, "rows": rows.shape[0], "k_eval": k_eval, "t_refine": t_refine}
    for tag in ("unrefined", "refined"):
        report[tag] = {
            "l1_hat": float(np.mean(out[tag]["l1"])),
            "lk_hat": float(np.mean(out[tag]["lk"])),
            "ess_norm": float(np.mean(out[tag]["ess"])) / k_eval,
        }
    report["per_row"] = {
        "unrefined_lk": out["unrefined"]["lk"],
        "refined_lk": out["refined"]["lk"],
        "unrefined_l1": out["unrefined"]["l1"],
        "refined_l1": out["refined"]["l1"],
    }
    return report


def degrade_state(state, fraction: float, rng: RandomStream):
    """Set a seeded random fraction of the variational means to 0.5."""
    out = state.copy()
    for mu in out.mu:
        mask = rng.uniform(mu.shape) < fraction
        mu[mask] = 0.5
    return out


def average_reconstruction(gen, state, n_samples: int, rng: RandomStream) -> np.ndarray:
    """Mean visible Bernoulli means over posterior samples: [rows x D]."""
    from .model import layer_mean

    h1 = q_sample_batch(state, n_samples, rng)[0]  # [B x N x H1]
    return layer_mean(gen.layers[0], h1).mean(axis=1)


# ---------------------------------------------------------------- commands


def _build_config(args) -> ExperimentConfig:
    if getattr(args, "preset", None):
        cfg = load_preset(args.preset)
    elif getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = ExperimentConfig()
    for setting in getattr(args, "set", None) or []:
        if "=" not in setting:
            raise ConfigError(f"--set expects key=value, got {setting!r}")
        key, _, value = setting.partition("=")
        apply_setting(cfg, key.strip(), value)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg


def cmd_train(args) -> int:
    cfg = _build_config(args)
    paths = run_training(cfg)
    print(f"wrote {paths['best']}, {paths['last']}, {paths['metrics']}")
    return EXIT_OK


def _load_eval_rows(ckpt: Checkpoint, args, split: str = "test") -> tuple[np.ndarray, np.ndarray]:
    if getattr(args, "data", None):
        rows = load_bmat(args.data)
        mean_image = resolve_datasets(ckpt.config)["train"].mean_image
    else:
        ds = resolve_datasets(ckpt.config)[split]
        rows, mean_image = ds.rows, ds.mean_image
    cap = getattr(args, "rows", None)
    if cap:
        rows = rows[:cap]
    return rows, mean_image


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = ckpt.config
    rows, mean_image = _load_eval_rows(ckpt, args)
    k_eval = args.eval_samples or cfg.k_eval
    t_refine = cfg.t_refine if args.steps is None else args.steps
    report = eval_rows(
        ckpt.gen, ckpt.rec, rows, mean_image, k_eval, t_refine,
        args.gamma or cfg.gamma, args.samples or cfg.m_samples,
        args.seed if args.seed is not None else cfg.seed,
    )
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "eval_report.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    for tag in ("unrefined", "refined"):
        r = report[tag]
        print(
            f"{tag}: L1={r['l1_hat']:.4f} LK={r['lk_hat']:.4f} "
            f"ess_norm={r['ess_norm']:.4f}"
        )
    print(f"wrote {path}")
    return EXIT_OK


def cmd_refine(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = ckpt.config
    rows, mean_image = _load_eval_rows(ckpt, args)
    t = cfg.t_refine if args.steps is None else args.steps
    gamma = args.gamma or cfg.gamma
    m = args.samples or cfg.m_samples
    seed = args.seed if args.seed is not None else cfg.seed
    root = RandomStream(seed, 600)
    state0 = initial_means(ckpt.rec, center(rows, mean_image))
    if args.degrade:
        state0 = degrade_state(state0, args.degrade, root.substream(0))
    # before/after reconstructions share a substream (common random numbers)
    recon_before = average_reconstruction(ckpt.gen, state0, cfg.n_samples, root.substream(1))
    state_t, trace = refine(ckpt.gen, rows, state0, t, gamma, m, root.substream(2))
    recon_after = average_reconstruction(ckpt.gen, state_t, cfg.n_samples, root.substream(1))
    err_before = np.sum((rows - recon_before) ** 2, axis=1)
    err_after = np.sum((rows - recon_after) ** 2, axis=1)
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "recon_before.csv", recon_before)
    _write_csv(out / "recon_after.csv", recon_after)
    with open(out / "trace.csv", "w") as f:
        f.write("row,step,L1_hat,LK_hat,ess_norm\n")
        for r in range(rows.shape[0]):
            for step in range(trace.l1_hat.shape[0]):
                f.write(
                    f"{r},{step},{_fmt(trace.l1_hat[step, r])},"
                    f"{_fmt(trace.lk_hat[step, r])},"
                    f"{_fmt(trace.ess[step, r] / trace.n_samples)}\n"
                )
    report = {
        "schema": 1,
        "rows": rows.shape[0],
        "t_refine": t,
        "degrade": args.degrade or 0.0,
        "err_before": err_before.tolist(),
        "err_after": err_after.tolist(),
        "improved_fraction": float(np.mean(err_after <= err_before + 1e-12)),
    }
    (out / "refine_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n"
    )
    print(
        f"refined {rows.shape[0]} rows, reconstruction error improved on "
        f"{report['improved_fraction']:.0%}"
    )
    return EXIT_OK


def _write_csv(path: Path, mat: np.ndarray) -> None:
    with open(path, "w") as f:
        for row in np.atleast_2d(mat):
            f.write(",".join(_fmt(v) for v in row) + "\n")


def cmd_sample(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    seed = args.seed if args.seed is not None else ckpt.config.seed
    x, _ = ancestral_sample(ckpt.gen, RandomStream(seed, 700), n=args.n)
    out = Path(args.out or ckpt.config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "samples.bmat"
    save_bmat(path, x)
    print(f"wrote {args.n} samples to {path}")
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        gen, rec, cfg = ckpt.gen, ckpt.rec, ckpt.config
    else:
        cfg = _build_config(args)
        cfg.validate()
        gen, rec = build_models(cfg, RandomStream(cfg.seed).substream(100))
        # fresh config-built models get structured weights; the training
        # init is near-uniform, which makes half the checks vacuous
        g = RandomStream(cfg.seed, 801).generator
        for _, arr in gen.arrays():
            arr[...] = g.normal(0.0, 1.2, size=arr.shape)
        if cfg.prior_kind == "autoregressive":
            gen.prior.enforce_triangular()
        for _, arr in rec.arrays():
            arr[...] = g.normal(0.0, 0.5, size=arr.shape)
    if gen.total_latent_bits > ENUMERATION_CAP_BITS:
        print(
            f"error: model has {gen.total_latent_bits} latent bits, "
            f"enumeration cap is {ENUMERATION_CAP_BITS}",
            file=sys.stderr,
        )
        return EXIT_NUMERIC
    rng = RandomStream(cfg.seed, 800)
    x_rows, _ = ancestral_sample(gen, rng.substream(0), n=6)
    report = oracle_battery(gen, rec, x_rows, rng.substream(1), corrupt=args.corrupt)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "oracle_check.json").write_text(text + "\n")
    print(text)
    return EXIT_OK if report["all_pass"] else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="airbn",
        description="Train and evaluate discrete belief networks with "
        "iterative refinement of the approximate posterior.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def add_config_args(sp):
        sp.add_argument("--config", help="flat key=value config file")
        sp.add_argument("--preset", help="packaged preset name")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
        sp.add_argument("--seed", type=int, help="override the run seed")
        sp.add_argument("--out", help="override the output directory")

    sp = sub.add_parser("train", help="train a model")
    add_config_args(sp)
    sp.set_defaults(fn=cmd_train)

    def add_eval_args(sp):
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--data", help="BMAT file to evaluate (default: config test split)")
        sp.add_argument("--rows", type=int, help="cap the number of rows")
        sp.add_argument("--steps", type=int, help="refinement steps at test")
        sp.add_argument("--gamma", type=float, help="inference rate")
        sp.add_argument("--samples", type=int, help="adaptive samples per step")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")

    sp = sub.add_parser("eval", help="estimate test bounds with/without refinement")
    add_eval_args(sp)
    sp.add_argument("--eval-samples", type=int, help="posterior samples per row")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("refine", help="emit refinement traces and reconstructions")
    add_eval_args(sp)
    sp.add_argument("--degrade", type=float, default=0.0,
                    help="fraction of initial means reset to 0.5")
    sp.set_defaults(fn=cmd_refine)

    sp = sub.add_parser("sample", help="draw ancestral samples from a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_sample)

    sp = sub.add_parser("oracle-check", help="run the oracle-vs-estimator battery")
    add_config_args(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--corrupt", help=argparse.SUPPRESS)  # negative-control hook
    sp.set_defaults(fn=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteGradientError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO if isinstance(exc, OSError) else EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
