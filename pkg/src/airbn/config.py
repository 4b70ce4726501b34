"""Experiment configuration: flat key=value files plus CLI overrides.

The on-disk format is one ``key = value`` per line (``#`` comments),
diff-friendly and language-neutral.  ``to_text`` emits a canonical
rendering so configs round-trip byte-exactly through checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

ESTIMATORS = ("air", "air_rw", "air_rw_ikl", "rws")
PRIORS = ("factorized", "autoregressive")
MODEL_KINDS = ("sbn", "darn")
DATA_KINDS = ("teacher", "bmat", "idx")


class ConfigError(ValueError):
    pass


def _parse_dims(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _parse_stage_map(text: str) -> dict[int, int]:
    """Parse "0:500,1:200" into {0: 500, 1: 200}."""
    out: dict[int, int] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        idx, width = part.split(":")
        out[int(idx)] = int(width)
    return out


def _fmt_dims(dims: list[int]) -> str:
    return ",".join(str(d) for d in dims)


def _fmt_stage_map(m: dict[int, int]) -> str:
    return ",".join(f"{k}:{v}" for k, v in sorted(m.items()))


@dataclass
class ExperimentConfig:
    """Every knob of a training/evaluation run."""

    # model
    model_kind: str = "sbn"
    layer_dims: list[int] = field(default_factory=lambda: [8, 8])  # [D, H_1, ..., H_L]
    prior_kind: str = "factorized"
    gen_hidden: dict[int, int] = field(default_factory=dict)  # layer -> tanh width
    rec_tanh: dict[int, int] = field(default_factory=dict)  # stage -> tanh width
    # training
    estimator: str = "air"
    t_steps: int = 20
    gamma: float = 0.1
    m_samples: int = 20
    n_samples: int = 20
    batch_size: int = 100
    epochs: int = 500
    finetune_epochs: int = 500
    lr: float = 1e-3
    finetune_decay: float = 0.01
    patience: int = 50
    rws_sleep: bool = False
    valid_samples: int = 20
    # evaluation
    k_eval: int = 100000
    t_refine: int = 20
    # data
    data_kind: str = "teacher"
    data_train: str = ""
    data_valid: str = ""
    data_test: str = ""
    teacher_seed: int = 1
    teacher_layer_dims: list[int] = field(default_factory=lambda: [8, 8])
    teacher_prior: str = "factorized"
    teacher_weight_std: float = 1.5
    teacher_bias_std: float = 0.25
    n_train: int = 10000
    n_valid: int = 1000
    n_test: int = 2000
    # run
    seed: int = 0
    out_dir: str = "out"

    def validate(self) -> None:
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"model.kind must be one of {MODEL_KINDS}")
        if self.prior_kind not in PRIORS or self.teacher_prior not in PRIORS:
            raise ConfigError(f"prior kind must be one of {PRIORS}")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"estimator must be one of {ESTIMATORS}")
        if self.data_kind not in DATA_KINDS:
            raise ConfigError(f"data.kind must be one of {DATA_KINDS}")
        if len(self.layer_dims) < 2 or any(d < 1 for d in self.layer_dims):
            raise ConfigError("model.layers needs at least visible,latent positive widths")
        if not (0.0 < self.gamma <= 1.0):
            raise ConfigError("gamma must be in (0, 1]")
        for name in (
            "m_samples",
            "n_samples",
            "batch_size",
            "k_eval",
            "valid_samples",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("t_steps", "t_refine", "epochs", "finetune_epochs", "patience"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.model_kind == "sbn" and (self.gen_hidden or self.rec_tanh):
            raise ConfigError("deterministic tanh stages require model.kind=darn")


# text key -> (attribute, parser, formatter)
_KEYS = {
    "model.kind": ("model_kind", str, str),
    "model.layers": ("layer_dims", _parse_dims, _fmt_dims),
    "model.prior": ("prior_kind", str, str),
    "model.gen_hidden": ("gen_hidden", _parse_stage_map, _fmt_stage_map),
    "model.rec_tanh": ("rec_tanh", _parse_stage_map, _fmt_stage_map),
    "train.estimator": ("estimator", str, str),
    "train.t_steps": ("t_steps", int, str),
    "train.gamma": ("gamma", float, repr),
    "train.m_samples": ("m_samples", int, str),
    "train.n_samples": ("n_samples", int, str),
    "train.batch_size": ("batch_size", int, str),
    "train.epochs": ("epochs", int, str),
    "train.finetune_epochs": ("finetune_epochs", int, str),
    "train.lr": ("lr", float, repr),
    "train.finetune_decay": ("finetune_decay", float, repr),
    "train.patience": ("patience", int, str),
    "train.rws_sleep": ("rws_sleep", lambda s: s.lower() == "true", lambda b: str(b).lower()),
    "train.valid_samples": ("valid_samples", int, str),
    "eval.k_samples": ("k_eval", int, str),
    "eval.t_refine": ("t_refine", int, str),
    "data.kind": ("data_kind", str, str),
    "data.train": ("data_train", str, str),
    "data.valid": ("data_valid", str, str),
    "data.test": ("data_test", str, str),
    "data.teacher_seed": ("teacher_seed", int, str),
    "data.teacher_layers": ("teacher_layer_dims", _parse_dims, _fmt_dims),
    "data.teacher_prior": ("teacher_prior", str, str),
    "data.teacher_weight_std": ("teacher_weight_std", float, repr),
    "data.teacher_bias_std": ("teacher_bias_std", float, repr),
    "data.n_train": ("n_train", int, str),
    "data.n_valid": ("n_valid", int, str),
    "data.n_test": ("n_test", int, str),
    "seed": ("seed", int, str),
    "out.dir": ("out_dir", str, str),
}

_ATTR_TO_KEY = {attr: key for key, (attr, _, _) in _KEYS.items()}


def apply_setting(cfg: ExperimentConfig, key: str, value: str) -> None:
    if key not in _KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    attr, parse, _ = _KEYS[key]
    try:
        setattr(cfg, attr, parse(value.strip()))
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from exc


def parse_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base if base is not None else ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, _, value = line.partition("=")
        apply_setting(cfg, key.strip(), value)
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_text(Path(path).read_text())


def to_text(cfg: ExperimentConfig) -> str:
    """Canonical rendering (field order of the dataclass)."""
    lines = []
    for f in fields(cfg):
        key = _ATTR_TO_KEY[f.name]
        _, _, fmt = _KEYS[key]
        lines.append(f"{key} = {fmt(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def load_preset(name: str) -> ExperimentConfig:
    """Load a packaged preset config by name (without the .cfg suffix)."""
    ref = resources.files("airbn").joinpath("presets", f"{name}.cfg")
    if not ref.is_file():
        available = sorted(
            p.name[:-4]
            for p in resources.files("airbn").joinpath("presets").iterdir()
            if p.name.endswith(".cfg")
        )
        raise ConfigError(f"unknown preset {name!r}; available: {available}")
    return parse_text(ref.read_text())
