"""Training configs and the flat key=value config-file format.

Defaults are the published recipe for both stages; anything can be overridden
from a config file with dotted keys, e.g.

    seed=7
    encoder.d_model=16
    pretrain.learning_rate=0.001
    noise.deletion_ratio=0.6
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 1
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    scheduler: str = "constant"
    batch_size: int = 128
    evaluation_steps: int = 500
    save_best: bool = True
    show_progress: bool = True
    use_amp: bool = False
    max_steps: int | None = None

    def __post_init__(self):
        _check_common(self)


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 1
    learning_rate: float = 1e-5
    weight_decay: float = 1e-6
    scheduler: str = "constant"
    batch_size: int = 128
    evaluation_steps: int = 500
    save_best: bool = True
    show_progress: bool = True
    use_amp: bool = False
    max_steps: int | None = None
    scale: float = 20.0

    def __post_init__(self):
        _check_common(self)
        if self.scale <= 0:
            raise ValueError("scale must be positive")


def _check_common(cfg) -> None:
    if cfg.scheduler != "constant":
        raise ValueError(f"only the constant scheduler is supported, got {cfg.scheduler!r}")
    if cfg.use_amp:
        raise ValueError("mixed precision is not supported; training is float64 only")
    if cfg.epochs < 0 or cfg.batch_size < 1 or cfg.evaluation_steps < 1:
        raise ValueError("epochs must be >= 0, batch_size and evaluation_steps >= 1")
    if cfg.learning_rate < 0 or cfg.weight_decay < 0:
        raise ValueError("learning_rate and weight_decay must be non-negative")
    if cfg.max_steps is not None and cfg.max_steps < 1:
        raise ValueError("max_steps must be >= 1 when set")


# encoder overrides the CLI accepts before vocab_size is known
ENCODER_KEYS = {
    "d_model": int,
    "n_heads": int,
    "n_layers": int,
    "ffn_dim": int,
    "max_len": int,
    "pooling": str,
    "dropout": float,
}


@dataclass
class Settings:
    """Everything the CLI reads from --config, with defaults baked in."""

    seed: int = 0
    min_count: int = 1
    deletion_ratio: float = 0.6
    decoder_layers: int = 1
    encoder: dict = dataclasses.field(default_factory=dict)
    pretrain: PretrainConfig = dataclasses.field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = dataclasses.field(default_factory=FinetuneConfig)


def parse_config_text(text: str) -> dict[str, str]:
    """key=value lines; blank lines and # comments are skipped."""
    out = {}
    for ln, line in enumerate(text.split("\n"), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {ln}: expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key in out:
            raise ValueError(f"config line {ln}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _convert(key: str, value: str, kind):
    if kind is bool:
        low = value.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {key}: expected a boolean, got {value!r}")
    try:
        return kind(value)
    except ValueError as exc:
        raise ValueError(f"config key {key}: {exc}") from exc


def load_settings(path: str | None = None, seed: int | None = None) -> Settings:
    """Build Settings from an optional config file; an explicit seed wins."""
    settings = Settings()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            flat = parse_config_text(fh.read())
        pre: dict = {}
        fin: dict = {}
        for key, value in flat.items():
            section, _, name = key.partition(".")
            if key == "seed":
                settings.seed = _convert(key, value, int)
            elif key == "min_count":
                settings.min_count = _convert(key, value, int)
            elif key == "decoder_layers":
                settings.decoder_layers = _convert(key, value, int)
            elif key == "noise.deletion_ratio":
                settings.deletion_ratio = _convert(key, value, float)
            elif section == "encoder" and name in ENCODER_KEYS:
                settings.encoder[name] = _convert(key, value, ENCODER_KEYS[name])
            elif section in ("pretrain", "finetune") and name:
                target = pre if section == "pretrain" else fin
                proto = PretrainConfig if section == "pretrain" else FinetuneConfig
                types = {f.name: f.type for f in dataclasses.fields(proto)}
                if name not in types:
                    raise ValueError(f"unknown config key {key!r}")
                if name == "max_steps":
                    target[name] = None if value.lower() == "none" else _convert(key, value, int)
                elif name in ("save_best", "show_progress", "use_amp"):
                    target[name] = _convert(key, value, bool)
                elif name in ("epochs", "batch_size", "evaluation_steps"):
                    target[name] = _convert(key, value, int)
                elif name == "scheduler":
                    target[name] = value
                else:
                    target[name] = _convert(key, value, float)
            else:
                raise ValueError(f"unknown config key {key!r}")
        settings.pretrain = PretrainConfig(**pre)
        settings.finetune = FinetuneConfig(**fin)
    if seed is not None:
        settings.seed = seed
    return settings
