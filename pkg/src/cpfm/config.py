"""Run configuration: defaults, flat key=value files, CLI overrides."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .encoder import EncoderConfig
from .errors import ConfigError
from .losses import LossWeights


@dataclass(frozen=True)
class RunConfig:
    """Everything a training or adaptation run needs besides data paths."""

    # encoder architecture
    series_len: int = 128
    channels: int = 3
    patch_len: int = 16
    model_dim: int = 64
    heads: int = 4
    layers: int = 2
    prompt_len: int = 4
    classes: int = 5
    mask_ratio: float = 0.3
    # loss trade-offs
    gamma1: float = 0.1
    gamma2: float = 1.0
    pi: float = 0.5
    ema_gamma: float = 0.7
    # optimization
    epochs: int = 40
    epochs_src: int = 20
    batch_size: int = 32
    lr: float = 5e-3
    seed: int = 0
    backbone_seed: int = 1234
    # multi-source momentum: a pseudo-label counts once its confidence
    # clears this threshold
    conf_threshold: float = 0.5
    # ablation switches
    no_prompt: bool = False
    no_input_recon: bool = False
    no_prompt_recon: bool = False
    naive_avg: bool = False
    clone_prompts: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.epochs_src < 1:
            raise ConfigError("epoch counts must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")

    def encoder_config(self) -> EncoderConfig:
        lp = 0 if self.no_prompt else self.prompt_len
        return EncoderConfig(
            series_len=self.series_len, channels=self.channels,
            patch_len=self.patch_len, model_dim=self.model_dim,
            heads=self.heads, layers=self.layers, prompt_len=lp,
            classes=self.classes, mask_ratio=self.mask_ratio,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            prompt_recon=0.0 if self.no_prompt_recon else self.gamma1,
            input_recon=0.0 if self.no_input_recon else self.gamma2,
            masked_fraction=self.pi,
        )

    def with_overrides(self, **kwargs) -> "RunConfig":
        return replace(self, **kwargs)


def _coerce(raw: str, target_type):
    if target_type is bool:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {raw!r}")
    return target_type(raw)


def load_config_file(path) -> dict:
    """Flat key=value lines; '#' starts a comment, blanks ignored."""
    known = {f.name: f.type for f in fields(RunConfig)}
    types = {f.name: type(getattr(RunConfig(), f.name)) for f in fields(RunConfig)}
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _coerce(raw, types[key])
    return values


def build_config(file_path=None, overrides: dict | None = None) -> RunConfig:
    """defaults < config file < explicit overrides."""
    values: dict = {}
    if file_path:
        values.update(load_config_file(file_path))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)
