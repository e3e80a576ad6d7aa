"""Run configuration: one YAML file validated into per-module configs."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .encoding import EncodingConfig
from .fields import GeneratorConfig
from .rendering import RenderConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EmbedderConfig:
    kind: str = "stub"  # stub | pretrained
    dim: int = 512
    seed: int = 0
    model_name: str = "openai/clip-vit-base-patch32"
    weights_path: str | None = None
    weights_sha256: str | None = None

    def __post_init__(self):
        if self.kind not in ("stub", "pretrained"):
            raise ConfigError(f"embedder.kind must be stub or pretrained, got {self.kind!r}")


@dataclass(frozen=True)
class TrainSettings:
    lambda_r: float = 0.5
    lambda_c: float = 0.5  # weight of the embedding-distance term, not given upstream
    lr: float = 1e-4
    lr_decay: float = 0.5
    lr_decay_every: int = 50_000
    batch_size: int = 8
    patch_size: int = 32
    steps: int = 20_000
    mapper_steps: int = 2_000
    mapper_render_res: int = 64
    log_every: int = 50
    checkpoint_every: int = 2_000
    seed: int = 0
    deterministic: bool = False

    def __post_init__(self):
        for name in ("lambda_r", "lambda_c"):
            if getattr(self, name) < 0:
                raise ConfigError(f"train.{name} must be >= 0")
        if not 0.0 < self.lr_decay < 1.0:
            raise ConfigError("train.lr_decay must lie in (0, 1)")
        if self.lr <= 0:
            raise ConfigError("train.lr must be positive")
        if self.batch_size < 1 or self.patch_size < 1:
            raise ConfigError("train.batch_size and train.patch_size must be >= 1")


@dataclass(frozen=True)
class InversionSettings:
    lambda_v: float = 0.1
    lambda_s: float = 0.2
    lambda_a: float = 0.2
    lr: float = 1e-3
    lr_decay: float = 0.75
    lr_decay_every: int = 100
    pose_lr: float = 0.05
    rounds: int = 5
    pose_steps: int = 50
    shape_steps: int = 100
    appearance_steps: int = 100

    def __post_init__(self):
        for name in ("lambda_v", "lambda_s", "lambda_a"):
            if getattr(self, name) < 0:
                raise ConfigError(f"inversion.{name} must be >= 0")
        if not 0.0 < self.lr_decay < 1.0:
            raise ConfigError("inversion.lr_decay must lie in (0, 1)")
        if min(self.rounds, self.pose_steps, self.shape_steps, self.appearance_steps) < 1:
            raise ConfigError("inversion round/step counts must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    renderer: RenderConfig = field(default_factory=RenderConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    inversion: InversionSettings = field(default_factory=InversionSettings)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["generator"].pop("encoding")  # lives under the top-level encoding key
        return d


_SECTION_TYPES = {
    "encoding": EncodingConfig,
    "generator": GeneratorConfig,
    "renderer": RenderConfig,
    "embedder": EmbedderConfig,
    "train": TrainSettings,
    "inversion": InversionSettings,
}


def _build_section(name: str, cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in fields(cls)} - {"encoding"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {sorted(unknown)}")
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value in section {name!r}: {exc}") from exc


def config_from_dict(data: dict | None) -> RunConfig:
    data = dict(data or {})
    unknown = set(data) - set(_SECTION_TYPES) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    sections = {}
    for name, cls in _SECTION_TYPES.items():
        sections[name] = _build_section(name, cls, data.get(name, {}))
    enc = sections.pop("encoding")
    gen_kwargs = {k: v for k, v in asdict(sections.pop("generator")).items() if k != "encoding"}
    generator = GeneratorConfig(encoding=enc, **gen_kwargs)
    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    return RunConfig(seed=seed, encoding=enc, generator=generator, **sections)


def load_config(path: str | Path | None) -> RunConfig:
    """Parse and validate a YAML run config; missing keys take defaults."""
    if path is None:
        return RunConfig()
    raw = Path(path).read_text()
    try:
        data = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return config_from_dict(data)


def save_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=True))
