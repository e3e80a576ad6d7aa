"""Self-describing checkpoint container for generator, critic, and mappers."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import torch

from .encoding import EncodingConfig
from .fields import ConditionalRadianceField, GeneratorConfig
from .rendering import RenderConfig

FORMAT_TAG = "nerfedit-checkpoint-v1"


@dataclass
class CheckpointBundle:
    field: ConditionalRadianceField
    render_config: RenderConfig
    discriminator_state: dict | None = None
    discriminator_config: dict | None = None
    shape_mapper_state: dict | None = None
    appearance_mapper_state: dict | None = None
    mapper_config: dict | None = None
    step: int = 0

    @property
    def code_dim(self) -> int:
        return self.field.code_dim

    @property
    def has_mappers(self) -> bool:
        return self.shape_mapper_state is not None and self.appearance_mapper_state is not None


def save_checkpoint(path: str | Path, bundle: CheckpointBundle) -> None:
    cfg = bundle.field.cfg
    payload = {
        "format": FORMAT_TAG,
        "encoding": asdict(cfg.encoding),
        "generator": {k: v for k, v in asdict(cfg).items() if k != "encoding"},
        "code_dim": cfg.code_dim,
        "renderer": asdict(bundle.render_config),
        "generator_state": bundle.field.state_dict(),
        "discriminator_state": bundle.discriminator_state,
        "discriminator_config": bundle.discriminator_config,
        "mappers": {
            "shape": bundle.shape_mapper_state,
            "appearance": bundle.appearance_mapper_state,
            "config": bundle.mapper_config,
        },
        "step": bundle.step,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> CheckpointBundle:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    tag = payload.get("format")
    if tag != FORMAT_TAG:
        raise ValueError(f"unsupported checkpoint format: {tag!r}")
    enc = EncodingConfig(**payload["encoding"])
    gen_cfg = GeneratorConfig(encoding=enc, **payload["generator"])
    field = ConditionalRadianceField(gen_cfg)
    field.load_state_dict(payload["generator_state"])
    field.eval()
    mappers = payload.get("mappers") or {}
    return CheckpointBundle(
        field=field,
        render_config=RenderConfig(**payload["renderer"]),
        discriminator_state=payload.get("discriminator_state"),
        discriminator_config=payload.get("discriminator_config"),
        shape_mapper_state=mappers.get("shape"),
        appearance_mapper_state=mappers.get("appearance"),
        mapper_config=mappers.get("config"),
        step=payload.get("step", 0),
    )
