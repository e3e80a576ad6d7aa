"""Feed-forward code mappers and latent edit arithmetic."""

from __future__ import annotations

import torch
import torch.nn as nn

from .clipbridge import Embedding


class CodeMapper(nn.Module):
    """Embedding -> latent-code displacement.

    A learned projection brings the embedding down to the first channel
    width, followed by two ReLU layers (channels 128, 256, 128 by default).
    The output layer starts at zero so an untrained mapper is the identity
    edit.
    """

    def __init__(self, embed_dim: int, code_dim: int = 128, channels: tuple[int, int, int] = (128, 256, 128)):
        super().__init__()
        if channels[-1] != code_dim:
            raise ValueError(
                f"last channel {channels[-1]} must equal code dim {code_dim}"
            )
        self.embed_dim = embed_dim
        self.code_dim = code_dim
        self.project = nn.Linear(embed_dim, channels[0])
        self.net = nn.Sequential(
            nn.ReLU(),
            nn.Linear(channels[0], channels[1]),
            nn.ReLU(),
            nn.Linear(channels[1], channels[2]),
        )
        out = self.net[-1]
        nn.init.zeros_(out.weight)
        nn.init.zeros_(out.bias)

    def forward(self, e: torch.Tensor) -> torch.Tensor:
        if e.shape[-1] != self.embed_dim:
            raise ValueError(
                f"embedding dim {e.shape[-1]} != mapper input dim {self.embed_dim}"
            )
        return self.net(self.project(e))

    def config(self) -> dict:
        first = self.project.out_features
        mid = self.net[1].out_features
        return {
            "embed_dim": self.embed_dim,
            "code_dim": self.code_dim,
            "channels": (first, mid, self.code_dim),
        }


def _values(e) -> torch.Tensor:
    return e.values if isinstance(e, Embedding) else torch.as_tensor(e)


def map_shape(e, mapper: CodeMapper) -> torch.Tensor:
    """Shape-code displacement for a target embedding."""
    return mapper(_values(e))


def map_appearance(e, mapper: CodeMapper) -> torch.Tensor:
    """Appearance-code displacement for a target embedding."""
    return mapper(_values(e))


def apply_edit_direction(z: torch.Tensor, dz: torch.Tensor, s: float = 1.0) -> torch.Tensor:
    """Move along an edit direction: s * dz + z."""
    if z.shape != dz.shape:
        raise ValueError(f"code shape {tuple(z.shape)} != direction shape {tuple(dz.shape)}")
    return s * dz + z


def interpolate_codes(
    z1: tuple[torch.Tensor, torch.Tensor],
    z2: tuple[torch.Tensor, torch.Tensor],
    r: float,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Blend (z_s, z_a) pairs: z2 * r + z1 * (1 - r), component-wise."""
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"interpolation ratio {r} outside [0, 1]")
    return tuple(b * r + a * (1.0 - r) for a, b in zip(z1, z2))
