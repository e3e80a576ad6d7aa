"""Disentangled conditional radiance field and its deformation network.

Density is a function of the shape-deformed positional encoding alone; the
appearance code and the view direction only enter the radiance branch, so
shape and appearance conditioning cannot interfere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoding import EncodingConfig, positional_encode


@dataclass(frozen=True)
class GeneratorConfig:
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    code_dim: int = 128
    trunk_width: int = 256
    trunk_depth: int = 8
    deform_width: int = 256
    deform_depth: int = 4
    rgb_hidden: int = 128

    def __post_init__(self):
        if self.code_dim < 1:
            raise ValueError("code_dim must be >= 1")
        if self.trunk_depth < 1 or self.deform_depth < 1:
            raise ValueError("network depths must be >= 1")


def _relu_stack(in_dim: int, width: int, depth: int) -> nn.Sequential:
    """``depth`` Linear layers of the given width, each followed by ReLU."""
    layers: list[nn.Module] = []
    last = in_dim
    for _ in range(depth):
        layers += [nn.Linear(last, width), nn.ReLU()]
        last = width
    return nn.Sequential(*layers)


def _mlp(in_dim: int, width: int, depth: int, out_dim: int) -> nn.Sequential:
    """``depth`` Linear layers total; ReLU between them, linear output."""
    if depth == 1:
        return nn.Sequential(nn.Linear(in_dim, out_dim))
    return nn.Sequential(*_relu_stack(in_dim, width, depth - 1), nn.Linear(width, out_dim))


class DeformationNetwork(nn.Module):
    """Maps (position, shape code) to raw per-band encoding displacements."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        out_dim = 3 * 2 * cfg.encoding.m_pos
        self.net = _mlp(3 + cfg.code_dim, cfg.deform_width, cfg.deform_depth, out_dim)

    def forward(self, x: torch.Tensor, z_s: torch.Tensor) -> torch.Tensor:
        """Raw (pre-tanh) displacements, shaped (..., 3, 2*m_pos)."""
        if z_s.shape[-1] != self.cfg.code_dim:
            raise ValueError(
                f"shape code dim {z_s.shape[-1]} != network code dim {self.cfg.code_dim}"
            )
        if z_s.dim() == 1:
            z_s = z_s.expand(*x.shape[:-1], -1)
        raw = self.net(torch.cat([x, z_s], dim=-1))
        return raw.reshape(*x.shape[:-1], 3, 2 * self.cfg.encoding.m_pos)


class ConditionalRadianceField(nn.Module):
    """Generator: codes and a 5D coordinate to (radiance, density).

    The trunk consumes only the deformed position encoding and feeds the
    density head; the radiance head additionally sees the encoded view
    direction and the appearance code.
    """

    def __init__(self, cfg: GeneratorConfig | None = None):
        super().__init__()
        self.cfg = cfg or GeneratorConfig()
        enc = self.cfg.encoding
        self.deformation = DeformationNetwork(self.cfg)
        self.trunk = _relu_stack(enc.pos_dim, self.cfg.trunk_width, self.cfg.trunk_depth)
        self.density_head = nn.Linear(self.cfg.trunk_width, 1)
        rgb_in = self.cfg.trunk_width + enc.view_dim + self.cfg.code_dim
        self.rgb_head = nn.Sequential(
            nn.Linear(rgb_in, self.cfg.rgb_hidden),
            nn.ReLU(),
            nn.Linear(self.cfg.rgb_hidden, 3),
        )

    @property
    def code_dim(self) -> int:
        return self.cfg.code_dim

    def deform(self, x: torch.Tensor, z_s: torch.Tensor) -> torch.Tensor:
        return self.deformation(x, z_s)

    def encode_position(self, x: torch.Tensor, z_s: torch.Tensor) -> torch.Tensor:
        """Shape-deformed positional encoding, flattened to (..., 3 * 2m)."""
        enc = positional_encode(x, self.cfg.encoding.m_pos)
        enc = enc + torch.tanh(self.deform(x, z_s))
        return enc.reshape(*x.shape[:-1], -1)

    def density(self, x: torch.Tensor, z_s: torch.Tensor) -> torch.Tensor:
        feat = self.trunk(self.encode_position(x, z_s))
        return F.softplus(self.density_head(feat)).squeeze(-1)

    def forward(
        self,
        x: torch.Tensor,
        v: torch.Tensor,
        z_s: torch.Tensor,
        z_a: torch.Tensor,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Evaluate the field at points ``x`` viewed along ``v``.

        Codes may be single vectors or batched per point. Returns
        ``(radiance, density)`` with radiance in [0, 1] and density >= 0.
        """
        if z_a.shape[-1] != self.cfg.code_dim:
            raise ValueError(
                f"appearance code dim {z_a.shape[-1]} != network code dim {self.cfg.code_dim}"
            )
        feat = self.trunk(self.encode_position(x, z_s))
        sigma = F.softplus(self.density_head(feat)).squeeze(-1)
        if z_a.dim() == 1:
            z_a = z_a.expand(*x.shape[:-1], -1)
        v_enc = positional_encode(v, self.cfg.encoding.m_view).reshape(*v.shape[:-1], -1)
        rgb = torch.sigmoid(self.rgb_head(torch.cat([feat, v_enc, z_a], dim=-1)))
        return rgb, sigma

    def sample_codes(
        self, generator: torch.Generator, n: int | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Standard-normal shape and appearance codes."""
        shape = (self.cfg.code_dim,) if n is None else (n, self.cfg.code_dim)
        z_s = torch.randn(shape, generator=generator)
        z_a = torch.randn(shape, generator=generator)
        return z_s, z_a


class SceneField(nn.Module):
    """Unconditional per-scene field with a cleanly separable color branch."""

    def __init__(
        self,
        encoding: EncodingConfig | None = None,
        width: int = 128,
        depth: int = 6,
        rgb_hidden: int = 64,
    ):
        super().__init__()
        self.encoding = encoding or EncodingConfig(m_pos=6, m_view=2)
        self.trunk = _relu_stack(self.encoding.pos_dim, width, depth)
        self.density_head = nn.Linear(width, 1)
        self.rgb_head = nn.Sequential(
            nn.Linear(width + self.encoding.view_dim, rgb_hidden),
            nn.ReLU(),
            nn.Linear(rgb_hidden, 3),
        )

    def density_parameters(self):
        yield from self.trunk.parameters()
        yield from self.density_head.parameters()

    def color_parameters(self):
        yield from self.rgb_head.parameters()

    def density(self, x: torch.Tensor) -> torch.Tensor:
        enc = positional_encode(x, self.encoding.m_pos).reshape(*x.shape[:-1], -1)
        return F.softplus(self.density_head(self.trunk(enc))).squeeze(-1)

    def forward(self, x, v, z_s=None, z_a=None):
        # Code arguments are accepted and ignored so the renderer can treat
        # conditional and per-scene fields uniformly.
        enc = positional_encode(x, self.encoding.m_pos).reshape(*x.shape[:-1], -1)
        feat = self.trunk(enc)
        sigma = F.softplus(self.density_head(feat)).squeeze(-1)
        v_enc = positional_encode(v, self.encoding.m_view).reshape(*v.shape[:-1], -1)
        rgb = torch.sigmoid(self.rgb_head(torch.cat([feat, v_enc], dim=-1)))
        return rgb, sigma
