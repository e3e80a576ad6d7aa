"""Strided convolutional patch critic."""

from __future__ import annotations

import torch
import torch.nn as nn


class PatchDiscriminator(nn.Module):
    """PatchGAN-style critic scoring fixed-size image patches.

    Downsampling convolutions end in a 1-channel logit map that is averaged
    to a per-patch scalar; positive logits mean "real".
    """

    def __init__(self, patch_size: int = 32, base_channels: int = 64, n_layers: int = 3):
        super().__init__()
        if patch_size < 2**n_layers:
            raise ValueError(f"patch_size {patch_size} too small for {n_layers} downsamples")
        self.patch_size = patch_size
        layers: list[nn.Module] = []
        in_ch = 3
        ch = base_channels
        for _ in range(n_layers):
            layers += [nn.Conv2d(in_ch, ch, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            in_ch, ch = ch, min(ch * 2, 512)
        layers.append(nn.Conv2d(in_ch, 1, 3, stride=1, padding=1))
        self.net = nn.Sequential(*layers)

    def config(self) -> dict:
        first = self.net[0]
        n_layers = sum(1 for m in self.net if isinstance(m, nn.LeakyReLU))
        return {
            "patch_size": self.patch_size,
            "base_channels": first.out_channels,
            "n_layers": n_layers,
        }

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        """Patches as (N, H, W, 3) or (N, 3, H, W) in [0, 1]; returns (N,) logits."""
        if patches.dim() != 4:
            raise ValueError("expected a batch of patches")
        if patches.shape[-1] == 3 and patches.shape[1] != 3:
            patches = patches.permute(0, 3, 1, 2)
        if patches.shape[-1] != self.patch_size or patches.shape[-2] != self.patch_size:
            raise ValueError(
                f"critic built for {self.patch_size}x{self.patch_size} patches, "
                f"got {tuple(patches.shape[-2:])}"
            )
        logit_map = self.net(patches * 2.0 - 1.0)
        return logit_map.mean(dim=(1, 2, 3))
