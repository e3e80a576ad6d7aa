"""Sinusoidal positional encodings, plain and deformation-displaced."""

from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class EncodingConfig:
    """Frequency-band counts for position and view-direction encodings."""

    m_pos: int = 8
    m_view: int = 4

    def __post_init__(self):
        if self.m_pos < 1 or self.m_view < 1:
            raise ValueError("band counts must be >= 1")

    @property
    def pos_dim(self) -> int:
        """Flattened encoding width for a 3D position."""
        return 3 * 2 * self.m_pos

    @property
    def view_dim(self) -> int:
        return 3 * 2 * self.m_view


def positional_encode(p: torch.Tensor, m: int) -> torch.Tensor:
    """Encode each coordinate of ``p`` into 2m interleaved sinusoid bands.

    Entry k of the per-coordinate encoding is sin(2^k * pi * p) for even k and
    cos(2^k * pi * p) for odd k, k in {0, ..., 2m-1}. Output shape is
    ``p.shape + (2m,)``; every entry lies in [-1, 1].
    """
    if m < 1:
        raise ValueError("band count m must be >= 1")
    p = torch.as_tensor(p)
    if not torch.isfinite(p).all():
        raise ValueError("positional_encode: non-finite input")
    k = torch.arange(2 * m, device=p.device)
    freq = torch.pi * (2.0**k).to(p.dtype)
    angles = p.unsqueeze(-1) * freq
    enc = torch.where(k % 2 == 0, torch.sin(angles), torch.cos(angles))
    return enc


def deformed_encode(p: torch.Tensor, dp: torch.Tensor, m: int) -> torch.Tensor:
    """Positional encoding displaced per band by tanh-squashed offsets.

    ``dp`` holds raw (pre-tanh) displacements shaped ``p.shape + (2m,)``; the
    tanh keeps the deformed encoding within 1 of the base encoding
    element-wise.
    """
    base = positional_encode(p, m)
    dp = torch.as_tensor(dp)
    if dp.shape != base.shape:
        raise ValueError(
            f"displacement shape {tuple(dp.shape)} does not match encoding "
            f"shape {tuple(base.shape)}"
        )
    return base + torch.tanh(dp)
