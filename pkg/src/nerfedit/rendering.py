"""Differentiable emission-absorption rendering over stratified ray samples."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .cameras import CameraPose, RayBatch, full_image_rays


@dataclass(frozen=True)
class RenderConfig:
    """Scene-wide renderer settings; scenes live inside the unit sphere."""

    resolution: int = 64
    samples_per_ray: int = 32
    near: float = 0.5
    far: float = 2.5
    camera_radius: float = 1.5
    fov_deg: float = 60.0

    def __post_init__(self):
        if self.samples_per_ray < 1:
            raise ValueError("samples_per_ray must be >= 1")
        if self.near >= self.far:
            raise ValueError("near must be < far")


@dataclass
class RenderResult:
    rgb: torch.Tensor       # (N, 3) in [0, 1]
    opacity: torch.Tensor   # (N,) accumulated alpha in [0, 1]
    weights: torch.Tensor | None = None        # (N, S)
    transmittance: torch.Tensor | None = None  # (N, S)


def render_rays(
    field,
    rays: RayBatch,
    z_s: torch.Tensor,
    z_a: torch.Tensor,
    samples_per_ray: int,
    *,
    generator: torch.Generator | None = None,
    stratified: bool = True,
    return_aux: bool = False,
) -> RenderResult:
    """Composite per-ray radiance over a white background.

    Depths are drawn one per equal-width bin of [near, far] (bin midpoints
    when ``stratified`` is False), so the quadrature step is the bin width.
    Codes may be single vectors or one row per ray. Fully differentiable
    with respect to codes, field parameters, and ray geometry.
    """
    if samples_per_ray < 1:
        raise ValueError("samples_per_ray must be >= 1")
    if rays.near >= rays.far:
        raise ValueError("degenerate ray interval: near >= far")
    n = len(rays)
    s = samples_per_ray
    dtype = rays.origins.dtype
    delta = (rays.far - rays.near) / s
    edges = rays.near + delta * torch.arange(s, dtype=dtype)
    if stratified:
        jitter = torch.rand((n, s), generator=generator, dtype=dtype)
    else:
        jitter = torch.full((n, s), 0.5, dtype=dtype)
    depths = edges + jitter * delta  # (N, S)

    pts = rays.origins.unsqueeze(1) + depths.unsqueeze(-1) * rays.directions.unsqueeze(1)
    view = rays.directions.unsqueeze(1).expand(-1, s, -1)

    def per_point(code: torch.Tensor) -> torch.Tensor:
        if code.dim() == 1:
            return code
        return code.unsqueeze(1).expand(n, s, -1).reshape(n * s, -1)

    rgb, sigma = field(
        pts.reshape(-1, 3), view.reshape(-1, 3), per_point(z_s), per_point(z_a)
    )
    rgb = rgb.reshape(n, s, 3)
    sigma = sigma.reshape(n, s)

    alpha = 1.0 - torch.exp(-sigma * delta)
    # Exclusive cumulative product: T_i = prod_{j<i} (1 - alpha_j).
    trans = torch.cumprod(
        torch.cat([torch.ones(n, 1, dtype=alpha.dtype), 1.0 - alpha], dim=-1), dim=-1
    )[:, :-1]
    weights = trans * alpha
    opacity = weights.sum(dim=-1)
    pixel = (weights.unsqueeze(-1) * rgb).sum(dim=-2) + (1.0 - opacity).unsqueeze(-1)
    if return_aux:
        return RenderResult(pixel, opacity, weights=weights, transmittance=trans)
    return RenderResult(pixel, opacity)


def render_image(
    field,
    pose: CameraPose,
    z_s: torch.Tensor,
    z_a: torch.Tensor,
    config: RenderConfig,
    *,
    resolution: int | None = None,
    generator: torch.Generator | None = None,
    stratified: bool = False,
) -> torch.Tensor:
    """Render a full square view, returned as (res, res, 3) in [0, 1]."""
    res = resolution or config.resolution
    rays = full_image_rays(
        pose,
        res,
        fov_deg=config.fov_deg,
        near=config.near,
        far=config.far,
    )
    out = render_rays(
        field,
        rays,
        z_s,
        z_a,
        config.samples_per_ray,
        generator=generator,
        stratified=stratified,
    )
    return out.rgb.reshape(res, res, 3)
