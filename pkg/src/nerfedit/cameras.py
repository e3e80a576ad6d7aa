"""Hemisphere camera poses and pinhole ray generation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

_DIR_NORM_TOL = 1e-6


@dataclass(frozen=True)
class CameraPose:
    """Look-at-origin camera on the upper hemisphere.

    ``azimuth`` in [0, 2*pi), ``elevation`` in [0, pi/2] above the xy-plane,
    fixed positive ``radius``.
    """

    azimuth: float
    elevation: float
    radius: float = 1.5

    def __post_init__(self):
        if self.elevation < 0:
            raise ValueError("elevation must be >= 0 (upper hemisphere)")
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    def position(self) -> torch.Tensor:
        o, _, _, _ = camera_basis(
            torch.tensor(self.azimuth), torch.tensor(self.elevation), self.radius
        )
        return o


@dataclass
class RayBatch:
    """A bundle of rays with viewport bookkeeping.

    ``pixels`` holds integer (ix, iy) viewport coordinates per ray.
    """

    origins: torch.Tensor
    directions: torch.Tensor
    near: float
    far: float
    pixels: torch.Tensor = field(default=None)  # (N, 2) int64

    def __post_init__(self):
        if self.near >= self.far:
            raise ValueError("ray interval must satisfy near < far")
        if self.near <= 0:
            raise ValueError("near must be positive")
        norms = torch.linalg.vector_norm(self.directions, dim=-1)
        if not torch.all((norms - 1.0).abs() <= _DIR_NORM_TOL):
            raise ValueError("ray directions must be unit length")
        if self.pixels is None:
            self.pixels = torch.zeros(len(self.origins), 2, dtype=torch.int64)

    def __len__(self) -> int:
        return self.origins.shape[0]


def camera_basis(azimuth, elevation, radius):
    """Differentiable camera origin and orthonormal (right, up, forward).

    The camera sits at radius * (cos az cos el, sin az cos el, sin el) and
    looks at the origin; the basis stays well defined at the pole.
    """
    az = torch.as_tensor(azimuth, dtype=torch.get_default_dtype()) if not torch.is_tensor(azimuth) else azimuth
    el = torch.as_tensor(elevation, dtype=az.dtype) if not torch.is_tensor(elevation) else elevation
    cos_el, sin_el = torch.cos(el), torch.sin(el)
    cos_az, sin_az = torch.cos(az), torch.sin(az)
    origin = radius * torch.stack([cos_az * cos_el, sin_az * cos_el, sin_el])
    forward = -torch.stack([cos_az * cos_el, sin_az * cos_el, sin_el])
    right = torch.stack([sin_az, -cos_az, torch.zeros_like(az)])
    up = torch.stack([-cos_az * sin_el, -sin_az * sin_el, cos_el])
    return origin, right, up, forward


def pixel_rays(
    azimuth,
    elevation,
    pixels: torch.Tensor,
    *,
    radius: float = 1.5,
    resolution: int = 64,
    fov_deg: float = 60.0,
    near: float = 0.5,
    far: float = 2.5,
) -> RayBatch:
    """Rays through the centers of the given (ix, iy) viewport pixels.

    Differentiable with respect to tensor ``azimuth``/``elevation``.
    """
    origin, right, up, forward = camera_basis(azimuth, elevation, radius)
    dtype = origin.dtype
    half = math.tan(math.radians(fov_deg) / 2.0)
    px = pixels[:, 0].to(dtype)
    py = pixels[:, 1].to(dtype)
    ndc_x = (px + 0.5) / resolution * 2.0 - 1.0
    ndc_y = 1.0 - (py + 0.5) / resolution * 2.0
    dirs = (
        forward.unsqueeze(0)
        + half * ndc_x.unsqueeze(-1) * right.unsqueeze(0)
        + half * ndc_y.unsqueeze(-1) * up.unsqueeze(0)
    )
    dirs = dirs / torch.linalg.vector_norm(dirs, dim=-1, keepdim=True)
    origins = origin.unsqueeze(0).expand_as(dirs)
    return RayBatch(origins=origins, directions=dirs, near=near, far=far, pixels=pixels)


def full_image_pixels(resolution: int) -> torch.Tensor:
    """All (ix, iy) pixel coordinates of a square viewport, row-major."""
    iy, ix = torch.meshgrid(
        torch.arange(resolution), torch.arange(resolution), indexing="ij"
    )
    return torch.stack([ix.reshape(-1), iy.reshape(-1)], dim=-1)


def full_image_rays(pose: CameraPose, resolution: int, **kwargs) -> RayBatch:
    return pixel_rays(
        pose.azimuth,
        pose.elevation,
        full_image_pixels(resolution),
        radius=pose.radius,
        resolution=resolution,
        **kwargs,
    )


def sample_camera(
    generator: torch.Generator, *, radius: float = 1.5
) -> CameraPose:
    """Draw a pose uniform in azimuth and in elevation angle over the upper hemisphere."""
    u = torch.rand(2, generator=generator)
    return CameraPose(
        azimuth=float(u[0] * 2.0 * math.pi),
        elevation=float(u[1] * math.pi / 2.0),
        radius=radius,
    )


@dataclass(frozen=True)
class PatchSpec:
    """Placement of a scaled square pixel patch inside a viewport.

    The patch covers pixels ``offset + stride * i`` on each axis, so larger
    strides give zoomed-out patches at the same sample count.
    """

    size: int
    stride: int
    offset_x: int
    offset_y: int

    def pixel_grid(self) -> torch.Tensor:
        idx = torch.arange(self.size)
        iy, ix = torch.meshgrid(
            self.offset_y + self.stride * idx,
            self.offset_x + self.stride * idx,
            indexing="ij",
        )
        return torch.stack([ix.reshape(-1), iy.reshape(-1)], dim=-1)


def sample_patch_spec(
    patch_size: int, resolution: int, generator: torch.Generator
) -> PatchSpec:
    """Random scale and offset for a patch fully inside the viewport."""
    if patch_size > resolution:
        raise ValueError("patch_size cannot exceed the viewport resolution")
    max_stride = max(resolution // patch_size, 1)
    stride = int(torch.randint(1, max_stride + 1, (1,), generator=generator))
    span = stride * (patch_size - 1) + 1
    off = torch.randint(0, resolution - span + 1, (2,), generator=generator)
    return PatchSpec(size=patch_size, stride=stride, offset_x=int(off[0]), offset_y=int(off[1]))


def sample_ray_patch(
    pose: CameraPose,
    patch_size: int,
    generator: torch.Generator,
    *,
    resolution: int = 64,
    spec: PatchSpec | None = None,
    **kwargs,
) -> tuple[RayBatch, PatchSpec]:
    """Rays for a randomly scaled/offset square patch of the viewport."""
    if spec is None:
        spec = sample_patch_spec(patch_size, resolution, generator)
    pixels = spec.pixel_grid()
    if torch.any(pixels < 0) or torch.any(pixels >= resolution):
        raise ValueError("patch extends outside the viewport")
    rays = pixel_rays(
        pose.azimuth,
        pose.elevation,
        pixels,
        radius=pose.radius,
        resolution=resolution,
        **kwargs,
    )
    return rays, spec


def extract_patch(image: torch.Tensor, spec: PatchSpec) -> torch.Tensor:
    """Pull the patch described by ``spec`` out of an (H, W, C) image."""
    idx = torch.arange(spec.size)
    ys = spec.offset_y + spec.stride * idx
    xs = spec.offset_x + spec.stride * idx
    return image[ys][:, xs]


def concat_rays(batches: list[RayBatch]) -> RayBatch:
    """Concatenate ray batches that share one [near, far] interval."""
    if not batches:
        raise ValueError("no ray batches to concatenate")
    near, far = batches[0].near, batches[0].far
    if any(b.near != near or b.far != far for b in batches):
        raise ValueError("ray batches disagree on the sampling interval")
    return RayBatch(
        origins=torch.cat([b.origins for b in batches]),
        directions=torch.cat([b.directions for b in batches]),
        near=near,
        far=far,
        pixels=torch.cat([b.pixels for b in batches]),
    )


def angular_distance(a: CameraPose, b: CameraPose) -> float:
    """Angle in radians between the two camera position vectors."""
    pa = a.position() / a.radius
    pb = b.position() / b.radius
    return float(torch.arccos(torch.clamp(torch.dot(pa, pb), -1.0, 1.0)))
