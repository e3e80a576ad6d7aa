"""Dataset loading and procedural toy-scene generation.

The toy generator ray-traces colored primitives (cube, sphere, cone) from
random upper-hemisphere poses onto a white background and records the ground
truth per image, standing in for large rendered corpora while keeping oracle
tests possible.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .cameras import CameraPose, full_image_rays
from .clipbridge import COLOR_TABLE
from .rendering import RenderConfig

log = logging.getLogger(__name__)

_LIGHT = np.array([0.5, 0.3, 0.8])
_LIGHT = _LIGHT / np.linalg.norm(_LIGHT)
_AMBIENT, _DIFFUSE = 0.45, 0.55


@dataclass(frozen=True)
class DatasetSpec:
    root: str | Path
    resolution: int = 64
    category: str = "toy"
    views_per_instance: int = 1


@dataclass(frozen=True)
class ToyDatasetConfig:
    archetypes: tuple[str, ...] = ("cube", "sphere", "cone")
    colors: tuple[str, ...] = ("red", "green", "blue", "yellow")
    instances: int = 1200
    resolution: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.instances < 1:
            raise ValueError("instances must be >= 1")
        unknown = [c for c in self.colors if c not in COLOR_TABLE]
        if unknown:
            raise ValueError(f"colors not in the calibration table: {unknown}")


def _intersect_sphere(o, d, radius):
    b = np.sum(o * d, axis=-1)
    c = np.sum(o * o, axis=-1) - radius**2
    disc = b * b - c
    hit = disc >= 0
    t = -b - np.sqrt(np.maximum(disc, 0.0))
    hit &= t > 0
    n = o + t[:, None] * d
    return t, n / radius, hit


def _intersect_box(o, d, half):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
    t1 = (-half - o) * inv
    t2 = (half - o) * inv
    tmin_ax = np.minimum(t1, t2)
    tmax_ax = np.maximum(t1, t2)
    tmin = tmin_ax.max(axis=-1)
    tmax = tmax_ax.min(axis=-1)
    hit = (tmax >= tmin) & (tmin > 0)
    axis = tmin_ax.argmax(axis=-1)
    n = np.zeros_like(o)
    rows = np.arange(len(o))
    n[rows, axis] = -np.sign(d[rows, axis])
    return tmin, n, hit


def _intersect_cone(o, d, base_radius, z0, z1):
    # Lateral surface x^2 + y^2 = k^2 (z1 - z)^2 plus the base disc at z0.
    k = base_radius / (z1 - z0)
    a = d[:, 0] ** 2 + d[:, 1] ** 2 - k**2 * d[:, 2] ** 2
    b = 2 * (o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1]) + 2 * k**2 * d[:, 2] * (z1 - o[:, 2])
    c = o[:, 0] ** 2 + o[:, 1] ** 2 - k**2 * (z1 - o[:, 2]) ** 2
    disc = b * b - 4 * a * c
    ok = (disc >= 0) & (np.abs(a) > 1e-12)
    sq = np.sqrt(np.maximum(disc, 0.0))
    t_side = np.full(len(o), np.inf)
    for sign in (-1.0, 1.0):
        t = (-b + sign * sq) / (2 * a)
        z = o[:, 2] + t * d[:, 2]
        valid = ok & (t > 0) & (z >= z0) & (z <= z1)
        t_side = np.where(valid & (t < t_side), t, t_side)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_disc = (z0 - o[:, 2]) / d[:, 2]
    p_disc = o + t_disc[:, None] * d
    disc_valid = (t_disc > 0) & (p_disc[:, 0] ** 2 + p_disc[:, 1] ** 2 <= base_radius**2)
    t_disc = np.where(disc_valid, t_disc, np.inf)

    t = np.minimum(t_side, t_disc)
    hit = np.isfinite(t)
    p = o + np.where(hit, t, 0.0)[:, None] * d
    side = t_side <= t_disc
    n_side = np.stack([p[:, 0], p[:, 1], k**2 * (z1 - p[:, 2])], axis=-1)
    norm = np.linalg.norm(n_side, axis=-1, keepdims=True)
    n_side = n_side / np.maximum(norm, 1e-12)
    n = np.where(side[:, None], n_side, np.array([0.0, 0.0, -1.0]))
    return np.where(hit, t, 0.0), n, hit


def render_primitive(
    archetype: str,
    rgb: np.ndarray,
    pose: CameraPose,
    resolution: int,
    scale: float = 1.0,
    render_config: RenderConfig | None = None,
) -> np.ndarray:
    """Ray-trace one shaded primitive; returns float32 (res, res, 3) in [0, 1]."""
    rc = render_config or RenderConfig(resolution=resolution)
    with torch.no_grad():
        rays = full_image_rays(pose, resolution, fov_deg=rc.fov_deg, near=rc.near, far=rc.far)
    o = rays.origins.numpy().astype(np.float64)
    d = rays.directions.numpy().astype(np.float64)
    if archetype == "sphere":
        t, n, hit = _intersect_sphere(o, d, 0.55 * scale)
    elif archetype == "cube":
        t, n, hit = _intersect_box(o, d, 0.45 * scale)
    elif archetype == "cone":
        t, n, hit = _intersect_cone(o, d, 0.55 * scale, -0.5 * scale, 0.5 * scale)
    else:
        raise ValueError(f"unknown archetype: {archetype!r}")
    shade = _AMBIENT + _DIFFUSE * np.maximum(0.0, n @ _LIGHT)
    img = np.ones((len(o), 3))
    img[hit] = np.clip(rgb[None, :] * shade[hit, None], 0.0, 1.0)
    return img.reshape(resolution, resolution, 3).astype(np.float32)


def generate_toy_dataset(config: ToyDatasetConfig, out_dir: str | Path) -> list[dict]:
    """Write PNGs plus a JSON-lines ground-truth manifest; returns the records."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    records = []
    n_arch, n_col = len(config.archetypes), len(config.colors)
    for i in range(config.instances):
        archetype = config.archetypes[i % n_arch]
        color = config.colors[(i // n_arch) % n_col]
        azimuth = float(rng.uniform(0.0, 2.0 * np.pi))
        elevation = float(rng.uniform(0.0, np.pi / 2))
        scale = float(rng.uniform(0.75, 1.05))
        pose = CameraPose(azimuth, elevation)
        img = render_primitive(
            archetype, np.asarray(COLOR_TABLE[color]), pose, config.resolution, scale
        )
        name = f"{i:05d}.png"
        arr = np.clip(img * 255.0 + 0.5, 0, 255).astype(np.uint8)
        Image.fromarray(arr).save(out / name)
        records.append(
            {
                "file": name,
                "archetype": archetype,
                "color": color,
                "azimuth": azimuth,
                "elevation": elevation,
                "scale": scale,
            }
        )
    with open(out / "manifest.jsonl", "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    return records


def generate_scene_views(
    archetype: str,
    color: str,
    n_views: int = 24,
    resolution: int = 32,
    seed: int = 0,
    scale: float = 1.0,
) -> tuple[np.ndarray, list[CameraPose]]:
    """Posed views of a single toy scene, for per-scene field fitting."""
    rng = np.random.default_rng(seed)
    images, poses = [], []
    rgb = np.asarray(COLOR_TABLE[color])
    for _ in range(n_views):
        pose = CameraPose(
            float(rng.uniform(0.0, 2.0 * np.pi)), float(rng.uniform(0.05, np.pi / 2 * 0.9))
        )
        images.append(render_primitive(archetype, rgb, pose, resolution, scale))
        poses.append(pose)
    return np.stack(images), poses


def read_manifest(root: str | Path) -> list[dict]:
    path = Path(root) / "manifest.jsonl"
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


@dataclass
class ImageFolderDataset:
    """Seed-deterministic iterable over a folder of equal-size RGB images."""

    spec: DatasetSpec
    seed: int = 0
    paths: list[Path] = field(init=False)
    resolution: int = field(init=False)
    _cache: dict = field(init=False, default_factory=dict)
    _epoch: int = field(init=False, default=0)

    def __post_init__(self):
        root = Path(self.spec.root)
        if not root.exists():
            raise FileNotFoundError(f"dataset root does not exist: {root}")
        candidates = sorted(p for p in root.iterdir() if p.suffix.lower() in {".png", ".jpg", ".jpeg"})
        paths, sizes = [], set()
        for p in candidates:
            try:
                with Image.open(p) as im:
                    sizes.add(im.size)
            except Exception as exc:
                log.warning("skipping unreadable image %s: %s", p, exc)
                continue
            paths.append(p)
        if not paths:
            raise ValueError(f"no decodable images under {root}")
        if len(sizes) > 1:
            raise ValueError(f"mixed image resolutions in {root}: {sorted(sizes)}")
        w, h = next(iter(sizes))
        if w != h:
            raise ValueError("images must be square")
        if w != self.spec.resolution:
            raise ValueError(
                f"images are {w}px but the spec declares {self.spec.resolution}px"
            )
        self.paths = paths
        self.resolution = w

    def __len__(self) -> int:
        return len(self.paths)

    def __getitem__(self, i: int) -> np.ndarray:
        if i not in self._cache:
            with Image.open(self.paths[i]) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
            self._cache[i] = arr
        return self._cache[i]

    def __iter__(self):
        order = np.random.default_rng((self.seed, self._epoch)).permutation(len(self))
        self._epoch += 1
        for i in order:
            yield self[int(i)]

    def tensor_batch(self, indices) -> torch.Tensor:
        return torch.from_numpy(np.stack([self[int(i)] for i in indices]))


def load_dataset(spec: DatasetSpec, seed: int = 0) -> ImageFolderDataset:
    return ImageFolderDataset(spec=spec, seed=seed)
