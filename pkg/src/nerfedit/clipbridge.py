"""Joint language-image embedding backends and the cross-modal distance.

Two backends share one interface: a deterministic offline stub (random
projection of downsampled pixels / hashed character trigrams, with a color
calibration table so color words land near matching renders) and an optional
pretrained CLIP loaded through ``transformers``.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from importlib import resources

_NORM_TOL = 1e-5


class BackendUnavailableError(RuntimeError):
    """Raised when the pretrained backend cannot be loaded in this environment."""


@dataclass
class Embedding:
    values: torch.Tensor
    modality: str  # "text" | "image"
    backend: str

    def __post_init__(self):
        norm = float(torch.linalg.vector_norm(self.values.detach()))
        if abs(norm - 1.0) > _NORM_TOL:
            raise ValueError(f"embedding norm {norm} deviates from 1")


def _load_color_table() -> dict[str, list[float]]:
    with resources.files("nerfedit.data").joinpath("colors.json").open() as f:
        return json.load(f)


COLOR_TABLE = _load_color_table()


def _as_image_tensor(image) -> torch.Tensor:
    """Coerce an (H, W, 3) array-like in [0, 1] to a float tensor."""
    if isinstance(image, torch.Tensor):
        img = image
    else:
        img = torch.as_tensor(np.asarray(image), dtype=torch.float32)
        if img.dtype == torch.uint8:
            img = img.float() / 255.0
    if img.dim() != 3 or img.shape[-1] != 3:
        raise ValueError("expected an RGB image shaped (H, W, 3)")
    return img.float()


class StubBackend:
    """Seeded offline stand-in for a joint language-image encoder.

    Images are bilinearly downsampled to ``patch`` x ``patch``, centered, and
    pushed through a fixed Gaussian projection. Text goes through the same
    projection: color words contribute the calibration table's RGB tiled over
    the pixel layout (as per-pixel chroma deviations, so backgrounds cancel),
    remaining words a hashed trigram bag. Differentiable on the image path.
    """

    name = "stub"

    def __init__(self, dim: int = 512, seed: int = 0, patch: int = 16):
        self.dim = dim
        self.seed = seed
        self.patch = patch
        self.feature_dim = patch * patch * 3 + 1  # +1 bias slot, never all-zero
        g = torch.Generator().manual_seed(seed)
        self.projection = torch.randn(
            self.feature_dim, dim, generator=g
        ) / dim**0.5

    def _project(self, feat: torch.Tensor) -> torch.Tensor:
        e = feat @ self.projection.to(feat.dtype)
        return e / torch.linalg.vector_norm(e)

    def embed_image(self, image) -> Embedding:
        img = _as_image_tensor(image)
        small = F.interpolate(
            img.permute(2, 0, 1).unsqueeze(0),
            size=(self.patch, self.patch),
            mode="bilinear",
            align_corners=False,
        )[0].permute(1, 2, 0)
        feat = torch.cat([small.reshape(-1) - 0.5, torch.tensor([0.25], dtype=small.dtype)])
        return Embedding(self._project(feat), "image", self.name)

    def _trigram_feature(self, text: str) -> torch.Tensor:
        feat = torch.zeros(self.feature_dim)
        padded = f"  {text.lower().strip()}  "
        for i in range(len(padded) - 2):
            tri = padded[i : i + 3].encode()
            h = zlib.crc32(tri, self.seed)
            idx = h % (self.feature_dim - 1)
            sign = 1.0 if (h >> 16) & 1 else -1.0
            feat[idx] += sign
        n = torch.linalg.vector_norm(feat)
        return feat / n if n > 0 else feat

    def _color_feature(self, text: str) -> torch.Tensor | None:
        words = text.lower().replace(",", " ").split()
        hits = [COLOR_TABLE[w] for w in words if w in COLOR_TABLE]
        if not hits:
            return None
        rgb = torch.tensor(hits, dtype=torch.float32).mean(dim=0)
        chroma = rgb - rgb.mean()  # zero-sum per pixel: flat backgrounds score 0
        tiled = chroma.repeat(self.patch * self.patch)
        feat = torch.cat([tiled, torch.zeros(1)])
        n = torch.linalg.vector_norm(feat)
        return feat / n if n > 0 else None

    def embed_text(self, text: str) -> Embedding:
        if not text or not text.strip():
            raise ValueError("empty prompt")
        feat = 0.35 * self._trigram_feature(text)
        color = self._color_feature(text)
        if color is not None:
            feat = feat + color
        return Embedding(self._project(feat), "text", self.name)


class PretrainedBackend:
    """CLIP ViT-B/32 via ``transformers``; image path keeps pixel gradients."""

    name = "pretrained"
    resolution = 224
    # CLIP preprocessing constants.
    _mean = torch.tensor([0.48145466, 0.4578275, 0.40821073])
    _std = torch.tensor([0.26862954, 0.26130258, 0.27577711])

    def __init__(
        self,
        model_name: str = "openai/clip-vit-base-patch32",
        weights_path: str | None = None,
        weights_sha256: str | None = None,
    ):
        try:
            from transformers import CLIPModel, CLIPTokenizer
        except ImportError as exc:
            raise BackendUnavailableError(f"transformers not importable: {exc}") from exc
        source = weights_path or model_name
        if weights_path and weights_sha256:
            digest = hashlib.sha256(open(weights_path, "rb").read()).hexdigest()
            if digest != weights_sha256:
                raise BackendUnavailableError("pinned weight hash mismatch")
        try:
            self.model = CLIPModel.from_pretrained(source)
            self.tokenizer = CLIPTokenizer.from_pretrained(source)
        except Exception as exc:  # offline, missing weights, bad path
            raise BackendUnavailableError(f"cannot load {source!r}: {exc}") from exc
        self.model.eval()
        self.dim = self.model.config.projection_dim

    def embed_text(self, text: str) -> Embedding:
        if not text or not text.strip():
            raise ValueError("empty prompt")
        tokens = self.tokenizer([text], padding=True, return_tensors="pt")
        with torch.no_grad():
            feat = self.model.get_text_features(**tokens)[0]
        return Embedding(feat / torch.linalg.vector_norm(feat), "text", self.name)

    def embed_image(self, image) -> Embedding:
        img = _as_image_tensor(image)
        chw = img.permute(2, 0, 1).unsqueeze(0)
        resized = F.interpolate(
            chw, size=(self.resolution, self.resolution), mode="bilinear", align_corners=False
        )
        normed = (resized - self._mean.view(1, 3, 1, 1)) / self._std.view(1, 3, 1, 1)
        feat = self.model.get_image_features(pixel_values=normed)[0]
        return Embedding(feat / torch.linalg.vector_norm(feat), "image", self.name)


def get_backend(kind: str = "stub", **kwargs):
    if kind == "stub":
        return StubBackend(**kwargs)
    if kind == "pretrained":
        return PretrainedBackend(**kwargs)
    raise ValueError(f"unknown embedder kind: {kind!r}")


def _coerce(operand, backend) -> Embedding:
    if isinstance(operand, Embedding):
        if operand.backend != backend.name:
            raise ValueError(
                f"embedding from backend {operand.backend!r} cannot be compared "
                f"under backend {backend.name!r}"
            )
        return operand
    if isinstance(operand, str):
        return backend.embed_text(operand)
    return backend.embed_image(operand)


def clip_distance(a, b, backend) -> torch.Tensor:
    """Cross-modal cosine distance 1 - <e_a, e_b>, in [0, 2].

    Operands may be Embeddings, prompt strings, or images; mixed pairs are
    fine. Differentiable when an operand carries gradients.
    """
    ea = _coerce(a, backend).values
    eb = _coerce(b, backend).values
    return 1.0 - torch.dot(ea, eb)


@dataclass
class ConsistencyResult:
    """Pairwise embedding distances over objects x views."""

    same_object: torch.Tensor        # (O, V, V) distances across views
    cross_object: torch.Tensor       # (O, O, V) distances per shared view
    mean_same_object: float
    mean_cross_object: float

    @property
    def gap(self) -> float:
        return self.mean_cross_object - self.mean_same_object

    def summary(self) -> dict:
        return {
            "mean_same_object_cross_view": self.mean_same_object,
            "mean_cross_object_same_view": self.mean_cross_object,
            "gap": self.gap,
        }


def hemisphere_pose_grid(n_azimuth: int = 12, n_elevation: int = 12, radius: float = 1.5):
    """Regular azimuth x elevation grid over the upper hemisphere."""
    from .cameras import CameraPose

    azimuths = np.linspace(0.0, 2.0 * np.pi, n_azimuth, endpoint=False)
    elevations = np.linspace(0.05, np.pi / 2 * 0.95, n_elevation)
    return [CameraPose(float(a), float(e), radius) for e in elevations for a in azimuths]


def cross_view_consistency(objects, poses, render_fn, backend) -> ConsistencyResult:
    """Probe whether embeddings separate objects more than viewpoints.

    ``objects`` is a list of (z_s, z_a) pairs, ``render_fn(codes, pose)`` an
    image-producing callable. Returns full distance matrices plus the two
    summary means.
    """
    if len(objects) < 2:
        raise ValueError("need at least 2 objects")
    if len(poses) < 2:
        raise ValueError("need at least 2 poses")
    embs = []
    for codes in objects:
        rows = [_coerce(render_fn(codes, pose), backend).values for pose in poses]
        embs.append(torch.stack(rows))
    e = torch.stack(embs)  # (O, V, D)
    gram = torch.einsum("avd,bwd->avbw", e, e)
    dist = 1.0 - gram  # (O, V, O, V)
    n_obj, n_view = e.shape[0], e.shape[1]
    same_object = torch.stack([dist[o, :, o, :] for o in range(n_obj)])
    cross_object = torch.stack(
        [
            torch.stack([dist[a, v, b, v] for v in range(n_view)])
            for a in range(n_obj)
            for b in range(n_obj)
        ]
    ).reshape(n_obj, n_obj, n_view)

    off_diag = ~torch.eye(n_view, dtype=torch.bool)
    mean_same = float(same_object[:, off_diag].mean())
    pair_mask = ~torch.eye(n_obj, dtype=torch.bool)
    mean_cross = float(cross_object[pair_mask].mean())
    return ConsistencyResult(
        same_object=same_object,
        cross_object=cross_object,
        mean_same_object=mean_same,
        mean_cross_object=mean_cross,
    )
