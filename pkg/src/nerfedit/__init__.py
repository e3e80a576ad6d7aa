"""Text- and exemplar-driven editing of disentangled conditional radiance fields."""

__version__ = "0.1.0"

from .cameras import CameraPose, RayBatch, sample_camera, sample_ray_patch
from .clipbridge import Embedding, StubBackend, clip_distance, get_backend
from .encoding import EncodingConfig, deformed_encode, positional_encode
from .fields import ConditionalRadianceField, DeformationNetwork, GeneratorConfig, SceneField
from .inversion import InversionConfig, InversionResult, invert
from .mappers import CodeMapper, apply_edit_direction, interpolate_codes
from .rendering import RenderConfig, render_image, render_rays
from .runconfig import RunConfig, load_config

__all__ = [
    "CameraPose",
    "CodeMapper",
    "ConditionalRadianceField",
    "DeformationNetwork",
    "Embedding",
    "EncodingConfig",
    "GeneratorConfig",
    "InversionConfig",
    "InversionResult",
    "RayBatch",
    "RenderConfig",
    "RunConfig",
    "SceneField",
    "StubBackend",
    "apply_edit_direction",
    "clip_distance",
    "deformed_encode",
    "get_backend",
    "interpolate_codes",
    "invert",
    "load_config",
    "positional_encode",
    "render_image",
    "render_rays",
    "sample_camera",
    "sample_ray_patch",
]
