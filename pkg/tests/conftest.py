import pytest
import torch

from nerfedit.clipbridge import StubBackend
from nerfedit.encoding import EncodingConfig
from nerfedit.fields import ConditionalRadianceField, GeneratorConfig
from nerfedit.rendering import RenderConfig

TINY_GEN = GeneratorConfig(
    encoding=EncodingConfig(m_pos=2, m_view=1),
    code_dim=8,
    trunk_width=16,
    trunk_depth=3,
    deform_width=16,
    deform_depth=2,
    rgb_hidden=8,
)

TINY_RENDER = RenderConfig(resolution=16, samples_per_ray=6)


@pytest.fixture
def tiny_field():
    torch.manual_seed(7)
    return ConditionalRadianceField(TINY_GEN)


@pytest.fixture
def tiny_render_cfg():
    return TINY_RENDER


@pytest.fixture(scope="session")
def stub_backend():
    return StubBackend(dim=128, seed=0)
