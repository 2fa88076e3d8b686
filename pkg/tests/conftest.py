import pytest

from dhhqa.distort import build_corpus
from dhhqa.mesh import save_mesh
from dhhqa.render import RenderConfig
from dhhqa.synthetic import synthetic_heads

TINY_RENDER = RenderConfig(resolution=64, lighting="lambertian", light_direction=(0.4, 0.5, 1.0))


def tiny_heads(n=5, seed=0):
    return synthetic_heads(n, seed=seed, n_lat=12, n_lon=24, texture_size=64)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Five low-poly heads, every kind and level, rendered at 64 px."""
    out = tmp_path_factory.mktemp("corpus")
    records = build_corpus(tiny_heads(), out, seed=3, render_cfg=TINY_RENDER)
    return out, records


@pytest.fixture(scope="session")
def mesh_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("meshes")
    for m in tiny_heads():
        save_mesh(m, out / f"{m.name}.obj")
    return out
