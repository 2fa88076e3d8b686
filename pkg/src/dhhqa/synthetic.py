"""Procedural test meshes: quads, icospheres and head-like textured surfaces.

The head generator stands in for scanned DHH models. Each seed gives a
different skull shape, skin tone and facial layout. The front of the
head faces ``+z`` (towards the default camera).
"""
from __future__ import annotations

import numpy as np

from .mesh import TexturedMesh, estimate_normals


def checker_texture(size: int = 64, cells: int = 8, seed: int | None = None) -> np.ndarray:
    """Checkerboard, or random per-cell colours when ``seed`` is given."""
    yy, xx = np.mgrid[0:size, 0:size] * cells // size
    if seed is None:
        v = ((xx + yy) % 2 * 255).astype(np.uint8)
        return np.repeat(v[..., None], 3, axis=2)
    palette = np.random.default_rng(seed).integers(0, 256, (cells, cells, 3), dtype=np.uint8)
    return palette[yy, xx]


def textured_quad(x0=0.0, y0=0.0, size=1.0, z=0.0, texture=None, name="quad") -> TexturedMesh:
    """Axis-aligned square facing ``+z`` with UVs spanning the full texture."""
    verts = [(x0, y0, z), (x0 + size, y0, z), (x0 + size, y0 + size, z), (x0, y0 + size, z)]
    uvs = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    faces = [(0, 1, 2), (0, 2, 3)]
    if texture is None:
        texture = checker_texture()
    mesh = TexturedMesh(vertices=verts, faces=faces, uvs=uvs, face_uvs=faces,
                        texture=texture, name=name)
    return estimate_normals(mesh)


def grid_mesh(n: int = 10, size: float = 1.0, texture=None, name="grid", ny: int | None = None) -> TexturedMesh:
    """Planar ``n x ny`` cell grid in z=0 (``2 n ny`` triangles, CCW from +z)."""
    ny = n if ny is None else ny
    u, v = np.meshgrid(np.linspace(0.0, 1.0, n + 1), np.linspace(0.0, 1.0, ny + 1))
    verts = np.stack([u.ravel() * size, v.ravel() * size * ny / n, np.zeros(u.size)], axis=1)
    uvs = np.stack([u.ravel(), v.ravel()], axis=1)
    idx = np.arange((n + 1) * (ny + 1)).reshape(ny + 1, n + 1)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, 1:].ravel(), idx[1:, :-1].ravel()
    faces = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    if texture is None:
        texture = checker_texture()
    mesh = TexturedMesh(vertices=verts, faces=faces, uvs=uvs, face_uvs=faces,
                        texture=texture, name=name)
    return estimate_normals(mesh)


def icosphere(level: int = 3, texture=None, name="icosphere") -> TexturedMesh:
    """Unit sphere by repeated 4-way subdivision of an icosahedron."""
    phi = (1 + 5 ** 0.5) / 2
    verts = [(-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
             (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
             (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(level):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    v = np.array(verts)
    uvs = np.stack([0.5 + np.arctan2(v[:, 0], v[:, 2]) / (2 * np.pi),
                    0.5 + np.arcsin(np.clip(v[:, 1], -1, 1)) / np.pi], axis=1)
    if texture is None:
        texture = checker_texture()
    mesh = TexturedMesh(vertices=v, faces=faces, uvs=uvs, face_uvs=faces, texture=texture, name=name)
    return estimate_normals(mesh)


# ------------------------------------------------------------------ heads

def _bump(theta, phi, t0, p0, width, amp):
    d = (theta - t0) ** 2 + (np.angle(np.exp(1j * (phi - p0)))) ** 2
    return amp * np.exp(-d / (2 * width ** 2))


def _head_texture(rng: np.random.Generator, size: int, detail: float = 9.0) -> np.ndarray:
    # pixel grid in (u, v); u=0.5 is the face centre, v=1 the crown
    v, u = np.mgrid[0:size, 0:size].astype(float)
    u = (u + 0.5) / size
    v = 1.0 - (v + 0.5) / size
    anchors = np.array([[238, 205, 180], [205, 155, 120], [150, 100, 70], [95, 62, 45]], float)
    t = rng.uniform(0, len(anchors) - 1)
    i = min(int(t), len(anchors) - 2)
    skin = anchors[i] + (t - i) * (anchors[i + 1] - anchors[i])
    img = np.ones((size, size, 3)) * skin
    # low-frequency blotches
    for _ in range(6):
        fu, fv = rng.uniform(1, 4, 2)
        ph = rng.uniform(0, 2 * np.pi, 2)
        img += rng.uniform(-12, 12, 3) * (np.sin(2 * np.pi * fu * u + ph[0]) * np.sin(2 * np.pi * fv * v + ph[1]))[..., None]
    # fine-grained skin detail (fixed per content) so texture degradations show
    img += rng.normal(0, detail, (size, size, 1))
    # hair cap with strand-like stripes
    hairline = 0.72 + rng.uniform(-0.05, 0.05) + 0.04 * np.cos(2 * np.pi * u)
    hair_col = rng.uniform([10, 5, 0], [120, 80, 50])
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * (rng.uniform(30, 60) * u + 3 * v))
    hair = (v > hairline)[..., None]
    img = np.where(hair, hair_col * (0.6 + 0.6 * stripes[..., None]), img)

    def ellipse(cu, cv, ru, rv):
        return ((u - cu) / ru) ** 2 + ((v - cv) / rv) ** 2 <= 1.0

    eye_v = 0.55 + rng.uniform(-0.02, 0.02)
    eye_du = 0.045 + rng.uniform(-0.008, 0.008)
    iris = rng.uniform([20, 20, 20], [110, 140, 160])
    for s in (-1, 1):
        img[ellipse(0.5 + s * eye_du, eye_v, 0.022, 0.018)] = (240, 240, 235)
        img[ellipse(0.5 + s * eye_du, eye_v, 0.009, 0.012)] = iris
        img[ellipse(0.5 + s * eye_du, eye_v + 0.04, 0.03, 0.006)] = hair_col
    lip = rng.uniform([150, 40, 50], [210, 90, 100])
    img[ellipse(0.5, 0.40 + rng.uniform(-0.015, 0.015), 0.04, 0.012)] = lip
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def synthetic_head(seed: int = 0, n_lat: int = 32, n_lon: int = 64, texture_size: int = 256,
                   name: str | None = None, skin_detail: float = 9.0) -> TexturedMesh:
    """A closed, head-like UV sphere with a nose, brow, ears and a painted face.

    The texture seam sits at the back of the head, so seam vertices carry two UVs.
    """
    rng = np.random.default_rng(seed)
    theta = np.linspace(0, np.pi, n_lat + 1)[1:-1]  # rings, from crown to chin
    phi = np.linspace(-np.pi, np.pi, n_lon + 1)[:-1]  # phi=0 faces +z
    T, P = np.meshgrid(theta, phi, indexing="ij")

    r = np.ones_like(T)
    for _ in range(4):
        a, b = rng.integers(1, 4, 2)
        r += rng.uniform(-0.03, 0.03) * np.cos(a * T + rng.uniform(0, np.pi)) * np.cos(b * P + rng.uniform(0, np.pi))
    r += _bump(T, P, np.pi / 2 + 0.12, 0.0, 0.09, rng.uniform(0.12, 0.2))     # nose
    r += _bump(T, P, np.pi / 2 - 0.25, 0.0, 0.22, rng.uniform(0.02, 0.05))    # brow
    r += _bump(T, P, np.pi / 2 + 0.55, 0.0, 0.18, rng.uniform(0.03, 0.07))    # chin
    for s in (-1, 1):
        r += _bump(T, P, np.pi / 2, s * np.pi / 2, 0.1, rng.uniform(0.05, 0.1))  # ears
        r -= _bump(T, P, np.pi / 2 - 0.05, s * 0.33, 0.07, rng.uniform(0.01, 0.04))  # eye sockets
    scale = np.array([0.78, 1.0, 0.88]) * rng.uniform(0.9, 1.1, 3)
    ring = np.stack([np.sin(T) * np.sin(P), np.cos(T), np.sin(T) * np.cos(P)], axis=-1) * r[..., None]
    top = np.array([[0.0, 1.0 + rng.uniform(-0.03, 0.03), 0.0]])
    bottom = np.array([[0.0, -1.0 - rng.uniform(-0.03, 0.03), 0.0]])
    verts = np.concatenate([top, ring.reshape(-1, 3), bottom]) * scale
    n_ring = n_lat - 1

    def vid(i, j):  # ring i, column j (wraps)
        return 1 + i * n_lon + (j % n_lon)

    # UVs: one extra column closes the seam; poles get one UV per column
    uu = (np.arange(n_lon + 1)) / n_lon
    vv = 1.0 - theta / np.pi
    ring_uv = np.stack(np.meshgrid(uu, vv), axis=-1).reshape(-1, 2)
    top_uv = np.stack([(np.arange(n_lon) + 0.5) / n_lon, np.ones(n_lon)], axis=1)
    bot_uv = np.stack([(np.arange(n_lon) + 0.5) / n_lon, np.zeros(n_lon)], axis=1)
    uvs = np.concatenate([ring_uv, top_uv, bot_uv])

    def uid(i, j):
        return i * (n_lon + 1) + j

    top_uv0 = n_ring * (n_lon + 1)
    bot_uv0 = top_uv0 + n_lon
    bottom_id = len(verts) - 1
    faces, fuv = [], []
    for j in range(n_lon):
        faces.append((0, vid(0, j), vid(0, j + 1)))
        fuv.append((top_uv0 + j, uid(0, j), uid(0, j + 1)))
        last = n_ring - 1
        faces.append((bottom_id, vid(last, j + 1), vid(last, j)))
        fuv.append((bot_uv0 + j, uid(last, j + 1), uid(last, j)))
    for i in range(n_ring - 1):
        for j in range(n_lon):
            a, b = vid(i, j), vid(i, j + 1)
            c, d = vid(i + 1, j + 1), vid(i + 1, j)
            ta, tb, tc, td = uid(i, j), uid(i, j + 1), uid(i + 1, j + 1), uid(i + 1, j)
            faces += [(a, d, c), (a, c, b)]
            fuv += [(ta, td, tc), (ta, tc, tb)]
    mesh = TexturedMesh(vertices=verts, faces=faces, uvs=uvs, face_uvs=fuv,
                        texture=_head_texture(rng, texture_size, skin_detail),
                        name=name or f"head{seed:03d}")
    return estimate_normals(mesh)


def synthetic_heads(n: int, seed: int = 0, **kwargs) -> list[TexturedMesh]:
    seeds = np.random.SeedSequence(seed).generate_state(n)
    return [synthetic_head(int(s), name=f"head{i:03d}", **kwargs) for i, s in enumerate(seeds)]
