"""Front-view orthographic rasteriser and random patch cropping.

The camera looks along ``-z`` through the mesh's geometric centre, so the
surface facing ``+z`` is what ends up in the image. Image rows grow
downwards (``+y`` world is up on screen).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .mesh import TexturedMesh, geometric_center, sample_texture, to_uint8, estimate_normals

log = logging.getLogger(__name__)

MAX_REJECTIONS = 1000
# candidate (face, pixel) pairs processed per chunk; bounds peak memory
_CHUNK = 2_000_000


@dataclass(frozen=True)
class RenderConfig:
    resolution: int = 1080
    background_rgb: tuple[int, int, int] = (0, 0, 0)
    fit_margin: float = 0.05
    lighting: str = "unlit"
    light_direction: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.resolution < 64:
            raise ValueError(f"resolution must be >= 64, got {self.resolution}")
        if not 0 <= self.fit_margin < 0.5:
            raise ValueError(f"fit_margin must lie in [0, 0.5), got {self.fit_margin}")
        if self.lighting not in ("unlit", "lambertian"):
            raise ValueError(f"lighting must be 'unlit' or 'lambertian', got {self.lighting!r}")
        if len(self.background_rgb) != 3 or not all(0 <= c <= 255 for c in self.background_rgb):
            raise ValueError(f"background_rgb must be three 0..255 values, got {self.background_rgb}")
        object.__setattr__(self, "background_rgb", tuple(int(c) for c in self.background_rgb))
        d = np.asarray(self.light_direction, dtype=float)
        n = np.linalg.norm(d)
        if d.shape != (3,) or n == 0:
            raise ValueError("light_direction must be a non-zero 3-vector")
        object.__setattr__(self, "light_direction", tuple(float(x) for x in d / n))


@dataclass(frozen=True, eq=False)
class ProjectionImage:
    pixels: np.ndarray            # [H, W, 3] uint8
    background_mask: np.ndarray   # [H, W] bool, True where the mesh covers the pixel
    source_id: str = ""

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def foreground_fraction(self) -> float:
        return float(self.background_mask.mean())


@dataclass(frozen=True, eq=False)
class Patch:
    pixels: np.ndarray
    source_id: str
    crop_origin: tuple[int, int]  # (x, y) of the top-left pixel
    seed: int
    foreground: float = field(default=1.0)

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


# ------------------------------------------------------------------ rasteriser

def _screen_transform(mesh: TexturedMesh, cfg: RenderConfig):
    center = geometric_center(mesh)
    rel = mesh.vertices - center
    half = np.abs(rel[:, :2]).max()
    if half == 0:
        half = 1.0
    scale = 0.5 * cfg.resolution * (1.0 - cfg.fit_margin) / half
    sx = 0.5 * cfg.resolution + rel[:, 0] * scale
    sy = 0.5 * cfg.resolution - rel[:, 1] * scale
    return np.stack([sx, sy], axis=1), rel[:, 2]


def rasterize(mesh: TexturedMesh, cfg: RenderConfig):
    """Depth-buffered visibility: per pixel the winning face and barycentrics.

    Returns ``(face_id [H,W] int, bary [H,W,3])`` with ``face_id == -1`` for
    background. Larger ``z`` is nearer; equal depths go to the lower face index,
    which makes the result independent of face order.
    """
    res = cfg.resolution
    xy, z = _screen_transform(mesh, cfg)
    tri = xy[mesh.faces]            # [F, 3, 2]
    tz = z[mesh.faces]              # [F, 3]
    x0, y0 = tri[:, 0, 0], tri[:, 0, 1]
    x1, y1 = tri[:, 1, 0], tri[:, 1, 1]
    x2, y2 = tri[:, 2, 0], tri[:, 2, 1]
    area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)

    # pixel centres sit at integer + 0.5
    xmin = np.clip(np.ceil(tri[..., 0].min(1) - 0.5), 0, res).astype(np.int64)
    xmax = np.clip(np.floor(tri[..., 0].max(1) - 0.5), -1, res - 1).astype(np.int64)
    ymin = np.clip(np.ceil(tri[..., 1].min(1) - 0.5), 0, res).astype(np.int64)
    ymax = np.clip(np.floor(tri[..., 1].max(1) - 0.5), -1, res - 1).astype(np.int64)
    nx = np.maximum(xmax - xmin + 1, 0)
    ny = np.maximum(ymax - ymin + 1, 0)
    counts = nx * ny
    counts[area == 0] = 0

    best_depth = np.full(res * res, -np.inf)
    best_face = np.full(res * res, -1, dtype=np.int64)
    best_bary = np.zeros((res * res, 3))

    faces = np.nonzero(counts)[0]
    cum = np.cumsum(counts[faces])
    start = 0
    while start < len(faces):
        base = cum[start - 1] if start else 0
        stop = int(np.searchsorted(cum, base + _CHUNK, side="right"))
        stop = max(stop, start + 1)
        chunk = faces[start:stop]
        start = stop

        c = counts[chunk]
        f = np.repeat(chunk, c)
        offs = np.arange(c.sum()) - np.repeat(np.cumsum(c) - c, c)
        px = xmin[f] + offs % nx[f]
        py = ymin[f] + offs // nx[f]
        cx = px + 0.5
        cy = py + 0.5
        a = area[f]
        w0 = ((x1[f] - cx) * (y2[f] - cy) - (x2[f] - cx) * (y1[f] - cy)) / a
        w1 = ((x2[f] - cx) * (y0[f] - cy) - (x0[f] - cx) * (y2[f] - cy)) / a
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        f, px, py, w0, w1, w2 = f[inside], px[inside], py[inside], w0[inside], w1[inside], w2[inside]
        depth = w0 * tz[f, 0] + w1 * tz[f, 1] + w2 * tz[f, 2]
        pix = py * res + px

        # nearest per pixel inside the chunk: sort by pixel, then -depth, then face
        order = np.lexsort((f, -depth, pix))
        pix, f, depth = pix[order], f[order], depth[order]
        bary = np.stack([w0, w1, w2], axis=1)[order]
        first = np.ones(len(pix), dtype=bool)
        first[1:] = pix[1:] != pix[:-1]
        pix, f, depth, bary = pix[first], f[first], depth[first], bary[first]

        cur_d = best_depth[pix]
        cur_f = best_face[pix]
        win = (depth > cur_d) | ((depth == cur_d) & (f < cur_f))
        best_depth[pix[win]] = depth[win]
        best_face[pix[win]] = f[win]
        best_bary[pix[win]] = bary[win]

    return best_face.reshape(res, res), best_bary.reshape(res, res, 3)


def render_front(mesh: TexturedMesh, cfg: RenderConfig | None = None) -> ProjectionImage:
    """Front orthographic projection centred on the mesh's geometric centre."""
    cfg = cfg or RenderConfig()
    face_id, bary = rasterize(mesh, cfg)
    mask = face_id >= 0
    img = np.empty((cfg.resolution, cfg.resolution, 3), dtype=np.uint8)
    img[:] = cfg.background_rgb
    f = face_id[mask]
    w = bary[mask]
    uv = np.einsum("nk,nkd->nd", w, mesh.uvs[mesh.face_uvs[f]])
    color = sample_texture(mesh.texture, uv)
    if cfg.lighting == "lambertian":
        if not mesh.has_normals:
            mesh = estimate_normals(mesh)
        n = np.einsum("nk,nkd->nd", w, mesh.normals[mesh.face_normals[f]])
        n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)
        shade = np.maximum(0.0, n @ np.asarray(cfg.light_direction))
        color = color * shade[:, None]
    img[mask] = to_uint8(color)
    return ProjectionImage(img, mask, source_id=mesh.name)


# ------------------------------------------------------------------ patches

def crop_patches(image: ProjectionImage, k: int, patch_size: int = 224, seed: int = 0,
                 min_foreground: float = 0.5) -> list[Patch]:
    """``k`` random square crops whose mesh coverage is at least ``min_foreground``.

    After ``MAX_REJECTIONS`` consecutive rejections the coverage requirement
    is dropped for the remaining crops.
    """
    H, W = image.height, image.width
    if patch_size > min(H, W) or patch_size < 1:
        raise ValueError(f"patch size {patch_size} does not fit a {W}x{H} image")
    if not 0 <= min_foreground <= 1:
        raise ValueError(f"min_foreground must lie in [0, 1], got {min_foreground}")
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    rng = np.random.default_rng(seed)
    sat = np.zeros((H + 1, W + 1), dtype=np.int64)
    sat[1:, 1:] = image.background_mask.astype(np.int64).cumsum(0).cumsum(1)
    S = patch_size
    area = S * S
    need = min_foreground
    patches = []
    rejected = 0
    while len(patches) < k:
        x = int(rng.integers(0, W - S + 1))
        y = int(rng.integers(0, H - S + 1))
        cover = (sat[y + S, x + S] - sat[y, x + S] - sat[y + S, x] + sat[y, x]) / area
        if cover < need:
            rejected += 1
            if rejected >= MAX_REJECTIONS:
                log.warning("%s: %d consecutive crops below %.2f foreground; dropping the constraint",
                            image.source_id, rejected, need)
                need = 0.0
            continue
        rejected = 0
        patches.append(Patch(image.pixels[y:y + S, x:x + S].copy(), image.source_id,
                             (x, y), seed, float(cover)))
    return patches


def resize_patch(pixels: np.ndarray, size: int) -> np.ndarray:
    if pixels.shape[0] == size and pixels.shape[1] == size:
        return pixels
    return np.asarray(Image.fromarray(pixels).resize((size, size), Image.BILINEAR))


# ------------------------------------------------------------------ PNG I/O

def save_projection(image: ProjectionImage, path) -> Path:
    """RGBA PNG; the alpha channel stores the coverage mask."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rgba = np.dstack([image.pixels, image.background_mask.astype(np.uint8) * 255])
    Image.fromarray(rgba, "RGBA").save(path, optimize=False)
    return path


def load_projection(path) -> ProjectionImage:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGBA") if im.mode in ("RGBA", "LA", "P") else im.convert("RGB"))
    if arr.shape[2] == 4:
        return ProjectionImage(np.ascontiguousarray(arr[..., :3]), arr[..., 3] > 127, Path(path).stem)
    # plain RGB: every pixel counts as foreground
    return ProjectionImage(arr, np.ones(arr.shape[:2], dtype=bool), Path(path).stem)


def save_patch(patch: Patch, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(patch.pixels).save(path)
    return path
