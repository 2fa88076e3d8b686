"""Textured triangle meshes, Wavefront I/O and surface sampling."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

DEFAULT_SAMPLES = 200_000
NORMAL_TOL = 1e-6


class MeshParseError(ValueError):
    """Malformed geometry/material file; message names the offending line."""


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TexturedMesh:
    """Triangle mesh whose corners index vertices, UVs and (optionally) normals separately.

    ``faces``, ``face_uvs`` and ``face_normals`` are ``[F, 3]`` index arrays into
    ``vertices``, ``uvs`` and ``normals``. Edges are derived on demand.
    """

    vertices: np.ndarray
    faces: np.ndarray
    uvs: np.ndarray
    face_uvs: np.ndarray
    texture: np.ndarray
    normals: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    face_normals: np.ndarray | None = None
    name: str = "mesh"

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "vertices", _frozen(self.vertices, np.float64).reshape(-1, 3))
        set_(self, "faces", _frozen(self.faces, np.int64).reshape(-1, 3))
        set_(self, "uvs", _frozen(self.uvs, np.float64).reshape(-1, 2))
        set_(self, "face_uvs", _frozen(self.face_uvs, np.int64).reshape(-1, 3))
        set_(self, "normals", _frozen(self.normals, np.float64).reshape(-1, 3))
        if self.face_normals is not None:
            set_(self, "face_normals", _frozen(self.face_normals, np.int64).reshape(-1, 3))
        tex = np.asarray(self.texture)
        if tex.ndim != 3 or tex.shape[2] != 3 or tex.dtype != np.uint8:
            raise ValueError(f"texture must be an HxWx3 uint8 raster, got {tex.shape} {tex.dtype}")
        set_(self, "texture", _frozen(tex, np.uint8))
        self._validate()

    def _validate(self):
        if len(self.vertices) < 3 or len(self.faces) < 1:
            raise ValueError(f"mesh needs >= 3 vertices and >= 1 face, got "
                             f"{len(self.vertices)} and {len(self.faces)}")
        if len(self.face_uvs) != len(self.faces):
            raise ValueError("face_uvs must have one row per face")
        _check_index(self.faces, len(self.vertices), "vertex")
        _check_index(self.face_uvs, len(self.uvs), "uv")
        if self.face_normals is not None:
            if len(self.face_normals) != len(self.faces):
                raise ValueError("face_normals must have one row per face")
            _check_index(self.face_normals, len(self.normals), "normal")
        if len(self.normals):
            lengths = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(lengths - 1) > NORMAL_TOL):
                raise ValueError("normals must be unit length")

    @property
    def has_normals(self) -> bool:
        return self.face_normals is not None and len(self.normals) > 0

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected vertex edges ``[E, 2]`` (smaller index first)."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e = np.sort(e, axis=1)
        e = e[e[:, 0] != e[:, 1]]
        return np.unique(e, axis=0)

    def face_areas(self) -> np.ndarray:
        tri = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def bbox_diagonal(self) -> float:
        lo, hi = self.bbox()
        return float(np.linalg.norm(hi - lo))

    def with_(self, **changes) -> TexturedMesh:
        return replace(self, **changes)


def _check_index(idx: np.ndarray, n: int, what: str):
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"{what} index out of range (have {n} {what}s, "
                         f"indices span {idx.min()}..{idx.max()})")


@dataclass(frozen=True, eq=False)
class ColoredPointCloud:
    points: np.ndarray
    colors: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "points", _frozen(self.points, np.float64).reshape(-1, 3))
        if self.colors is not None:
            set_(self, "colors", _frozen(self.colors, np.uint8).reshape(-1, 3))
            if len(self.colors) != len(self.points):
                raise ValueError("points and colors differ in length")
        if self.normals is not None:
            set_(self, "normals", _frozen(self.normals, np.float64).reshape(-1, 3))
            if len(self.normals) != len(self.points):
                raise ValueError("points and normals differ in length")
            if np.any(np.abs(np.linalg.norm(self.normals, axis=1) - 1) > NORMAL_TOL):
                raise ValueError("point normals must be unit length")

    def __len__(self):
        return len(self.points)

    def transformed(self, rotation: np.ndarray, translation=(0.0, 0.0, 0.0)) -> ColoredPointCloud:
        """Rigidly moved copy: ``p -> R p + t``; normals rotate with ``R``."""
        R = np.asarray(rotation, dtype=np.float64)
        normals = None
        if self.normals is not None:
            normals = self.normals @ R.T
            normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        return ColoredPointCloud(self.points @ R.T + np.asarray(translation), self.colors, normals)


# ------------------------------------------------------------------ geometry

def geometric_center(mesh: TexturedMesh) -> np.ndarray:
    """Arithmetic mean of all vertex records (seam duplicates count separately)."""
    return np.asarray(mesh.vertices).mean(axis=0)


def estimate_normals(mesh: TexturedMesh) -> TexturedMesh:
    """Per-vertex normals from area-weighted incident face normals.

    Face winding sets orientation. Degenerate faces contribute nothing; a
    vertex with no usable incident face gets ``+z`` and a warning.
    """
    tri = mesh.vertices[mesh.faces]
    # the unnormalised cross product is already weighted by twice the area
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    acc = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], fn)
    length = np.linalg.norm(acc, axis=1)
    bad = length <= 1e-300
    if bad.any():
        log.warning("%s: %d vertices have no non-degenerate incident face; using +z normal",
                    mesh.name, int(bad.sum()))
        acc[bad] = (0.0, 0.0, 1.0)
        length[bad] = 1.0
    normals = acc / length[:, None]
    return mesh.with_(normals=normals, face_normals=mesh.faces.copy())


# ------------------------------------------------------------------ texture

def sample_texture(texture: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Bilinear, clamp-to-edge lookup. ``uv`` in [0,1]^2 with v pointing up.

    Returns float RGB in [0, 255], shape ``uv.shape[:-1] + (3,)``.
    """
    tex = np.asarray(texture, dtype=np.float64)
    h, w = tex.shape[:2]
    uv = np.asarray(uv, dtype=np.float64)
    x = uv[..., 0] * w - 0.5
    y = (1.0 - uv[..., 1]) * h - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    xa = np.clip(x0, 0, w - 1)
    xb = np.clip(x0 + 1, 0, w - 1)
    ya = np.clip(y0, 0, h - 1)
    yb = np.clip(y0 + 1, 0, h - 1)
    top = tex[ya, xa] * (1 - fx) + tex[ya, xb] * fx
    bot = tex[yb, xa] * (1 - fx) + tex[yb, xb] * fx
    return top * (1 - fy) + bot * fy


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


# ------------------------------------------------------------------ sampling

def mesh_to_pointcloud(mesh: TexturedMesh, n_samples: int = DEFAULT_SAMPLES,
                       seed: int = 0) -> ColoredPointCloud:
    """Area-uniform surface samples with texture colour and interpolated normals."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise ValueError(f"{mesh.name}: mesh has zero surface area")
    if not mesh.has_normals:
        mesh = estimate_normals(mesh)
    rng = np.random.default_rng(seed)
    face = rng.choice(len(areas), size=n_samples, p=areas / total)
    r1 = np.sqrt(rng.random(n_samples))
    r2 = rng.random(n_samples)
    bary = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)

    pts = np.einsum("nk,nkd->nd", bary, mesh.vertices[mesh.faces[face]])
    uv = np.einsum("nk,nkd->nd", bary, mesh.uvs[mesh.face_uvs[face]])
    colors = to_uint8(sample_texture(mesh.texture, uv))

    nrm = np.einsum("nk,nkd->nd", bary, mesh.normals[mesh.face_normals[face]])
    length = np.linalg.norm(nrm, axis=1)
    bad = length < 1e-12
    if bad.any():
        # opposing corner normals cancel out; fall back to the face normal
        tri = mesh.vertices[mesh.faces[face[bad]]]
        fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        nrm[bad] = fn
        length[bad] = np.linalg.norm(fn, axis=1)
    nrm /= length[:, None]
    return ColoredPointCloud(pts, colors, nrm)


# ------------------------------------------------------------------ Wavefront I/O

def _resolve_index(tok: str, n: int, lineno: int, what: str) -> int:
    try:
        i = int(tok)
    except ValueError:
        raise MeshParseError(f"line {lineno}: bad {what} index {tok!r}") from None
    if i == 0:
        raise MeshParseError(f"line {lineno}: {what} index 0 is invalid (indices are 1-based)")
    j = i - 1 if i > 0 else n + i
    if not 0 <= j < n:
        raise MeshParseError(f"line {lineno}: {what} index {i} out of range (have {n})")
    return j


def _parse_floats(parts, count, lineno, tag):
    if len(parts) < count:
        raise MeshParseError(f"line {lineno}: '{tag}' record needs {count} values")
    try:
        return [float(p) for p in parts[:count]]
    except ValueError:
        raise MeshParseError(f"line {lineno}: non-numeric '{tag}' record") from None


def _read_mtl_texture(mtl_path: Path) -> Path:
    if not mtl_path.exists():
        raise OSError(f"material file not found: {mtl_path}")
    for lineno, line in enumerate(mtl_path.read_text().splitlines(), 1):
        parts = line.split()
        if parts and parts[0] == "map_Kd":
            if len(parts) < 2:
                raise MeshParseError(f"{mtl_path.name} line {lineno}: map_Kd without a file")
            # options like -s/-o precede the filename; take the last token
            return mtl_path.parent / parts[-1]
    raise MeshParseError(f"{mtl_path.name}: no map_Kd diffuse texture")


def load_texture(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise OSError(f"texture raster not found: {path}")
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except OSError as exc:
        raise OSError(f"cannot decode texture {path}: {exc}") from None


def load_mesh(path) -> TexturedMesh:
    """Read an ``.obj`` with its ``.mtl`` and diffuse texture raster.

    Polygons are fan-triangulated. Missing normals are estimated; supplied
    normals are renormalised.
    """
    path = Path(path)
    text = path.read_text()
    verts, uvs, norms = [], [], []
    faces, fuv, fnrm = [], [], []
    mtllib = None
    name = path.stem
    any_normal_ref = True
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag, rest = parts[0], parts[1:]
        if tag == "v":
            verts.append(_parse_floats(rest, 3, lineno, tag))
        elif tag == "vt":
            uvs.append(_parse_floats(rest, 2, lineno, tag))
        elif tag == "vn":
            norms.append(_parse_floats(rest, 3, lineno, tag))
        elif tag == "f":
            if len(rest) < 3:
                raise MeshParseError(f"line {lineno}: face with fewer than 3 corners")
            corners = []
            for tok in rest:
                sub = tok.split("/")
                if len(sub) < 2 or not sub[1]:
                    raise MeshParseError(f"line {lineno}: face corner {tok!r} lacks a texture index")
                v = _resolve_index(sub[0], len(verts), lineno, "vertex")
                t = _resolve_index(sub[1], len(uvs), lineno, "texture")
                n = _resolve_index(sub[2], len(norms), lineno, "normal") if len(sub) > 2 and sub[2] else None
                corners.append((v, t, n))
            if any(c[2] is None for c in corners):
                any_normal_ref = False
            for k in range(1, len(corners) - 1):
                tri = (corners[0], corners[k], corners[k + 1])
                faces.append([c[0] for c in tri])
                fuv.append([c[1] for c in tri])
                fnrm.append([c[2] if c[2] is not None else -1 for c in tri])
        elif tag == "o" and rest:
            name = " ".join(rest)
        elif tag == "mtllib":
            if not rest:
                raise MeshParseError(f"line {lineno}: mtllib without a file")
            mtllib = " ".join(rest)
    if mtllib is None:
        raise MeshParseError(f"{path.name}: no mtllib record, cannot locate texture")
    if not faces:
        raise MeshParseError(f"{path.name}: no faces")
    texture = load_texture(_read_mtl_texture(path.parent / mtllib))

    normals = np.asarray(norms, dtype=np.float64).reshape(-1, 3)
    face_normals = None
    if any_normal_ref and len(normals):
        length = np.linalg.norm(normals, axis=1)
        if np.all(length > 0):
            # leave already-unit normals untouched so save/load is a fixed point
            off = np.abs(length - 1.0) > 1e-12
            normals[off] /= length[off, None]
            face_normals = np.asarray(fnrm)
    mesh = TexturedMesh(
        vertices=np.asarray(verts).reshape(-1, 3), faces=np.asarray(faces),
        uvs=np.asarray(uvs).reshape(-1, 2), face_uvs=np.asarray(fuv), texture=texture,
        normals=normals if face_normals is not None else np.zeros((0, 3)),
        face_normals=face_normals, name=name,
    )
    if face_normals is None:
        mesh = estimate_normals(mesh)
    return mesh


def save_mesh(mesh: TexturedMesh, path) -> Path:
    """Write ``<stem>.obj``, ``<stem>.mtl`` and ``<stem>.png`` next to each other."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stem = path.stem
    tex_name = f"{stem}.png"
    Image.fromarray(np.asarray(mesh.texture)).save(path.parent / tex_name)
    (path.parent / f"{stem}.mtl").write_text(
        f"newmtl material0\nKa 1 1 1\nKd 1 1 1\nmap_Kd {tex_name}\n")
    lines = [f"mtllib {stem}.mtl", f"o {mesh.name}"]
    lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"vt {u!r} {v!r}" for u, v in mesh.uvs.tolist()]
    if mesh.has_normals:
        lines += [f"vn {x!r} {y!r} {z!r}" for x, y, z in mesh.normals.tolist()]
    lines.append("usemtl material0")
    f1 = mesh.faces + 1
    t1 = mesh.face_uvs + 1
    if mesh.has_normals:
        n1 = mesh.face_normals + 1
        for a, b, c in zip(f1.tolist(), t1.tolist(), n1.tolist()):
            lines.append(f"f {a[0]}/{b[0]}/{c[0]} {a[1]}/{b[1]}/{c[1]} {a[2]}/{b[2]}/{c[2]}")
    else:
        for a, b in zip(f1.tolist(), t1.tolist()):
            lines.append(f"f {a[0]}/{b[0]} {a[1]}/{b[1]} {a[2]}/{b[2]}")
    path.write_text("\n".join(lines) + "\n")
    return path


# ------------------------------------------------------------------ point-cloud cache

POINT_DTYPE = np.dtype([("p", "<f8", 3), ("c", "u1", 3), ("n", "<f8", 3)])


def save_pointcloud(cloud: ColoredPointCloud, path) -> Path:
    """Little-endian dump: uint64 count, then per point 3 f64, 3 u8, 3 f64."""
    if cloud.normals is None or cloud.colors is None:
        raise ValueError("binary dump needs colours and normals")
    rec = np.empty(len(cloud), dtype=POINT_DTYPE)
    rec["p"] = cloud.points
    rec["c"] = cloud.colors
    rec["n"] = cloud.normals
    with open(path, "wb") as fh:
        fh.write(np.uint64(len(cloud)).astype("<u8").tobytes())
        fh.write(rec.tobytes())
    return Path(path)


def load_pointcloud(path) -> ColoredPointCloud:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated point-cloud file")
    n = int(np.frombuffer(raw[:8], dtype="<u8")[0])
    if len(raw) != 8 + n * POINT_DTYPE.itemsize:
        raise ValueError(f"{path}: expected {n} points, file size disagrees")
    rec = np.frombuffer(raw, dtype=POINT_DTYPE, count=n, offset=8)
    return ColoredPointCloud(rec["p"], rec["c"], rec["n"])
