"""Synthetic distortions of textured meshes and labelled corpus generation.

Seven distortion kinds, four severity levels each. Geometry kinds move or
decimate vertices (normals are recomputed); texture kinds only touch the
raster.
"""
from __future__ import annotations

import csv
import enum
import logging
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .mesh import TexturedMesh, estimate_normals
from .render import RenderConfig, render_front, save_projection

log = logging.getLogger(__name__)

LEVELS = (1, 2, 3, 4)
MANIFEST_FIELDS = ["content_id", "kind", "level", "seed", "projection_path", "mos"]


class DistortionKind(enum.IntEnum):
    GeometryNoise = 0
    GeometryShift = 1
    GeometrySimplify = 2
    GeometryQuantize = 3
    TextureDownsample = 4
    TextureQuantize = 5
    ColorNoise = 6

    @classmethod
    def parse(cls, value) -> DistortionKind:
        if isinstance(value, cls):
            return value
        s = str(value).strip()
        if s.isdigit():
            return cls(int(s))
        try:
            return cls[s]
        except KeyError:
            lowered = {k.name.lower(): k for k in cls}
            if s.lower() in lowered:
                return lowered[s.lower()]
            raise ValueError(f"unknown distortion kind {value!r}") from None


@dataclass(frozen=True)
class DistortionSpec:
    kind: DistortionKind
    level: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", DistortionKind.parse(self.kind))
        if self.level not in LEVELS:
            raise ValueError(f"level must be one of {LEVELS}, got {self.level}")


@dataclass(frozen=True)
class SampleRecord:
    content_id: str
    spec: DistortionSpec
    projection_path: str
    pseudo_mos: float

    @property
    def kind(self) -> DistortionKind:
        return self.spec.kind

    @property
    def level(self) -> int:
        return self.spec.level


# ------------------------------------------------------------------ geometry

SIMPLIFY_FRACTION = {1: 0.5, 2: 0.25, 3: 0.125, 4: 0.0625}
QUANTIZE_BITS = {1: 11, 2: 10, 3: 9, 4: 8}
DOWNSAMPLE = {1: 2, 2: 4, 3: 8, 4: 16}
TEXTURE_BITS = {1: 6, 2: 5, 3: 4, 4: 3}


def _with_geometry(mesh: TexturedMesh, vertices: np.ndarray) -> TexturedMesh:
    return estimate_normals(mesh.with_(vertices=vertices, normals=np.zeros((0, 3)), face_normals=None))


def cluster_vertices(mesh: TexturedMesh, cell: float, with_normals: bool = True) -> TexturedMesh | None:
    """Vertex-clustering decimation on a uniform grid of ``cell``-sized voxels.

    Each occupied voxel collapses to the mean of its vertices; faces whose
    corners merge are dropped. Per-corner UVs are kept. Returns None when
    nothing survives.
    """
    lo = mesh.vertices.min(axis=0)
    keys = np.floor((mesh.vertices - lo) / cell).astype(np.int64)
    _, cluster, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    cluster = cluster.reshape(-1)
    rep = np.zeros((len(counts), 3))
    np.add.at(rep, cluster, mesh.vertices)
    rep /= counts[:, None]
    faces = cluster[mesh.faces]
    keep = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    if keep.sum() < 1:
        return None
    faces = faces[keep]
    used, compact = np.unique(faces, return_inverse=True)
    if len(used) < 3:
        return None
    out = mesh.with_(vertices=rep[used], faces=compact.reshape(-1, 3),
                     face_uvs=mesh.face_uvs[keep], normals=np.zeros((0, 3)), face_normals=None)
    return estimate_normals(out) if with_normals else out


def simplify(mesh: TexturedMesh, fraction: float, tol: float = 0.05, iters: int = 60) -> TexturedMesh:
    """Cluster-decimate to about ``fraction`` of the faces.

    The voxel size is found by bisection in log space; the closest face count
    seen is kept. Raises if the result would have fewer than 4 faces.
    """
    n_faces = len(mesh.faces)
    target = fraction * n_faces
    if target < 4:
        raise ValueError(f"{mesh.name}: simplifying {n_faces} faces to {fraction:.4g} "
                         "would leave fewer than 4 faces")
    diag = mesh.bbox_diagonal()
    lo, hi = np.log(diag * 1e-6), np.log(diag)
    best, best_err = None, np.inf
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        cand = cluster_vertices(mesh, float(np.exp(mid)), with_normals=False)
        count = 0 if cand is None else len(cand.faces)
        err = abs(count - target)
        if cand is not None and count >= 4 and err < best_err:
            best, best_err = cand, err
        if best_err <= tol * target * 0.2:
            break
        if count > target:
            lo = mid
        else:
            hi = mid
    if best is None:
        raise ValueError(f"{mesh.name}: simplification leaves fewer than 4 faces")
    if best_err > tol * target:
        log.warning("%s: simplified to %d faces, target was %.0f", mesh.name, len(best.faces), target)
    return estimate_normals(best)


def quantize_vertices(mesh: TexturedMesh, bits: int) -> TexturedMesh:
    lo, hi = mesh.bbox()
    extent = hi - lo
    steps = 2 ** bits - 1
    safe = np.where(extent > 0, extent, 1.0)
    q = np.rint((mesh.vertices - lo) / safe * steps) / steps * safe + lo
    q = np.where(extent > 0, q, mesh.vertices)
    return _with_geometry(mesh, q)


def shift_vertices(mesh: TexturedMesh, amplitude: float, rng: np.random.Generator) -> TexturedMesh:
    """Add a smooth field made of three random plane-wave sinusoids."""
    diag = mesh.bbox_diagonal()
    disp = np.zeros_like(mesh.vertices)
    for _ in range(3):
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        wave = rng.standard_normal(3)
        wave *= 2 * np.pi * rng.uniform(1.0, 2.0) / (diag * np.linalg.norm(wave))
        phase = rng.uniform(0, 2 * np.pi)
        disp += amplitude * np.sin(mesh.vertices @ wave + phase)[:, None] * direction
    return _with_geometry(mesh, mesh.vertices + disp)


# ------------------------------------------------------------------ texture

def downsample_texture(texture: np.ndarray, factor: int) -> np.ndarray:
    h, w = texture.shape[:2]
    im = Image.fromarray(texture)
    small = im.resize((max(1, w // factor), max(1, h // factor)), Image.BOX)
    return np.asarray(small.resize((w, h), Image.BILINEAR))


def quantize_texture(texture: np.ndarray, bits: int) -> np.ndarray:
    """Uniform per-channel quantisation to mid-step values (idempotent)."""
    step = 2 ** (8 - bits)
    t = np.asarray(texture, dtype=np.int64)
    return ((t // step) * step + step // 2).astype(np.uint8)


def noisy_texture(texture: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    t = texture.astype(np.float64) + rng.normal(0.0, sigma, texture.shape)
    return np.clip(np.rint(t), 0, 255).astype(np.uint8)


def apply_distortion(mesh: TexturedMesh, spec: DistortionSpec) -> TexturedMesh:
    rng = np.random.default_rng(spec.seed)
    kind, level = spec.kind, spec.level
    diag = mesh.bbox_diagonal()
    if kind is DistortionKind.GeometryNoise:
        sigma = level * 0.001 * diag
        return _with_geometry(mesh, mesh.vertices + rng.normal(0.0, sigma, mesh.vertices.shape))
    if kind is DistortionKind.GeometryShift:
        return shift_vertices(mesh, level * 0.002 * diag, rng)
    if kind is DistortionKind.GeometrySimplify:
        return simplify(mesh, SIMPLIFY_FRACTION[level])
    if kind is DistortionKind.GeometryQuantize:
        return quantize_vertices(mesh, QUANTIZE_BITS[level])
    if kind is DistortionKind.TextureDownsample:
        return mesh.with_(texture=downsample_texture(mesh.texture, DOWNSAMPLE[level]))
    if kind is DistortionKind.TextureQuantize:
        return mesh.with_(texture=quantize_texture(mesh.texture, TEXTURE_BITS[level]))
    if kind is DistortionKind.ColorNoise:
        return mesh.with_(texture=noisy_texture(mesh.texture, 5.0 * level, rng))
    raise ValueError(f"unhandled distortion kind {kind!r}")


# ------------------------------------------------------------------ corpus

def record_seed(master: int, content_id: str, kind: DistortionKind, level: int) -> int:
    ss = np.random.SeedSequence([master, zlib.crc32(content_id.encode()), int(kind), level])
    return int(ss.generate_state(1)[0])


def pseudo_mos(level: int, seed: int) -> float:
    """``100 - 20 (level - 1) - eta`` with ``eta ~ U(0, 5)``; strictly decreasing in level."""
    eta = np.random.default_rng([seed, 1]).uniform(0.0, 5.0)
    return round(100.0 - 20.0 * (level - 1) - eta, 4)


class CorpusError(RuntimeError):
    pass


def build_corpus(meshes, out_dir, seed: int = 0, render_cfg: RenderConfig | None = None,
                 manifest_name: str = "manifest.csv") -> list[SampleRecord]:
    """Distort every mesh with every kind and level, render and label it.

    Writes ``out_dir/<content_id>/<kind>_<level>.png`` and ``out_dir/manifest.csv``.
    """
    meshes = list(meshes)
    if len(meshes) < 5:
        raise ValueError(f"need at least 5 source meshes (one per fold), got {len(meshes)}")
    names = [m.name for m in meshes]
    if len(set(names)) != len(names):
        raise ValueError("source meshes must have distinct names (content ids)")
    render_cfg = render_cfg or RenderConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for mesh in meshes:
        cid = mesh.name
        for kind in DistortionKind:
            for level in LEVELS:
                rseed = record_seed(seed, cid, kind, level)
                rel = f"{cid}/{kind.name}_{level}.png"
                try:
                    distorted = apply_distortion(mesh, DistortionSpec(kind, level, rseed))
                    save_projection(render_front(distorted, render_cfg), out_dir / rel)
                except Exception as exc:
                    raise CorpusError(f"{cid} {kind.name} level {level}: {exc}") from exc
                records.append(SampleRecord(cid, DistortionSpec(kind, level, rseed),
                                            str(out_dir / rel), pseudo_mos(level, rseed)))
    write_manifest(records, out_dir / manifest_name)
    return records


def write_manifest(records, path) -> Path:
    """CSV with paths stored relative to the manifest's directory when possible."""
    path = Path(path)
    root = path.parent.resolve()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for r in records:
            p = Path(r.projection_path)
            try:
                p = p.resolve().relative_to(root)
            except ValueError:
                pass
            w.writerow([r.content_id, r.spec.kind.name, r.spec.level, r.spec.seed,
                        p.as_posix(), repr(float(r.pseudo_mos))])
    return path


def read_manifest(path) -> list[SampleRecord]:
    path = Path(path)
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: manifest lacks columns {sorted(missing)}")
        for lineno, row in enumerate(reader, 2):
            try:
                spec = DistortionSpec(DistortionKind.parse(row["kind"]), int(row["level"]),
                                      int(row["seed"] or 0))
                mos = float(row["mos"])
            except ValueError as exc:
                raise ValueError(f"{path} line {lineno}: {exc}") from None
            p = Path(row["projection_path"])
            if not p.is_absolute():
                p = path.parent / p
            out.append(SampleRecord(row["content_id"], spec, str(p), mos))
    return out
