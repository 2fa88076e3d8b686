"""Full-reference point-cloud metrics: p2point MSE, p2plane MSE, PSNR-YUV.

Directed scores pair every point of the *source* cloud with its nearest
neighbour in the *target* cloud:

* ``DistToRef``: source = distorted, target = reference
* ``RefToDist``: source = reference, target = distorted
* ``Symmetric``: worst of the two (max for MSE, min for PSNR)

Nearest-neighbour ties go to the lowest target index.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .mesh import ColoredPointCloud

PEAK = 255.0
# candidates fetched from the KD-tree before exact re-ranking
_K = 8


class Metric(str, enum.Enum):
    P2PointMSE = "P2PointMSE"
    P2PlaneMSE = "P2PlaneMSE"
    PsnrYuv = "PsnrYuv"


class Direction(str, enum.Enum):
    RefToDist = "RefToDist"
    DistToRef = "DistToRef"
    Symmetric = "Symmetric"


@dataclass(frozen=True)
class FrScore:
    metric: Metric
    value: float
    direction: Direction

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.value)

    def to_dict(self) -> dict:
        return {"metric": self.metric.value, "direction": self.direction.value,
                "value": None if self.is_infinite else self.value, "infinite": self.is_infinite}


def nearest_neighbors(source: np.ndarray, target: np.ndarray, tree: cKDTree | None = None) -> np.ndarray:
    """Index into ``target`` of the exact nearest neighbour of each source point.

    The KD-tree proposes candidates; squared distances are recomputed exactly
    and ties resolved to the lowest index, matching a brute-force scan.
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if len(target) == 0 or len(source) == 0:
        raise ValueError("nearest-neighbour search on an empty cloud")
    tree = tree or cKDTree(target)
    k = min(_K, len(target))
    dist, idx = tree.query(source, k=k)
    if k == 1:
        dist, idx = dist[:, None], idx[:, None]
    d2 = ((source[:, None, :] - target[idx]) ** 2).sum(axis=2)
    # lowest index among the exact minima
    order = np.argsort(idx, axis=1, kind="stable")
    idx_sorted = np.take_along_axis(idx, order, axis=1)
    d2_sorted = np.take_along_axis(d2, order, axis=1)
    best = idx_sorted[np.arange(len(source)), np.argmin(d2_sorted, axis=1)]

    if k < len(target):
        # all k candidates (near-)tied: the true minimum may lie outside them
        dmin = dist[:, 0]
        crowded = np.nonzero(dist[:, -1] <= dmin * (1 + 1e-9) + 1e-300)[0]
        for i in crowded:
            cand = np.asarray(tree.query_ball_point(source[i], dmin[i] * (1 + 1e-9) + 1e-12))
            cand.sort()
            cd2 = ((target[cand] - source[i]) ** 2).sum(axis=1)
            best[i] = cand[np.argmin(cd2)]
    return best


def brute_force_nearest(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """O(n*m) reference search; first (lowest) index wins ties."""
    d2 = ((np.asarray(source)[:, None, :] - np.asarray(target)[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def _require(cloud: ColoredPointCloud, what: str):
    if cloud is None or len(cloud) == 0:
        raise ValueError(f"{what} cloud is empty")


def _directed_p2point(src: ColoredPointCloud, tgt: ColoredPointCloud) -> float:
    nn = nearest_neighbors(src.points, tgt.points)
    return float(((src.points - tgt.points[nn]) ** 2).sum(axis=1).mean())


def _directed_p2plane(src: ColoredPointCloud, tgt: ColoredPointCloud) -> float:
    nn = nearest_neighbors(src.points, tgt.points)
    err = ((src.points - tgt.points[nn]) * tgt.normals[nn]).sum(axis=1)
    return float((err ** 2).mean())


def _symmetric(metric, fn, ref, dist, direction, worst=max) -> FrScore:
    direction = Direction(direction)
    if direction is Direction.DistToRef:
        value = fn(dist, ref)
    elif direction is Direction.RefToDist:
        value = fn(ref, dist)
    else:
        value = worst(fn(dist, ref), fn(ref, dist))
    return FrScore(metric, value, direction)


def p2point_mse(ref: ColoredPointCloud, dist: ColoredPointCloud,
                direction: Direction | str = Direction.Symmetric) -> FrScore:
    _require(ref, "reference")
    _require(dist, "distorted")
    return _symmetric(Metric.P2PointMSE, _directed_p2point, ref, dist, direction)


def p2plane_mse(ref: ColoredPointCloud, dist: ColoredPointCloud,
                direction: Direction | str = Direction.Symmetric) -> FrScore:
    """Squared nearest-neighbour error projected on the target point's normal."""
    _require(ref, "reference")
    _require(dist, "distorted")
    direction = Direction(direction)
    if direction is not Direction.RefToDist and ref.normals is None:
        raise ValueError("p2plane needs reference normals")
    if direction is not Direction.DistToRef and dist.normals is None:
        raise ValueError("p2plane needs distorted-cloud normals for this direction")
    return _symmetric(Metric.P2PlaneMSE, _directed_p2plane, ref, dist, direction)


def rgb_to_yuv(rgb: np.ndarray) -> np.ndarray:
    """BT.601 full-range RGB -> YCbCr, all channels on a 0..255 scale."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    u = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    v = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return np.stack([y, u, v], axis=-1)


def _directed_yuv_mse(src: ColoredPointCloud, tgt: ColoredPointCloud) -> float:
    nn = nearest_neighbors(src.points, tgt.points)
    diff = rgb_to_yuv(src.colors) - rgb_to_yuv(tgt.colors[nn])
    mse = (diff ** 2).mean(axis=0)
    return float((6.0 * mse[0] + mse[1] + mse[2]) / 8.0)


def _psnr(mse: float) -> float:
    return math.inf if mse == 0 else 10.0 * math.log10(PEAK ** 2 / mse)


def psnr_yuv(ref: ColoredPointCloud, dist: ColoredPointCloud,
             direction: Direction | str = Direction.Symmetric) -> FrScore:
    """PSNR of the 6:1:1 weighted Y/U/V colour MSE; infinite for identical colours."""
    _require(ref, "reference")
    _require(dist, "distorted")
    if ref.colors is None or dist.colors is None:
        raise ValueError("psnr-yuv needs colours on both clouds")
    return _symmetric(Metric.PsnrYuv, lambda s, t: _psnr(_directed_yuv_mse(s, t)),
                      ref, dist, direction, worst=min)


def all_metrics(ref: ColoredPointCloud, dist: ColoredPointCloud) -> dict[str, FrScore]:
    return {
        "p2point": p2point_mse(ref, dist),
        "p2plane": p2plane_mse(ref, dist),
        "psnryuv": psnr_yuv(ref, dist),
    }
