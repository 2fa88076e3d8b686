import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from dhhqa.mesh import ColoredPointCloud
from dhhqa.pcq import (
    Direction,
    FrScore,
    Metric,
    all_metrics,
    brute_force_nearest,
    nearest_neighbors,
    p2plane_mse,
    p2point_mse,
    psnr_yuv,
    rgb_to_yuv,
)


def random_cloud(rng, n=200, grid=None):
    pts = rng.standard_normal((n, 3)) if grid is None else rng.integers(0, grid, (n, 3)).astype(float)
    nrm = rng.standard_normal((n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return ColoredPointCloud(pts, rng.integers(0, 256, (n, 3), dtype=np.uint8), nrm)


def oracle_directed(src, tgt, kind):
    """Per-point loop over a brute-force distance matrix."""
    d2 = ((src.points[:, None, :] - tgt.points[None, :, :]) ** 2).sum(axis=2)
    total = 0.0
    for i in range(len(src)):
        j = int(np.argmin(d2[i]))
        e = src.points[i] - tgt.points[j]
        total += float(e @ e) if kind == "point" else float(e @ tgt.normals[j]) ** 2
    return total / len(src)


def test_yuv_conversion_known_values():
    np.testing.assert_allclose(rgb_to_yuv([255, 255, 255]), [255, 128, 128], atol=1e-9)
    np.testing.assert_allclose(rgb_to_yuv([0, 0, 0]), [0, 128, 128], atol=1e-9)
    y, u, v = rgb_to_yuv([255, 0, 0])
    assert y == pytest.approx(0.299 * 255)
    assert v == pytest.approx(255.5, abs=1e-9)


def test_nearest_matches_brute_force_with_ties():
    rng = np.random.default_rng(0)
    for _ in range(20):
        # integer grids force many exact ties
        src = rng.integers(0, 4, (150, 3)).astype(float) + 0.5
        tgt = rng.integers(0, 4, (150, 3)).astype(float)
        np.testing.assert_array_equal(nearest_neighbors(src, tgt), brute_force_nearest(src, tgt))


def test_p2point_p2plane_match_oracle_on_100_pairs():
    rng = np.random.default_rng(1)
    for trial in range(100):
        grid = 6 if trial % 4 == 0 else None
        ref, dist = random_cloud(rng, grid=grid), random_cloud(rng, grid=grid)
        for direction, pair in ((Direction.DistToRef, (dist, ref)), (Direction.RefToDist, (ref, dist))):
            assert p2point_mse(ref, dist, direction).value == pytest.approx(
                oracle_directed(*pair, "point"), rel=1e-12, abs=1e-15)
            assert p2plane_mse(ref, dist, direction).value == pytest.approx(
                oracle_directed(*pair, "plane"), rel=1e-12, abs=1e-15)
        sym = p2point_mse(ref, dist).value
        assert sym == max(oracle_directed(dist, ref, "point"), oracle_directed(ref, dist, "point")) or \
            sym == pytest.approx(max(oracle_directed(dist, ref, "point"), oracle_directed(ref, dist, "point")),
                                 rel=1e-12)


def test_identical_clouds():
    cloud = random_cloud(np.random.default_rng(2))
    assert p2point_mse(cloud, cloud).value == 0.0
    assert p2plane_mse(cloud, cloud).value == 0.0
    score = psnr_yuv(cloud, cloud)
    assert score.is_infinite and math.isinf(score.value)
    assert score.to_dict() == {"metric": "PsnrYuv", "direction": "Symmetric", "value": None, "infinite": True}


def test_psnr_hand_case():
    pts = np.zeros((1, 3))
    n = np.array([[0, 0, 1.0]])
    ref = ColoredPointCloud(pts, np.array([[100, 100, 100]], np.uint8), n)
    dist = ColoredPointCloud(pts, np.array([[110, 100, 100]], np.uint8), n)
    dy, du, dv = rgb_to_yuv([110, 100, 100]) - rgb_to_yuv([100, 100, 100])
    mse = (6 * dy ** 2 + du ** 2 + dv ** 2) / 8
    expected = 10 * math.log10(255 ** 2 / mse)
    assert psnr_yuv(ref, dist).value == pytest.approx(expected, rel=1e-12)


def test_symmetric_takes_worse_direction():
    # dist is a subset of ref: DistToRef is 0, RefToDist is not
    rng = np.random.default_rng(3)
    ref = random_cloud(rng, 50)
    dist = ColoredPointCloud(ref.points[:10], ref.colors[:10], ref.normals[:10])
    assert p2point_mse(ref, dist, "DistToRef").value == 0.0
    r2d = p2point_mse(ref, dist, "RefToDist").value
    assert r2d > 0 and p2point_mse(ref, dist).value == r2d
    assert psnr_yuv(ref, dist, "DistToRef").is_infinite
    assert psnr_yuv(ref, dist).value == psnr_yuv(ref, dist, "RefToDist").value


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rigid_motion_invariance(seed):
    rng = np.random.default_rng(seed)
    ref, dist = random_cloud(rng, 80), random_cloud(rng, 80)
    rot = Rotation.random(random_state=seed % 2**31).as_matrix()
    t = rng.uniform(-5, 5, 3)
    a, b = ref.transformed(rot, t), dist.transformed(rot, t)
    for fn in (p2point_mse, p2plane_mse, psnr_yuv):
        assert fn(a, b).value == pytest.approx(fn(ref, dist).value, rel=1e-9, abs=1e-12)


def test_errors():
    rng = np.random.default_rng(4)
    cloud = random_cloud(rng, 5)
    empty = ColoredPointCloud(np.zeros((0, 3)), np.zeros((0, 3), np.uint8), np.zeros((0, 3)))
    with pytest.raises(ValueError, match="empty"):
        p2point_mse(cloud, empty)
    no_normals = ColoredPointCloud(cloud.points, cloud.colors, None)
    with pytest.raises(ValueError, match="normals"):
        p2plane_mse(no_normals, cloud)
    with pytest.raises(ValueError):
        p2point_mse(cloud, cloud, "Sideways")


def test_all_metrics_keys_and_types():
    rng = np.random.default_rng(5)
    out = all_metrics(random_cloud(rng, 30), random_cloud(rng, 30))
    assert set(out) == {"p2point", "p2plane", "psnryuv"}
    assert all(isinstance(v, FrScore) for v in out.values())
    assert out["psnryuv"].metric is Metric.PsnrYuv
