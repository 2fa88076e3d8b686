"""Acceptance checks, one test per criterion.

Each test prints a single ``[ACCEPTANCE n] PASS|FAIL`` line with the measured
quantities and its runtime against the allowed budget, then asserts.
"""
import time
import zlib
from contextlib import contextmanager
from itertools import product

import numpy as np
import pytest

from dhhqa import nn
from dhhqa.distort import (
    LEVELS,
    DistortionKind,
    DistortionSpec,
    SampleRecord,
    apply_distortion,
    build_corpus,
    pseudo_mos,
    read_manifest,
    record_seed,
)
from dhhqa.mesh import mesh_to_pointcloud
from dhhqa.model import VitConfig, forward, init_params, joint_loss, one_hot, preprocess, regression_mse
from dhhqa.pcq import Direction, brute_force_nearest, nearest_neighbors, p2plane_mse, p2point_mse, psnr_yuv
from dhhqa.render import RenderConfig, crop_patches, render_front, save_projection
from dhhqa.stats import accuracy, krcc, make_folds, srcc
from dhhqa.synthetic import synthetic_heads
from dhhqa.training import ProjectionCache, TrainConfig, predict_rows, train
from test_pcq import oracle_directed, random_cloud
from test_stats import average_ranks, kendall_oracle, pearson_oracle

# Desk settings for the learning criteria. A 64 px render equals the model
# input, so the crop is the whole projection and coverage filtering is moot.
DESK_RENDER = RenderConfig(resolution=64, lighting="lambertian", light_direction=(0.4, 0.5, 1.0))
DESK_LR = 1e-3
CV_EPOCHS = 5


@contextmanager
def criterion(capsys, n, limit_s, already_s=0.0):
    """Time the block; the caller fills ``result`` with ``ok`` and ``detail``.

    ``already_s`` adds time spent outside the block, e.g. in a fixture.
    """
    result = {"ok": False, "detail": ""}
    start = time.perf_counter()
    try:
        yield result
    finally:
        elapsed = time.perf_counter() - start + already_s
        in_time = elapsed < limit_s
        status = "PASS" if result["ok"] and in_time else "FAIL"
        with capsys.disabled():
            print(f"\n[ACCEPTANCE {n}] {status}  {result['detail']}  "
                  f"(runtime {elapsed:.1f} s, limit {limit_s:.0f} s{'' if in_time else ', EXCEEDED'})")
        result["elapsed"] = elapsed
        result["in_time"] = in_time


# ---------------------------------------------------------------- 1

def test_1_statistics_match_definition_oracles(capsys):
    with criterion(capsys, 1, 5) as res:
        rng = np.random.default_rng(2024)
        worst = 0.0
        for trial in range(200):
            if trial % 2:
                x, y = rng.integers(0, 6, 50).astype(float), rng.integers(0, 6, 50).astype(float)
            else:
                x, y = rng.standard_normal(50), rng.standard_normal(50)
            worst = max(worst, abs(srcc(x, y) - pearson_oracle(average_ranks(x), average_ranks(y))),
                        abs(krcc(x, y) - kendall_oracle(x, y)))
        hand = (srcc([1, 2, 3, 4], [1, 3, 2, 4]) == 0.8, krcc([1, 2, 3], [1, 3, 2]) == 1 / 3)
        res["ok"] = worst <= 1e-12 and all(hand)
        res["detail"] = f"max |impl - oracle| = {worst:.2e} (tol 1e-12); hand cases exact: {all(hand)}"
    assert res["ok"] and res["in_time"]


# ---------------------------------------------------------------- 2

def test_2_fr_metrics_match_brute_force(capsys):
    with criterion(capsys, 2, 30) as res:
        rng = np.random.default_rng(77)
        index_mismatch = value_mismatch = 0
        worst_loop = 0.0
        for trial in range(100):
            grid = 5 if trial % 5 == 0 else None   # integer grids force distance ties
            ref, dist = random_cloud(rng, grid=grid), random_cloud(rng, grid=grid)
            for src, tgt, direction in ((dist, ref, Direction.DistToRef), (ref, dist, Direction.RefToDist)):
                nn_bf = brute_force_nearest(src.points, tgt.points)
                index_mismatch += int(not np.array_equal(nearest_neighbors(src.points, tgt.points), nn_bf))
                e = src.points - tgt.points[nn_bf]
                bf_point = float((e ** 2).sum(axis=1).mean())
                bf_plane = float(((e * tgt.normals[nn_bf]).sum(axis=1) ** 2).mean())
                got_point = p2point_mse(ref, dist, direction).value
                got_plane = p2plane_mse(ref, dist, direction).value
                value_mismatch += int(got_point != bf_point) + int(got_plane != bf_plane)
                worst_loop = max(worst_loop, abs(got_point - oracle_directed(src, tgt, "point")) / max(bf_point, 1e-300),
                                 abs(got_plane - oracle_directed(src, tgt, "plane")) / max(bf_plane, 1e-300))
        same = random_cloud(rng)
        zero = p2point_mse(same, same).value == 0.0 and p2plane_mse(same, same).value == 0.0
        inf_flag = psnr_yuv(same, same).is_infinite
        res["ok"] = index_mismatch == 0 and value_mismatch == 0 and zero and inf_flag
        res["detail"] = (f"NN index mismatches {index_mismatch}, value mismatches {value_mismatch} over 400 "
                         f"directed checks; loop-oracle rel diff {worst_loop:.1e}; identical clouds 0 MSE: {zero}, "
                         f"infinite PSNR flag: {inf_flag}")
    assert res["ok"] and res["in_time"]


# ---------------------------------------------------------------- 3

def _op_cases(rng):
    def leaf(*shape):
        return nn.Tensor(rng.standard_normal(shape), requires_grad=True)

    a, b = leaf(2, 3, 4), leaf(2, 3, 4)
    v, w, bias = leaf(4), leaf(4, 5), leaf(5)
    g, beta = leaf(4), leaf(4)
    m1, m2 = leaf(2, 3, 4), leaf(2, 4, 3)
    emb = leaf(1, 3, 4)
    tok = leaf(1, 1, 4)
    cases = {
        "add": (lambda: nn.add(a, v), {"a": a, "v": v}),
        "sub": (lambda: nn.sub(a, b), {"a": a, "b": b}),
        "mul": (lambda: nn.mul(a, v), {"a": a, "v": v}),
        "power": (lambda: nn.power(a, 3.0), {"a": a}),
        "gelu": (lambda: nn.gelu(a), {"a": a}),
        "relu": (lambda: nn.relu(a), {"a": a}),
        "softmax": (lambda: nn.softmax(a, axis=-1), {"a": a}),
        "layer_norm": (lambda: nn.layer_norm(a, g, beta), {"a": a, "g": g, "beta": beta}),
        "matmul": (lambda: nn.matmul(m1, m2), {"m1": m1, "m2": m2}),
        "dense": (lambda: nn.dense(a, w, bias), {"a": a, "w": w, "bias": bias}),
        "tsum": (lambda: nn.tsum(a, axis=1, keepdims=True) * a, {"a": a}),
        "mean": (lambda: nn.mean(a, axis=-1, keepdims=True) * a, {"a": a}),
        "mean_pool": (lambda: nn.mean_pool(a), {"a": a}),
        "reshape": (lambda: nn.reshape(a, (6, 4)), {"a": a}),
        "transpose": (lambda: nn.transpose(a, (2, 0, 1)), {"a": a}),
        "swapaxes": (lambda: nn.swapaxes(a, -1, -2), {"a": a}),
        "broadcast_to": (lambda: nn.broadcast_to(tok, (2, 3, 4)), {"tok": tok}),
        "concat": (lambda: nn.concat([a, b], axis=1), {"a": a, "b": b}),
        "embedding_add": (lambda: nn.embedding_add(a, emb), {"a": a, "emb": emb}),
        "getitem": (lambda: nn.getitem(a, (slice(None), slice(1, None))), {"a": a}),
    }
    out = {}
    for name, (fn, inputs) in cases.items():
        weights = nn.Tensor(rng.standard_normal(fn().shape))
        out[name] = (lambda fn=fn, weights=weights: (fn() * weights).sum(), inputs)
    return out


def test_3_gradients_match_finite_differences(capsys):
    desk = VitConfig()
    with criterion(capsys, 3, 120) as res:
        worst_op, worst_e2e = ("", 0.0), ("", 0.0)
        n_ops = 0
        for seed in (0, 1, 2):
            rng = np.random.default_rng(seed)
            for name, (loss, inputs) in _op_cases(rng).items():
                err = max(nn.check_grads(loss, inputs, eps=1e-6).values())
                n_ops += 1
                if err > worst_op[1]:
                    worst_op = (name, err)
            params = {k: nn.Tensor(t.data.astype(np.float64), requires_grad=True)
                      for k, t in init_params(desk, seed).items()}
            x = preprocess(rng.integers(0, 256, (2, 64, 64, 3), dtype=np.uint8), dtype=np.float64)
            labels, mos = rng.integers(0, 7, 2), rng.uniform(0, 1, 2)

            def loss():
                probs, q = forward(x, params, desk)
                return joint_loss(probs, one_hot(labels, 7), q, mos, 1.0)

            errs = nn.check_grads(loss, params, eps=1e-5, max_entries=4, seed=seed)
            k = max(errs, key=errs.get)
            if errs[k] > worst_e2e[1]:
                worst_e2e = (k, errs[k])
        res["ok"] = worst_op[1] < 1e-4 and worst_e2e[1] < 1e-3
        res["detail"] = (f"{n_ops} op checks over 3 seeds, worst {worst_op[0]} {worst_op[1]:.1e} (tol 1e-4); "
                         f"end-to-end {len(params)} parameter groups x 3 seeds, worst {worst_e2e[0]} "
                         f"{worst_e2e[1]:.1e} (tol 1e-3)")
    assert res["ok"] and res["in_time"]


# ---------------------------------------------------------------- 4

def test_4_joint_loss_exactness(capsys):
    with criterion(capsys, 4, 5) as res:
        # ||(0.5, 0.5, 0) - (1, 0, 0)||^2 = 0.5 and (3 - 1)^2 = 4
        cases = [
            (np.array([[0.5, 0.5, 0.0]]), [[1, 0, 0]], [3.0], [1.0], 1.0, 4.5),
            (np.array([[0.5, 0.5, 0.0]]), [[1, 0, 0]], [3.0], [1.0], 2.0, 5.0),
            (np.array([[0.5, 0.5, 0.0], [0.0, 1.0, 0.0]]), [[1, 0, 0], [0, 1, 0]], [3.0, 0.0], [1.0, 1.0], 1.0, 2.75),
            (np.array([[0.25, 0.75]]), [[0, 1]], [0.5], [0.0], 4.0, 0.75),
        ]
        worst = max(abs(joint_loss(p, c, q, t, lam).item() - want) for p, c, q, t, lam, want in cases)
        rng = np.random.default_rng(4)
        bit_exact = True
        for dtype in (np.float32, np.float64):
            for _ in range(50):
                n = int(rng.integers(1, 40))
                probs = rng.dirichlet(np.ones(7), n).astype(dtype)
                q, qt = rng.standard_normal(n).astype(dtype), rng.standard_normal(n).astype(dtype)
                a = joint_loss(probs, one_hot(rng.integers(0, 7, n), 7, dtype=dtype), q, qt, 0.0).data
                b = regression_mse(q, qt).data
                bit_exact &= a.tobytes() == b.tobytes()
        res["ok"] = worst <= 1e-12 and bit_exact
        res["detail"] = f"hand cases max error {worst:.1e} (tol 1e-12); lambda=0 bit-exact MSE over 100 batches: {bit_exact}"
    assert res["ok"] and res["in_time"]


# ---------------------------------------------------------------- 5

def _overfit_rows(out_dir):
    """Eight contents, each with a different (kind, level) pair."""
    rows = []
    for i, mesh in enumerate(synthetic_heads(8, seed=5)):
        kind, level = DistortionKind(i % 7), 1 + (3 * i) % 4
        spec = DistortionSpec(kind, level, record_seed(0, mesh.name, kind, level))
        path = save_projection(render_front(apply_distortion(mesh, spec), DESK_RENDER), out_dir / f"{mesh.name}.png")
        rows.append(SampleRecord(mesh.name, spec, str(path), pseudo_mos(level, spec.seed)))
    return rows


@pytest.fixture(scope="module")
def overfit_run(tmp_path_factory):
    start = time.perf_counter()
    rows = _overfit_rows(tmp_path_factory.mktemp("overfit"))
    vit = VitConfig()
    cfg = TrainConfig(learning_rate=DESK_LR, epochs=200, batch_size=8, patch_size=64, min_foreground=0.0,
                      eval_every=0)
    result = train(rows, None, vit, cfg)
    preds = predict_rows(rows, result.params, vit, cfg, ProjectionCache())
    return {
        "srcc": srcc([p.quality_score for p in preds], [r.pseudo_mos for r in rows]),
        "acc": accuracy([p.predicted_class for p in preds], [int(r.kind) for r in rows]),
        "loss_first": result.log[0].train_loss, "loss_last": result.log[-1].train_loss,
        "elapsed": time.perf_counter() - start,
    }


def test_5_overfit_eight_samples(capsys, overfit_run):
    r = overfit_run
    with criterion(capsys, 5, 300, already_s=r["elapsed"]) as res:
        res["ok"] = r["srcc"] >= 0.9 and r["acc"] >= 7 / 8
        res["detail"] = (f"train SRCC {r['srcc']:.4f} (>= 0.9), train ACC {r['acc'] * 8:.0f}/8 (>= 7/8), "
                         f"loss {r['loss_first']:.4f} -> {r['loss_last']:.5f} after 200 epochs")
    assert res["ok"] and res["in_time"]


def test_overfit_loss_drops_tenfold(overfit_run):
    assert overfit_run["loss_last"] * 10 <= overfit_run["loss_first"]


# ---------------------------------------------------------------- 6

def test_6_multitask_directionality(capsys, tmp_path):
    with criterion(capsys, 6, 1800) as res:
        records = build_corpus(synthetic_heads(20, seed=0), tmp_path, seed=0, render_cfg=DESK_RENDER)
        contents = sorted({r.content_id for r in records})
        srccs = {0.0: [], 1.0: []}
        accs = []
        for seed, lam in product((0, 1, 2), (0.0, 1.0)):
            vit = VitConfig(loss_lambda=lam, multitask_enabled=lam > 0)
            cfg = TrainConfig(learning_rate=DESK_LR, epochs=CV_EPOCHS, batch_size=30, seed=seed, patch_size=64,
                              min_foreground=0.0, eval_crops=1, eval_every=0)
            fold_srcc, fold_acc = [], []
            for split in make_folds(contents, 5, seed=seed):
                last = train(records, split, vit, cfg).log[-1]
                fold_srcc.append(last.test_srcc)
                if lam > 0:
                    fold_acc.append(last.test_acc)
            srccs[lam].append(float(np.mean(fold_srcc)))
            if lam > 0:
                accs.append(float(np.mean(fold_acc)))
        joint, single = float(np.mean(srccs[1.0])), float(np.mean(srccs[0.0]))
        acc = float(np.mean(accs))
        direction_ok = joint >= single - 0.02
        acc_ok = acc > 4 / 7
        res["ok"] = direction_ok and acc_ok
        res["detail"] = (f"mean test SRCC lambda=1 {joint:.4f} vs lambda=0 {single:.4f} "
                         f"(per seed {np.round(srccs[1.0], 4).tolist()} vs {np.round(srccs[0.0], 4).tolist()}; "
                         f"need >= lambda0 - 0.02: {direction_ok}); test ACC {acc:.4f} "
                         f"(per seed {np.round(accs, 4).tolist()}; need > 4/7 = 0.5714: {acc_ok}); "
                         f"{CV_EPOCHS} epochs per fold, lr {DESK_LR}")
    assert direction_ok, "lambda=1 SRCC fell more than 0.02 below lambda=0"
    assert acc_ok, f"classification accuracy {acc:.4f} not above 4/7"
    assert res["in_time"]


# ---------------------------------------------------------------- 7

def test_7_protocol_fidelity(capsys, tmp_path):
    with criterion(capsys, 7, 600) as res:
        ids = [f"content{i:02d}" for i in range(55)]
        folds = make_folds(ids, 5, seed=0)
        sizes = [len(f.test_contents) for f in folds]
        overlap = sum(len(f.train_contents & f.test_contents) for f in folds)
        covered = sorted(c for f in folds for c in f.test_contents) == ids
        heads = synthetic_heads(55, seed=1, n_lat=8, n_lon=16, texture_size=32)
        records = build_corpus(heads, tmp_path, seed=0, render_cfg=RenderConfig(resolution=64))
        manifest = read_manifest(tmp_path / "manifest.csv")
        res["ok"] = sizes == [11] * 5 and overlap == 0 and covered and len(records) == len(manifest) == 1540
        res["detail"] = (f"fold test sizes {sizes}, train/test overlap {overlap}, every content tested once: "
                         f"{covered}; build_corpus(55) records {len(records)}, manifest rows {len(manifest)}")
    assert res["ok"] and res["in_time"]


# ---------------------------------------------------------------- 8

def test_8_distortion_monotonicity(capsys, tmp_path):
    with criterion(capsys, 8, 300) as res:
        curves = []
        for mesh in synthetic_heads(3, seed=8):
            ref = mesh_to_pointcloud(mesh, 20_000, seed=0)
            curve = []
            for level in LEVELS:
                spec = DistortionSpec(DistortionKind.GeometryNoise, level, zlib.crc32(mesh.name.encode()) + level)
                dist = mesh_to_pointcloud(apply_distortion(mesh, spec), 20_000, seed=0)
                curve.append(p2point_mse(ref, dist, Direction.Symmetric).value)
            curves.append(curve)
        increasing = all(np.all(np.diff(c) > 0) for c in curves)
        records = build_corpus(synthetic_heads(6, seed=9, n_lat=12, n_lon=24, texture_size=64), tmp_path,
                               seed=4, render_cfg=RenderConfig(resolution=64))
        groups = {}
        for r in read_manifest(tmp_path / "manifest.csv"):
            groups.setdefault((r.content_id, r.kind), []).append((r.level, r.pseudo_mos))
        decreasing = all(np.all(np.diff([m for _, m in sorted(g)]) < 0) for g in groups.values())
        res["ok"] = increasing and decreasing and len(groups) == 42
        res["detail"] = (f"GeometryNoise symmetric p2point per level {[[f'{v:.2e}' for v in c] for c in curves]} "
                         f"strictly increasing: {increasing}; pseudo-MOS strictly decreasing in all "
                         f"{len(groups)} groups: {decreasing}")
    assert res["ok"] and res["in_time"]


# ---------------------------------------------------------------- 9

def test_9_determinism(capsys, tmp_path):
    with criterion(capsys, 9, 300) as res:
        heads = synthetic_heads(5, seed=11, n_lat=12, n_lon=24, texture_size=64)
        a, b = render_front(heads[0], DESK_RENDER), render_front(heads[0], DESK_RENDER)
        render_same = a.pixels.tobytes() == b.pixels.tobytes() and a.background_mask.tobytes() == b.background_mask.tobytes()
        png_same = save_projection(a, tmp_path / "a.png").read_bytes() == save_projection(b, tmp_path / "b.png").read_bytes()
        big = render_front(heads[1], RenderConfig(resolution=160))
        ca, cb = crop_patches(big, 6, 48, seed=3), crop_patches(big, 6, 48, seed=3)
        crop_same = all(p.crop_origin == q.crop_origin and p.pixels.tobytes() == q.pixels.tobytes()
                        for p, q in zip(ca, cb))
        ra = build_corpus(heads, tmp_path / "c1", seed=2, render_cfg=DESK_RENDER)
        build_corpus(heads, tmp_path / "c2", seed=2, render_cfg=DESK_RENDER)
        corpus_same = (tmp_path / "c1" / "manifest.csv").read_bytes() == (tmp_path / "c2" / "manifest.csv").read_bytes()
        corpus_same &= all((tmp_path / "c1" / r.content_id / f"{r.kind.name}_{r.level}.png").read_bytes() ==
                           (tmp_path / "c2" / r.content_id / f"{r.kind.name}_{r.level}.png").read_bytes() for r in ra)
        split = make_folds(sorted({r.content_id for r in ra}), 5, seed=2)[0]
        cfg = TrainConfig(learning_rate=DESK_LR, epochs=1, patch_size=64, min_foreground=0.0, seed=2, eval_every=0,
                          eval_crops=1)
        l1 = train(read_manifest(tmp_path / "c1" / "manifest.csv"), split, VitConfig(), cfg).log[0].train_loss
        l2 = train(read_manifest(tmp_path / "c2" / "manifest.csv"), split, VitConfig(), cfg).log[0].train_loss
        loss_same = np.float64(l1).tobytes() == np.float64(l2).tobytes()
        res["ok"] = render_same and png_same and crop_same and corpus_same and loss_same
        res["detail"] = (f"render pixels {render_same}, PNG bytes {png_same}, crops {crop_same}, "
                         f"corpus manifest+PNGs {corpus_same}, epoch-1 loss {l1!r} vs {l2!r} {loss_same}")
    assert res["ok"] and res["in_time"]
