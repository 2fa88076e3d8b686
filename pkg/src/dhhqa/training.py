"""Training and inference for the multi-task quality model."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nn
from .distort import SampleRecord
from .mesh import TexturedMesh, load_mesh
from .model import (
    VitConfig,
    check_params,
    classify_head,
    encode,
    init_params,
    joint_loss,
    one_hot,
    regress_head,
)
from .nn import Tensor
from .render import (
    Patch,
    ProjectionImage,
    RenderConfig,
    crop_patches,
    load_projection,
    render_front,
    resize_patch,
)
from .stats import FoldSplit, accuracy, evaluate, srcc

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    epochs: int = 50
    batch_size: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    patch_size: int = 224
    min_foreground: float = 0.5
    eval_crops: int = 5
    eval_every: int = 1        # 0: evaluate the test split after the last epoch only
    mos_scale: float = 100.0

    def __post_init__(self):
        for name in ("learning_rate", "epochs", "batch_size", "patch_size", "eval_crops", "mos_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.eval_every < 0:
            raise ValueError("eval_every must be >= 0")


@dataclass(frozen=True)
class Prediction:
    quality_score: float
    class_probs: np.ndarray
    predicted_class: int

    def to_dict(self) -> dict:
        return {"quality_score": self.quality_score,
                "class_probs": [float(p) for p in self.class_probs],
                "predicted_class": self.predicted_class}


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    test_srcc: float | None = None
    test_acc: float | None = None


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    log: list[EpochLog] = field(default_factory=list)
    test_predictions: list[dict] = field(default_factory=list)


# ------------------------------------------------------------------ data

class ProjectionCache:
    """Loads each projection PNG once."""

    def __init__(self):
        self._images: dict[str, ProjectionImage] = {}

    def get(self, path) -> ProjectionImage:
        key = str(path)
        if key not in self._images:
            self._images[key] = load_projection(key)
        return self._images[key]


def _crop(image: ProjectionImage, k: int, seed: int, vit_cfg: VitConfig, train_cfg: TrainConfig) -> np.ndarray:
    size = min(train_cfg.patch_size, image.width, image.height)
    patches = crop_patches(image, k, size, seed, train_cfg.min_foreground)
    return np.stack([resize_patch(p.pixels, vit_cfg.image_size) for p in patches])


def _rows_for(manifest: Sequence[SampleRecord], contents) -> list[SampleRecord]:
    contents = set(contents)
    return [r for r in manifest if r.content_id in contents]


# ------------------------------------------------------------------ steps

def train_step(params, opt: nn.Adam, images: np.ndarray, kinds, mos01, vit_cfg: VitConfig) -> float:
    """One Adam step on a batch; returns the batch loss."""
    opt.zero_grad()
    feats = encode(images, params, vit_cfg)
    probs = classify_head(feats, params)
    q = regress_head(feats, params).reshape(len(images))
    target = one_hot(kinds, vit_cfg.n_distortion_classes, dtype=probs.dtype)
    # keep targets in the parameter dtype so the backward pass stays in it
    mos01 = np.asarray(mos01, dtype=q.dtype)
    loss = joint_loss(probs, target, q, mos01, vit_cfg.effective_lambda)
    value = loss.item()
    if not math.isfinite(value):
        raise FloatingPointError(f"non-finite training loss {value}; "
                                 f"batch mos range {np.min(mos01):.3g}..{np.max(mos01):.3g}")
    loss.backward()
    opt.step()
    return value


def _predict_images(images: np.ndarray, params, vit_cfg: VitConfig, batch: int = 64):
    probs, quality = [], []
    with nn.no_grad():
        for i in range(0, len(images), batch):
            feats = encode(images[i:i + batch], params, vit_cfg)
            probs.append(classify_head(feats, params).data)
            quality.append(regress_head(feats, params).data[:, 0])
    return np.concatenate(probs).astype(np.float64), np.concatenate(quality).astype(np.float64)


def _combine(probs: np.ndarray, quality: np.ndarray, mos_scale: float) -> Prediction:
    p = probs.mean(axis=0)
    return Prediction(float(quality.mean() * mos_scale), p, int(np.argmax(p)))


def predict_rows(rows: Sequence[SampleRecord], params, vit_cfg: VitConfig, train_cfg: TrainConfig,
                 cache: ProjectionCache | None = None, seed: int | None = None) -> list[Prediction]:
    """k-crop averaged predictions for manifest rows (crop seeds fixed per row)."""
    cache = cache or ProjectionCache()
    seed = train_cfg.seed if seed is None else seed
    k = train_cfg.eval_crops
    crops = [_crop(cache.get(r.projection_path), k, _row_seed(seed, i), vit_cfg, train_cfg)
             for i, r in enumerate(rows)]
    if not crops:
        return []
    probs, quality = _predict_images(np.concatenate(crops), params, vit_cfg)
    return [_combine(probs[i * k:(i + 1) * k], quality[i * k:(i + 1) * k], train_cfg.mos_scale)
            for i in range(len(rows))]


def _row_seed(seed: int, i: int) -> int:
    return int(np.random.SeedSequence([seed, 7919, i]).generate_state(1)[0])


# ------------------------------------------------------------------ training

def train(manifest: Sequence[SampleRecord], split: FoldSplit | None, vit_cfg: VitConfig,
          train_cfg: TrainConfig, on_epoch: Callable[[EpochLog], None] | None = None,
          params: dict[str, Tensor] | None = None) -> TrainResult:
    """Fit the model on the split's training contents.

    ``split=None`` trains on every row and skips test evaluation. MOS targets
    are divided by ``mos_scale`` for training; reported scores are rescaled.
    """
    if split is None:
        train_rows, test_rows = list(manifest), []
    else:
        train_rows = _rows_for(manifest, split.train_contents)
        test_rows = _rows_for(manifest, split.test_contents)
    if not train_rows:
        raise ValueError("training split is empty")
    params = params if params is not None else init_params(vit_cfg, train_cfg.seed)
    check_params(params, vit_cfg)
    opt = nn.Adam(params, lr=train_cfg.learning_rate, betas=(train_cfg.beta1, train_cfg.beta2))
    cache = ProjectionCache()
    kinds = np.array([int(r.kind) for r in train_rows])
    mos01 = np.array([r.pseudo_mos for r in train_rows]) / train_cfg.mos_scale
    result = TrainResult(params)
    bs = train_cfg.batch_size
    for epoch in range(1, train_cfg.epochs + 1):
        rng = np.random.default_rng([train_cfg.seed, epoch])
        order = rng.permutation(len(train_rows))
        crop_seeds = rng.integers(0, 2**31, size=len(train_rows))
        total = 0.0
        for start in range(0, len(order), bs):
            idx = order[start:start + bs]
            images = np.concatenate([
                _crop(cache.get(train_rows[i].projection_path), 1, int(crop_seeds[i]), vit_cfg, train_cfg)
                for i in idx])
            total += train_step(params, opt, images, kinds[idx], mos01[idx], vit_cfg) * len(idx)
        entry = EpochLog(epoch, total / len(train_rows))
        last = epoch == train_cfg.epochs
        due = train_cfg.eval_every and epoch % train_cfg.eval_every == 0
        if test_rows and (due or last):
            preds = predict_rows(test_rows, params, vit_cfg, train_cfg, cache)
            entry.test_srcc = _safe(srcc, [p.quality_score for p in preds], [r.pseudo_mos for r in test_rows])
            if vit_cfg.multitask_enabled:
                entry.test_acc = accuracy([p.predicted_class for p in preds], [int(r.kind) for r in test_rows])
            if last:
                result.test_predictions = prediction_rows(test_rows, preds, vit_cfg.multitask_enabled)
        log.info("epoch %d loss %.6f srcc %s acc %s", epoch, entry.train_loss, entry.test_srcc, entry.test_acc)
        result.log.append(entry)
        if on_epoch:
            on_epoch(entry)
    return result


def _safe(fn, *args):
    try:
        return fn(*args)
    except ValueError:
        return float("nan")


def prediction_rows(rows: Sequence[SampleRecord], preds: Sequence[Prediction],
                    multitask: bool = True) -> list[dict]:
    """Rows in the predictions-CSV schema used by the ``eval`` command.

    ``pred_kind`` is left empty when the classifier was not trained.
    """
    return [{"content_id": r.content_id, "kind": r.kind.name, "level": r.level,
             "pred_mos": p.quality_score, "pred_kind": p.predicted_class if multitask else "",
             "mos": r.pseudo_mos, "true_kind": int(r.kind)} for r, p in zip(rows, preds)]


def evaluate_rows(rows: Sequence[dict], fold_index="mean", multitask: bool = True, logistic: bool = False):
    pred = [float(r["pred_mos"]) for r in rows]
    mos = [float(r["mos"]) for r in rows]
    if multitask:
        return evaluate(pred, mos, [int(r["pred_kind"]) for r in rows],
                        [int(r["true_kind"]) for r in rows], fold_index=fold_index, logistic=logistic)
    return evaluate(pred, mos, fold_index=fold_index, logistic=logistic)


# ------------------------------------------------------------------ inference

def predict_patches(patches: Sequence, params, vit_cfg: VitConfig, mos_scale: float = 100.0) -> Prediction:
    """Average quality and class probabilities over the given patches."""
    if not patches:
        raise ValueError("need at least one patch")
    imgs = np.stack([resize_patch(p.pixels if isinstance(p, Patch) else np.asarray(p), vit_cfg.image_size)
                     for p in patches])
    probs, quality = _predict_images(imgs, params, vit_cfg)
    return _combine(probs, quality, mos_scale)


def predict(source, params, vit_cfg: VitConfig, k_crops: int = 5, seed: int = 0,
            patch_size: int = 224, min_foreground: float = 0.5,
            render_cfg: RenderConfig | None = None, mos_scale: float = 100.0) -> Prediction:
    """Score a mesh, a projection, or a path to either (``.obj`` or image)."""
    check_params(params, vit_cfg)
    if isinstance(source, (str, Path)):
        source = load_mesh(source) if Path(source).suffix.lower() == ".obj" else load_projection(source)
    if isinstance(source, TexturedMesh):
        source = render_front(source, render_cfg)
    if not isinstance(source, ProjectionImage):
        raise TypeError(f"cannot predict on {type(source).__name__}")
    size = min(patch_size, source.width, source.height)
    patches = crop_patches(source, k_crops, size, seed, min_foreground)
    return predict_patches(patches, params, vit_cfg, mos_scale)


# ------------------------------------------------------------------ logs

def write_epoch_log(entries: Sequence[EpochLog], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "test_srcc", "test_acc"])
        for e in entries:
            w.writerow([e.epoch, repr(e.train_loss),
                        "" if e.test_srcc is None else repr(e.test_srcc),
                        "" if e.test_acc is None else repr(e.test_acc)])
    return path


PREDICTION_FIELDS = ["content_id", "kind", "level", "pred_mos", "pred_kind", "mos", "true_kind"]


def write_predictions(rows: Sequence[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=PREDICTION_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in PREDICTION_FIELDS})
    return path


def read_predictions(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(PREDICTION_FIELDS) - set(reader.fieldnames or []) - {"kind", "level"}
        if missing:
            raise ValueError(f"{path}: predictions file lacks columns {sorted(missing)}")
        return list(reader)


def train_config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
