"""ViT-style quality model with a joint classification / regression head.

Images go through a patch embedding, a stack of pre-norm transformer
blocks and a final layer norm. The patch tokens (class token excluded) are
average-pooled into one quality-aware embedding, which feeds

* a classification head ``dense(D->128) -> gelu -> dense(128->N_d) -> softmax``
* a regression head ``dense(D->1024) -> gelu -> dense(1024->1)``
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import Tensor

CLS_HIDDEN = 128
REG_HIDDEN = 1024
PIXEL_MEAN = 0.5
PIXEL_STD = 0.5


@dataclass(frozen=True)
class VitConfig:
    image_size: int = 64
    vit_patch_size: int = 8
    embed_dim: int = 96
    n_blocks: int = 4
    n_heads: int = 4
    mlp_ratio: float = 4.0
    n_distortion_classes: int = 7
    multitask_enabled: bool = True
    loss_lambda: float = 1.0
    init_std: float = 0.02

    def __post_init__(self):
        if self.image_size % self.vit_patch_size:
            raise ValueError(f"image_size {self.image_size} not divisible by "
                             f"vit_patch_size {self.vit_patch_size}")
        if self.embed_dim % self.n_heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}")
        if self.loss_lambda < 0:
            raise ValueError(f"loss_lambda must be >= 0, got {self.loss_lambda}")
        if self.n_distortion_classes < 1 or self.n_blocks < 1:
            raise ValueError("need at least one block and one distortion class")

    @classmethod
    def paper_scale(cls, **overrides) -> VitConfig:
        """ViT-B/16 sized preset: 224 px input, 16 px patches, 12 blocks."""
        base = dict(image_size=224, vit_patch_size=16, embed_dim=768, n_blocks=12, n_heads=12)
        base.update(overrides)
        return cls(**base)

    @property
    def n_tokens(self) -> int:
        return (self.image_size // self.vit_patch_size) ** 2

    @property
    def effective_lambda(self) -> float:
        return self.loss_lambda if self.multitask_enabled else 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def init_params(cfg: VitConfig, seed: int = 0, dtype=np.float32) -> dict[str, Tensor]:
    """Truncated-normal (std ``cfg.init_std``, cut at 2 std) weights, zero biases."""
    rng = np.random.default_rng(seed)

    def w(shape):
        x = rng.standard_normal(shape)
        bad = np.abs(x) > 2.0
        while bad.any():
            x[bad] = rng.standard_normal(int(bad.sum()))
            bad = np.abs(x) > 2.0
        return x * cfg.init_std

    shapes = {}
    for name, shape in init_params_shapes(cfg).items():
        if name.endswith(".b"):
            shapes[name] = np.zeros(shape)
        elif name.endswith(".g"):
            shapes[name] = np.ones(shape)
        else:
            shapes[name] = w(shape)
    return {k: Tensor(v.astype(dtype), requires_grad=True) for k, v in shapes.items()}


def check_params(params: dict[str, Tensor], cfg: VitConfig):
    """Raise if ``params`` were not built for ``cfg``."""
    expected = init_params_shapes(cfg)
    missing = sorted(set(expected) - set(params))
    extra = sorted(set(params) - set(expected))
    if missing or extra:
        raise ValueError(f"parameters do not match config: missing {missing[:3]}, unexpected {extra[:3]}")
    for k, shape in expected.items():
        if params[k].shape != shape:
            raise ValueError(f"parameter {k!r} has shape {params[k].shape}, config expects {shape}")


def init_params_shapes(cfg: VitConfig) -> dict[str, tuple[int, ...]]:
    D = cfg.embed_dim
    H = int(round(D * cfg.mlp_ratio))
    p = cfg.vit_patch_size
    out = {"patch.w": (p * p * 3, D), "patch.b": (D,), "cls_token": (1, 1, D),
           "pos_embed": (1, cfg.n_tokens + 1, D)}
    for i in range(cfg.n_blocks):
        pre = f"block{i}."
        out.update({pre + "ln1.g": (D,), pre + "ln1.b": (D,), pre + "qkv.w": (D, 3 * D),
                    pre + "qkv.b": (3 * D,), pre + "proj.w": (D, D), pre + "proj.b": (D,),
                    pre + "ln2.g": (D,), pre + "ln2.b": (D,), pre + "fc1.w": (D, H),
                    pre + "fc1.b": (H,), pre + "fc2.w": (H, D), pre + "fc2.b": (D,)})
    out.update({"norm.g": (D,), "norm.b": (D,),
                "cls_head.fc1.w": (D, CLS_HIDDEN), "cls_head.fc1.b": (CLS_HIDDEN,),
                "cls_head.fc2.w": (CLS_HIDDEN, cfg.n_distortion_classes),
                "cls_head.fc2.b": (cfg.n_distortion_classes,),
                "reg_head.fc1.w": (D, REG_HIDDEN), "reg_head.fc1.b": (REG_HIDDEN,),
                "reg_head.fc2.w": (REG_HIDDEN, 1), "reg_head.fc2.b": (1,)})
    return out


def preprocess(images: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 ``[B, H, W, 3]`` (or a single ``[H, W, 3]``) -> normalised floats."""
    x = np.asarray(images)
    if x.ndim == 3:
        x = x[None]
    x = x.astype(dtype) / dtype(255.0) if x.dtype == np.uint8 else x.astype(dtype)
    return (x - dtype(PIXEL_MEAN)) / dtype(PIXEL_STD)


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """``[B, H, W, C]`` -> ``[B, (H/p)*(W/p), p*p*C]`` in row-major tile order."""
    B, H, W, C = images.shape
    if H % patch or W % patch:
        raise ValueError(f"image {H}x{W} not divisible into {patch}px tiles")
    x = images.reshape(B, H // patch, patch, W // patch, patch, C)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(B, (H // patch) * (W // patch), patch * patch * C)


def _attention(x: Tensor, params, pre: str, n_heads: int) -> Tensor:
    B, T, D = x.shape
    dh = D // n_heads
    qkv = nn.dense(x, params[pre + "qkv.w"], params[pre + "qkv.b"])
    qkv = qkv.reshape(B, T, 3, n_heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = nn.matmul(q, nn.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
    attn = nn.softmax(scores, axis=-1)
    out = nn.matmul(attn, v).transpose(0, 2, 1, 3).reshape(B, T, D)
    return nn.dense(out, params[pre + "proj.w"], params[pre + "proj.b"])


def encode_tokens(tokens, params: dict[str, Tensor], cfg: VitConfig,
                  use_pos_embed: bool = True) -> Tensor:
    """Run the encoder on pre-patchified tokens ``[B, N, p*p*3]`` and mean-pool.

    Returns the pooled patch-token embedding ``[B, D]``.
    """
    tokens = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    B, N, _ = tokens.shape
    if N != cfg.n_tokens:
        raise ValueError(f"expected {cfg.n_tokens} tokens, got {N}")
    x = nn.dense(tokens, params["patch.w"], params["patch.b"])
    cls = nn.broadcast_to(params["cls_token"], (B, 1, cfg.embed_dim))
    x = nn.concat([cls, x], axis=1)
    if use_pos_embed:
        x = nn.embedding_add(x, params["pos_embed"])
    for i in range(cfg.n_blocks):
        pre = f"block{i}."
        h = nn.layer_norm(x, params[pre + "ln1.g"], params[pre + "ln1.b"])
        x = x + _attention(h, params, pre, cfg.n_heads)
        h = nn.layer_norm(x, params[pre + "ln2.g"], params[pre + "ln2.b"])
        h = nn.gelu(nn.dense(h, params[pre + "fc1.w"], params[pre + "fc1.b"]))
        x = x + nn.dense(h, params[pre + "fc2.w"], params[pre + "fc2.b"])
    x = nn.layer_norm(x, params["norm.g"], params["norm.b"])
    return nn.mean_pool(x[:, 1:, :])


def encode(images, params: dict[str, Tensor], cfg: VitConfig) -> Tensor:
    """Quality-aware embedding of uint8 (or pre-normalised float) image batches.

    A single ``[H, W, 3]`` image yields a ``[D]`` vector, a batch yields ``[B, D]``.
    """
    if hasattr(images, "pixels"):
        images = images.pixels
    arr = np.asarray(images)
    single = arr.ndim == 3
    if arr.shape[-3:-1] != (cfg.image_size, cfg.image_size) or arr.shape[-1] != 3:
        raise ValueError(f"expected {cfg.image_size}x{cfg.image_size}x3 input, got {arr.shape}")
    dtype = params["patch.w"].dtype.type
    x = preprocess(arr, dtype) if arr.dtype == np.uint8 else arr.astype(dtype, copy=False)
    if x.ndim == 3:
        x = x[None]
    feats = encode_tokens(patchify(x, cfg.vit_patch_size), params, cfg)
    return feats[0] if single else feats


def classify_head(features: Tensor, params: dict[str, Tensor]) -> Tensor:
    h = nn.gelu(nn.dense(features, params["cls_head.fc1.w"], params["cls_head.fc1.b"]))
    logits = nn.dense(h, params["cls_head.fc2.w"], params["cls_head.fc2.b"])
    return nn.softmax(logits, axis=-1)


def regress_head(features: Tensor, params: dict[str, Tensor]) -> Tensor:
    h = nn.gelu(nn.dense(features, params["reg_head.fc1.w"], params["reg_head.fc1.b"]))
    return nn.dense(h, params["reg_head.fc2.w"], params["reg_head.fc2.b"])


def _as_batch(features: Tensor) -> Tensor:
    return features.reshape(1, features.shape[0]) if features.ndim == 1 else features


def forward(images, params: dict[str, Tensor], cfg: VitConfig) -> tuple[Tensor, Tensor]:
    """``(class_probs [B, N_d], quality [B])`` for a batch of images."""
    feats = _as_batch(encode(images, params, cfg))
    probs = classify_head(feats, params)
    q = regress_head(feats, params)
    return probs, q.reshape(q.shape[0])


def one_hot(labels, n_classes: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((labels.size, n_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1
    return out


def joint_loss(class_probs, class_targets, quality, quality_targets, lam: float) -> Tensor:
    """Mean over the batch of ``lam * ||c_hat - c||^2 + (q_hat - q)^2``.

    ``class_targets`` are one-hot rows. With ``lam == 0`` the result is
    bit-identical to the plain regression MSE.
    """
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    probs = class_probs if isinstance(class_probs, Tensor) else Tensor(class_probs)
    q = quality if isinstance(quality, Tensor) else Tensor(quality)
    c = np.asarray(class_targets, dtype=probs.dtype)
    qt = np.asarray(quality_targets, dtype=q.dtype).reshape(q.shape)
    if probs.shape != c.shape:
        raise ValueError(f"class predictions {probs.shape} and targets {c.shape} disagree")
    if probs.shape[0] != q.shape[0]:
        raise ValueError(f"batch sizes disagree: {probs.shape[0]} vs {q.shape[0]}")
    if not (np.all((c == 0) | (c == 1)) and np.all(c.sum(axis=1) == 1)):
        raise ValueError("class targets must be one-hot rows")
    diff_c = probs - c
    diff_q = q - qt
    per_sample = (diff_c * diff_c).sum(axis=1) * lam + diff_q * diff_q
    return per_sample.mean()


def regression_mse(quality, quality_targets) -> Tensor:
    q = quality if isinstance(quality, Tensor) else Tensor(quality)
    diff = q - np.asarray(quality_targets, dtype=q.dtype).reshape(q.shape)
    return (diff * diff).mean()
