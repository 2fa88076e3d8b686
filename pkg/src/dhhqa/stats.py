"""Evaluation criteria and the content-disjoint k-fold harness."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import optimize, stats

log = logging.getLogger(__name__)


def _pair(x, y, name, min_len=2):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"{name}: length mismatch {x.size} vs {y.size}")
    if x.size < min_len:
        raise ValueError(f"{name}: need at least {min_len} values, got {x.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError(f"{name}: non-finite input")
    return x, y


def _pearson(x, y, name):
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx == 0 or syy == 0:
        raise ValueError(f"{name}: undefined for a constant input vector")
    # sqrt of the product keeps identical inputs at exactly 1
    denom = math.sqrt(sxx * syy)
    if not math.isfinite(denom) or denom == 0:
        denom = math.sqrt(sxx) * math.sqrt(syy)
    return float(np.clip((xc @ yc) / denom, -1.0, 1.0))


def logistic_fit(pred, truth) -> np.ndarray:
    """Monotonic 4-parameter logistic remap of ``pred`` onto the ``truth`` scale."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)

    def f(x, b1, b2, b3, b4):
        return (b1 - b2) / (1.0 + np.exp(-(x - b3) / abs(b4))) + b2

    p0 = [truth.max(), truth.min(), float(np.mean(pred)), float(np.std(pred)) or 1.0]
    try:
        with warnings.catch_warnings():
            # only the covariance estimate can fail here, and it is unused
            warnings.simplefilter("ignore", optimize.OptimizeWarning)
            popt, _ = optimize.curve_fit(f, pred, truth, p0=p0, maxfev=20000)
    except RuntimeError:
        log.warning("logistic fit did not converge; using raw predictions")
        return pred
    return f(pred, *popt)


def _rank_pearson(rx, ry, name):
    # doubled average ranks are integers, so the moments are exact and the
    # only rounding is the final division
    a = np.rint(2 * rx).astype(np.int64)
    b = np.rint(2 * ry).astype(np.int64)
    n = len(a)
    sa, sb = int(a.sum()), int(b.sum())
    saa = n * int((a * a).sum()) - sa * sa
    sbb = n * int((b * b).sum()) - sb * sb
    sab = n * int((a * b).sum()) - sa * sb
    if saa == 0 or sbb == 0:
        raise ValueError(f"{name}: undefined for a constant input vector")
    prod = saa * sbb
    root = math.isqrt(prod)
    if root * root == prod:
        return sab / root
    return float(np.clip(sab / math.sqrt(prod), -1.0, 1.0))


def srcc(x, y) -> float:
    """Spearman correlation: Pearson on average (fractional) ranks."""
    x, y = _pair(x, y, "srcc")
    return _rank_pearson(stats.rankdata(x), stats.rankdata(y), "srcc")


def plcc(x, y, logistic: bool = False) -> float:
    """Pearson correlation; with ``logistic`` x is first remapped onto y."""
    x, y = _pair(x, y, "plcc")
    if logistic:
        x = logistic_fit(x, y)
    return _pearson(x, y, "plcc")


def krcc(x, y) -> float:
    """Kendall tau-b (tie-corrected)."""
    x, y = _pair(x, y, "krcc")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ValueError("krcc: undefined for a constant input vector")
    tau = float(stats.kendalltau(x, y, variant="b").statistic)
    # concordant minus discordant is an integer: recover it and divide once
    n0 = len(x) * (len(x) - 1) // 2
    denom = (n0 - _tied_pairs(x)) * (n0 - _tied_pairs(y))
    root = math.isqrt(denom)
    diff = round(tau * math.sqrt(denom))
    if root * root == denom:
        return diff / root
    return float(np.clip(diff / math.sqrt(denom), -1.0, 1.0))


def _tied_pairs(v) -> int:
    _, counts = np.unique(v, return_counts=True)
    return int((counts * (counts - 1) // 2).sum())


def rmse(pred, truth, logistic: bool = False) -> float:
    pred, truth = _pair(pred, truth, "rmse", min_len=1)
    if logistic:
        pred = logistic_fit(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def accuracy(pred_labels, true_labels) -> float:
    p = np.asarray(pred_labels).ravel()
    t = np.asarray(true_labels).ravel()
    if p.shape != t.shape or p.size < 1:
        raise ValueError(f"accuracy: need equal non-empty label vectors, got {p.size} and {t.size}")
    return float(np.mean(p == t))


# ------------------------------------------------------------------ reports

@dataclass(frozen=True)
class MetricsReport:
    srcc: float
    plcc: float
    krcc: float
    rmse: float
    acc: float | None = None
    fold_index: int | str = "mean"

    def __post_init__(self):
        for name in ("srcc", "plcc", "krcc"):
            v = getattr(self, name)
            if not -1.0 - 1e-12 <= v <= 1.0 + 1e-12:
                raise ValueError(f"{name} out of [-1, 1]: {v}")
        if self.rmse < 0:
            raise ValueError(f"rmse must be >= 0, got {self.rmse}")
        if self.acc is not None and not 0.0 <= self.acc <= 1.0:
            raise ValueError(f"acc out of [0, 1]: {self.acc}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> MetricsReport:
        keys = {"srcc", "plcc", "krcc", "rmse", "acc", "fold_index"}
        unknown = set(d) - keys
        if unknown:
            raise ValueError(f"unknown report fields {sorted(unknown)}")
        return cls(**{k: d[k] for k in keys if k in d})


def evaluate(pred_mos, mos, pred_kind=None, true_kind=None, fold_index: int | str = "mean",
             logistic: bool = False) -> MetricsReport:
    acc = None
    if pred_kind is not None and true_kind is not None:
        acc = accuracy(pred_kind, true_kind)
    return MetricsReport(
        srcc=srcc(pred_mos, mos), plcc=plcc(pred_mos, mos, logistic=logistic),
        krcc=krcc(pred_mos, mos), rmse=rmse(pred_mos, mos, logistic=logistic),
        acc=acc, fold_index=fold_index,
    )


def aggregate(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Field-wise mean over folds; ``acc`` averages the folds that report it."""
    reports = list(reports)
    if not reports:
        raise ValueError("aggregate needs at least one report")
    accs = [r.acc for r in reports if r.acc is not None]
    if accs and len(accs) != len(reports):
        log.warning("acc reported by %d of %d folds; averaging those only", len(accs), len(reports))
    return MetricsReport(
        srcc=float(np.mean([r.srcc for r in reports])),
        plcc=float(np.mean([r.plcc for r in reports])),
        krcc=float(np.mean([r.krcc for r in reports])),
        rmse=float(np.mean([r.rmse for r in reports])),
        acc=float(np.mean(accs)) if accs else None,
        fold_index="mean",
    )


# ------------------------------------------------------------------ folds

@dataclass(frozen=True)
class FoldSplit:
    fold_index: int
    train_contents: frozenset
    test_contents: frozenset

    def __post_init__(self):
        object.__setattr__(self, "train_contents", frozenset(self.train_contents))
        object.__setattr__(self, "test_contents", frozenset(self.test_contents))
        if self.train_contents & self.test_contents:
            raise ValueError("train and test contents overlap")


def make_folds(contents, k: int = 5, seed: int = 0) -> list[FoldSplit]:
    """Shuffle unique content ids and cut them into ``k`` near-equal test groups."""
    contents = list(contents)
    ids = sorted(set(contents))
    if len(ids) != len(contents):
        raise ValueError("content ids must be unique")
    if len(ids) < k:
        raise ValueError(f"need at least k={k} contents, got {len(ids)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    groups = np.array_split(np.asarray(ids, dtype=object)[order], k)
    everything = frozenset(ids)
    return [FoldSplit(i, everything - frozenset(g), frozenset(g)) for i, g in enumerate(groups)]
