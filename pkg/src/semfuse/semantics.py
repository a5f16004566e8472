"""Per-pixel class probabilities from CNN score maps.

The classifier's argmax is kept; only the sharpness of each pixel's
distribution changes.  Every superpixel k gets a softmax temperature
``tau_k = 1 / spp_k**2`` where ``spp_k`` is the fraction of its pixels that
carry the superpixel's most common label.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from skimage.measure import label as label_components
from skimage.segmentation import slic

from .errors import InvalidK

SLIC_K = 2048
SLIC_COMPACTNESS = 10.0
SLIC_ITERATIONS = 10


@dataclass(frozen=True, eq=False)
class ScoreMap:
    scores: np.ndarray  # (c, n, m)

    def __post_init__(self):
        s = np.asarray(self.scores)
        if s.ndim != 3 or s.shape[0] < 2:
            raise ValueError("score map must be c x n x m with c >= 2")
        if not np.all(np.isfinite(s)):
            raise ValueError("score map contains non-finite values")
        object.__setattr__(self, "scores", s)

    @property
    def classes(self) -> int:
        return self.scores.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.scores.shape[1:]


@dataclass(frozen=True, eq=False)
class LabelImage:
    labels: np.ndarray  # (n, m) int
    classes: int

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.size and (lab.min() < 0 or lab.max() >= self.classes):
            raise ValueError("label ids must lie in [0, classes)")
        object.__setattr__(self, "labels", lab)


@dataclass(frozen=True, eq=False)
class SuperpixelMap:
    ids: np.ndarray  # (n, m) int
    count: int

    def __post_init__(self):
        ids = np.asarray(self.ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.count):
            raise ValueError("superpixel ids must lie in [0, count)")
        object.__setattr__(self, "ids", ids)


@dataclass(frozen=True, eq=False)
class SuperpixelStats:
    spp: np.ndarray
    tau: np.ndarray


@dataclass(frozen=True, eq=False)
class ClassProbabilityImage:
    probs: np.ndarray  # (c, n, m)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 3:
            raise ValueError("probability image must be c x n x m")
        if p.size and (p.min() < 0.0 or p.max() > 1.0 or np.abs(p.sum(axis=0) - 1.0).max() > 1e-9):
            raise ValueError("per-pixel class probabilities must form a simplex")
        object.__setattr__(self, "probs", p)

    @property
    def classes(self) -> int:
        return self.probs.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape[1:]


def densify(ids: np.ndarray) -> SuperpixelMap:
    """Split every label into its 4-connected pieces and renumber densely.

    Numbering follows first appearance in raster order, so the result does
    not depend on the input numbering.
    """
    ids = np.asarray(ids)
    # background=-1 never occurs in ids, so every pixel gets a component
    out = label_components(ids.astype(np.int64), background=-1, connectivity=1) - 1
    nxt = int(out.max()) + 1
    _, first = np.unique(out.ravel(), return_index=True)
    order = np.argsort(first, kind="stable")
    remap = np.empty(nxt, dtype=np.int64)
    remap[order] = np.arange(nxt)
    return SuperpixelMap(remap[out], nxt)


def slic_segment(image, k_target: int = SLIC_K, compactness: float = SLIC_COMPACTNESS,
                 iterations: int = SLIC_ITERATIONS) -> SuperpixelMap:
    """SLIC superpixels in CIELAB + xy space with connectivity enforcement."""
    img = np.asarray(image)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=-1)
    n, m = img.shape[:2]
    if n * m == 0:
        raise ValueError("empty image")
    if k_target < 1 or k_target > n * m:
        raise InvalidK(f"k_target={k_target} outside [1, {n * m}]")
    if k_target == 1:
        return SuperpixelMap(np.zeros((n, m), dtype=np.int64), 1)
    if img.dtype != np.uint8:
        img = np.clip(np.asarray(img, dtype=float), 0.0, 1.0)
    seg = slic(img, n_segments=k_target, compactness=compactness, max_num_iter=iterations,
               convert2lab=True, enforce_connectivity=True, start_label=0, channel_axis=-1)
    return densify(seg)


def argmax_labels(s: ScoreMap) -> LabelImage:
    # np.argmax returns the first maximum, i.e. the lowest class id on ties
    return LabelImage(np.argmax(s.scores, axis=0), s.classes)


def predominant_fraction(sp: SuperpixelMap, labels: LabelImage) -> SuperpixelStats:
    if sp.ids.shape != labels.labels.shape:
        raise ValueError("superpixel map and label image differ in shape")
    c = labels.classes
    joint = np.bincount((sp.ids.ravel() * c + labels.labels.ravel()).astype(np.int64),
                        minlength=sp.count * c).reshape(sp.count, c)
    total = joint.sum(axis=1)
    spp = np.where(total > 0, joint.max(axis=1) / np.maximum(total, 1), 1.0)
    return SuperpixelStats(spp, 1.0 / spp**2)


def softmax(scores, tau=1.0, axis=0) -> np.ndarray:
    z = np.divide(scores, tau, dtype=float)
    z -= np.max(z, axis=axis, keepdims=True)
    np.exp(z, out=z)
    z /= np.sum(z, axis=axis, keepdims=True)
    return z


def tempered_softmax(s: ScoreMap, sp: SuperpixelMap, stats: SuperpixelStats) -> ClassProbabilityImage:
    if sp.ids.shape != s.shape:
        raise ValueError("superpixel map and score map differ in shape")
    tau = np.maximum(np.asarray(stats.tau, dtype=float), 1.0)[sp.ids]
    return ClassProbabilityImage(softmax(s.scores, tau[None], axis=0))


def heuristic_probabilities(s: ScoreMap, sp: SuperpixelMap) -> tuple[ClassProbabilityImage, SuperpixelStats]:
    stats = predominant_fraction(sp, argmax_labels(s))
    return tempered_softmax(s, sp, stats), stats
