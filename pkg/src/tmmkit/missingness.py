"""Mask generators for the three corruption regimes, plus the baselines
(zero/mean imputation and missingness-aware KNN) they are compared against.

Conventions: masks are boolean images with True = observed. Feature deletion
is the one value-dependent (MNAR) regime: it removes only originally
non-zero pixels and replaces them with zeros, so a blind classifier sees a
plausible-looking image while a mask-aware one knows what is gone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .instances import MaskedInstance

MASK_KINDS = ("iid", "rectangles", "feature_deletion")


@dataclass(frozen=True)
class MaskSpec:
    """One cell of a corruption grid.

    iid: each pixel missing independently with probability ``p`` (MCAR).
    rectangles: union of ``n_rects`` squares of side ``rect_size`` with
        corners uniform over positions keeping them inside the image (MAR).
    feature_deletion: ``n_delete`` non-zero pixels chosen uniformly without
        replacement, zeroed (MNAR); short images lose all non-zero pixels.
    """

    kind: str
    p: float = 0.0
    n_rects: int = 0
    rect_size: int = 0
    n_delete: int = 0
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise ValueError(f"unknown mask kind {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("iid probability must lie in [0, 1]")
        if min(self.n_rects, self.rect_size, self.n_delete) < 0:
            raise ValueError("mask parameters must be non-negative")

    @property
    def param_label(self) -> str:
        if self.kind == "iid":
            return repr(float(self.p))
        if self.kind == "rectangles":
            return f"{self.n_rects}x{self.rect_size}"
        return str(self.n_delete)


def generate_mask(spec: MaskSpec, image, rng: np.random.Generator | None = None) -> np.ndarray:
    """Boolean observation mask for one image (True = observed)."""
    image = np.asarray(image, dtype=np.float64)
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    h, w = image.shape
    if spec.kind == "iid":
        return rng.random((h, w)) >= spec.p
    if spec.kind == "rectangles":
        observed = np.ones((h, w), dtype=bool)
        size = spec.rect_size
        for _ in range(spec.n_rects):
            top = int(rng.integers(0, max(h - size, 0) + 1))
            left = int(rng.integers(0, max(w - size, 0) + 1))
            observed[top : top + size, left : left + size] = False
        return observed
    # feature deletion
    observed = np.ones((h, w), dtype=bool)
    nonzero = np.argwhere(image != 0.0)
    take = min(spec.n_delete, len(nonzero))
    if take > 0:
        chosen = nonzero[rng.choice(len(nonzero), size=take, replace=False)]
        observed[chosen[:, 0], chosen[:, 1]] = False
    return observed


def apply_feature_deletion(image, n_delete: int, rng: np.random.Generator):
    """Corrupt an image: returns (zeroed image, observation mask)."""
    spec = MaskSpec("feature_deletion", n_delete=n_delete)
    mask = generate_mask(spec, image, rng)
    return np.where(mask, image, 0.0), mask


def impute(x: MaskedInstance, method: str, dataset_mean=None) -> MaskedInstance:
    """Fill missing coordinates; observed values pass through unchanged.

    ``dataset_mean`` (same shape as the values) is required for the mean
    method and ignored otherwise.
    """
    if method == "zero":
        fill = np.zeros_like(x.values, dtype=np.float64)
    elif method == "mean":
        if dataset_mean is None:
            raise ValueError("mean imputation needs dataset statistics")
        fill = np.broadcast_to(np.asarray(dataset_mean, dtype=np.float64), x.values.shape)
    else:
        raise ValueError(f"unknown imputation method {method!r}")
    values = np.where(x.mask, x.values, fill)
    return MaskedInstance(values, np.ones_like(x.mask))


def knn_predict(train_values, train_labels, query, query_mask, k: int) -> int:
    """Majority vote among the k nearest neighbours under the masked metric
    d(x', x) = sum over observed coordinates of (x'_i - x_i)^2.

    Distance ties resolve in training-set order (stable sort); vote ties
    resolve toward the smallest class index.
    """
    train_values = np.asarray(train_values, dtype=np.float64)
    train_labels = np.asarray(train_labels, dtype=np.int64)
    if len(train_values) == 0:
        raise ValueError("empty training set")
    if k > len(train_values):
        raise ValueError("k exceeds the training set size")
    query = np.asarray(query, dtype=np.float64)
    query_mask = np.asarray(query_mask, dtype=bool)
    diff = np.where(query_mask, train_values - query, 0.0)
    dist = np.sum(diff * diff, axis=1)
    nearest = np.argsort(dist, kind="stable")[:k]
    votes = np.bincount(train_labels[nearest])
    return int(np.argmax(votes))
