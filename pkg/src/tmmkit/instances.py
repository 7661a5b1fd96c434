"""Masked inputs: values paired with per-coordinate observation flags."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GAUSSIAN_SENTINEL = np.nan
CATEGORICAL_SENTINEL = -1


@dataclass(frozen=True)
class MaskedInstance:
    """An input of N local structures with an (N, s) observation mask.

    ``mask[i, c]`` is True when coordinate c of patch i is observed.
    Unobserved slots hold a sentinel (nan for reals, -1 for symbols) and are
    never read by inference.
    """

    values: np.ndarray  # (N, s)
    mask: np.ndarray    # (N, s) bool

    def __post_init__(self):
        values = np.asarray(self.values)
        mask = np.asarray(self.mask, dtype=bool)
        if values.ndim != 2 or mask.shape != values.shape:
            raise ValueError("values and mask must share an (N, s) shape")
        if np.issubdtype(values.dtype, np.integer):
            values = np.where(mask, values, CATEGORICAL_SENTINEL)
        else:
            values = np.where(mask, values.astype(np.float64), GAUSSIAN_SENTINEL)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def n_patches(self) -> int:
        return self.values.shape[0]

    @property
    def patch_dim(self) -> int:
        return self.values.shape[1]

    @property
    def observed_fraction(self) -> float:
        return float(np.mean(self.mask))


def complete(values) -> MaskedInstance:
    """Wrap fully observed values."""
    values = np.asarray(values)
    return MaskedInstance(values, np.ones(values.shape, dtype=bool))


def all_missing(n_patches: int, patch_dim: int, integer: bool = False) -> MaskedInstance:
    dtype = np.int64 if integer else np.float64
    return MaskedInstance(
        np.zeros((n_patches, patch_dim), dtype=dtype),
        np.zeros((n_patches, patch_dim), dtype=bool),
    )
