"""Minimal dense-tensor machinery: tensor product, matricization, numeric rank.

These back the brute-force oracle suite and the depth-efficiency rank check.
They are deliberately explicit and size-guarded; nothing here is meant for
large tensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Hard cap on oracle tensor sizes; exceeding it signals oracle misuse.
ELEMENT_BUDGET = 2**24

DISTRIBUTION_ATOL = 1e-9


class CapacityError(Exception):
    """Requested dense tensor exceeds the oracle element budget."""


@dataclass(frozen=True)
class DenseTensor:
    """Explicit N-order array in row-major layout.

    When ``is_distribution`` is set the entries must be non-negative and sum
    to one (up to 1e-9), i.e. the vectorization lies on the simplex.
    """

    entries: np.ndarray
    is_distribution: bool = False

    def __post_init__(self):
        arr = np.asarray(self.entries, dtype=np.float64)
        if arr.ndim:  # ascontiguousarray would promote 0-d scalars to 1-d
            arr = np.ascontiguousarray(arr)
        object.__setattr__(self, "entries", arr)
        if arr.size > ELEMENT_BUDGET:
            raise CapacityError(
                f"tensor with {arr.size} elements exceeds budget {ELEMENT_BUDGET}"
            )
        if self.is_distribution:
            if np.any(arr < -DISTRIBUTION_ATOL):
                raise ValueError("distribution tensor has negative entries")
            total = float(arr.sum())
            if abs(total - 1.0) > DISTRIBUTION_ATOL:
                raise ValueError(f"distribution tensor sums to {total}, not 1")

    @property
    def order(self) -> int:
        return self.entries.ndim

    @property
    def dims(self) -> tuple:
        return self.entries.shape

    def flat(self) -> np.ndarray:
        """Entries in row-major order over (d_1 ... d_N)."""
        return self.entries.reshape(-1)


def tensor_product(a: DenseTensor, b: DenseTensor) -> DenseTensor:
    """Tensor (outer) product: order(out) = order(a) + order(b)."""
    size = a.entries.size * b.entries.size
    if size > ELEMENT_BUDGET:
        raise CapacityError(
            f"tensor product would hold {size} elements, over budget {ELEMENT_BUDGET}"
        )
    out = np.multiply.outer(a.entries, b.entries)
    return DenseTensor(out, is_distribution=a.is_distribution and b.is_distribution)


def matricize(a: DenseTensor) -> np.ndarray:
    """Arrange an even-order tensor as a matrix: odd modes index rows, even
    modes index columns (both row-major within their group)."""
    if a.order % 2 != 0:
        raise ValueError(f"matricization requires even order, got {a.order}")
    n = a.order
    odd = tuple(range(0, n, 2))   # modes 1,3,5,... in 1-based terms
    even = tuple(range(1, n, 2))
    rows = int(np.prod([a.dims[i] for i in odd], dtype=np.int64)) if odd else 1
    cols = int(np.prod([a.dims[i] for i in even], dtype=np.int64)) if even else 1
    return a.entries.transpose(odd + even).reshape(rows, cols)


def jacobi_singular_values(m: np.ndarray, sweeps: int = 60, eps: float = 1e-14) -> np.ndarray:
    """Singular values via one-sided (Hestenes) Jacobi, descending order.

    Self-contained on purpose: the depth-efficiency check is an
    almost-everywhere statement verified numerically, and we want the rank
    decision independent of any external solver.
    """
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("expected a matrix")
    if a.shape[0] < a.shape[1]:
        a = a.T
    _, c = a.shape
    if c == 0:
        return np.zeros(0)
    scale = np.max(np.abs(a))
    if scale == 0.0:
        return np.zeros(c)
    for _ in range(sweeps):
        off = 0.0
        for p in range(c - 1):
            for q in range(p + 1, c):
                ap = a[:, p].copy()  # views would alias through the update below
                aq = a[:, q].copy()
                alpha = float(ap @ ap)
                beta = float(aq @ aq)
                gamma = float(ap @ aq)
                if abs(gamma) <= eps * np.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                off = max(off, abs(gamma) / np.sqrt(alpha * beta))
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                if zeta == 0.0:
                    t = 1.0
                cs = 1.0 / np.sqrt(1.0 + t * t)
                sn = cs * t
                a[:, p] = cs * ap - sn * aq
                a[:, q] = sn * ap + cs * aq
        if off <= eps:
            break
    sv = np.sqrt(np.sum(a * a, axis=0))
    return np.sort(sv)[::-1]


def numeric_rank(m: np.ndarray, tol: float = 1e-7) -> int:
    """Number of singular values above ``tol`` times the largest one."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    sv = jacobi_singular_values(np.asarray(m, dtype=np.float64))
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tol * sv[0]))
