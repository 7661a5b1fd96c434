"""CP and HT weight sets with simplex constraints, and their dense expansions.

All weights are stored as log-space offsets. A weight vector is "on the
simplex" when its logsumexp is zero; normalization is enforced by explicit
renormalization (see ``normalize_to_simplex``) rather than a softmax
reparameterization, so gradients act on the raw offsets and the optimizer
renormalizes after each step.

The dense expansions are the central oracle of the artifact: every network
evaluation is checked against them on small instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .logspace import logsumexp
from .tensor import ELEMENT_BUDGET, CapacityError, DenseTensor, tensor_product

SIMPLEX_ATOL = 1e-9

SHARING_MODES = ("none", "window", "all")


def normalize_to_simplex(log_weights: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shift log weights so their logsumexp along ``axis`` is exactly zero."""
    log_weights = np.asarray(log_weights, dtype=np.float64)
    norm = logsumexp(log_weights, axis=axis, keepdims=True)
    if np.any(np.isneginf(norm)):
        raise ValueError("cannot normalize a weight vector with zero total mass")
    if not np.all(np.isfinite(norm)):
        raise ValueError("weight vector contains +inf or nan")
    return log_weights - norm


def _check_simplex(arr: np.ndarray, what: str, atol: float = SIMPLEX_ATOL):
    norms = np.atleast_1d(logsumexp(arr, axis=-1))
    if np.max(np.abs(norms)) > atol:
        raise ValueError(f"{what} not normalized to the simplex (|logsumexp| up to {np.max(np.abs(norms)):g})")


@dataclass
class CPParams:
    """Rank-Z CP weight set for K classes over N positions and M components.

    ``class_weights[y, z]`` are the per-class top log-weights; ``factors[i, z]``
    is the log-weight vector over components at position i for rank term z.
    """

    class_weights: np.ndarray  # (K, Z)
    factors: np.ndarray        # (N, Z, M)

    def __post_init__(self):
        self.class_weights = np.asarray(self.class_weights, dtype=np.float64)
        self.factors = np.asarray(self.factors, dtype=np.float64)
        if self.class_weights.ndim != 2 or self.factors.ndim != 3:
            raise ValueError("CPParams needs (K, Z) class weights and (N, Z, M) factors")
        if self.class_weights.shape[1] != self.factors.shape[1]:
            raise ValueError("rank mismatch between class weights and factors")

    @property
    def n_classes(self) -> int:
        return self.class_weights.shape[0]

    @property
    def n_positions(self) -> int:
        return self.factors.shape[0]

    @property
    def n_components(self) -> int:
        return self.factors.shape[2]

    @property
    def rank(self) -> int:
        return self.factors.shape[1]

    def validate(self, atol: float = SIMPLEX_ATOL):
        _check_simplex(self.class_weights, "CP class weights", atol)
        _check_simplex(self.factors, "CP factors", atol)

    def copy(self) -> "CPParams":
        return CPParams(self.class_weights.copy(), self.factors.copy())


@dataclass
class HTParams:
    """Hierarchical weight set over N = arity**L positions.

    ``levels[l]`` holds the level-l kernels with shape (G_l, r_l, r_{l-1})
    where r_{-1} = M and G_l is the number of distinct position groups under
    the level's sharing mode ('none' | 'window' | 'all'). ``class_weights``
    holds the per-class top vectors over r_{L-1} channels.
    """

    arity: int
    ranks: list                      # [r_0 .. r_{L-1}]
    n_components: int
    levels: list = field(default_factory=list)   # l -> (G_l, r_l, r_{l-1})
    sharing: list = field(default_factory=list)  # l -> sharing mode
    class_weights: np.ndarray | None = None      # (K, r_{L-1})

    def __post_init__(self):
        if self.arity < 2:
            raise ValueError("pooling arity must be at least 2")
        self.ranks = [int(r) for r in self.ranks]
        if len(self.levels) != len(self.ranks) or len(self.sharing) != len(self.ranks):
            raise ValueError("levels/sharing must match rank list length")
        self.levels = [np.asarray(a, dtype=np.float64) for a in self.levels]
        self.class_weights = np.asarray(self.class_weights, dtype=np.float64)
        prev = self.n_components
        for l, (arr, mode, r) in enumerate(zip(self.levels, self.sharing, self.ranks)):
            if mode not in SHARING_MODES:
                raise ValueError(f"unknown sharing mode {mode!r} at level {l}")
            expect_groups = self.position_groups(l)
            if arr.shape != (expect_groups, r, prev):
                raise ValueError(
                    f"level {l} kernel shape {arr.shape}, expected {(expect_groups, r, prev)}"
                )
            prev = r
        if self.class_weights.ndim != 2 or self.class_weights.shape[1] != self.ranks[-1]:
            raise ValueError("class weights must have shape (K, r_{L-1})")

    @property
    def n_levels(self) -> int:
        return len(self.ranks)

    @property
    def n_positions(self) -> int:
        return self.arity ** self.n_levels

    @property
    def n_classes(self) -> int:
        return self.class_weights.shape[0]

    def positions_at(self, level: int) -> int:
        return self.n_positions // self.arity ** level

    def position_groups(self, level: int) -> int:
        mode = self.sharing[level]
        if mode == "none":
            return self.positions_at(level)
        if mode == "window":
            return min(self.arity, self.positions_at(level))
        return 1

    def group_of(self, level: int, j: int) -> int:
        mode = self.sharing[level]
        if mode == "none":
            return j
        if mode == "window":
            return j % self.position_groups(level)
        return 0

    def validate(self, atol: float = SIMPLEX_ATOL):
        for l, arr in enumerate(self.levels):
            _check_simplex(arr, f"HT level {l} kernels", atol)
        _check_simplex(self.class_weights, "HT class weights", atol)

    def copy(self) -> "HTParams":
        return HTParams(
            arity=self.arity,
            ranks=list(self.ranks),
            n_components=self.n_components,
            levels=[a.copy() for a in self.levels],
            sharing=list(self.sharing),
            class_weights=self.class_weights.copy(),
        )


FactorParams = (CPParams, HTParams)


def _check_budget(n_components: int, n_positions: int):
    if n_components ** n_positions > ELEMENT_BUDGET:
        raise CapacityError(
            f"dense expansion of size {n_components}**{n_positions} exceeds budget {ELEMENT_BUDGET}"
        )


def expand_cp(p: CPParams, y: int) -> DenseTensor:
    """Dense prior tensor of class y: sum of Z outer products of factor vectors."""
    _check_budget(p.n_components, p.n_positions)
    top = np.exp(p.class_weights[y])
    factors = np.exp(p.factors)  # (N, Z, M)
    out = np.zeros((p.n_components,) * p.n_positions)
    for z in range(p.rank):
        term = np.array(top[z])
        for i in range(p.n_positions):
            term = np.multiply.outer(term, factors[i, z])
        out += term
    return DenseTensor(out, is_distribution=True)


def expand_ht(p: HTParams, y: int) -> DenseTensor:
    """Dense prior tensor of class y via the bottom-up hierarchical recursion."""
    _check_budget(p.n_components, p.n_positions)
    w = p.arity
    # Leaf kernels become order-1 tensors over components.
    cur = [
        [np.exp(p.levels[0][p.group_of(0, j), g]) for g in range(p.ranks[0])]
        for j in range(p.n_positions)
    ]
    for l in range(1, p.n_levels):
        kern = np.exp(p.levels[l])
        nxt = []
        for j in range(p.positions_at(l)):
            children = cur[w * j : w * (j + 1)]
            outs = []
            for g in range(p.ranks[l]):
                acc = None
                for alpha in range(p.ranks[l - 1]):
                    block = children[0][alpha]
                    for child in children[1:]:
                        block = np.multiply.outer(block, child[alpha])
                    term = kern[p.group_of(l, j), g, alpha] * block
                    acc = term if acc is None else acc + term
                outs.append(acc)
            nxt.append(outs)
        cur = nxt
    top = np.exp(p.class_weights[y])
    acc = None
    for alpha in range(p.ranks[-1]):
        block = cur[0][alpha]
        for child in cur[1:]:
            block = np.multiply.outer(block, child[alpha])
        term = top[alpha] * block
        acc = term if acc is None else acc + term
    return DenseTensor(acc, is_distribution=True)


def cp_to_ht(p: CPParams) -> HTParams:
    """View a CP weight set as a single-level hierarchy with arity N."""
    return HTParams(
        arity=p.n_positions,
        ranks=[p.rank],
        n_components=p.n_components,
        levels=[p.factors.copy()],
        sharing=["none"],
        class_weights=p.class_weights.copy(),
    )


def gmm_sparse_prior(weights, n_positions: int, n_clusters: int) -> DenseTensor:
    """Sparse prior tensor realizing a diagonal GMM with the given mixing weights.

    Component count is M = N * K; cluster k places weight w_k on the single
    assignment d_i = N*(k-1) + i (1-based), i.e. each of the K clusters owns a
    disjoint run of N components, one per position.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != n_clusters:
        raise ValueError("weights must be a vector of length n_clusters")
    m = n_positions * n_clusters
    _check_budget(m, n_positions)
    out = np.zeros((m,) * n_positions)
    for k in range(n_clusters):
        idx = tuple(n_positions * k + i for i in range(n_positions))
        out[idx] = w[k]
    return DenseTensor(out, is_distribution=abs(float(w.sum()) - 1.0) <= 1e-9 and bool(np.all(w >= 0)))


def gmm_sparse_cp(log_weights, n_positions: int, n_clusters: int) -> CPParams:
    """The same sparse GMM prior, written as a rank-K CP weight set.

    Factor vectors are one-hot in probability (log-space 0 / -inf), so the
    expansion is exactly the sparse tensor of ``gmm_sparse_prior``.
    """
    log_w = np.asarray(log_weights, dtype=np.float64)
    m = n_positions * n_clusters
    factors = np.full((n_positions, n_clusters, m), -np.inf)
    for k in range(n_clusters):
        for i in range(n_positions):
            factors[i, k, n_positions * k + i] = 0.0
    return CPParams(class_weights=log_w[None, :], factors=factors)


def random_cp(n_positions, n_components, rank, n_classes, rng) -> CPParams:
    """Standard-normal offsets, renormalized onto the simplex."""
    cw = normalize_to_simplex(rng.standard_normal((n_classes, rank)))
    fac = normalize_to_simplex(rng.standard_normal((n_positions, rank, n_components)))
    return CPParams(cw, fac)


def random_ht(arity, ranks, n_components, n_classes, rng, sharing=None) -> HTParams:
    if sharing is None:
        sharing = ["none"] * len(ranks)
    n = arity ** len(ranks)
    levels = []
    prev = n_components
    for l, r in enumerate(ranks):
        if sharing[l] == "none":
            groups = n // arity ** l
        elif sharing[l] == "window":
            groups = min(arity, n // arity ** l)
        elif sharing[l] == "all":
            groups = 1
        else:
            raise ValueError(f"unknown sharing mode {sharing[l]!r}")
        levels.append(normalize_to_simplex(rng.standard_normal((groups, r, prev))))
        prev = r
    cw = normalize_to_simplex(rng.standard_normal((n_classes, ranks[-1])))
    return HTParams(
        arity=arity,
        ranks=list(ranks),
        n_components=n_components,
        levels=levels,
        sharing=list(sharing),
        class_weights=cw,
    )
