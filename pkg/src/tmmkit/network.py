"""The compiled log-space circuit: representation -> (MEX -> product pool)* -> class outputs.

Every weighted sum with simplex weights is realized as a MEX operation,
``out[j, g] = logsumexp_a(offset[j, g, a] + in[j, a])``, and every product as
a sum of log activations over a pooling window. Evaluating the stack for an
input X yields, per class y, ``log P(X | Y=y)`` of the underlying mixture —
equal (on small instances) to contracting the dense prior tensor with the
per-patch component likelihood vectors.

Missing data enters only through the representation layer: a fully missing
patch contributes a zero row (log 1), a partially missing patch the exact
per-coordinate marginal. The rest of the stack is untouched, which is what
makes marginalization a single forward pass.

Spatial layout: for 2D inputs with 2x2 pooling (arity 4), pooling windows at
every depth are the 2x2 blocks of the patch grid. Internally the stack runs
over tree slots in Morton (Z-curve) order, so each window is a contiguous
run of ``arity`` slots; ``leaf_order`` maps tree slots to row-major patch
indices. Sequences with arity w use the identity layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .components import ComponentFamily, log_density_matrix
from .factorization import CPParams, HTParams, cp_to_ht
from .instances import MaskedInstance
from .logspace import logsumexp


@dataclass
class Network:
    """Component family + factorized prior weights + spatial layout."""

    components: ComponentFamily
    params: CPParams | HTParams
    grid_shape: tuple | None = None  # patch grid (rows, cols) for 2D inputs

    def __post_init__(self):
        ht = self._ht()
        if self.components.n_components != ht.n_components:
            raise ValueError("component count disagrees between family and weights")
        if self.grid_shape is not None:
            rows, cols = self.grid_shape
            if rows * cols != ht.n_positions:
                raise ValueError("grid extents do not match position count")
            if isinstance(self.params, HTParams):
                _ = morton_order(rows, cols, ht.arity, ht.n_levels)

    def _ht(self) -> HTParams:
        return self.params if isinstance(self.params, HTParams) else cp_to_ht(self.params)

    @property
    def n_positions(self) -> int:
        return self._ht().n_positions

    @property
    def n_classes(self) -> int:
        return self._ht().n_classes

    @property
    def n_components(self) -> int:
        return self.components.n_components

    @property
    def patch_dim(self) -> int:
        return self.components.patch_dim

    @property
    def n_levels(self) -> int:
        return self._ht().n_levels

    def leaf_order(self) -> np.ndarray:
        """Row-major patch index served by each tree slot."""
        ht = self._ht()
        if self.grid_shape is None or isinstance(self.params, CPParams):
            # CP pools globally in one step, so slot order is immaterial.
            return np.arange(ht.n_positions)
        rows, cols = self.grid_shape
        return morton_order(rows, cols, ht.arity, ht.n_levels)

    def stack(self) -> HTParams:
        """Unified hierarchical view of the weights (CP becomes one level)."""
        return self._ht()

    def validate(self):
        self.components.validate()
        self.params.validate()

    def copy(self) -> "Network":
        return Network(self.components.copy(), self.params.copy(), self.grid_shape)


def morton_order(rows: int, cols: int, arity: int, n_levels: int) -> np.ndarray:
    """Tree-slot -> row-major patch index for 2x2 spatial pooling.

    Requires a square power-of-two grid (rows = cols = 2**n_levels) and
    arity 4, so that the children of every tree node form a 2x2 block.
    """
    if arity != 4:
        raise ValueError("2D layouts require 2x2 pooling windows (arity 4)")
    if rows != cols or rows != 2 ** n_levels:
        raise ValueError(
            f"grid {rows}x{cols} incompatible with {n_levels} levels of 2x2 pooling"
        )
    n = rows * cols
    out = np.empty(n, dtype=np.int64)
    for slot in range(n):
        r = c = 0
        for b in range(n_levels):
            quad = (slot >> (2 * b)) & 3
            r |= ((quad >> 1) & 1) << b
            c |= (quad & 1) << b
        out[slot] = r * cols + c
    return out


def representation(net: Network, x: MaskedInstance) -> np.ndarray:
    """Per-patch, per-component log-likelihoods honoring the mask. (N, M)."""
    if x.values.shape != (net.n_positions, net.patch_dim):
        raise ValueError(
            f"instance shape {x.values.shape} does not match network "
            f"({net.n_positions}, {net.patch_dim})"
        )
    return log_density_matrix(net.components, x.values, x.mask)


def mex(activations: np.ndarray, offsets: np.ndarray, groups: np.ndarray) -> np.ndarray:
    """Batched MEX: activations (B, J, A), offsets (G, C, A), groups (J,) -> (B, J, C)."""
    off = offsets[groups]                       # (J, C, A)
    return logsumexp(activations[:, :, None, :] + off[None], axis=3)


def product_pool(activations: np.ndarray, window: int) -> np.ndarray:
    """Non-overlapping log-space product pooling over contiguous windows."""
    b, j, c = activations.shape
    if j % window != 0:
        raise ValueError(f"extent {j} not divisible by pooling window {window}")
    return activations.reshape(b, j // window, window, c).sum(axis=2)


def _normalize_activations(act: np.ndarray):
    """Subtract the per-location channel logsumexp (added back after the MEX).

    A mathematical no-op that keeps offsets and activations on comparable
    scales. Locations whose channels are all -inf keep a zero norm so the
    -inf propagates cleanly.
    """
    norm = logsumexp(act, axis=2, keepdims=True)
    norm = np.where(np.isfinite(norm), norm, 0.0)
    return act - norm, norm


@dataclass
class ForwardCache:
    """Activations recorded on the way up, for the reverse sweep."""

    rep: np.ndarray            # (B, N, M), before tree reordering
    mex_inputs: list           # level l -> (B, J_l, r_{l-1}) after zeroing
    mex_outputs: list          # level l -> (B, J_l, r_l)
    top_input: np.ndarray      # (B, r_{L-1})
    outputs: np.ndarray        # (B, K)
    schedule: list | None


def forward_batch(
    net: Network,
    values: np.ndarray,
    mask: np.ndarray,
    schedule: list | None = None,
    keep_cache: bool = False,
    normalize_activations: bool = True,
):
    """Log-likelihood outputs (B, K) for a batch; optionally keep the cache.

    ``schedule`` is a per-level list of boolean arrays (B, J_l) marking
    positions whose input activations are zeroed (random marginalization,
    training only).
    """
    ht = net.stack()
    order = net.leaf_order()
    rep = log_density_matrix(net.components, values, mask)   # (B, N, M)
    act = rep[:, order, :]
    mex_inputs, mex_outputs = [], []
    for l in range(ht.n_levels):
        if schedule is not None and schedule[l] is not None:
            act = np.where(schedule[l][:, :, None], 0.0, act)
        if keep_cache:
            mex_inputs.append(act)
        groups = np.array([ht.group_of(l, j) for j in range(ht.positions_at(l))])
        if normalize_activations:
            shifted, norm = _normalize_activations(act)
            out = mex(shifted, ht.levels[l], groups) + norm
        else:
            out = mex(act, ht.levels[l], groups)
        if keep_cache:
            mex_outputs.append(out)
        act = product_pool(out, ht.arity)
    top_in = act[:, 0, :]                                    # (B, r_{L-1})
    outputs = logsumexp(ht.class_weights[None, :, :] + top_in[:, None, :], axis=2)
    outputs = np.atleast_2d(outputs)
    if keep_cache:
        return outputs, ForwardCache(rep, mex_inputs, mex_outputs, top_in, outputs, schedule)
    return outputs


def forward(net: Network, x: MaskedInstance) -> np.ndarray:
    """Per-class log-likelihood vector (K,) for one instance."""
    out = forward_batch(net, x.values[None], x.mask[None])
    return out[0]


def sample_marginalization_schedule(net: Network, rates, batch_size: int, rng) -> list:
    """Draw the per-level position zeroing masks used during training.

    ``rates[l]`` is the probability that a spatial location feeding the
    level-l MEX is zeroed (all channels), i.e. its receptive field is
    marginalized. Rates of 0 (or None entries) mean identity.
    """
    ht = net.stack()
    rates = list(rates) if rates is not None else []
    if len(rates) < ht.n_levels:
        rates = rates + [0.0] * (ht.n_levels - len(rates))
    schedule = []
    for l in range(ht.n_levels):
        rate = float(rates[l] or 0.0)
        if not 0.0 <= rate < 1.0:
            raise ValueError("marginalization rate must lie in [0, 1)")
        if rate == 0.0:
            schedule.append(None)
        else:
            schedule.append(rng.random((batch_size, ht.positions_at(l))) < rate)
    return schedule
