"""Ancestral sampling from the latent tree, and neuron visualization.

The simplex-constrained circuit is a latent tree: the class's top vector is
a distribution over the root's channel; each node, given the channel its
parent drew, draws its own channel from the matching kernel; leaves draw a
mixture component and the component emits the patch. Sampling is therefore a
single top-down pass.

Neuron visualization descends the same tree greedily, at every node keeping
the single highest-weight child channel; the exhaustive maximization over
whole subtree assignments lives in the oracle module as a test reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .components import component_mode, sample_component
from .logspace import softmax_from_log
from .network import Network


def _draw(log_weights, rng) -> int:
    return int(rng.choice(log_weights.shape[0], p=softmax_from_log(log_weights)))


def sample(net: Network, y: int, rng: np.random.Generator) -> np.ndarray:
    """Draw one complete instance from class y. Returns (N, s) values in
    row-major patch order."""
    ht = net.stack()
    if not 0 <= y < ht.n_classes:
        raise IndexError(f"class {y} out of range [0, {ht.n_classes})")
    w = ht.arity
    channels = [_draw(ht.class_weights[y], rng)]   # level-L node value
    for level in range(ht.n_levels - 1, -1, -1):
        nxt = []
        for j in range(ht.positions_at(level)):
            parent = channels[j // w]
            kern = ht.levels[level][ht.group_of(level, j), parent]
            nxt.append(_draw(kern, rng))
        channels = nxt
    order = net.leaf_order()
    out = None
    for slot, d in enumerate(channels):
        patch = sample_component(net.components, d, rng)
        if out is None:
            out = np.zeros((ht.n_positions, patch.shape[0]), dtype=patch.dtype)
        out[order[slot]] = patch
    return out


def _vec_draw(prob_rows: np.ndarray, rng) -> np.ndarray:
    """One categorical draw per row of a (B, A) probability matrix."""
    cdf = np.cumsum(prob_rows, axis=1)
    cdf /= cdf[:, -1:]
    u = rng.random(prob_rows.shape[0])
    return np.minimum((u[:, None] > cdf).sum(axis=1), prob_rows.shape[1] - 1)


def sample_batch(net: Network, y: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorized ancestral sampling: (count, N, s) values in patch order."""
    ht = net.stack()
    if not 0 <= y < ht.n_classes:
        raise IndexError(f"class {y} out of range [0, {ht.n_classes})")
    w = ht.arity
    top_p = softmax_from_log(ht.class_weights[y])
    channels = _vec_draw(np.broadcast_to(top_p, (count, top_p.shape[0])), rng)[:, None]
    for level in range(ht.n_levels - 1, -1, -1):
        cols = []
        for j in range(ht.positions_at(level)):
            kern_p = softmax_from_log(ht.levels[level][ht.group_of(level, j)], axis=-1)
            cols.append(_vec_draw(kern_p[channels[:, j // w]], rng))
        channels = np.stack(cols, axis=1)
    order = net.leaf_order()
    fam = net.components
    n, s = ht.n_positions, fam.patch_dim
    if fam.kind == "diagonal_gaussian":
        mu = fam.means[channels]                        # (B, N, s)
        sd = np.sqrt(fam.sigma2)[channels]
        out = mu + sd * rng.standard_normal((count, n, s))
    else:
        probs = np.exp(fam.log_tables)[channels]        # (B, N, s, V)
        flat = probs.reshape(count * n * s, -1)
        out = _vec_draw(flat, rng).reshape(count, n, s).astype(np.int64)
    result = np.empty_like(out)
    result[:, order, :] = out
    return result


@dataclass(frozen=True)
class NeuronPatch:
    """Receptive-field decoding of one neuron: which row-major patches it
    covers and the most likely local structure for each."""

    patch_ids: tuple
    values: np.ndarray  # (len(patch_ids), s)


def visualize_neuron(net: Network, level: int, position: int, channel: int) -> NeuronPatch:
    """Greedy most-likely-descent for the neuron at (level, position, channel).

    ``level`` -1 addresses the representation layer directly (channel = a
    component index); levels 0..L-1 address MEX outputs; level L addresses a
    class output (position must be 0).
    """
    ht = net.stack()
    order = net.leaf_order()
    if level == -1:
        if not 0 <= position < ht.n_positions:
            raise IndexError("position out of range")
        mode = component_mode(net.components, channel)
        return NeuronPatch((int(order[position]),), mode[None, :])
    if not 0 <= level <= ht.n_levels:
        raise IndexError("level out of range")
    if level == ht.n_levels:
        if position != 0:
            raise IndexError("the class level has a single position")
        if not 0 <= channel < ht.n_classes:
            raise IndexError("class channel out of range")
    elif not (0 <= position < ht.positions_at(level) and 0 <= channel < ht.ranks[level]):
        raise IndexError("neuron coordinates out of range")

    assignments = {}

    def descend(lvl, pos, chan):
        kern = ht.class_weights[chan] if lvl == ht.n_levels else ht.levels[lvl][ht.group_of(lvl, pos), chan]
        alpha = int(np.argmax(kern))
        if lvl == 0:
            assignments[pos] = alpha
            return
        for t in range(ht.arity):
            descend(lvl - 1, ht.arity * pos + t, alpha)

    descend(level, position, channel)
    slots = sorted(assignments)
    patch_ids = tuple(int(order[slot]) for slot in slots)
    values = np.stack([component_mode(net.components, assignments[slot]) for slot in slots])
    return NeuronPatch(patch_ids, values)


def paint_patch(patch: NeuronPatch, grid_shape, patch_shape, background=0.0) -> np.ndarray:
    """Place a neuron patch into a full-size image (non-covered pixels get
    ``background``)."""
    gh, gw = grid_shape
    ph, pw = patch_shape
    img = np.full((gh * ph, gw * pw), background)
    for pid, vals in zip(patch.patch_ids, patch.values):
        r, c = divmod(pid, gw)
        img[r * ph : (r + 1) * ph, c * pw : (c + 1) * pw] = np.asarray(vals, dtype=np.float64).reshape(ph, pw)
    return img


def save_samples_csv(path, samples):
    """Sequence models: one sample per row, patches flattened row-major."""
    from .data_io import write_csv

    samples = np.asarray(samples)
    flat = samples.reshape(samples.shape[0], -1)
    cols = ["sample"] + [f"v{i}" for i in range(flat.shape[1])]
    rows = [[i] + [float(v) for v in flat[i]] for i in range(flat.shape[0])]
    write_csv(path, cols, rows)


def save_samples_pgm(path, samples, grid_shape, patch_shape, columns: int = 8, gap: int = 1):
    """Grid models: montage of samples as a binary PGM."""
    from .data_io import unpatchify, write_pgm

    samples = np.asarray(samples, dtype=np.float64)
    images = [unpatchify(s, grid_shape, patch_shape) for s in samples]
    h, w = images[0].shape
    n = len(images)
    ncols = min(columns, n)
    nrows = -(-n // ncols)
    canvas = np.zeros((nrows * (h + gap) - gap, ncols * (w + gap) - gap))
    for i, img in enumerate(images):
        r, c = divmod(i, ncols)
        canvas[r * (h + gap) : r * (h + gap) + h, c * (w + gap) : c * (w + gap) + w] = img
    write_pgm(path, np.clip(canvas, 0.0, 1.0))
