"""Brute-force reference computations the fast paths are checked against.

Everything here evaluates the mixture the slow, explicit way: dense prior
tensors, full enumerations over completions and latent assignments, and
numerical quadrature. None of it routes through the log-space stack, so a
match between the two is evidence, not tautology.
"""

from __future__ import annotations

import itertools

import numpy as np

from .components import CATEGORICAL, GAUSSIAN, component_mode, log_density_matrix
from .factorization import CPParams, expand_cp, expand_ht
from .instances import MaskedInstance
from .network import Network
from .tensor import DenseTensor


def expand_network_prior(net: Network, y: int) -> DenseTensor:
    if isinstance(net.params, CPParams):
        return expand_cp(net.params, y)
    return expand_ht(net.params, y)


def dense_forward(net: Network, x: MaskedInstance) -> np.ndarray:
    """Eq.-style direct evaluation: contract the dense prior tensor of every
    class with the per-patch likelihood vectors. Returns (K,) log values."""
    rep = log_density_matrix(net.components, x.values, x.mask)   # (N, M)
    lik = np.exp(rep)
    order = net.leaf_order()
    out = np.empty(net.n_classes)
    with np.errstate(divide="ignore"):
        for y in range(net.n_classes):
            t = expand_network_prior(net, y).entries
            for slot in range(net.n_positions):
                t = np.tensordot(lik[order[slot]], t, axes=(0, 0))
            out[y] = np.log(float(t))
    return out


def enumerate_masked_likelihood(net: Network, x: MaskedInstance) -> np.ndarray:
    """Categorical only: sum exp(dense_forward) over all completions of the
    missing coordinates. Returns per-class probabilities (K,)."""
    if net.components.kind != CATEGORICAL:
        raise ValueError("completion enumeration needs a finite alphabet")
    v = net.components.alphabet
    missing = np.argwhere(~x.mask)
    total = np.zeros(net.n_classes)
    full_mask = np.ones_like(x.mask)
    for combo in itertools.product(range(v), repeat=len(missing)):
        vals = x.values.copy()
        for (i, c), sym in zip(missing, combo):
            vals[i, c] = sym
        total += np.exp(dense_forward(net, MaskedInstance(vals, full_mask)))
    return total


def gauss_hermite_marginal(net: Network, x: MaskedInstance, patch: int, coord: int,
                           n_nodes: int = 64) -> np.ndarray:
    """Integrate exp(forward-style dense evaluation) over one unobserved real
    coordinate with Gauss-Hermite quadrature. Returns (K,) probabilities.

    The substitution Gaussian is moment-matched to the component marginals of
    the integrated coordinate, with an inflated scale so every component is
    covered by the rule.
    """
    if net.components.kind != GAUSSIAN:
        raise ValueError("quadrature marginal applies to Gaussian families")
    if x.mask[patch, coord]:
        raise ValueError("coordinate to integrate must be masked")
    nodes, weights = np.polynomial.hermite.hermgauss(n_nodes)
    mu = net.components.means[:, coord]
    s2 = net.components.sigma2[:, coord]
    # Substitution t = center + scale * u. Matching the scale to the widest
    # component keeps every mixture term a (sub-)Gaussian in u; the second
    # term of the max keeps far-flung component means inside the node span.
    center = float(mu.min() + mu.max()) / 2.0
    scale = np.sqrt(2.0) * float(max(np.sqrt(np.max(s2)), (mu.max() - center) / 4.0, 1e-3))
    total = np.zeros(net.n_classes)
    mask = x.mask.copy()
    mask[patch, coord] = True
    for t, w in zip(nodes, weights):
        vals = np.array(x.values, dtype=np.float64)
        vals[patch, coord] = center + scale * t
        ll = dense_forward(net, MaskedInstance(vals, mask))
        total += np.exp(np.log(w) + ll + t * t) * scale
    return total


def enumerate_complete_mass(net: Network) -> np.ndarray:
    """Categorical only: sum exp(dense_forward) over every complete input.
    Should be 1 per class for a proper model."""
    if net.components.kind != CATEGORICAL:
        raise ValueError("total-mass enumeration needs a finite alphabet")
    v = net.components.alphabet
    n, s = net.n_positions, net.patch_dim
    total = np.zeros(net.n_classes)
    full_mask = np.ones((n, s), dtype=bool)
    for combo in itertools.product(range(v), repeat=n * s):
        vals = np.array(combo, dtype=np.int64).reshape(n, s)
        total += np.exp(dense_forward(net, MaskedInstance(vals, full_mask)))
    return total


def exact_neuron_descent(net: Network, level: int, position: int, channel: int):
    """Exhaustive counterpart of the greedy neuron visualization: maximize the
    product of kernel weights over all latent assignments in the subtree,
    then emit component modes. Returns (leaf patch ids, values)."""
    ht = net.stack()
    w = ht.arity

    def best(level_, pos, chan):
        # Returns (log weight, {leaf slot: component}) of the best assignment
        # of the subtree hanging below kernel (level_, pos, chan). Level
        # n_levels addresses the per-class top vectors.
        if level_ == ht.n_levels:
            kern = ht.class_weights[chan]
        else:
            kern = ht.levels[level_][ht.group_of(level_, pos), chan]
        best_score, best_assign = -np.inf, None
        for alpha in range(kern.shape[0]):
            score = kern[alpha]
            assign = {}
            if level_ == 0:
                assign[pos] = alpha
            else:
                for t in range(w):
                    child = w * pos + t
                    sub_score, sub_assign = best(level_ - 1, child, alpha)
                    score = score + sub_score
                    assign.update(sub_assign)
            if score > best_score:
                best_score, best_assign = score, assign
        return best_score, best_assign

    _, assign = best(level, position, channel)
    order = net.leaf_order()
    leaves = sorted(assign)
    patch_ids = [int(order[slot]) for slot in leaves]
    values = np.stack([component_mode(net.components, assign[slot]) for slot in leaves])
    return patch_ids, values


def finite_joint_posterior(joint: np.ndarray):
    """Helpers over explicit finite joints P[x1, ..., xs, y] (last axis = label)."""
    return joint / joint.sum()


def marginalized_bayes_finite(joint: np.ndarray, x_obs, mask) -> int:
    """argmax_y P(Y=y | observed coordinates), ties to the smallest label.

    ``joint`` has one axis per coordinate plus a trailing label axis.
    """
    sel = tuple(int(v) if m else slice(None) for v, m in zip(x_obs, mask))
    marg = joint[sel]
    while marg.ndim > 1:
        marg = marg.sum(axis=0)
    return int(np.argmax(marg))


def optimal_rule_finite(joint: np.ndarray, q_mask_prob, x_obs, mask) -> int:
    """Claim-style general rule: argmax_y P(Y=y|o) * P(M=m|o, Y=y) on a finite
    joint with an explicit missingness distribution.

    ``q_mask_prob(mask, x)`` returns Q(M=mask | X=x) for complete inputs x.
    """
    coords = joint.shape[:-1]
    n_classes = joint.shape[-1]
    scores = np.zeros(n_classes)
    mass = np.zeros(n_classes)
    for x_full in itertools.product(*(range(d) for d in coords)):
        if any(m and x_full[i] != int(x_obs[i]) for i, m in enumerate(mask)):
            continue
        for y in range(n_classes):
            p = joint[x_full + (y,)]
            mass[y] += p
            scores[y] += p * q_mask_prob(mask, x_full)
    # scores[y] = P(o, Y=y, M=m); argmax over y of P(Y|o) P(M|o, Y) shares it.
    return int(np.argmax(scores))


def expected_accuracy_finite(joint: np.ndarray, mask_dist, predictor) -> float:
    """Exhaustive 0-1 accuracy of ``predictor(x_obs, mask)`` under a finite
    joint and a mask distribution ``mask_dist(x) -> [(mask, prob), ...]``."""
    joint = finite_joint_posterior(joint)
    coords = joint.shape[:-1]
    n_classes = joint.shape[-1]
    acc = 0.0
    for x_full in itertools.product(*(range(d) for d in coords)):
        for y in range(n_classes):
            p = joint[x_full + (y,)]
            if p == 0.0:
                continue
            for mask, q in mask_dist(x_full):
                if q == 0.0:
                    continue
                pred = predictor(x_full, mask)
                if pred == y:
                    acc += p * q
    return acc
