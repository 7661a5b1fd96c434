"""Objective, exact reverse-mode gradients, optimizers, and the training loop.

The objective is the joint negative log-likelihood split into a softmax
(discriminative) term and a generative term weighted by ``beta``, plus a
log-space weight decay ``lam * sum(exp(offset)^2)`` over all MEX offsets:

    -(1/B) sum_i [N(X_i; Y_i) - logsumexp_y N(X_i; y)]
    -(beta/B) sum_i logsumexp_y N(X_i; y)
    + lam * sum exp(2 * offset)

Gradients are taken with respect to the raw log-space offsets (treating them
as free parameters); the optimizer renormalizes every weight vector back to
the simplex after each step, projected-gradient style. Gaussian variances
stay proper through their softplus parameterization, so no reflooring is
needed beyond the step itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .components import CATEGORICAL, GAUSSIAN, density_param_grads
from .factorization import CPParams, normalize_to_simplex
from .logspace import logsumexp, softmax_from_log
from .network import Network, forward_batch, sample_marginalization_schedule

DIVERGENCE_PATIENCE = 10


class NonFiniteLossError(Exception):
    """Loss evaluated to nan/inf; gradients are undefined."""


class TrainingDiverged(Exception):
    """Loss stayed non-finite for DIVERGENCE_PATIENCE consecutive iterations."""


@dataclass
class LearningRateSchedule:
    base: float = 0.03
    milestones: tuple = ()
    factors: tuple = ()

    def __post_init__(self):
        # base 0 is allowed so a frozen run can serve as a no-op control
        if self.base < 0:
            raise ValueError("learning rate must not be negative")
        if len(self.milestones) != len(self.factors):
            raise ValueError("milestones and factors must pair up")

    def at(self, iteration: int) -> float:
        lr = self.base
        for m, f in zip(self.milestones, self.factors):
            if iteration >= m:
                lr *= f
        return lr


@dataclass
class TrainConfig:
    beta: float = 0.01
    weight_decay: float = 0.0
    learning_rate: LearningRateSchedule = field(default_factory=LearningRateSchedule)
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.9
    adam_eps: float = 1e-8
    momentum: float = 0.9
    batch_size: int = 32
    iterations: int = 1000
    marginalization_rates: tuple = ()
    seed: int = 0
    checkpoint_interval: int = 0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class LossTerms:
    total: float
    discriminative: float
    generative: float
    regularizer: float


def offset_arrays(net: Network) -> dict:
    """Name -> mutable log-space offset array (the MEX weights)."""
    out = {"class_weights": net.params.class_weights}
    if isinstance(net.params, CPParams):
        out["levels.0"] = net.params.factors
    else:
        for l, arr in enumerate(net.params.levels):
            out[f"levels.{l}"] = arr
    return out


def component_arrays(net: Network) -> dict:
    fam = net.components
    if fam.kind == GAUSSIAN:
        return {"components.means": fam.means, "components.rho": fam.rho}
    return {"components.log_tables": fam.log_tables}


def parameter_arrays(net: Network) -> dict:
    out = offset_arrays(net)
    out.update(component_arrays(net))
    return out


@dataclass
class GradientTape:
    """Per-parameter gradient accumulators, keyed and shaped like the network."""

    grads: dict

    @classmethod
    def zeros_like(cls, net: Network) -> "GradientTape":
        return cls({k: np.zeros_like(v) for k, v in parameter_arrays(net).items()})

    def check_shapes(self, net: Network):
        arrays = parameter_arrays(net)
        if set(arrays) != set(self.grads):
            raise ValueError("tape keys do not match network parameters")
        for k, g in self.grads.items():
            if g.shape != arrays[k].shape:
                raise ValueError(f"tape entry {k} has shape {g.shape}, expected {arrays[k].shape}")


def _regularizer(net: Network, lam: float):
    if lam == 0.0:
        return 0.0
    total = 0.0
    for arr in offset_arrays(net).values():
        total += float(np.sum(np.exp(2.0 * arr)))
    return lam * total


def loss(net: Network, values, mask, labels, cfg: TrainConfig, schedule=None) -> LossTerms:
    """Objective terms on a batch. ``labels`` are class indices in [0, K)."""
    values = np.asarray(values)
    labels = np.asarray(labels, dtype=np.int64)
    if values.ndim != 3 or values.shape[0] == 0:
        raise ValueError("batch must be a non-empty (B, N, s) array")
    if np.any(labels < 0) or np.any(labels >= net.n_classes):
        raise ValueError("label out of range")
    b = values.shape[0]
    outputs = forward_batch(net, values, mask, schedule=schedule)
    lse = logsumexp(outputs, axis=1)
    lse = np.atleast_1d(lse)
    picked = outputs[np.arange(b), labels]
    disc = -float(np.mean(picked - lse))
    gen = -cfg.beta * float(np.mean(lse))
    reg = _regularizer(net, cfg.weight_decay)
    return LossTerms(disc + gen + reg, disc, gen, reg)


def backward(net: Network, values, mask, labels, cfg: TrainConfig, schedule=None):
    """Exact gradients of the objective. Returns (GradientTape, LossTerms)."""
    values = np.asarray(values)
    labels = np.asarray(labels, dtype=np.int64)
    if values.ndim != 3 or values.shape[0] == 0:
        raise ValueError("batch must be a non-empty (B, N, s) array")
    b = values.shape[0]
    ht = net.stack()
    outputs, cache = forward_batch(net, values, mask, schedule=schedule, keep_cache=True)
    lse = np.atleast_1d(logsumexp(outputs, axis=1))
    picked = outputs[np.arange(b), labels]
    disc = -float(np.mean(picked - lse))
    gen = -cfg.beta * float(np.mean(lse))
    reg = _regularizer(net, cfg.weight_decay)
    terms = LossTerms(disc + gen + reg, disc, gen, reg)
    if not np.isfinite(terms.total):
        raise NonFiniteLossError(f"loss is {terms.total}")

    tape = GradientTape.zeros_like(net)
    p = softmax_from_log(outputs, axis=1)                      # (B, K)
    onehot = np.zeros_like(p)
    onehot[np.arange(b), labels] = 1.0
    d_out = ((1.0 - cfg.beta) * p - onehot) / b                # (B, K)

    # Top MEX: out[b, y] = LSE_a(cw[y, a] + top[b, a])
    cw = ht.class_weights
    with np.errstate(invalid="ignore"):
        s = np.exp(cw[None, :, :] + cache.top_input[:, None, :] - outputs[:, :, None])
    s = np.where(np.isfinite(s), s, 0.0)                       # (B, K, A)
    tape.grads["class_weights"] += np.einsum("by,bya->ya", d_out, s)
    d_act = np.einsum("by,bya->ba", d_out, s)[:, None, :]      # (B, 1, A)

    for l in range(ht.n_levels - 1, -1, -1):
        d_mex_out = np.repeat(d_act, ht.arity, axis=1)         # undo product pool
        in_l = cache.mex_inputs[l]
        out_l = cache.mex_outputs[l]
        groups = np.array([ht.group_of(l, j) for j in range(ht.positions_at(l))])
        off = ht.levels[l][groups]                             # (J, C, A)
        with np.errstate(invalid="ignore"):
            s = np.exp(off[None] + in_l[:, :, None, :] - out_l[:, :, :, None])
        s = np.where(np.isfinite(s), s, 0.0)                   # (B, J, C, A)
        contrib = np.einsum("bjc,bjca->jca", d_mex_out, s)
        np.add.at(tape.grads[f"levels.{l}"], groups, contrib)
        d_act = np.einsum("bjc,bjca->bja", d_mex_out, s)
        if schedule is not None and schedule[l] is not None:
            d_act = np.where(schedule[l][:, :, None], 0.0, d_act)

    order = net.leaf_order()
    d_rep = np.empty_like(d_act)
    d_rep[:, order, :] = d_act
    for key, grad in density_param_grads(net.components, values, np.asarray(mask, dtype=bool), d_rep).items():
        tape.grads[f"components.{key}"] += grad

    if cfg.weight_decay > 0.0:
        for name in offset_arrays(net):
            arr = parameter_arrays(net)[name]
            tape.grads[name] += 2.0 * cfg.weight_decay * np.exp(2.0 * arr)
    return tape, terms


@dataclass
class OptimizerState:
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)
    velocity: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls, net: Network) -> "OptimizerState":
        arrays = parameter_arrays(net)
        return cls(
            step_count=0,
            first_moment={k: np.zeros_like(v) for k, v in arrays.items()},
            second_moment={k: np.zeros_like(v) for k, v in arrays.items()},
            velocity={k: np.zeros_like(v) for k, v in arrays.items()},
        )


def step(net: Network, tape: GradientTape, state: OptimizerState, cfg: TrainConfig, lr: float):
    """Apply one optimizer update in place, then renormalize weight vectors."""
    tape.check_shapes(net)
    state.step_count += 1
    t = state.step_count
    arrays = parameter_arrays(net)
    for name, arr in arrays.items():
        g = tape.grads[name]
        if cfg.optimizer == "adam":
            m = state.first_moment[name]
            v = state.second_moment[name]
            m *= cfg.adam_beta1
            m += (1.0 - cfg.adam_beta1) * g
            v *= cfg.adam_beta2
            v += (1.0 - cfg.adam_beta2) * g * g
            m_hat = m / (1.0 - cfg.adam_beta1 ** t)
            v_hat = v / (1.0 - cfg.adam_beta2 ** t)
            update = lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        else:
            vel = state.velocity[name]
            vel *= cfg.momentum
            vel += g
            update = lr * vel
        arr -= update
    _renormalize(net)


def _renormalize(net: Network):
    for arr in offset_arrays(net).values():
        arr[...] = normalize_to_simplex(arr)
    if net.components.kind == CATEGORICAL:
        net.components.log_tables[...] = normalize_to_simplex(net.components.log_tables)


@dataclass
class Dataset:
    """Training data: values (n, N, s), optional mask, labels (n,)."""

    values: np.ndarray
    labels: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.mask is None:
            self.mask = np.ones(self.values.shape, dtype=bool)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
        if len(self.values) != len(self.labels) or self.mask.shape != self.values.shape:
            raise ValueError("values, mask and labels must agree on length")

    def __len__(self):
        return len(self.values)


def train(net: Network, dataset: Dataset, cfg: TrainConfig, on_checkpoint=None):
    """SGD loop. Returns the loss trace as a list of
    (iteration, total, discriminative, generative) rows; mutates ``net``.

    Deterministic given ``cfg.seed``. Random-marginalization layers are
    active here and only here.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    state = OptimizerState.fresh(net)
    trace = []
    bad_streak = 0
    for it in range(cfg.iterations):
        idx = rng.choice(len(dataset), size=min(cfg.batch_size, len(dataset)), replace=False)
        values = dataset.values[idx]
        mask = dataset.mask[idx]
        labels = dataset.labels[idx]
        schedule = None
        if any(r for r in cfg.marginalization_rates):
            schedule = sample_marginalization_schedule(net, cfg.marginalization_rates, len(idx), rng)
        try:
            tape, terms = backward(net, values, mask, labels, cfg, schedule=schedule)
        except NonFiniteLossError:
            bad_streak += 1
            if bad_streak >= DIVERGENCE_PATIENCE:
                raise TrainingDiverged(
                    f"loss non-finite for {DIVERGENCE_PATIENCE} consecutive iterations"
                )
            trace.append((it, float("nan"), float("nan"), float("nan")))
            continue
        bad_streak = 0
        step(net, tape, state, cfg, cfg.learning_rate.at(it))
        trace.append((it, terms.total, terms.discriminative, terms.generative))
        if on_checkpoint is not None and cfg.checkpoint_interval > 0:
            if (it + 1) % cfg.checkpoint_interval == 0:
                on_checkpoint(it + 1, net)
    return trace
