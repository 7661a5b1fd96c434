import numpy as np
import pytest

from tmmkit.components import CATEGORICAL, GAUSSIAN, categorical_family, gaussian_family, random_family
from tmmkit.factorization import CPParams, random_cp, random_ht
from tmmkit.instances import complete
from tmmkit.logspace import logsumexp
from tmmkit.network import Network, forward
from tmmkit.suites import gradient_probe_error
from tmmkit.training import (
    Dataset,
    GradientTape,
    LearningRateSchedule,
    OptimizerState,
    TrainConfig,
    TrainingDiverged,
    backward,
    loss,
    offset_arrays,
    parameter_arrays,
    step,
    train,
)


def pinned_output_net(densities=(1.0, 3.0)):
    """A 2-class net whose forward outputs are exactly log(densities).

    Two single-coordinate patches, two Gaussian components whose mode
    densities are sqrt(d0) and sqrt(d1); each class routes one-hot to one
    component at both positions, so output y = log(density_y) at x = 0.
    """
    s2 = [1.0 / (2 * np.pi * d) for d in densities]
    fam = gaussian_family(np.zeros((2, 1)), np.array([[s2[0]], [s2[1]]]))
    with np.errstate(divide="ignore"):
        cw = np.log(np.eye(2))
        factors = np.log(np.stack([np.eye(2), np.eye(2)]))  # (N=2, Z=2, M=2)
    return Network(fam, CPParams(cw, factors))


def small_net(rng, kind="ht", components=GAUSSIAN):
    fam = random_family(components, 2, 2, rng, alphabet=3)
    if kind == "ht":
        params = random_ht(2, [2, 2], 2, 2, rng)
    else:
        params = random_cp(4, 2, 3, 2, rng)
    return Network(fam, params)


def batch_for(net, rng, b=4, masked=True):
    if net.components.kind == GAUSSIAN:
        values = rng.normal(size=(b, net.n_positions, net.patch_dim))
    else:
        values = rng.integers(0, net.components.alphabet,
                              size=(b, net.n_positions, net.patch_dim))
    mask = rng.random(values.shape) < 0.7 if masked else np.ones(values.shape, bool)
    labels = rng.integers(0, net.n_classes, size=b)
    return values, mask, labels


def test_pinned_outputs():
    net = pinned_output_net((1.0, 3.0))
    out = forward(net, complete(np.zeros((2, 1))))
    np.testing.assert_allclose(out, [0.0, np.log(3.0)], atol=1e-9)


def test_cross_entropy_of_known_outputs():
    # outputs (0, log 3), true label = first class -> softmax loss log 4
    net = pinned_output_net((1.0, 3.0))
    cfg = TrainConfig(beta=0.0, weight_decay=0.0)
    terms = loss(net, np.zeros((1, 2, 1)), np.ones((1, 2, 1), bool), np.array([0]), cfg)
    assert terms.discriminative == pytest.approx(np.log(4.0), abs=1e-9)
    assert terms.generative == 0.0
    assert terms.total == pytest.approx(np.log(4.0), abs=1e-9)


def test_single_class_loss_is_generative_only():
    rng = np.random.default_rng(0)
    fam = random_family(GAUSSIAN, 2, 2, rng)
    net = Network(fam, random_cp(4, 2, 2, 1, rng))
    values, mask, _ = batch_for(net, rng)
    labels = np.zeros(len(values), dtype=np.int64)
    cfg = TrainConfig(beta=0.5, weight_decay=0.0)
    terms = loss(net, values, mask, labels, cfg)
    assert terms.discriminative == pytest.approx(0.0, abs=1e-12)
    from tmmkit.network import forward_batch

    lse = forward_batch(net, values, mask)[:, 0]
    assert terms.total == pytest.approx(-0.5 * lse.mean(), abs=1e-9)


def test_beta_zero_reduces_to_cross_entropy():
    rng = np.random.default_rng(1)
    net = small_net(rng)
    values, mask, labels = batch_for(net, rng)
    cfg = TrainConfig(beta=0.0, weight_decay=0.0)
    terms = loss(net, values, mask, labels, cfg)
    from tmmkit.network import forward_batch

    out = forward_batch(net, values, mask)
    ce = -np.mean(out[np.arange(len(labels)), labels] - logsumexp(out, axis=1))
    assert terms.total == pytest.approx(ce, abs=1e-12)
    assert terms.generative == 0.0


def test_empty_batch_rejected():
    rng = np.random.default_rng(2)
    net = small_net(rng)
    cfg = TrainConfig()
    with pytest.raises(ValueError):
        loss(net, np.zeros((0, 4, 2)), np.zeros((0, 4, 2), bool), np.zeros(0, int), cfg)


@pytest.mark.parametrize("kind", ["cp", "ht"])
@pytest.mark.parametrize("components", [GAUSSIAN, CATEGORICAL])
@pytest.mark.parametrize("masked", [False, True])
def test_gradients_match_finite_differences(kind, components, masked):
    rng = np.random.default_rng(3)
    net = small_net(rng, kind=kind, components=components)
    values, mask, labels = batch_for(net, rng, masked=masked)
    cfg = TrainConfig(beta=0.3, weight_decay=1e-3)
    worst = gradient_probe_error(net, values, mask, labels, cfg, rng, probes=25)
    assert worst < 1e-4


def test_regularizer_gradient_closed_form():
    rng = np.random.default_rng(4)
    net = small_net(rng)
    values, mask, labels = batch_for(net, rng)
    lam = 2e-3
    tape_reg, _ = backward(net, values, mask, labels, TrainConfig(beta=0.1, weight_decay=lam))
    tape_no, _ = backward(net, values, mask, labels, TrainConfig(beta=0.1, weight_decay=0.0))
    for name, arr in offset_arrays(net).items():
        diff = tape_reg.grads[name] - tape_no.grads[name]
        np.testing.assert_allclose(diff, 2 * lam * np.exp(2 * arr), atol=1e-12)


def test_saturated_softmax_has_vanishing_gradients():
    net = pinned_output_net((1.0, np.exp(60.0)))  # margin of 60 nats
    cfg = TrainConfig(beta=0.0, weight_decay=0.0)
    tape, _ = backward(net, np.zeros((1, 2, 1)), np.ones((1, 2, 1), bool),
                       np.array([1]), cfg)
    for g in tape.grads.values():
        assert np.max(np.abs(g)) < 1e-12


def test_backward_raises_on_nonfinite_loss():
    from tmmkit.training import NonFiniteLossError

    net = pinned_output_net()
    values = np.full((1, 2, 1), np.inf)
    with pytest.raises(NonFiniteLossError):
        backward(net, values, np.ones((1, 2, 1), bool), np.array([0]), TrainConfig())


def test_step_zero_gradient_is_identity():
    rng = np.random.default_rng(5)
    net = small_net(rng)
    before = {k: v.copy() for k, v in parameter_arrays(net).items()}
    tape = GradientTape.zeros_like(net)
    state = OptimizerState.fresh(net)
    step(net, tape, state, TrainConfig(), lr=0.05)
    after = parameter_arrays(net)
    for k in before:
        np.testing.assert_allclose(after[k], before[k], atol=1e-12)


def test_adam_first_step_unrolled_by_hand():
    # With g = 1 everywhere, bias-corrected moments give m_hat = 1 and
    # v_hat = 1, so the update is lr / (1 + eps). Checked on the Gaussian
    # means, which are not renormalized after the step.
    rng = np.random.default_rng(6)
    net = small_net(rng, components=GAUSSIAN)
    cfg = TrainConfig(optimizer="adam", adam_beta1=0.9, adam_beta2=0.9)
    lr = 0.03
    means_before = net.components.means.copy()
    tape = GradientTape.zeros_like(net)
    for g in tape.grads.values():
        g[...] = 1.0
    step(net, tape, OptimizerState.fresh(net), cfg, lr=lr)
    expected = lr * 1.0 / (np.sqrt(1.0) + cfg.adam_eps)
    np.testing.assert_allclose(means_before - net.components.means, expected, atol=1e-12)


def test_sgd_momentum_accumulates():
    rng = np.random.default_rng(7)
    net = small_net(rng, components=GAUSSIAN)
    cfg = TrainConfig(optimizer="sgd_momentum", momentum=0.9)
    tape = GradientTape.zeros_like(net)
    for g in tape.grads.values():
        g[...] = 1.0
    state = OptimizerState.fresh(net)
    m0 = net.components.means.copy()
    step(net, tape, state, cfg, lr=0.1)
    step(net, tape, state, cfg, lr=0.1)
    # velocity: 1 then 1.9 -> total displacement 0.29
    np.testing.assert_allclose(m0 - net.components.means, 0.1 * (1.0 + 1.9), atol=1e-12)


def test_post_step_simplex_invariant():
    rng = np.random.default_rng(8)
    net = small_net(rng, components=CATEGORICAL)
    values, mask, labels = batch_for(net, rng)
    cfg = TrainConfig(beta=0.2, weight_decay=1e-4)
    state = OptimizerState.fresh(net)
    for _ in range(5):
        tape, _ = backward(net, values, mask, labels, cfg)
        step(net, tape, state, cfg, lr=0.1)
        for arr in offset_arrays(net).values():
            assert np.max(np.abs(logsumexp(arr, axis=-1))) < 1e-9
        assert np.max(np.abs(logsumexp(net.components.log_tables, axis=-1))) < 1e-9


def test_tape_shape_mismatch_rejected():
    rng = np.random.default_rng(9)
    net = small_net(rng)
    tape = GradientTape.zeros_like(net)
    tape.grads["class_weights"] = np.zeros((5, 5))
    with pytest.raises(ValueError):
        step(net, tape, OptimizerState.fresh(net), TrainConfig(), lr=0.1)


def separable_dataset(rng, n=60):
    """Two classes over disjoint symbol pairs: trivially separable."""
    values = np.zeros((n, 4, 1), dtype=np.int64)
    labels = rng.integers(0, 2, size=n)
    values[labels == 0] = rng.integers(0, 2, size=(int((labels == 0).sum()), 4, 1))
    values[labels == 1] = rng.integers(2, 4, size=(int((labels == 1).sum()), 4, 1))
    return Dataset(values=values, labels=labels)


def make_categorical_net(rng, alphabet=4):
    fam = random_family(CATEGORICAL, 2, 1, rng, alphabet=alphabet)
    return Network(fam, random_ht(2, [2, 2], 2, 2, rng))


def test_zero_learning_rate_is_constant():
    rng = np.random.default_rng(10)
    net = make_categorical_net(rng)
    before = {k: v.copy() for k, v in parameter_arrays(net).items()}
    data = separable_dataset(rng)
    cfg = TrainConfig(iterations=10, batch_size=16, seed=1,
                      learning_rate=LearningRateSchedule(base=0.0))
    trace = train(net, data, cfg)
    losses = [t[1] for t in trace]
    assert max(losses) == pytest.approx(min(losses), abs=1e-12)
    for k, v in parameter_arrays(net).items():
        np.testing.assert_allclose(v, before[k], atol=1e-12)


def test_training_separable_dataset_to_perfect_accuracy():
    rng = np.random.default_rng(11)
    net = make_categorical_net(rng)
    data = separable_dataset(rng)
    cfg = TrainConfig(iterations=500, batch_size=16, beta=0.1, seed=2,
                      learning_rate=LearningRateSchedule(base=0.05, milestones=(300,), factors=(0.1,)))
    trace = train(net, data, cfg)
    from tmmkit.inference import predict_batch

    pred = predict_batch(net, data.values, data.mask)
    assert np.mean(pred == data.labels) == 1.0
    # under the decayed learning rate the smoothed trace settles
    losses = np.array([t[1] for t in trace])
    smooth = np.convolve(losses, np.ones(25) / 25, mode="valid")
    assert smooth[-1] <= smooth[len(smooth) // 2] + 1e-6
    assert smooth[-1] <= smooth[0]


def test_seed_determinism():
    rng_a = np.random.default_rng(12)
    rng_b = np.random.default_rng(12)
    net_a = make_categorical_net(rng_a)
    net_b = make_categorical_net(rng_b)
    data_a = separable_dataset(np.random.default_rng(13))
    data_b = separable_dataset(np.random.default_rng(13))
    cfg = TrainConfig(iterations=40, batch_size=8, seed=3, beta=0.05,
                      marginalization_rates=(0.2, 0.1))
    trace_a = train(net_a, data_a, cfg)
    trace_b = train(net_b, data_b, cfg)
    assert trace_a == trace_b  # bit-identical floats


def test_divergence_guard():
    net = pinned_output_net()
    values = np.full((6, 2, 1), np.inf)
    data = Dataset(values=values, labels=np.zeros(6, dtype=np.int64))
    cfg = TrainConfig(iterations=50, batch_size=4, seed=4)
    with pytest.raises(TrainingDiverged):
        train(net, data, cfg)


def test_training_with_missing_data():
    rng = np.random.default_rng(14)
    net = make_categorical_net(rng)
    data = separable_dataset(rng)
    masked = Dataset(values=data.values, labels=data.labels,
                     mask=rng.random(data.values.shape) < 0.7)
    cfg = TrainConfig(iterations=300, batch_size=16, beta=0.1, seed=5)
    train(net, masked, cfg)
    from tmmkit.inference import predict_batch

    pred = predict_batch(net, masked.values, masked.mask)
    assert np.mean(pred == masked.labels) > 0.9
