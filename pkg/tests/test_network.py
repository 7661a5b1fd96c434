import itertools

import numpy as np
import pytest

from tmmkit.components import CATEGORICAL, GAUSSIAN, categorical_family, random_family
from tmmkit.factorization import random_cp, random_ht
from tmmkit.instances import MaskedInstance, all_missing, complete
from tmmkit.logspace import logsumexp
from tmmkit.network import (
    Network,
    forward,
    forward_batch,
    mex,
    morton_order,
    product_pool,
    representation,
    sample_marginalization_schedule,
)
from tmmkit.oracle import dense_forward, enumerate_complete_mass, enumerate_masked_likelihood


def small_ht_net(rng, components=CATEGORICAL, n=4, m=2, k=2):
    fam = random_family(components, m, 2, rng, alphabet=3)
    arity = 2 if n in (2, 8) else int(rng.choice([2, 4]))
    levels = int(round(np.log(n) / np.log(arity)))
    params = random_ht(arity, [2] * levels, m, k, rng)
    return Network(fam, params)


def test_representation_all_missing_is_zero():
    rng = np.random.default_rng(0)
    net = small_ht_net(rng)
    rep = representation(net, all_missing(4, 2, integer=True))
    np.testing.assert_array_equal(rep, np.zeros((4, 2)))


def test_representation_delegates_when_complete():
    from tmmkit.components import log_density

    rng = np.random.default_rng(1)
    net = small_ht_net(rng, components=GAUSSIAN)
    x = complete(rng.normal(size=(4, 2)))
    rep = representation(net, x)
    for i in range(4):
        for d in range(2):
            assert rep[i, d] == pytest.approx(
                log_density(net.components, d, x.values[i], [True, True]), abs=1e-12
            )


def test_representation_half_missing_matches_enumeration():
    rng = np.random.default_rng(2)
    fam = random_family(CATEGORICAL, 3, 2, rng, alphabet=3)
    x = MaskedInstance(np.array([[1, 0]]), np.array([[True, False]]))
    from tmmkit.components import log_density_matrix

    rep = log_density_matrix(fam, x.values, x.mask)
    full = np.stack([
        log_density_matrix(fam, np.array([[1, v]]), np.ones((1, 2), dtype=bool))[0]
        for v in range(3)
    ])
    np.testing.assert_allclose(np.exp(rep[0]), np.exp(full).sum(axis=0), atol=1e-12)


def test_representation_shape_mismatch():
    rng = np.random.default_rng(3)
    net = small_ht_net(rng)
    with pytest.raises(ValueError):
        representation(net, all_missing(5, 2, integer=True))


def test_mex_uniform_offsets_pass_constants():
    offsets = np.full((1, 2, 3), -np.log(3.0))
    act = np.full((1, 4, 3), 1.7)
    out = mex(act, offsets, np.zeros(4, dtype=int))
    np.testing.assert_allclose(out, 1.7, atol=1e-12)


def test_mex_one_hot_selects_channel():
    with np.errstate(divide="ignore"):
        offsets = np.log(np.array([[[1.0, 0.0, 0.0]]]))
    act = np.array([[[5.0, -2.0, 9.0]]])
    out = mex(act, offsets, np.zeros(1, dtype=int))
    assert out[0, 0, 0] == pytest.approx(5.0, abs=1e-12)


def test_mex_matches_linear_space():
    rng = np.random.default_rng(4)
    w = rng.dirichlet(np.ones(3))
    act = rng.normal(size=(2, 1, 3))
    out = mex(act, np.log(w)[None, None, :], np.zeros(1, dtype=int))
    expected = np.log(np.sum(w * np.exp(act), axis=2))
    np.testing.assert_allclose(out[:, :, 0], expected, atol=1e-12)


def test_product_pool():
    act = np.zeros((1, 4, 2))
    np.testing.assert_array_equal(product_pool(act, 4), np.zeros((1, 1, 2)))
    act = np.array([[[1.0], [2.0], [3.0]]])
    np.testing.assert_array_equal(product_pool(act, 1), act)
    quarters = np.full((1, 4, 1), np.log(0.5))
    out = product_pool(quarters, 4)
    assert out[0, 0, 0] == pytest.approx(np.log(0.0625), abs=1e-12)
    with pytest.raises(ValueError):
        product_pool(np.zeros((1, 3, 2)), 2)


def test_forward_matches_dense_oracle_ht_categorical():
    rng = np.random.default_rng(5)
    for _ in range(5):
        net = small_ht_net(rng, components=CATEGORICAL, n=4, m=2)
        vals = rng.integers(0, 3, size=(4, 2))
        mask = rng.random((4, 2)) < 0.6
        x = MaskedInstance(vals, mask)
        fast, slow = forward(net, x), dense_forward(net, x)
        np.testing.assert_allclose(np.exp(fast), np.exp(slow), rtol=1e-9)


def test_forward_all_missing_is_zero():
    rng = np.random.default_rng(6)
    net = small_ht_net(rng)
    out = forward(net, all_missing(4, 2, integer=True))
    np.testing.assert_allclose(out, 0.0, atol=1e-9)


def test_forward_matches_gmm_formula():
    from tmmkit.components import gaussian_family
    from tmmkit.factorization import gmm_sparse_cp

    rng = np.random.default_rng(7)
    k, n, s = 3, 2, 2
    w = rng.dirichlet(np.ones(k))
    means = rng.normal(size=(k, n, s))
    sigma2 = rng.uniform(0.4, 1.5, size=(k, n, s))
    fam = gaussian_family(means.reshape(k * n, s), sigma2.reshape(k * n, s))
    net = Network(fam, gmm_sparse_cp(np.log(w), n, k))
    x = rng.normal(size=(n, s))
    comp = [
        np.log(w[j])
        + np.sum(-0.5 * ((x - means[j]) ** 2 / sigma2[j] + np.log(2 * np.pi * sigma2[j])))
        for j in range(k)
    ]
    expected = logsumexp(np.array(comp))
    assert forward(net, complete(x))[0] == pytest.approx(expected, abs=1e-9)


def test_total_probability_mass_is_one():
    rng = np.random.default_rng(8)
    fam = random_family(CATEGORICAL, 2, 1, rng, alphabet=2)
    params = random_ht(2, [2, 2], 2, 2, rng)
    net = Network(fam, params)
    mass = enumerate_complete_mass(net)
    np.testing.assert_allclose(mass, 1.0, atol=1e-6)


def test_masked_forward_equals_completion_sum():
    rng = np.random.default_rng(9)
    fam = random_family(CATEGORICAL, 2, 2, rng, alphabet=2)
    net = Network(fam, random_ht(2, [2, 2], 2, 2, rng))
    vals = rng.integers(0, 2, size=(4, 2))
    mask = rng.random((4, 2)) < 0.5
    x = MaskedInstance(vals, mask)
    np.testing.assert_allclose(
        np.exp(forward(net, x)), enumerate_masked_likelihood(net, x), rtol=1e-9
    )


def test_activation_norm_toggle_is_noop():
    rng = np.random.default_rng(10)
    net = small_ht_net(rng, components=GAUSSIAN, n=4)
    vals = rng.normal(size=(3, 4, 2))
    mask = rng.random((3, 4, 2)) < 0.7
    on = forward_batch(net, vals, mask, normalize_activations=True)
    off = forward_batch(net, vals, mask, normalize_activations=False)
    np.testing.assert_allclose(on, off, atol=1e-12)


def test_morton_order_quadrants():
    order = morton_order(2, 2, 4, 1)
    np.testing.assert_array_equal(order, [0, 1, 2, 3])
    order = morton_order(4, 4, 4, 2)
    # first window = top-left 2x2 block in row-major pixel ids
    assert set(order[:4]) == {0, 1, 4, 5}
    assert sorted(order) == list(range(16))


def test_grid_forward_matches_dense_oracle():
    rng = np.random.default_rng(11)
    fam = random_family(GAUSSIAN, 2, 2, rng)
    params = random_ht(4, [2, 2], 2, 2, rng, sharing=["window", "none"])
    net = Network(fam, params, grid_shape=(4, 4))
    vals = rng.normal(size=(16, 2))
    mask = rng.random((16, 2)) < 0.5
    x = MaskedInstance(vals, mask)
    np.testing.assert_allclose(
        np.exp(forward(net, x)), np.exp(dense_forward(net, x)), rtol=1e-9
    )


def test_random_marginalization_schedule():
    rng = np.random.default_rng(12)
    net = small_ht_net(rng, n=4)
    # rate 0 -> identity
    sched = sample_marginalization_schedule(net, [0.0, 0.0], 8, rng)
    assert sched == [None, None]
    vals = rng.integers(0, 3, size=(2, 4, 2))
    mask = np.ones((2, 4, 2), dtype=bool)
    base = forward_batch(net, vals, mask)
    np.testing.assert_array_equal(forward_batch(net, vals, mask, schedule=sched), base)
    # all-zeroed level-0 schedule == fully marginalized input
    full = [np.ones((2, 4), dtype=bool), None]
    out = forward_batch(net, vals, mask, schedule=full)
    np.testing.assert_allclose(out, 0.0, atol=1e-9)
    # empirical zeroing rate within 3 sigma of the binomial
    rate = 0.3
    draws = sample_marginalization_schedule(net, [rate, 0.0], 2500, rng)[0]
    n = draws.size
    assert abs(draws.mean() - rate) < 3 * np.sqrt(rate * (1 - rate) / n)
    with pytest.raises(ValueError):
        sample_marginalization_schedule(net, [1.0], 2, rng)


def test_unobserved_values_never_read():
    rng = np.random.default_rng(13)
    net = small_ht_net(rng, components=GAUSSIAN)
    vals = rng.normal(size=(4, 2))
    mask = np.array([[True, False]] * 4)
    a = forward(net, MaskedInstance(vals, mask))
    poisoned = vals.copy()
    poisoned[~mask] = 1e12
    b = forward(net, MaskedInstance(poisoned, mask))
    np.testing.assert_array_equal(a, b)


def test_cp_and_ht_oracle_equivalence_shared_variants():
    rng = np.random.default_rng(14)
    fam = random_family(CATEGORICAL, 2, 1, rng, alphabet=2)
    for sharing in (["none", "none"], ["window", "all"], ["all", "all"]):
        net = Network(fam, random_ht(2, [2, 2], 2, 2, rng, sharing=sharing))
        x = MaskedInstance(
            rng.integers(0, 2, size=(4, 1)), rng.random((4, 1)) < 0.5
        )
        np.testing.assert_allclose(
            np.exp(forward(net, x)), np.exp(dense_forward(net, x)), rtol=1e-9
        )
    cp_net = Network(fam, random_cp(4, 2, 3, 2, rng))
    x = MaskedInstance(rng.integers(0, 2, size=(4, 1)), rng.random((4, 1)) < 0.5)
    np.testing.assert_allclose(
        np.exp(forward(cp_net, x)), np.exp(dense_forward(cp_net, x)), rtol=1e-9
    )
