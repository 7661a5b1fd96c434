import numpy as np
import pytest

from tmmkit.factorization import (
    CPParams,
    HTParams,
    cp_to_ht,
    expand_cp,
    expand_ht,
    gmm_sparse_cp,
    gmm_sparse_prior,
    normalize_to_simplex,
    random_cp,
    random_ht,
)
from tmmkit.logspace import logsumexp
from tmmkit.tensor import CapacityError


def test_expand_cp_rank1_is_outer_product():
    rng = np.random.default_rng(0)
    p = random_cp(2, 3, 1, 1, rng)
    t = expand_cp(p, 0)
    outer = np.outer(np.exp(p.factors[0, 0]), np.exp(p.factors[1, 0]))
    np.testing.assert_allclose(t.entries, outer, atol=1e-12)


def test_expand_cp_sums_to_one():
    rng = np.random.default_rng(1)
    for _ in range(5):
        p = random_cp(3, 2, 4, 2, rng)
        for y in range(2):
            t = expand_cp(p, y)
            assert t.is_distribution
            assert abs(t.entries.sum() - 1.0) < 1e-9


def test_expand_cp_entry_by_hand():
    rng = np.random.default_rng(2)
    p = random_cp(3, 2, 2, 1, rng)
    t = expand_cp(p, 0)
    top = np.exp(p.class_weights[0])
    fac = np.exp(p.factors)
    # 1-indexed entry (1,2,1) -> 0-indexed (0,1,0)
    expected = sum(top[z] * fac[0, z, 0] * fac[1, z, 1] * fac[2, z, 0] for z in range(2))
    assert t.entries[0, 1, 0] == pytest.approx(expected, abs=1e-15)


def test_expand_ht_single_level_equals_cp():
    rng = np.random.default_rng(3)
    cp = random_cp(4, 2, 3, 2, rng)
    ht = cp_to_ht(cp)
    for y in range(2):
        np.testing.assert_allclose(
            expand_ht(ht, y).entries, expand_cp(cp, y).entries, atol=1e-12
        )


def test_expand_ht_sums_to_one():
    rng = np.random.default_rng(4)
    p = random_ht(2, [2, 3], 2, 2, rng)
    for y in range(2):
        t = expand_ht(p, y)
        assert t.is_distribution
        assert abs(t.entries.sum() - 1.0) < 1e-9


def test_expand_ht_against_straight_line_oracle():
    # N=4, arity 2, ranks (2, 2): unroll the recursion by hand.
    rng = np.random.default_rng(5)
    p = random_ht(2, [2, 2], 2, 1, rng)
    leaf = [np.exp(p.levels[0][j]) for j in range(4)]      # (r0, M) each
    kern1 = np.exp(p.levels[1])                            # (2, r1, r0)
    top = np.exp(p.class_weights[0])                       # (r1,)
    expected = np.zeros((2, 2, 2, 2))
    for g in range(2):          # top channel
        left = np.zeros((2, 2))
        right = np.zeros((2, 2))
        for a in range(2):      # level-1 draw for each child pair
            left += kern1[0, g, a] * np.outer(leaf[0][a], leaf[1][a])
            right += kern1[1, g, a] * np.outer(leaf[2][a], leaf[3][a])
        expected += top[g] * np.einsum("ab,cd->abcd", left, right)
    np.testing.assert_allclose(expand_ht(p, 0).entries, expected, atol=1e-12)


def test_window_and_full_sharing_tie_kernels():
    rng = np.random.default_rng(6)
    p = random_ht(2, [2, 2], 2, 1, rng, sharing=["window", "all"])
    assert p.levels[0].shape[0] == 2   # one kernel set per window slot
    assert p.levels[1].shape[0] == 1
    assert p.group_of(0, 0) == p.group_of(0, 2) == 0
    assert p.group_of(0, 1) == p.group_of(0, 3) == 1
    t = expand_ht(p, 0)
    assert abs(t.entries.sum() - 1.0) < 1e-9


def test_gmm_sparse_prior_structure():
    t = gmm_sparse_prior(np.array([1.0]), 3, 1)
    assert np.count_nonzero(t.entries) == 1
    assert t.entries[0, 1, 2] == 1.0

    t = gmm_sparse_prior(np.array([0.3, 0.7]), 2, 2)
    nz = {tuple(ix): v for ix, v in np.ndenumerate(t.entries) if v != 0}
    # 1-indexed assignments (1,2) and (3,4) -> 0-indexed (0,1), (2,3)
    assert nz == {(0, 1): 0.3, (2, 3): 0.7}
    assert abs(t.entries.sum() - 1.0) < 1e-12
    assert t.is_distribution


def test_gmm_sparse_cp_expands_to_sparse_prior():
    w = np.array([0.2, 0.5, 0.3])
    cp = gmm_sparse_cp(np.log(w), 2, 3)
    dense = gmm_sparse_prior(w, 2, 3)
    np.testing.assert_allclose(expand_cp(cp, 0).entries, dense.entries, atol=1e-12)


def test_normalize_to_simplex():
    out = normalize_to_simplex(np.array([0.0, 0.0]))
    np.testing.assert_allclose(out, [-np.log(2), -np.log(2)], atol=1e-15)

    again = normalize_to_simplex(out)
    np.testing.assert_allclose(again, out, atol=1e-12)

    raw = np.array([1.0, 2.0, 3.0])
    soft = np.exp(raw) / np.exp(raw).sum()
    np.testing.assert_allclose(np.exp(normalize_to_simplex(raw)), soft, atol=1e-12)

    with pytest.raises(ValueError):
        normalize_to_simplex(np.array([-np.inf, -np.inf]))


def test_simplex_validation_catches_corruption():
    rng = np.random.default_rng(7)
    p = random_ht(2, [2, 2], 2, 1, rng)
    p.validate()
    p.levels[0][0, 0, 0] += 0.5
    with pytest.raises(ValueError):
        p.validate()


def test_budget_overflow():
    rng = np.random.default_rng(8)
    with pytest.raises(CapacityError):
        expand_cp(random_cp(16, 3, 1, 1, rng), 0)


def test_non_power_arity_refused():
    rng = np.random.default_rng(9)
    with pytest.raises(ValueError):
        HTParams(
            arity=2,
            ranks=[2],
            n_components=2,
            levels=[rng.normal(size=(3, 2, 2))],  # 3 positions is not 2**1
            sharing=["none"],
            class_weights=np.zeros((1, 2)),
        )


def test_depth_efficiency_small_probe():
    from tmmkit.tensor import matricize, numeric_rank

    rng = np.random.default_rng(10)
    hits = 0
    for _ in range(25):
        p = random_ht(2, [2, 2], 2, 1, rng)
        hits += numeric_rank(matricize(expand_ht(p, 0))) == 4
    assert hits >= 24


def test_cp_rank_lower_bound_property():
    from tmmkit.tensor import matricize, numeric_rank

    rng = np.random.default_rng(11)
    for _ in range(10):
        z = int(rng.integers(1, 4))
        p = random_cp(4, 2, z, 1, rng)
        assert numeric_rank(matricize(expand_cp(p, 0))) <= z


def test_random_params_are_normalized():
    rng = np.random.default_rng(12)
    cp = random_cp(3, 2, 2, 2, rng)
    assert np.max(np.abs(logsumexp(cp.factors, axis=-1))) < 1e-9
    assert np.max(np.abs(logsumexp(cp.class_weights, axis=-1))) < 1e-9
    ht = random_ht(2, [2, 2], 3, 2, rng, sharing=["window", "none"])
    ht.validate()
