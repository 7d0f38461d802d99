"""Binning conventions: boundaries, hard assignment, soft kernels, pairs."""

import numpy as np
import pytest

from segcalib.binning import (
    BinningConfig,
    Kernel,
    bin_boundaries,
    hard_bin_index,
    membership_hard,
    membership_soft,
    membership_soft_derivative,
    soft_bin_pairs,
)

from oracles import (
    hard_weight_scalar,
    soft_derivative_scalar,
    soft_weight_scalar,
)


def test_config_validation():
    with pytest.raises(ValueError):
        BinningConfig(0)
    with pytest.raises(ValueError):
        BinningConfig(-3)
    with pytest.raises(ValueError):
        BinningConfig(2.5)
    cfg = BinningConfig(20, "soft")
    assert cfg.kernel is Kernel.SOFT
    assert cfg.num_bins == 20


def test_boundaries_and_centres():
    cfg = BinningConfig(4)
    np.testing.assert_array_equal(bin_boundaries(cfg), [0.0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(cfg.centres, [0.125, 0.375, 0.625, 0.875])
    one = BinningConfig(1)
    np.testing.assert_array_equal(one.boundaries, [0.0, 1.0])
    np.testing.assert_array_equal(one.centres, [0.5])


def test_hard_index_edges():
    # Half-open bins, last bin closed: boundary values belong to the upper bin.
    x = np.array([0.0, 0.2499, 0.25, 0.5, 0.74, 0.75, 0.999, 1.0])
    np.testing.assert_array_equal(hard_bin_index(x, 4), [0, 0, 1, 2, 2, 3, 3, 3])
    np.testing.assert_array_equal(hard_bin_index(x, 1), np.zeros(8, dtype=int))


def test_hard_index_rejects_out_of_range():
    with pytest.raises(ValueError):
        hard_bin_index(np.array([1.2]), 4)
    with pytest.raises(ValueError):
        hard_bin_index(np.array([-0.1]), 4)


def test_hard_index_matches_scalar_oracle():
    rng = np.random.default_rng(11)
    for m in (1, 2, 5, 20):
        x = np.concatenate([rng.random(500), bin_boundaries(BinningConfig(m))])
        idx = hard_bin_index(x, m)
        for xi, ji in zip(x, idx):
            expect = [hard_weight_scalar(float(xi), j, m) for j in range(m)]
            assert expect[ji] == 1.0
            assert sum(expect) == 1.0


def test_membership_hard_matches_index():
    rng = np.random.default_rng(5)
    x = rng.random(300)
    for m in range(5):
        w = membership_hard(x, m, 5)
        np.testing.assert_array_equal(w, (hard_bin_index(x, 5) == m).astype(float))


def test_soft_membership_matches_scalar_oracle():
    rng = np.random.default_rng(7)
    for m in (1, 2, 5, 20):
        cfg = BinningConfig(m, Kernel.SOFT)
        x = np.concatenate([rng.random(400), cfg.centres, cfg.boundaries])
        for j in range(m):
            got = membership_soft(x, j, m)
            expect = np.array([soft_weight_scalar(float(v), j, m) for v in x])
            np.testing.assert_allclose(got, expect, atol=1e-15)


def test_soft_membership_key_values():
    # Peak 1 at the centre, 0.5 on the bin edges, 0 at adjacent centres.
    m = 4
    assert membership_soft(0.375, 1, m) == 1.0
    assert membership_soft(0.25, 1, m) == pytest.approx(0.5)
    assert membership_soft(0.5, 1, m) == pytest.approx(0.5)
    assert membership_soft(0.125, 1, m) == pytest.approx(0.0, abs=1e-15)
    assert membership_soft(0.625, 1, m) == pytest.approx(0.0, abs=1e-15)
    # Clamp regions: weight 1 below the first centre / above the last.
    assert membership_soft(0.05, 0, m) == 1.0
    assert membership_soft(0.0, 0, m) == 1.0
    assert membership_soft(0.95, 3, m) == 1.0
    assert membership_soft(1.0, 3, m) == 1.0


def test_soft_partition_of_unity_fine_grid():
    x = np.linspace(0.0, 1.0, 10_000)
    for m in (5, 10, 20, 50, 100):
        total = sum(membership_soft(x, j, m) for j in range(m))
        assert np.max(np.abs(total - 1.0)) < 1e-12


def test_soft_derivative_matches_scalar_oracle():
    rng = np.random.default_rng(13)
    for m in (1, 2, 5, 20):
        cfg = BinningConfig(m, Kernel.SOFT)
        x = np.concatenate([rng.random(400), cfg.centres, cfg.boundaries])
        for j in range(m):
            got = membership_soft_derivative(x, j, m)
            expect = np.array([soft_derivative_scalar(float(v), j, m) for v in x])
            np.testing.assert_array_equal(got, expect)


def test_soft_derivative_conventions():
    m = 4
    # Rising flank +M, falling flank -M, 0 at the peak and in clamp regions.
    assert membership_soft_derivative(0.3, 1, m) == 4.0
    assert membership_soft_derivative(0.45, 1, m) == -4.0
    assert membership_soft_derivative(0.375, 1, m) == 0.0
    assert membership_soft_derivative(0.05, 0, m) == 0.0
    assert membership_soft_derivative(0.95, 3, m) == 0.0
    # First bin has no rising flank; last has no falling flank.
    assert membership_soft_derivative(0.2, 0, m) == -4.0
    assert membership_soft_derivative(0.8, 3, m) == 4.0


def _pair_columns(x, m):
    j_lo, j_hi, w_lo, w_hi, d_lo, d_hi = soft_bin_pairs(x, m)
    dense_w = np.zeros((x.size, m))
    dense_d = np.zeros((x.size, m))
    rows = np.arange(x.size)
    np.add.at(dense_w, (rows, j_lo), w_lo)
    np.add.at(dense_w, (rows, j_hi), w_hi)
    np.add.at(dense_d, (rows, j_lo), d_lo)
    np.add.at(dense_d, (rows, j_hi), d_hi)
    return dense_w, dense_d


def test_soft_pair_weights_match_dense_membership():
    # Weight columns agree with the dense kernel everywhere, including probes
    # one ulp off the bin centres.
    rng = np.random.default_rng(17)
    for m in (1, 2, 3, 5, 20, 100):
        cfg = BinningConfig(m, Kernel.SOFT)
        x = np.concatenate(
            [rng.random(2000), cfg.centres, cfg.boundaries,
             np.nextafter(cfg.centres, -1.0), np.nextafter(cfg.centres, 2.0)]
        )
        dense_w, _ = _pair_columns(x, m)
        for j in range(m):
            np.testing.assert_allclose(
                dense_w[:, j], membership_soft(x, j, m), atol=1e-12
            )


def test_soft_pair_derivatives_match_dense_membership():
    # Derivative columns agree away from the kinks; exactly at centres and
    # boundaries the shared kink convention (derivative 0) also agrees.  A
    # probe one ulp off a centre is excluded: the vanishing-weight neighbour
    # bin then carries a full-size +/-M flank the two-bin pair omits.
    rng = np.random.default_rng(19)
    for m in (1, 2, 3, 5, 20, 100):
        cfg = BinningConfig(m, Kernel.SOFT)
        x = np.concatenate([rng.random(2000), cfg.centres, cfg.boundaries])
        _, dense_d = _pair_columns(x, m)
        for j in range(m):
            np.testing.assert_array_equal(
                dense_d[:, j], membership_soft_derivative(x, j, m)
            )


def test_soft_pairs_weights_sum_to_one():
    rng = np.random.default_rng(23)
    for m in (1, 2, 5, 20, 100):
        x = rng.random(5000)
        _, _, w_lo, w_hi, _, _ = soft_bin_pairs(x, m)
        np.testing.assert_allclose(w_lo + w_hi, 1.0, atol=1e-12)


def test_bin_index_out_of_range_rejected():
    with pytest.raises(ValueError):
        membership_soft(0.5, 5, 5)
    with pytest.raises(ValueError):
        membership_hard(0.5, -1, 5)
