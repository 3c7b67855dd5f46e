import math

import numpy as np
import pytest
from scipy import stats

from bramble.errors import UnsupportedFamilyError
from bramble.spine import (expand_off_spine, ratio_moment_first,
                           ratio_moment_second, sample_spine_Q,
                           sample_spine_Qalpha)
from bramble.walk import conditioned_expectation, persistence_prob


# ---------------------------------------------------------------------------
# exact sampler under the size-biased measure
# ---------------------------------------------------------------------------

def test_spine_q_trivial_n0(binary_law):
    s = sample_spine_Q(binary_law, 0, np.random.default_rng(0))
    assert s.spine_positions == [0.0]
    assert s.weight == 1.0
    assert s.brothers == []


def test_spine_q_binary_structure(binary_law):
    s = sample_spine_Q(binary_law, 7, np.random.default_rng(1))
    assert len(s.spine_positions) == 8
    assert s.spine_positions[0] == 0.0
    assert all(len(b) == 1 for b in s.brothers)   # 2 children, 1 spine


def test_spine_q_marginal_matches_walk(binary_law, binary_walk):
    rng = np.random.default_rng(2)
    for n in (1, 10):
        spine = np.array([sample_spine_Q(binary_law, n, rng).spine_positions[-1]
                          for _ in range(10_000)])
        walk = binary_walk.sample_steps(rng, (10_000, n)).sum(axis=1)
        d, p = stats.ks_2samp(spine, walk)
        assert p > 0.01


def test_spine_q_unsupported_family():
    class Opaque:
        pass
    with pytest.raises(UnsupportedFamilyError):
        sample_spine_Q(Opaque(), 3, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# weighted sampler under the truncated biasing
# ---------------------------------------------------------------------------

def test_qalpha_weights_mean_one(binary_law, binary_table):
    rng = np.random.default_rng(3)
    for n, alpha in ((10, 0.0), (25, 2.0)):
        w = np.array([sample_spine_Qalpha(binary_law, binary_table, alpha, n,
                                          rng).weight for _ in range(4000)])
        se = w.std(ddof=1) / math.sqrt(w.size)
        assert abs(w.mean() - 1.0) <= 4 * se


def test_qalpha_positive_weight_respects_barrier(binary_law, binary_table):
    rng = np.random.default_rng(4)
    for _ in range(300):
        s = sample_spine_Qalpha(binary_law, binary_table, 0.0, 15, rng)
        if s.weight > 0:
            assert min(s.spine_positions[1:]) >= 0.0
        assert s.weight >= 0.0


def test_qalpha_matches_conditioned_walk(binary_law, binary_walk, binary_table):
    n, alpha = 50, 0.0
    rng = np.random.default_rng(5)
    vals = []
    for _ in range(8000):
        s = sample_spine_Qalpha(binary_law, binary_table, alpha, n, rng)
        if s.weight > 0:
            vals.append(s.weight / float(binary_table.r_alpha(
                s.spine_positions[-1], alpha, clip_tail=True)))
        else:
            vals.append(0.0)
    vals = np.array(vals)
    se_s = vals.std(ddof=1) / math.sqrt(vals.size)
    est, se_c = conditioned_expectation(
        binary_walk, binary_table, alpha, n,
        lambda p: 1.0 / binary_table.r_alpha(p[:, -1], alpha, clip_tail=True),
        400_000, np.random.default_rng(6))
    assert abs(vals.mean() - est) <= 4 * math.hypot(se_s, se_c)


# ---------------------------------------------------------------------------
# full-tree expansion
# ---------------------------------------------------------------------------

def test_expand_always_survives(binary_law, binary_table):
    rng = np.random.default_rng(7)
    for _ in range(50):
        s = sample_spine_Qalpha(binary_law, binary_table, 0.0, 8, rng)
        if s.weight == 0:
            continue
        t = expand_off_spine(s, binary_law, 8, [0.0], binary_table, 10 ** 6, rng)
        assert np.all(t.pop >= 1)
        assert t.weight == s.weight


def test_expand_inverse_d_identity(binary_law, binary_table):
    # E_Q[1/D_n^(a)] = 1/R_a(0) by the change of measure
    n, alpha = 6, 0.0
    rng = np.random.default_rng(8)
    vals = []
    for _ in range(4000):
        s = sample_spine_Qalpha(binary_law, binary_table, alpha, n, rng)
        if s.weight == 0:
            vals.append(0.0)
            continue
        t = expand_off_spine(s, binary_law, n, [alpha], binary_table,
                             10 ** 6, rng)
        vals.append(t.weight / t.d_alpha[alpha][-1])
    vals = np.array(vals)
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - 1.0) <= 4 * se   # R_0(0) = R(0) = 1


# ---------------------------------------------------------------------------
# ratio moments of W over D under the biased measures
# ---------------------------------------------------------------------------

def test_ratio_first_identity_equals_theta_estimator(binary_walk, binary_law,
                                                     binary_table):
    rows = ratio_moment_first(binary_law, binary_walk, binary_table, 0.0,
                              [100], 200_000, seed=9)
    row = rows[0]
    p, _ = persistence_prob(binary_walk, 100, 0.0, 200_000,
                            np.random.default_rng([9, 0x51DE]))
    assert row["identity"] == pytest.approx(p / float(binary_table.interp(0.0)))
    assert row["sqrt_n_identity"] == pytest.approx(10.0 * row["identity"])


def test_ratio_first_spine_agrees(binary_law, binary_walk, binary_table):
    rows = ratio_moment_first(binary_law, binary_walk, binary_table, 0.0,
                              [10], 400_000, seed=10, spine_ns=(10,),
                              n_trees=3000)
    row = rows[0]
    gap = abs(row["spine"] - row["identity"])
    assert gap <= 4 * math.hypot(row["spine_se"], row["identity_se"])


def test_ratio_second_moment(binary_law, binary_table):
    rows = ratio_moment_second(binary_law, binary_table, 0.0, [10, 20],
                               3000, seed=11)
    theta2 = 1.0 / math.pi
    for row in rows:
        # Jensen: second moment at least the squared first moment
        assert row["n_second"] / row["n"] >= row["first"] ** 2 - 1e-12
    # loose convergence check at the largest tractable n
    assert abs(rows[-1]["n_second"] - theta2) / theta2 < 0.5
