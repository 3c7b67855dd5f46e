import dataclasses
import math

import numpy as np
import pytest
from scipy import stats

from bramble.errors import TableRangeError, TableResolutionError
from bramble.laws import TabularLaw, certify_closed_form
from bramble.walk import (conditioned_expectation, default_grid, derive_walk,
                          estimate_theta, harmonic_residual, ladder_heights,
                          persistence_prob, renewal_table)

LOG2 = math.log(2.0)
THETA_SYM = 1.0 / math.sqrt(math.pi)


# ---------------------------------------------------------------------------
# step distribution
# ---------------------------------------------------------------------------

def test_binary_step_is_centered_gaussian(binary_walk):
    assert binary_walk.kind == "gaussian"
    assert binary_walk.mean == pytest.approx(0.0, abs=1e-12)
    assert binary_walk.sigma2 == pytest.approx(2 * LOG2, rel=1e-12)
    s = binary_walk.sample_steps(np.random.default_rng(1), 100_000)
    d, p = stats.kstest(s, "norm", args=(0.0, math.sqrt(2 * LOG2)))
    assert p > 0.01


def test_near_critical_step(near_walk):
    assert near_walk.mean == pytest.approx(0.0, abs=1e-12)
    assert near_walk.sigma2 == pytest.approx(2 * math.log(1.1), rel=1e-12)


def test_tabular_step_probs_normalized():
    # boundary tabular mixture: twins at v w.p. 1/2, single child at v3 w.p. 1/2,
    # with (v, v3) solving e^{-v} + e^{-v3}/2 = 1 and v e^{-v} + v3 e^{-v3}/2 = 0
    v = 1.4823991976150932
    v3 = -0.435551673686811
    law = TabularLaw([(0.5, [v, v]), (0.5, [v3])])
    assert law.exact_e_sum() == pytest.approx(1.0, abs=1e-8)
    assert law.exact_e_vsum() == pytest.approx(0.0, abs=1e-8)
    certify_closed_form(law, tol=1e-7)
    walk = derive_walk(law)
    assert walk.kind == "discrete"
    assert walk.probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert abs(walk.mean) < 1e-8


def test_empirical_step_moments(binary_walk):
    s = binary_walk.sample_steps(np.random.default_rng(2), 200_000)
    se_m = s.std(ddof=1) / math.sqrt(s.size)
    assert abs(s.mean()) <= 4 * se_m
    sq = s * s
    se_v = sq.std(ddof=1) / math.sqrt(s.size)
    assert abs(sq.mean() - binary_walk.sigma2) <= 4 * se_v


# ---------------------------------------------------------------------------
# ladder heights and renewal table
# ---------------------------------------------------------------------------

def test_ladder_heights_oracle(binary_walk):
    ls = ladder_heights(binary_walk, 60_000, np.random.default_rng(5))
    # symmetric continuous walk: E|H1| = sigma/sqrt(2) = sqrt(log 2)
    assert abs(ls.e_abs_h1 - math.sqrt(LOG2)) <= max(4 * ls.se_h1, 0.01)
    assert ls.c0_hat * ls.e_abs_h1 == pytest.approx(1.0, rel=1e-12)
    assert ls.capped < 0.001 * 60_000


def test_renewal_table_invariants(binary_table):
    assert binary_table.grid[0] == 0.0
    assert binary_table.r_values[0] == 1.0
    assert np.all(np.diff(binary_table.r_values) >= 0)
    assert binary_table.c0_hat > 0
    assert binary_table.theta_hat > 0


def test_renewal_linearity(binary_table):
    # R(u)/u within 5% of c0 for u >= 20 sigma
    sd = math.sqrt(binary_table.sigma2)
    for u in (20 * sd, 30 * sd, 40 * sd):
        r = float(binary_table.interp(u))
        assert abs(r / u - binary_table.c0_hat) / binary_table.c0_hat <= 0.05


def test_renewal_table_resolution_error(binary_walk):
    grid = default_grid(binary_walk.sigma2)
    with pytest.raises(TableResolutionError):
        renewal_table(binary_walk, grid, 3, 5000, np.random.default_rng(6),
                      n_excursions=5000, theta_n=256, theta_samples=5000)


def test_interp_range_error(binary_table):
    with pytest.raises(TableRangeError):
        binary_table.interp(binary_table.grid[-1] + 1.0)
    with pytest.raises(TableRangeError):
        binary_table.interp(-0.5)


# ---------------------------------------------------------------------------
# persistence and theta
# ---------------------------------------------------------------------------

def test_persistence_one_step_symmetric(binary_walk):
    p, se = persistence_prob(binary_walk, 1, 0.0, 200_000,
                             np.random.default_rng(7))
    assert abs(p - 0.5) <= 4 * se


def test_persistence_u_dependence(binary_walk, binary_table):
    rng = np.random.default_rng(8)
    n = 2000
    p0, _ = persistence_prob(binary_walk, n, 0.0, 400_000, rng)
    p5, _ = persistence_prob(binary_walk, n, 5.0, 400_000, rng)
    ratio = p5 / p0
    expected = float(binary_table.interp(5.0))
    assert abs(ratio - expected) / expected <= 0.15


def test_theta_trend_and_value(binary_walk):
    rows = estimate_theta(binary_walk, [4, 16, 400, 1600], 1_000_000,
                          np.random.default_rng(9))
    thetas = {n: t for n, t, _ in rows}
    # scale gaps |theta_hat(4n) - theta_hat(n)| shrink; the small-n gap is
    # dominated by the 1/(8n) persistence bias, the large-n one by noise well
    # below it (estimates share the same simulated paths)
    assert abs(thetas[1600] - thetas[400]) < abs(thetas[16] - thetas[4])
    assert abs(thetas[1600] - THETA_SYM) / THETA_SYM < 0.10


def test_persistence_sparre_andersen_exact(binary_walk):
    # symmetric continuous steps: P{min_{i<=n} S_i >= 0} = C(2n,n)/4^n exactly
    n = 25
    exact = math.comb(2 * n, n) / 4.0 ** n
    p, se = persistence_prob(binary_walk, n, 0.0, 400_000,
                             np.random.default_rng(21))
    assert abs(p - exact) <= 4 * se


# ---------------------------------------------------------------------------
# harmonic identity
# ---------------------------------------------------------------------------

def test_harmonic_residual_zero(binary_table, binary_walk):
    rng = np.random.default_rng(10)
    for u in (0.0, 5.0):
        res, se = harmonic_residual(binary_walk, binary_table, u, 200_000, rng)
        assert abs(res) <= 4 * se


def test_harmonic_residual_negative_control(binary_table, binary_walk):
    bad_r = binary_table.r_values.copy()
    bad_r[1:] *= 1.1
    bad = dataclasses.replace(binary_table, r_values=bad_r)
    res, se = harmonic_residual(binary_walk, bad, 0.0, 200_000,
                                np.random.default_rng(11))
    assert abs(res) > 4 * se


def test_harmonic_residual_range_error(binary_table, binary_walk):
    with pytest.raises(TableRangeError):
        harmonic_residual(binary_walk, binary_table,
                          float(binary_table.grid[-1]), 1000,
                          np.random.default_rng(12))


# ---------------------------------------------------------------------------
# conditioned expectations
# ---------------------------------------------------------------------------

def test_conditioned_constant(binary_walk, binary_table):
    rng = np.random.default_rng(13)
    for alpha in (0.0, 2.0, 5.0):
        est, se = conditioned_expectation(binary_walk, binary_table, alpha, 20,
                                          lambda p: np.ones(len(p)), 200_000, rng)
        assert abs(est - 1.0) <= 4 * se


def test_conditioned_recovers_persistence(binary_walk):
    # the walk conditioned to stay positive wanders well above 40 sigma by
    # n = 100, so this check needs a wider grid than the default table
    sd = math.sqrt(binary_walk.sigma2)
    grid = default_grid(binary_walk.sigma2, u_max=80 * sd)
    k_max = int(math.ceil(grid[-1] * 1.7 / (0.3 * sd)) + 60)
    table = renewal_table(binary_walk, grid, k_max, 40_000,
                          np.random.default_rng(30), n_excursions=40_000,
                          theta_n=256, theta_samples=20_000)
    n = 100
    rng = np.random.default_rng(14)
    est, se = conditioned_expectation(
        binary_walk, table, 0.0, n,
        lambda p: 1.0 / table.r_alpha(p[:, -1], 0.0, clip_tail=True),
        400_000, rng)
    p, p_se = persistence_prob(binary_walk, n, 0.0, 400_000,
                               np.random.default_rng(15))
    assert abs(est - p) <= 4 * math.hypot(se, p_se)


def test_conditioned_negative_endpoint_zero(binary_walk, binary_table):
    est, se = conditioned_expectation(
        binary_walk, binary_table, 0.0, 10,
        lambda p: (p[:, -1] < 0).astype(float), 50_000,
        np.random.default_rng(16))
    assert est == 0.0
