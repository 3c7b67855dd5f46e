"""The associated one-dimensional random walk and its fluctuation machinery.

The projection of the branching system onto a single line of descent (with
the exp(-V) reweighting) is a centered random walk S_n.  This module builds
its exact step sampler, simulates strict descending ladder heights, tabulates
the renewal function R(u) of those ladder heights, estimates the persistence
constant, and evaluates expectations under the walk conditioned to stay in
[-alpha, oo) via exact reweighting by R_alpha.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    TableRangeError,
    TableResolutionError,
)

_MAX_BLOCK_ELEMS = 2 ** 24   # cap on elements per vectorized simulation block


# ---------------------------------------------------------------------------
# walk model
# ---------------------------------------------------------------------------

@dataclass
class WalkModel:
    kind: str                 # "gaussian" or "discrete"
    mean: float
    sigma2: float
    values: np.ndarray | None = None   # discrete support
    probs: np.ndarray | None = None
    source_law: object = None

    def __post_init__(self):
        if self.kind == "discrete":
            self._cdf = np.cumsum(self.probs)
        self._sd = math.sqrt(self.sigma2 - self.mean * self.mean) \
            if self.kind == "gaussian" else None

    def sample_steps(self, rng, size):
        if self.kind == "gaussian":
            return rng.normal(self.mean, self._sd, size)
        idx = np.searchsorted(self._cdf, rng.random(size), side="right")
        idx = np.minimum(idx, len(self.values) - 1)
        return self.values[idx]


def derive_walk(law) -> WalkModel:
    """Exact sampler for S_1 from a boundary-certified law."""
    law.require_certified()
    dist = law.step_distribution()
    if dist[0] == "gaussian":
        _, mean, var = dist
        return WalkModel(kind="gaussian", mean=mean, sigma2=var + mean * mean,
                         source_law=law)
    _, values, probs = dist
    mean = float(np.dot(values, probs))
    sigma2 = float(np.dot(values * values, probs))
    return WalkModel(kind="discrete", mean=mean, sigma2=sigma2,
                     values=values, probs=probs, source_law=law)


# ---------------------------------------------------------------------------
# ladder heights
# ---------------------------------------------------------------------------

@dataclass
class LadderSample:
    h1: np.ndarray            # |H_1| for every completed excursion
    e_abs_h1: float
    se_h1: float
    c0_hat: float
    se_c0: float
    capped: int               # excursions that hit the step cap (dropped)


def ladder_heights(walk: WalkModel, n_excursions: int, rng,
                   step_cap: int = 10 ** 7) -> LadderSample:
    """Simulate walks to their first strict descending ladder epoch.

    Each excursion runs until S first goes below 0, recording |H_1| = |S| at
    that time.  A step cap guards against the heavy-tailed excursion length;
    capped excursions are counted and excluded from the estimate.
    """
    if n_excursions < 1:
        raise ConfigurationError("n_excursions must be positive")
    pos = np.zeros(n_excursions)
    collected = []
    steps_done = 0
    block = 32
    while pos.size and steps_done < step_cap:
        b = min(block, step_cap - steps_done,
                max(1, _MAX_BLOCK_ELEMS // max(1, pos.size)))
        inc = walk.sample_steps(rng, (pos.size, b))
        cum = pos[:, None] + np.cumsum(inc, axis=1)
        below = cum < 0
        hit = below.any(axis=1)
        if hit.any():
            first = np.argmax(below[hit], axis=1)
            collected.append(cum[hit, first])
        pos = cum[~hit, -1]
        steps_done += b
        block = min(block * 2, 1 << 16)

    capped = int(pos.size)
    h1 = -np.concatenate(collected) if collected else np.empty(0)
    if h1.size < 2:
        raise ConfigurationError("too few completed excursions to estimate E|H1|")
    e_abs = float(h1.mean())
    se = float(h1.std(ddof=1) / math.sqrt(h1.size))
    c0 = 1.0 / e_abs
    return LadderSample(h1=h1, e_abs_h1=e_abs, se_h1=se,
                        c0_hat=c0, se_c0=se / (e_abs * e_abs), capped=capped)


# ---------------------------------------------------------------------------
# renewal table
# ---------------------------------------------------------------------------

@dataclass
class RenewalTable:
    grid: np.ndarray
    r_values: np.ndarray
    r_se: np.ndarray
    c0_hat: float
    se_c0: float
    e_abs_h1: float
    se_h1: float
    theta_hat: float
    se_theta: float
    ladder_sample_count: int
    persistence_sample_count: int
    capped_excursions: int
    sigma2: float
    seed_note: dict = field(default_factory=dict)

    def interp(self, u, clip_tail: bool = False):
        """Linear interpolation of R on the grid; optionally clip above the grid."""
        u = np.asarray(u, dtype=float)
        if np.any(u < self.grid[0]):
            raise TableRangeError(f"argument below grid start {self.grid[0]}")
        if not clip_tail and np.any(u > self.grid[-1]):
            raise TableRangeError(
                f"argument above grid end {self.grid[-1]} "
                f"(max requested {float(np.max(u)):.3f})")
        return np.interp(u, self.grid, self.r_values)

    def se_interp(self, u, clip_tail: bool = False):
        u = np.asarray(u, dtype=float)
        if clip_tail:
            u = np.clip(u, self.grid[0], self.grid[-1])
        return np.interp(u, self.grid, self.r_se)

    def r_alpha(self, u, alpha: float, clip_tail: bool = False):
        """R_alpha(u) = R(u + alpha), defined for u >= -alpha."""
        return self.interp(np.asarray(u, dtype=float) + alpha, clip_tail=clip_tail)

    def constants(self) -> dict:
        return {
            "sigma2": self.sigma2,
            "c0_hat": self.c0_hat, "se_c0": self.se_c0,
            "e_abs_h1": self.e_abs_h1, "se_h1": self.se_h1,
            "theta_hat": self.theta_hat, "se_theta": self.se_theta,
            "ladder_sample_count": self.ladder_sample_count,
            "persistence_sample_count": self.persistence_sample_count,
            "capped_excursions": self.capped_excursions,
        }


def default_grid(sigma2: float, u_max: float | None = None) -> np.ndarray:
    """Grid starting at 0 with spacing sigma/4, reaching 40 sigma by default."""
    sd = math.sqrt(sigma2)
    if u_max is None:
        u_max = 40.0 * sd
    h = sd / 4.0
    n = int(math.ceil(u_max / h))
    return np.linspace(0.0, n * h, n + 1)


def renewal_table(walk: WalkModel, grid: np.ndarray, k_max: int,
                  n_chains: int, rng, h1_samples: np.ndarray | None = None,
                  n_excursions: int = 200_000, theta_n: int = 4096,
                  theta_samples: int = 200_000,
                  tail_threshold: float = 1e-4) -> RenewalTable:
    """Estimate R(u) over a grid by simulating ladder-height chains.

    Chain increments are i.i.d. copies of |H_1|, drawn with replacement from
    a pool of simulated excursions (supplied or generated here).  R(u) counts
    chain points in [-u, 0], with the origin contributing the exact 1.
    """
    grid = np.asarray(grid, dtype=float)
    if grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise ConfigurationError("grid must start at 0 and increase strictly")
    if k_max < 2:
        raise ConfigurationError("k_max must be at least 2")

    if h1_samples is None:
        ladder = ladder_heights(walk, n_excursions, rng)
        h1 = ladder.h1
        capped = ladder.capped
    else:
        h1 = np.asarray(h1_samples, dtype=float)
        ladder = None
        capped = 0
    e_abs = float(h1.mean())
    se_h1 = float(h1.std(ddof=1) / math.sqrt(h1.size))
    c0 = 1.0 / e_abs
    se_c0 = se_h1 / (e_abs * e_abs)

    inc = h1[rng.integers(0, h1.size, size=(n_chains, k_max))]
    points = np.cumsum(inc, axis=1)

    deep_frac = float(np.mean(points[:, -1] <= grid[-1]))
    if deep_frac >= tail_threshold:
        raise TableResolutionError(
            f"P(|H_kmax| <= u_max) ~ {deep_frac:.2e} >= {tail_threshold}; "
            "increase k_max")

    # per-chain counts of points <= u for every grid u, via a 2-d histogram
    flat = points.ravel()
    bins = np.searchsorted(grid, flat, side="left")   # grid[b] >= point
    keep = bins < len(grid)
    chain_idx = np.repeat(np.arange(n_chains), k_max)[keep]
    hist = np.zeros((n_chains, len(grid)), dtype=np.float64)
    np.add.at(hist, (chain_idx, bins[keep]), 1.0)
    counts = np.cumsum(hist, axis=1)                  # points <= grid[j], per chain

    r_values = 1.0 + counts.mean(axis=0)
    r_se = counts.std(axis=0, ddof=1) / math.sqrt(n_chains)
    r_values[0] = 1.0                                 # H_0 = 0 is the only point at u = 0

    theta_list = estimate_theta(walk, [theta_n], theta_samples, rng)
    _, theta_hat, se_theta = theta_list[-1]

    return RenewalTable(
        grid=grid, r_values=r_values, r_se=r_se,
        c0_hat=c0, se_c0=se_c0, e_abs_h1=e_abs, se_h1=se_h1,
        theta_hat=theta_hat, se_theta=se_theta,
        ladder_sample_count=int(h1.size),
        persistence_sample_count=theta_samples,
        capped_excursions=capped, sigma2=walk.sigma2)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _survivor_counts(walk: WalkModel, n_list, u: float, n_samples: int, rng):
    """Count paths with running minimum >= -u at each checkpoint in n_list."""
    n_list = sorted(set(int(n) for n in n_list))
    if n_list[0] < 1:
        raise ConfigurationError("all n must be >= 1")
    pos = np.zeros(n_samples)
    out = {}
    t = 0
    for n in n_list:
        while t < n:
            b = min(n - t, max(1, _MAX_BLOCK_ELEMS // max(1, pos.size)))
            if pos.size == 0:
                t = n
                break
            inc = walk.sample_steps(rng, (pos.size, b))
            cum = pos[:, None] + np.cumsum(inc, axis=1)
            alive = cum.min(axis=1) >= -u
            pos = cum[alive, -1]
            t += b
        out[n] = pos.size
    return out


def persistence_prob(walk: WalkModel, n: int, u: float, n_samples: int, rng):
    """Direct Monte Carlo estimate of P{min_{1<=i<=n} S_i >= -u}."""
    k = _survivor_counts(walk, [n], u, n_samples, rng)[n]
    p = k / n_samples
    se = math.sqrt(max(p * (1.0 - p), 1.0 / n_samples) / n_samples)
    return p, se


def estimate_theta(walk: WalkModel, n_list, n_samples: int, rng):
    """theta_hat(n) = sqrt(n) P{min S_i >= 0} for each n; largest n is canonical."""
    counts = _survivor_counts(walk, n_list, 0.0, n_samples, rng)
    out = []
    for n in sorted(counts):
        p = counts[n] / n_samples
        se = math.sqrt(max(p * (1.0 - p), 1.0 / n_samples) / n_samples)
        out.append((n, math.sqrt(n) * p, math.sqrt(n) * se))
    return out


# ---------------------------------------------------------------------------
# harmonic identity and the conditioned walk
# ---------------------------------------------------------------------------

def harmonic_residual(walk: WalkModel, table: RenewalTable, u: float,
                      n_samples: int, rng):
    """Monte Carlo residual of R(u) = E[R(S_1 + u); S_1 >= -u].

    Near zero for a correct table; the returned SE combines the sampling
    error with the table's own standard errors.
    """
    if u < 0:
        raise TableRangeError("u must be nonnegative")
    sd = math.sqrt(walk.sigma2)
    if u + 6.0 * sd > table.grid[-1]:
        raise TableRangeError(
            f"u = {u} leaves no headroom below the grid end {table.grid[-1]:.2f}")
    s1 = walk.sample_steps(rng, n_samples)
    keep = s1 >= -u
    vals = np.zeros(n_samples)
    # clip the negligible far tail above the grid instead of failing
    vals[keep] = table.interp(s1[keep] + u, clip_tail=True)
    mean = float(vals.mean())
    se_mc = float(vals.std(ddof=1) / math.sqrt(n_samples))
    se_table = float(table.se_interp(u))
    se_shift = float(np.mean(table.se_interp(s1[keep] + u, clip_tail=True))) \
        if keep.any() else 0.0
    residual = float(table.interp(u)) - mean
    se = math.sqrt(se_mc ** 2 + se_table ** 2 + se_shift ** 2)
    return residual, se


def conditioned_expectation(walk: WalkModel, table: RenewalTable, alpha: float,
                            n: int, g, n_samples: int, rng,
                            chunk: int | None = None):
    """E under the conditioned walk of a path functional, by exact reweighting.

    Computes E[g(S_0..S_n) R_alpha(S_n); min S >= -alpha] / R_alpha(0), the
    unbiased representation of the h-transform expectation.  ``g`` receives a
    (m, n+1) array of paths including the zero start column and must return
    one value per row.
    """
    if alpha < 0:
        raise ConfigurationError("alpha must be nonnegative")
    if chunk is None:
        chunk = max(1, _MAX_BLOCK_ELEMS // (n + 1))
    r0 = float(table.interp(alpha))
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        steps = walk.sample_steps(rng, (m, n))
        paths = np.concatenate([np.zeros((m, 1)), np.cumsum(steps, axis=1)], axis=1)
        alive = paths[:, 1:].min(axis=1) >= -alpha
        vals = np.zeros(m)
        if alive.any():
            # R_alpha argument = S_n + alpha; out of grid is a genuine error here
            weights = table.r_alpha(paths[alive, -1], alpha)
            vals[alive] = np.asarray(g(paths[alive]), dtype=float) * weights
        vals /= r0
        total += float(vals.sum())
        total_sq += float((vals * vals).sum())
        done += m
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0)
    se = math.sqrt(var / n_samples)
    return mean, se
