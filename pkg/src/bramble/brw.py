"""Forward simulation of the branching population.

Generations are stored as flat position arrays with the running ancestral
minimum carried alongside, so the truncated sums (particles whose ancestral
path never went below -alpha) come from a mask rather than tree walks.  The
full genealogy is materialized only by the small-n path enumerator used for
the single-walk correspondence check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .walk import RenewalTable, WalkModel, persistence_prob


@dataclass
class MartingaleTrace:
    """Per-generation record of the additive/derivative sums and population."""

    gens: np.ndarray                       # generation indices actually recorded
    w: np.ndarray
    d: np.ndarray
    w_alpha: dict                          # alpha -> array over gens
    d_alpha: dict
    min_v: np.ndarray                      # +inf once extinct
    pop: np.ndarray
    survived: bool
    truncated: bool
    replica: int = -1
    weight: float = 1.0                    # importance weight (spine measure runs)

    def at(self, n: int) -> dict:
        i = int(np.searchsorted(self.gens, n))
        if i >= len(self.gens) or self.gens[i] != n:
            raise KeyError(f"generation {n} not recorded")
        row = {"n": n, "w": self.w[i], "d": self.d[i],
               "min_v": self.min_v[i], "pop": int(self.pop[i])}
        for a in self.w_alpha:
            row[("w_alpha", a)] = self.w_alpha[a][i]
            row[("d_alpha", a)] = self.d_alpha[a][i]
        return row


def simulate(law, n_max: int, alphas, table: RenewalTable | None,
             pop_cap: int, rng, replica: int = -1) -> MartingaleTrace:
    """Generation-synchronous simulation up to n_max, extinction, or the cap."""
    if n_max < 1:
        raise ConfigurationError("n_max must be positive")
    if pop_cap < 1:
        raise ConfigurationError("pop_cap must be positive")
    alphas = list(alphas)
    if alphas and table is None:
        raise ConfigurationError("truncated sums need a renewal table")

    pos = np.zeros(1)
    minpref = np.full(1, np.inf)           # ancestral-path minimum excludes the root

    gens, ws, ds, mins, pops = [], [], [], [], []
    w_alpha = {a: [] for a in alphas}
    d_alpha = {a: [] for a in alphas}
    truncated = False

    for n in range(n_max + 1):
        e = np.exp(-pos)
        gens.append(n)
        ws.append(float(e.sum()))
        ds.append(float((pos * e).sum()))
        mins.append(float(pos.min()) if pos.size else math.inf)
        pops.append(pos.size)
        for a in alphas:
            mask = minpref >= -a
            w_alpha[a].append(float(e[mask].sum()))
            d_alpha[a].append(float((table.r_alpha(pos[mask], a) * e[mask]).sum()))
        if n == n_max or pos.size == 0:
            break
        counts, disp = law.sample_children(rng, pos.size)
        new_pop = int(counts.sum())
        if new_pop > pop_cap:
            truncated = True
            break
        pos = np.repeat(pos, counts) + disp
        minpref = np.minimum(np.repeat(minpref, counts), pos)

    return MartingaleTrace(
        gens=np.array(gens), w=np.array(ws), d=np.array(ds),
        w_alpha={a: np.array(v) for a, v in w_alpha.items()},
        d_alpha={a: np.array(v) for a, v in d_alpha.items()},
        min_v=np.array(mins), pop=np.array(pops),
        survived=pops[-1] > 0 and not truncated and gens[-1] == n_max,
        truncated=truncated, replica=replica)


def _run_replica(args):
    law, n_max, alphas, table, pop_cap, seed, r = args
    rng = np.random.default_rng([seed, r])
    return simulate(law, n_max, alphas, table, pop_cap, rng, replica=r)


def batch_simulate(law, n_max: int, alphas, table: RenewalTable | None,
                   replicas: int, seed: int, pop_cap: int = 10 ** 7,
                   workers: int = 1) -> list[MartingaleTrace]:
    """Independent replicas, each seeded by (seed, replica index).

    Results are identical for any worker count; replicas that raise are
    re-raised after the batch with their index attached.
    """
    jobs = [(law, n_max, list(alphas), table, pop_cap, seed, r)
            for r in range(replicas)]
    if workers <= 1:
        return [_run_replica(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_replica, jobs, chunksize=max(1, replicas // (8 * workers))))


# ---------------------------------------------------------------------------
# identity checks
# ---------------------------------------------------------------------------

def _enumerate_paths(law, n: int, n_samples: int, rng):
    """All generation-n particles of n_samples replicas with their ancestral paths.

    Returns (replica index per particle, path matrix of V(x_1)..V(x_n)).
    Only meant for small n; the path matrix is dense.
    """
    rep = np.arange(n_samples)
    cols = []
    pos = np.zeros(n_samples)
    for _ in range(n):
        counts, disp = law.sample_children(rng, pos.size)
        rep = np.repeat(rep, counts)
        cols = [np.repeat(c, counts) for c in cols]
        pos = np.repeat(pos, counts) + disp
        cols.append(pos)
    paths = np.column_stack(cols) if cols else np.zeros((n_samples, 0))
    return rep, paths


def many_to_one_check(law, n: int, g, n_samples: int, rng,
                      walk_model: WalkModel | None = None):
    """Both sides of the single-walk correspondence for a path functional g.

    lhs: population side, E[sum over generation-n particles of g(path)];
    rhs: walk side, E[exp(S_n) g(S_1..S_n)].  g maps (m, n) path arrays to
    one value per row.  Returns (lhs, rhs, se_lhs, se_rhs).
    """
    if n > 4:
        raise ConfigurationError("population side is enumerated in full; keep n <= 4")
    from .walk import derive_walk
    if walk_model is None:
        walk_model = derive_walk(law)

    rep, paths = _enumerate_paths(law, n, n_samples, rng)
    vals = np.asarray(g(paths), dtype=float)
    sums = np.bincount(rep, weights=vals, minlength=n_samples)
    lhs = float(sums.mean())
    se_lhs = float(sums.std(ddof=1) / math.sqrt(n_samples))

    steps = walk_model.sample_steps(rng, (n_samples, n))
    s = np.cumsum(steps, axis=1)
    wvals = np.exp(s[:, -1]) * np.asarray(g(s), dtype=float)
    rhs = float(wvals.mean())
    se_rhs = float(wvals.std(ddof=1) / math.sqrt(n_samples))
    return lhs, rhs, se_lhs, se_rhs


def truncated_mean_check(law, walk_model: WalkModel, table: RenewalTable,
                         n: int, alpha: float, n_brw: int, n_walk: int,
                         seed: int, workers: int = 1):
    """Exact truncated-martingale identities, both sides estimated.

    E[W_n^(a)] should equal P{min S >= -a} and E[D_n^(a)] should equal
    R_a(0), for every n.  Returns a dict of the four estimates with SEs.
    """
    traces = batch_simulate(law, n, [alpha], table, n_brw, seed, workers=workers)
    w_a = np.array([t.w_alpha[alpha][-1] if t.gens[-1] == n else 0.0 for t in traces])
    d_a = np.array([t.d_alpha[alpha][-1] if t.gens[-1] == n else 0.0 for t in traces])
    rng = np.random.default_rng([seed, 982_451_653])
    p, p_se = persistence_prob(walk_model, n, alpha, n_walk, rng)
    return {
        "mean_w_alpha": float(w_a.mean()),
        "se_w_alpha": float(w_a.std(ddof=1) / math.sqrt(n_brw)),
        "persistence": p, "se_persistence": p_se,
        "mean_d_alpha": float(d_a.mean()),
        "se_d_alpha": float(d_a.std(ddof=1) / math.sqrt(n_brw)),
        "r_alpha0": float(table.interp(alpha)),
        "se_r_alpha0": float(table.se_interp(alpha)),
    }
