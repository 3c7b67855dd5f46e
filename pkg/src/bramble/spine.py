"""Spinal decompositions: the size-biased measure and its truncated variant.

Two changes of measure are implemented as samplers:

* under the additive-martingale biasing, the distinguished line of descent
  ("spine") moves exactly like the associated walk; the first-generation
  point process along the spine is size-biased and sampled in closed form;
* under the truncated derivative-martingale biasing, the spine is the walk
  conditioned to stay in [-alpha, oo).  The one-step normalizer has no
  closed form, so the sampler proposes children from the plain law and
  carries an importance weight whose mean is exactly 1 (by the harmonic
  identity of the renewal function).

Expanding independent plain subtrees below every off-spine particle turns a
spine sample into a full population, which is how the moment identities for
the ratio of truncated martingales are cross-checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .brw import MartingaleTrace
from .errors import ConfigurationError, UnsupportedFamilyError
from .walk import RenewalTable, WalkModel, _survivor_counts


@dataclass
class SpinePathSample:
    spine_positions: np.ndarray       # V(w_0)..V(w_n); w_0 = 0
    brothers: list                    # per level i: positions of the spine's brothers born at i+1
    weight: float                     # importance weight; 1 for the exact sampler
    measure: str                      # "Q" or "Q_alpha"
    alpha: float | None = None
    killed: bool = False              # every proposal fell below -alpha


def sample_spine_Q(law, n: int, rng) -> SpinePathSample:
    """Exact spine sample under the size-biased measure (weight 1)."""
    if not hasattr(law, "sample_spine_children"):
        raise UnsupportedFamilyError(
            f"{type(law).__name__} has no derived size-biased first-generation "
            "law; use the weighted sampler")
    pos = [0.0]
    brothers = []
    for _ in range(n):
        d_spine, d_broth = law.sample_spine_children(rng)
        brothers.append(pos[-1] + np.asarray(d_broth, dtype=float))
        pos.append(pos[-1] + float(d_spine))
    return SpinePathSample(np.array(pos), brothers, 1.0, "Q")


def sample_spine_Qalpha(law, table: RenewalTable, alpha: float, n: int, rng,
                        clip_tail: bool = True) -> SpinePathSample:
    """Weighted spine sample under the truncated biasing.

    Children are proposed from the plain reproduction law; the per-level
    weight factor sum_j R_alpha(y_j) e^{p - y_j} 1{y_j >= -alpha} / R_alpha(p)
    has mean 1, so averaging weight * g over samples is unbiased for the
    target expectation.  If no child stays above -alpha the sample is
    returned killed with weight 0 (still valid for the estimator).
    """
    if alpha < 0:
        raise ConfigurationError("alpha must be nonnegative")
    pos = [0.0]
    brothers = []
    weight = 1.0
    for _ in range(n):
        p = pos[-1]
        y_spine, y_broth, w_step = _propose_step(law, table, alpha, p, rng,
                                                 clip_tail)
        weight *= w_step
        if weight == 0.0:
            return SpinePathSample(np.array(pos), brothers, 0.0, "Q_alpha",
                                   alpha=alpha, killed=True)
        brothers.append(y_broth)
        pos.append(y_spine)
    return SpinePathSample(np.array(pos), brothers, weight, "Q_alpha", alpha=alpha)


def _propose_step(law, table, alpha, p, rng, clip_tail=True):
    """One spine step proposal with its importance-weight factor.

    Preferred proposal is the size-biased decomposition (tilted spine step,
    plain brothers); the weight then reduces to the one-step ratio of the
    harmonic function, R_alpha(new) / R_alpha(old), killed below -alpha,
    which has mean 1 by the harmonic identity.  Families without a derived
    size-biased law fall back to proposing the whole child set from the
    plain law, with the correspondingly heavier weight.
    """
    if hasattr(law, "sample_spine_children"):
        d_spine, d_broth = law.sample_spine_children(rng)
        y = p + float(d_spine)
        if y < -alpha:
            return y, None, 0.0
        w = float(table.r_alpha(y, alpha, clip_tail=clip_tail)
                  / table.r_alpha(p, alpha, clip_tail=clip_tail))
        return y, p + np.asarray(d_broth, dtype=float), w

    counts, disp = law.sample_children(rng, 1)
    y = p + disp
    valid = y >= -alpha
    if not valid.any():
        return p, None, 0.0
    w = np.zeros(y.size)
    w[valid] = (table.r_alpha(y[valid], alpha, clip_tail=clip_tail)
                * np.exp(p - y[valid]))
    tot = w.sum()
    j = int(np.searchsorted(np.cumsum(w / tot), rng.random(), side="right"))
    j = min(j, y.size - 1)
    return float(y[j]), np.delete(y, j), \
        tot / float(table.r_alpha(p, alpha, clip_tail=clip_tail))


def expand_off_spine(sample: SpinePathSample, law, n: int, alphas,
                     table: RenewalTable | None, pop_cap: int, rng) -> MartingaleTrace:
    """Attach independent plain subtrees to every brother and trace the population.

    The spine particle itself is part of every generation.  The returned
    trace carries the sample's importance weight.
    """
    alphas = list(alphas)
    if sample.weight == 0.0 or len(sample.spine_positions) < n + 1:
        return MartingaleTrace(
            gens=np.array([], dtype=int), w=np.array([]), d=np.array([]),
            w_alpha={a: np.array([]) for a in alphas},
            d_alpha={a: np.array([]) for a in alphas},
            min_v=np.array([]), pop=np.array([], dtype=int),
            survived=False, truncated=False, weight=0.0)

    spine = sample.spine_positions
    spine_minpref = np.concatenate([[np.inf], np.minimum.accumulate(spine[1:])]) \
        if n >= 1 else np.array([np.inf])

    pos = np.empty(0)
    minpref = np.empty(0)
    gens, ws, ds, mins, pops = [], [], [], [], []
    w_alpha = {a: [] for a in alphas}
    d_alpha = {a: [] for a in alphas}
    truncated = False

    for m in range(n + 1):
        all_pos = np.concatenate([pos, [spine[m]]])
        all_min = np.concatenate([minpref, [spine_minpref[m]]])
        e = np.exp(-all_pos)
        gens.append(m)
        ws.append(float(e.sum()))
        ds.append(float((all_pos * e).sum()))
        mins.append(float(all_pos.min()))
        pops.append(all_pos.size)
        for a in alphas:
            mask = all_min >= -a
            w_alpha[a].append(float(e[mask].sum()))
            d_alpha[a].append(float((table.r_alpha(all_pos[mask], a, clip_tail=True)
                                     * e[mask]).sum()))
        if m == n:
            break
        # plain population advances one generation
        if pos.size:
            counts, disp = law.sample_children(rng, pos.size)
            pos = np.repeat(pos, counts) + disp
            minpref = np.minimum(np.repeat(minpref, counts), pos)
        # brothers born at level m+1 join it
        b = sample.brothers[m]
        if len(b):
            pos = np.concatenate([pos, b])
            minpref = np.concatenate([minpref, np.minimum(spine_minpref[m], b)])
        if pos.size + 1 > pop_cap:
            truncated = True
            break

    return MartingaleTrace(
        gens=np.array(gens), w=np.array(ws), d=np.array(ds),
        w_alpha={a: np.array(v) for a, v in w_alpha.items()},
        d_alpha={a: np.array(v) for a, v in d_alpha.items()},
        min_v=np.array(mins), pop=np.array(pops),
        survived=not truncated and gens[-1] == n, truncated=truncated,
        weight=sample.weight)


def _weighted_trees(law, table, alpha, n, n_trees, seed, pop_cap,
                    resample_every=None):
    """Weighted (W_n^a / D_n^a, weight) pairs from expanded spine samples.

    With ``resample_every`` set, spine paths are systematically resampled
    every that many levels to control weight degeneracy (unbiasedness is
    preserved; weights are reset to their mean).
    """
    if resample_every is None:
        out = []
        for t in range(n_trees):
            rng = np.random.default_rng([seed, t])
            s = sample_spine_Qalpha(law, table, alpha, n, rng)
            tr = expand_off_spine(s, law, n, [alpha], table, pop_cap, rng)
            if tr.weight == 0.0 or tr.truncated:
                out.append((0.0, 0.0))
            else:
                out.append((tr.w_alpha[alpha][-1] / tr.d_alpha[alpha][-1], tr.weight))
        return out

    # staged sampling with systematic resampling of partial spine samples
    rng = np.random.default_rng([seed, 0xB10C])
    samples = [SpinePathSample(np.array([0.0]), [], 1.0, "Q_alpha", alpha=alpha)
               for _ in range(n_trees)]
    level = 0
    while level < n:
        stop = min(n, level + resample_every)
        for s in samples:
            if s.weight == 0.0:
                continue
            ext = _extend_spine(s, law, table, alpha, stop - level, rng)
            s.spine_positions = ext.spine_positions
            s.brothers = ext.brothers
            s.weight = ext.weight
            s.killed = ext.killed
        level = stop
        if level < n:
            samples = _systematic_resample(samples, rng)
    out = []
    for s in samples:
        tr = expand_off_spine(s, law, n, [alpha], table, pop_cap, rng)
        if tr.weight == 0.0 or tr.truncated:
            out.append((0.0, 0.0))
        else:
            out.append((tr.w_alpha[alpha][-1] / tr.d_alpha[alpha][-1], tr.weight))
    return out


def _extend_spine(s, law, table, alpha, k, rng):
    # same proposal mechanics as sample_spine_Qalpha, continuing a partial path
    pos = list(s.spine_positions)
    brothers = list(s.brothers)
    weight = s.weight
    killed = False
    for _ in range(k):
        y_spine, y_broth, w_step = _propose_step(law, table, alpha, pos[-1], rng)
        weight *= w_step
        if weight == 0.0:
            killed = True
            break
        brothers.append(y_broth)
        pos.append(y_spine)
    return SpinePathSample(np.array(pos), brothers, weight, "Q_alpha",
                           alpha=alpha, killed=killed)


def _systematic_resample(samples, rng):
    w = np.array([s.weight for s in samples])
    mean_w = w.mean()
    if mean_w <= 0:
        return samples
    p = w / w.sum()
    n = len(samples)
    u = (rng.random() + np.arange(n)) / n
    idx = np.searchsorted(np.cumsum(p), u, side="right")
    idx = np.minimum(idx, n - 1)
    return [SpinePathSample(samples[i].spine_positions.copy(),
                            [b.copy() for b in samples[i].brothers],
                            mean_w, "Q_alpha", alpha=samples[i].alpha)
            for i in idx]


def ratio_moment_first(law, walk_model: WalkModel, table: RenewalTable,
                       alpha: float, n_list, n_walk_samples: int, seed: int,
                       spine_ns=(), n_trees: int = 0, pop_cap: int = 10 ** 7):
    """First moment of the truncated-martingale ratio under the biased measure.

    Identity side (all n): P{min S >= -alpha} / R_alpha(0), reported with the
    sqrt(n) scaling that converges to the persistence constant.  Spine side
    (requested n only): weighted full-tree estimate of the same mean.
    """
    rng = np.random.default_rng([seed, 0x51DE])
    counts = _survivor_counts(walk_model, n_list, alpha, n_walk_samples, rng)
    r0 = float(table.interp(alpha))
    rows = []
    for n in sorted(counts):
        p = counts[n] / n_walk_samples
        se = math.sqrt(max(p * (1 - p), 1.0 / n_walk_samples) / n_walk_samples)
        row = {"n": n, "identity": p / r0, "identity_se": se / r0,
               "sqrt_n_identity": math.sqrt(n) * p / r0,
               "spine": math.nan, "spine_se": math.nan}
        if n in spine_ns and n_trees > 0:
            pairs = _weighted_trees(law, table, alpha, n, n_trees,
                                    seed + 7 * n, pop_cap)
            vals = np.array([w * r for r, w in pairs])
            row["spine"] = float(vals.mean())
            row["spine_se"] = float(vals.std(ddof=1) / math.sqrt(n_trees))
        rows.append(row)
    return rows


def ratio_moment_second(law, table: RenewalTable, alpha: float, n_list,
                        n_trees: int, seed: int, pop_cap: int = 10 ** 7,
                        resample_every: int | None = None):
    """n * second moment of the ratio under the biased measure, per n."""
    rows = []
    for n in sorted(set(int(x) for x in n_list)):
        pairs = _weighted_trees(law, table, alpha, n, n_trees, seed + 13 * n,
                                pop_cap, resample_every=resample_every)
        first = np.array([w * r for r, w in pairs])
        second = np.array([w * r * r for r, w in pairs])
        rows.append({
            "n": n,
            "first": float(first.mean()),
            "first_se": float(first.std(ddof=1) / math.sqrt(n_trees)),
            "n_second": n * float(second.mean()),
            "n_second_se": n * float(second.std(ddof=1) / math.sqrt(n_trees)),
        })
    return rows
