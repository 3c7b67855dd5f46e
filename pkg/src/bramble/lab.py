"""Experiment orchestration: scaling, limsup, minimal-position and fixed-point runs.

Every experiment consumes the per-replica traces produced by one shared
batch simulation, conditions on survival-to-horizon (the finite-n stand-in
for non-extinction), aggregates with medians and bootstrap confidence
intervals under fixed resample seeds, and writes CSV rows plus a JSON
manifest so a rerun with the same config reproduces the files byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import __version__
from .brw import batch_simulate
from .errors import ConfigurationError, ExperimentError
from .laws import build_law, validate_boundary
from .walk import default_grid, derive_walk, renewal_table

_BOOT_STREAM = 0xB0075
_CERT_STREAM = 0xCE47
_TABLE_STREAM = 0x7AB1E
_FIXP_STREAM = 0xF1C5


@dataclass
class ExperimentConfig:
    law: dict
    n_schedule: list
    replicas: int
    seed: int
    alphas: list = field(default_factory=list)
    pop_cap: int = 10 ** 7
    eps_d: float = 1e-6
    workers: int = 1
    experiments: list = field(default_factory=lambda: [
        "seneta_heyde", "limsup", "minpos", "fixed_point"])
    cert_samples: int = 200_000
    n_excursions: int = 100_000
    n_chains: int = 100_000
    u_max: float | None = None
    theta_n: int = 4096
    theta_samples: int = 200_000
    t_grid_max: float = 5.0
    t_grid_points: int = 21
    fixp_child_sets: int = 20_000
    bootstrap_resamples: int = 400
    outlier_band: float = 0.25

    def __post_init__(self):
        ns = list(self.n_schedule)
        if ns != sorted(ns) or len(set(ns)) != len(ns):
            raise ConfigurationError("n_schedule must be strictly increasing")
        if self.replicas < 2:
            raise ConfigurationError("replicas must be at least 2")
        if self.eps_d <= 0:
            raise ConfigurationError("eps_d must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)


@dataclass
class ExperimentResult:
    name: str
    rows: list                       # list of dicts, one CSV row each
    counts: dict
    assertions: list = field(default_factory=list)   # (label, ok, detail)


@dataclass
class LabContext:
    """Everything the individual experiments share: law, walk, table, traces."""
    config: ExperimentConfig
    law: object
    walk: object
    table: object
    certificate: object
    traces: list
    target: float                    # sqrt(2 / (pi sigma2_hat))


def prepare(config: ExperimentConfig) -> LabContext:
    law = build_law(config.law)
    cert = validate_boundary(law, config.cert_samples,
                             rng=np.random.default_rng([config.seed, _CERT_STREAM]))
    law.require_certified()
    wm = derive_walk(law)
    rng_t = np.random.default_rng([config.seed, _TABLE_STREAM])
    grid = default_grid(wm.sigma2, config.u_max)
    k_max = int(math.ceil(grid[-1] * 1.7 / max(0.3 * math.sqrt(wm.sigma2), 1e-6)) + 60)
    table = renewal_table(wm, grid, k_max, config.n_chains, rng_t,
                          n_excursions=config.n_excursions,
                          theta_n=config.theta_n,
                          theta_samples=config.theta_samples)
    traces = batch_simulate(law, max(config.n_schedule), config.alphas,
                            table if config.alphas else None,
                            config.replicas, config.seed,
                            pop_cap=config.pop_cap, workers=config.workers)
    target = math.sqrt(2.0 / (math.pi * wm.sigma2))
    return LabContext(config=config, law=law, walk=wm, table=table,
                      certificate=cert, traces=traces, target=target)


# ---------------------------------------------------------------------------
# shared trace handling
# ---------------------------------------------------------------------------

def _classify(ctx: LabContext):
    survivors = [t for t in ctx.traces if t.survived and not t.truncated]
    truncated = [t for t in ctx.traces if t.truncated]
    extinct = [t for t in ctx.traces if not t.survived and not t.truncated]
    return survivors, extinct, truncated


def _counts(ctx, survivors, extinct, truncated, guarded=0):
    return {"replicas": len(ctx.traces), "survivors": len(survivors),
            "extinct": len(extinct), "truncated": len(truncated),
            "guarded_out": guarded}


def _quantiles(x, qs=(0.25, 0.5, 0.75)):
    return [float(np.quantile(x, q)) for q in qs]


def _bootstrap_ci(x, stat, rng, n_resamples, level=0.95):
    x = np.asarray(x)
    vals = np.empty(n_resamples)
    for b in range(n_resamples):
        vals[b] = stat(x[rng.integers(0, len(x), len(x))])
    lo, hi = np.quantile(vals, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def run_seneta_heyde(ctx: LabContext) -> ExperimentResult:
    cfg = ctx.config
    survivors, extinct, truncated = _classify(ctx)
    if not survivors:
        raise ExperimentError("no surviving replicas")
    rng = np.random.default_rng([cfg.seed, _BOOT_STREAM, 1])
    n_max = max(cfg.n_schedule)
    d_term = {t.replica: t.d[-1] for t in survivors}
    rows = []
    guarded_total = 0
    for n in cfg.n_schedule:
        i = n  # traces record every generation 0..n_max
        ratios, paired, liminf_diag, sqrt_n_w, d_vals = [], [], [], [], []
        guarded = 0
        for t in survivors:
            w_n, d_n = t.w[i], t.d[i]
            sqrt_n_w.append(math.sqrt(n) * w_n)
            d_vals.append(d_n)
            if d_n <= cfg.eps_d:
                guarded += 1
                continue
            ratios.append(math.sqrt(n) * w_n / d_n)
            if d_term[t.replica] > cfg.eps_d:
                ref = ctx.target * d_term[t.replica]
                paired.append(math.sqrt(n) * w_n / ref)
                k = np.arange(1, n + 1)
                # exploratory liminf diagnostic, no assertion attached
                liminf_diag.append(float(np.min(np.sqrt(k) * t.w[1:n + 1])) / ref)
        guarded_total += guarded
        ratios = np.array(ratios)
        if ratios.size == 0:
            raise ExperimentError(f"all replicas guarded out at n={n}")
        q25, med, q75 = _quantiles(ratios)
        lo, hi = _bootstrap_ci(ratios, np.median, rng, cfg.bootstrap_resamples)
        frac_out = float(np.mean(np.abs(ratios / ctx.target - 1.0) > cfg.outlier_band))
        rows.append({
            "n": n, "target": ctx.target, "median_ratio": med,
            "q25": q25, "q75": q75, "mean_ratio": float(ratios.mean()),
            "median_ci_lo": lo, "median_ci_hi": hi,
            "frac_outside": frac_out,
            "median_sqrt_n_w": float(np.median(sqrt_n_w)),
            "median_d": float(np.median(d_vals)),
            "median_paired_to_limit": float(np.median(paired)) if paired else math.nan,
            "median_liminf_paired": float(np.median(liminf_diag)) if liminf_diag else math.nan,
            "used": int(ratios.size), "guarded_out": guarded,
        })
    fracs = [r["frac_outside"] for r in rows]
    med_last = rows[-1]["median_ratio"]
    assertions = [
        ("seneta_frac_outside_strictly_decreasing",
         all(b < a for a, b in zip(fracs, fracs[1:])),
         f"fractions {fracs}"),
        ("seneta_median_within_25pct",
         abs(med_last / ctx.target - 1.0) <= 0.25,
         f"median {med_last:.4f} target {ctx.target:.4f}"),
    ]
    return ExperimentResult("seneta_heyde", rows,
                            _counts(ctx, survivors, extinct, truncated, guarded_total),
                            assertions)


def run_limsup_probe(ctx: LabContext) -> ExperimentResult:
    cfg = ctx.config
    survivors, extinct, truncated = _classify(ctx)
    if not survivors:
        raise ExperimentError("no surviving replicas")
    thresholds = (2.0, 4.0, 8.0)
    rows = []
    refs = {}
    running = {}
    structural_ok = True
    for t in survivors:
        d_term = t.d[-1]
        refs[t.replica] = ctx.target * d_term if d_term > cfg.eps_d else math.nan
    for n in cfg.n_schedule:
        for t in survivors:
            k = np.arange(1, n + 1)
            m_n = float(np.max(np.sqrt(k) * t.w[1:n + 1]))
            prev = running.get(t.replica, -math.inf)
            running[t.replica] = max(prev, m_n)
            if m_n < math.sqrt(n) * t.w[n] - 1e-12:
                structural_ok = False
        for tt in thresholds:
            hits = [1.0 for t in survivors
                    if not math.isnan(refs[t.replica])
                    and running[t.replica] > tt * refs[t.replica]]
            rows.append({"n": n, "t": tt,
                         "fraction": len(hits) / len(survivors),
                         "used": len(survivors)})
    frac_by_t = {tt: [r["fraction"] for r in rows if r["t"] == tt]
                 for tt in thresholds}
    assertions = [
        ("limsup_running_max_dominates_last_term", structural_ok, ""),
        ("limsup_fraction_t2_nondecreasing",
         all(b >= a for a, b in zip(frac_by_t[2.0], frac_by_t[2.0][1:])),
         f"fractions {frac_by_t[2.0]}"),
        ("limsup_fraction_t8_positive_at_last",
         frac_by_t[8.0][-1] > 0.0,
         f"fraction {frac_by_t[8.0][-1]}"),
    ]
    return ExperimentResult("limsup", rows,
                            _counts(ctx, survivors, extinct, truncated), assertions)


def run_minpos(ctx: LabContext) -> ExperimentResult:
    cfg = ctx.config
    survivors, extinct, truncated = _classify(ctx)
    if not survivors:
        raise ExperimentError("no surviving replicas")
    rows = []
    run_min = {t.replica: math.inf for t in survivors}
    monotone_ok = True
    prev_run_min = {}
    for n in cfg.n_schedule:
        scaled = []
        for t in survivors:
            k = np.arange(1, n + 1)
            centered = t.min_v[1:n + 1] - 0.5 * np.log(k)
            rm = float(np.min(centered))
            new = min(run_min[t.replica], rm)
            if t.replica in prev_run_min and new > prev_run_min[t.replica] + 1e-12:
                monotone_ok = False
            run_min[t.replica] = new
            prev_run_min[t.replica] = new
            scaled.append(t.min_v[n] / math.log(n))
        rows.append({
            "n": n,
            "median_minv_over_logn": float(np.median(scaled)),
            "median_running_min_centered": float(np.median(
                [run_min[t.replica] for t in survivors])),
            "used": len(survivors),
        })
    assertions = [
        ("minpos_running_min_nonincreasing", monotone_ok, ""),
        ("minpos_running_min_median_decreases",
         rows[-1]["median_running_min_centered"] < rows[0]["median_running_min_centered"],
         f"{rows[0]['median_running_min_centered']:.4f} -> "
         f"{rows[-1]['median_running_min_centered']:.4f}"),
        ("minpos_scaled_median_in_band",
         1.0 <= rows[-1]["median_minv_over_logn"] <= 1.8,
         f"median {rows[-1]['median_minv_over_logn']:.4f}"),
    ]
    return ExperimentResult("minpos", rows,
                            _counts(ctx, survivors, extinct, truncated), assertions)


def _laplace(d_samples, s):
    # empirical Laplace transform, evaluated for an array of arguments
    s = np.atleast_1d(np.asarray(s, dtype=float))
    out = np.empty(s.shape)
    block = max(1, (1 << 22) // max(1, d_samples.size))
    for i in range(0, s.size, block):
        out[i:i + block] = np.exp(
            -np.multiply.outer(s[i:i + block], d_samples)).mean(axis=-1)
    return out


def fixed_point_residual(law, d_samples, t_grid, n_child_sets, rng):
    """Residual of the smoothing-transform equation for the empirical transform.

    r(t) = L(t) - E[prod over first-generation children of L(t exp(-V))],
    with the child sets freshly sampled from the law, independent of the
    samples defining L.
    """
    d_samples = np.asarray(d_samples, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    lhs = _laplace(d_samples, t_grid)
    prods = np.ones((n_child_sets, len(t_grid)))
    counts, disp = law.sample_children(rng, n_child_sets)
    parent = np.repeat(np.arange(n_child_sets), counts)
    factors = np.exp(-disp)                        # exp(-V) per child
    for j, t in enumerate(t_grid):
        lt = _laplace(d_samples, t * factors)      # one value per child
        logs = np.bincount(parent, weights=np.log(np.maximum(lt, 1e-300)),
                           minlength=n_child_sets)
        prods[:, j] = np.exp(logs)
    rhs = prods.mean(axis=0)
    return lhs, rhs, lhs - rhs


def run_fixed_point(ctx: LabContext, n_terminal: int | None = None,
                    n_mid: int | None = None) -> ExperimentResult:
    cfg = ctx.config
    survivors, extinct, truncated = _classify(ctx)
    if len(survivors) < 100:
        raise ExperimentError(f"only {len(survivors)} survivors; need at least 100")
    if n_terminal is None:
        n_terminal = max(cfg.n_schedule)
    if n_mid is None:
        mids = [n for n in cfg.n_schedule if n < n_terminal]
        n_mid = mids[len(mids) // 2] if mids else n_terminal
    rng = np.random.default_rng([cfg.seed, _FIXP_STREAM])
    t_grid = np.linspace(0.0, cfg.t_grid_max, cfg.t_grid_points)

    def max_residual(n):
        d = np.array([t.d[n] for t in survivors])
        d = d[d > 0]
        lhs, rhs, res = fixed_point_residual(ctx.law, d, t_grid,
                                             cfg.fixp_child_sets, rng)
        return d, lhs, rhs, res

    d_term, lhs, rhs, res = max_residual(n_terminal)
    _, _, _, res_mid = max_residual(n_mid)
    max_abs = float(np.max(np.abs(res)))
    max_abs_mid = float(np.max(np.abs(res_mid)))

    # bootstrap over the terminal D sample, fixed resample stream
    boot_rng = np.random.default_rng([cfg.seed, _BOOT_STREAM, 2])
    boot = np.empty(max(50, cfg.bootstrap_resamples // 4))
    for b in range(len(boot)):
        db = d_term[boot_rng.integers(0, len(d_term), len(d_term))]
        lb, rb, resb = fixed_point_residual(ctx.law, db, t_grid, 2000, boot_rng)
        boot[b] = np.max(np.abs(resb))
    ci_lo, ci_hi = float(np.quantile(boot, 0.025)), float(np.quantile(boot, 0.975))

    rows = [{"t": float(t), "laplace": float(l), "branch_product": float(r),
             "residual": float(x), "n": n_terminal}
            for t, l, r, x in zip(t_grid, lhs, rhs, res)]
    assertions = [
        ("fixed_point_transform_at_zero",
         abs(lhs[0] - 1.0) < 1e-12 and abs(res[0]) < 1e-12, f"L(0)={lhs[0]}"),
        ("fixed_point_transform_monotone",
         bool(np.all(np.diff(lhs) <= 1e-12)), ""),
        ("fixed_point_max_residual_small",
         max_abs <= 0.05, f"max |r| = {max_abs:.4f} (CI [{ci_lo:.4f}, {ci_hi:.4f}])"),
        ("fixed_point_residual_shrinks_with_n",
         max_abs <= max_abs_mid,
         f"n={n_terminal}: {max_abs:.4f} vs n={n_mid}: {max_abs_mid:.4f}"),
    ]
    counts = _counts(ctx, survivors, extinct, truncated)
    counts["max_residual"] = max_abs
    counts["max_residual_mid_n"] = max_abs_mid
    return ExperimentResult("fixed_point", rows, counts, assertions)


_RUNNERS = {
    "seneta_heyde": run_seneta_heyde,
    "limsup": run_limsup_probe,
    "minpos": run_minpos,
    "fixed_point": run_fixed_point,
}


def run_all(ctx: LabContext) -> list:
    return [_RUNNERS[name](ctx) for name in ctx.config.experiments]


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, rows):
    if not rows:
        return
    keys = list(rows[0].keys())
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in keys])


def write_trace_csv(path, traces, alphas):
    """One row per (replica, generation, alpha); alpha = -1 rows carry the plain sums."""
    rows = []
    for t in traces:
        for i, n in enumerate(t.gens):
            base = {"replica": t.replica, "n": int(n), "alpha": -1.0,
                    "W": t.w[i], "D": t.d[i], "W_alpha": math.nan,
                    "D_alpha": math.nan, "min_v": t.min_v[i],
                    "pop": int(t.pop[i]), "survived": int(t.survived),
                    "truncated": int(t.truncated)}
            rows.append(base)
            for a in alphas:
                r = dict(base)
                r["alpha"] = a
                r["W_alpha"] = t.w_alpha[a][i]
                r["D_alpha"] = t.d_alpha[a][i]
                rows.append(r)
    write_csv(path, rows)


def write_results(ctx: LabContext, results: list, out_dir: str) -> dict:
    """Write per-experiment CSVs, the renewal table, and the manifest JSON."""
    os.makedirs(out_dir, exist_ok=True)
    written = {}
    for res in results:
        path = os.path.join(out_dir, f"{res.name}.csv")
        write_csv(path, res.rows)
        written[res.name] = path
    tab = ctx.table
    renewal_rows = [{"u": float(u), "R": float(r), "SE": float(s)}
                    for u, r, s in zip(tab.grid, tab.r_values, tab.r_se)]
    write_csv(os.path.join(out_dir, "renewal.csv"), renewal_rows)
    written["renewal"] = os.path.join(out_dir, "renewal.csv")

    config_echo = asdict(ctx.config)
    config_echo.pop("workers")       # runtime knob, outputs do not depend on it
    manifest = {
        "version": __version__,
        "config": config_echo,
        "law": ctx.law.describe(),
        "certificate": ctx.certificate.as_dict(),
        "constants": tab.constants(),
        "target": ctx.target,
        "counts": {r.name: r.counts for r in results},
        "assertions": {r.name: [[a[0], bool(a[1]), a[2]] for a in r.assertions]
                       for r in results},
    }
    mpath = os.path.join(out_dir, "manifest.json")
    with open(mpath, "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")
    written["manifest"] = mpath
    return written
