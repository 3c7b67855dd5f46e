"""Command-line entry point: config parsing, subcommands, seeds, wiring.

Exit codes:
  0  success, every enabled assertion passed
  1  unexpected internal error
  2  usage error (argparse: unknown subcommand or bad flags)
  3  config file missing or unreadable
  4  config fails JSON schema validation
  5  law rejected: not reducible to the boundary normalization
  6  numeric failure (degenerate law, table range/resolution, simulation)
  7  at least one enabled assertion reported FAIL
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import __version__
from .errors import (BrambleError, ConfigurationError, NonBoundaryReducible,
                     NumericError, DegenerateLawError, TableRangeError,
                     TableResolutionError, ExperimentError)
from .laws import build_law, normalize_to_boundary, validate_boundary
from .walk import (default_grid, derive_walk, harmonic_residual, renewal_table)
from .brw import batch_simulate
from .spine import ratio_moment_first, ratio_moment_second
from .lab import ExperimentConfig, prepare, run_all, write_results, write_csv, write_trace_csv

log = logging.getLogger("bramble")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_SCHEMA = 4
EXIT_NONBOUNDARY = 5
EXIT_NUMERIC = 6
EXIT_ASSERT = 7

# Top-level config layout: law (required), walk, experiment, output (optional).
CONFIG_SCHEMA = {
    "type": "object",
    "required": ["law"],
    "additionalProperties": False,
    "properties": {
        "law": {
            "type": "object",
            "required": ["family"],
            "properties": {"family": {"enum": ["binary_gaussian",
                                               "count_gaussian", "tabular"]}},
        },
        "walk": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_excursions": {"type": "integer", "minimum": 100},
                "n_chains": {"type": "integer", "minimum": 100},
                "u_max": {"type": "number", "exclusiveMinimum": 0},
                "theta_n": {"type": "integer", "minimum": 16},
                "theta_samples": {"type": "integer", "minimum": 100},
                "cert_samples": {"type": "integer", "minimum": 2},
            },
        },
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_schedule": {"type": "array", "items": {"type": "integer",
                                                          "minimum": 1},
                               "minItems": 1},
                "replicas": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer", "minimum": 0},
                "alphas": {"type": "array", "items": {"type": "number",
                                                      "minimum": 0}},
                "pop_cap": {"type": "integer", "minimum": 1},
                "eps_d": {"type": "number", "exclusiveMinimum": 0},
                "experiments": {"type": "array",
                                "items": {"enum": ["seneta_heyde", "limsup",
                                                   "minpos", "fixed_point"]}},
                "t_grid_max": {"type": "number", "exclusiveMinimum": 0},
                "t_grid_points": {"type": "integer", "minimum": 2},
                "fixp_child_sets": {"type": "integer", "minimum": 100},
                "bootstrap_resamples": {"type": "integer", "minimum": 10},
                "outlier_band": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
    },
}

_WALK_KEYS = ("n_excursions", "n_chains", "u_max", "theta_n",
              "theta_samples", "cert_samples")


def load_config(path: str) -> dict:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as f:
        cfg = json.load(f)
    import jsonschema
    jsonschema.validate(cfg, CONFIG_SCHEMA)
    return cfg


def _experiment_config(cfg: dict, seed_override) -> ExperimentConfig:
    exp = dict(cfg.get("experiment", {}))
    exp.setdefault("n_schedule", [30, 60, 90, 120])
    exp.setdefault("replicas", 2000)
    exp.setdefault("seed", 123)
    if seed_override is not None:
        exp["seed"] = seed_override
    walk = cfg.get("walk", {})
    kw = {k: walk[k] for k in _WALK_KEYS if k in walk}
    return ExperimentConfig(law=cfg["law"], **exp, **kw)


def _assert_lines(pairs, verbose=False):
    """Print one PASS/FAIL line per assertion; return True iff all pass."""
    ok = True
    for label, passed, detail in pairs:
        status = "PASS" if passed else "FAIL"
        line = f"{status} {label}"
        if detail:
            line += f": {detail}"
        print(line)
        ok = ok and passed
    return ok


def _out_dir(args, cfg):
    if args.out:
        return args.out
    return cfg.get("output", {}).get("dir", "out")


def _rng(cfg, args, stream):
    seed = args.seed if args.seed is not None else \
        cfg.get("experiment", {}).get("seed", 123)
    return seed, np.random.default_rng([seed, stream])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_validate_law(args, cfg):
    law = build_law(cfg["law"])
    n = cfg.get("walk", {}).get("cert_samples", 200_000)
    seed, rng = _rng(cfg, args, 0xCE47)
    cert = validate_boundary(law, n, rng=rng)
    print(json.dumps(cert.as_dict(), sort_keys=True, indent=2))
    if not cert.certified:
        # see whether a tilt can repair the normalization; raises
        # NonBoundaryReducible when no finite tilt exists
        transformed, vartheta, shift = normalize_to_boundary(law)
        return _assert_lines([
            ("boundary_certified", False,
             f"not in the boundary case; reducible with vartheta={vartheta:.6g}, "
             f"shift={shift:.6g} (see the normalize subcommand)")])
    return _assert_lines([("boundary_certified", True,
                           f"sigma2={cert.sigma2:.6g}")])


def cmd_normalize(args, cfg):
    law = build_law(cfg["law"])
    transformed, vartheta, shift = normalize_to_boundary(law)
    report = {"vartheta": vartheta, "shift": shift,
              "law": transformed.describe()}
    print(json.dumps(report, sort_keys=True, indent=2))
    out = _out_dir(args, cfg)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "normalized_law.json"), "w") as f:
        json.dump(report, f, sort_keys=True, indent=2)
        f.write("\n")
    return True


def _build_table(args, cfg, law=None):
    if law is None:
        law = build_law(cfg["law"])
    seed, rng_c = _rng(cfg, args, 0xCE47)
    walk_cfg = cfg.get("walk", {})
    validate_boundary(law, walk_cfg.get("cert_samples", 200_000), rng=rng_c)
    law.require_certified()
    wm = derive_walk(law)
    grid = default_grid(wm.sigma2, walk_cfg.get("u_max"))
    k_max = int(math.ceil(grid[-1] * 1.7 / max(0.3 * math.sqrt(wm.sigma2), 1e-6)) + 60)
    _, rng_t = _rng(cfg, args, 0x7AB1E)
    table = renewal_table(wm, grid, k_max,
                          walk_cfg.get("n_chains", 100_000), rng_t,
                          n_excursions=walk_cfg.get("n_excursions", 100_000),
                          theta_n=walk_cfg.get("theta_n", 4096),
                          theta_samples=walk_cfg.get("theta_samples", 200_000))
    return law, wm, table, seed


def cmd_walk_constants(args, cfg):
    law, wm, table, seed = _build_table(args, cfg)
    c = table.constants()
    target = math.sqrt(2.0 / (math.pi * wm.sigma2))
    product = c["theta_hat"] * c["c0_hat"]
    print(f"sigma2_hat = {wm.sigma2:.6g}")
    print(f"c0_hat     = {c['c0_hat']:.6g} +- {c['se_c0']:.2g}")
    print(f"theta_hat  = {c['theta_hat']:.6g} +- {c['se_theta']:.2g}")
    print(f"product    = {product:.6g}  target sqrt(2/(pi*sigma2)) = {target:.6g}")
    return _assert_lines([
        ("constant_chain_within_5pct",
         abs(product - target) / target <= 0.05,
         f"relative gap {abs(product - target) / target:.4f}")])


def cmd_renewal(args, cfg):
    law, wm, table, seed = _build_table(args, cfg)
    out = _out_dir(args, cfg)
    os.makedirs(out, exist_ok=True)
    rows = [{"u": float(u), "R": float(r), "SE": float(s)}
            for u, r, s in zip(table.grid, table.r_values, table.r_se)]
    write_csv(os.path.join(out, "renewal.csv"), rows)
    with open(os.path.join(out, "walk_constants.json"), "w") as f:
        json.dump({"seed": seed, "constants": table.constants()},
                  f, sort_keys=True, indent=2)
        f.write("\n")
    # harmonic identity spot checks on a small interior grid
    _, rng_h = _rng(cfg, args, 0x4A53)
    sigma = math.sqrt(wm.sigma2)
    checks = []
    for u in (0.0, 2 * sigma, 5 * sigma, 10 * sigma):
        res, se = harmonic_residual(wm, table, u, 200_000, rng_h)
        checks.append((f"harmonic_residual_u={u:.3g}", abs(res) <= 4 * se,
                       f"residual {res:.5f} (4*SE {4 * se:.5f})"))
    return _assert_lines(checks)


def cmd_simulate(args, cfg):
    law = build_law(cfg["law"])
    exp = cfg.get("experiment", {})
    seed = args.seed if args.seed is not None else exp.get("seed", 123)
    alphas = exp.get("alphas", [])
    table = None
    if alphas:
        law, wm, table, seed2 = _build_table(args, cfg, law)
    else:
        _, rng_c = _rng(cfg, args, 0xCE47)
        validate_boundary(law, cfg.get("walk", {}).get("cert_samples", 200_000),
                          rng=rng_c)
        law.require_certified()
    n_max = max(exp.get("n_schedule", [30, 60, 90, 120]))
    traces = batch_simulate(law, n_max, alphas, table,
                            exp.get("replicas", 200), seed,
                            pop_cap=exp.get("pop_cap", 10 ** 7),
                            workers=args.workers)
    out = _out_dir(args, cfg)
    os.makedirs(out, exist_ok=True)
    write_trace_csv(os.path.join(out, "trace.csv"), traces, alphas)
    survived = sum(t.survived for t in traces)
    truncated = sum(t.truncated for t in traces)
    print(f"replicas {len(traces)}  survived {survived}  truncated {truncated}")
    return _assert_lines([
        ("counts_reconcile",
         survived + truncated + sum((not t.survived) and (not t.truncated)
                                    for t in traces) == len(traces), "")])


def cmd_spine_check(args, cfg):
    law, wm, table, seed = _build_table(args, cfg)
    exp = cfg.get("experiment", {})
    tractable = [n for n in exp.get("n_schedule", [10]) if n <= 20]
    n = max(tractable) if tractable else 10
    n_trees = exp.get("replicas", 2000)
    rows = ratio_moment_first(law, wm, table, 0.0, [n], 500_000, seed,
                              spine_ns=(n,), n_trees=n_trees)
    row = rows[0]
    gap = abs(row["spine"] - row["identity"])
    joint = math.hypot(row["spine_se"], row["identity_se"])
    print(f"n={n}  identity {row['identity']:.5f} +- {row['identity_se']:.5f}  "
          f"spine {row['spine']:.5f} +- {row['spine_se']:.5f}")
    sec = ratio_moment_second(law, table, 0.0, [n], n_trees, seed)[0]
    theta2 = table.constants()["theta_hat"] ** 2
    print(f"n*second moment {sec['n_second']:.4f} +- {sec['n_second_se']:.4f}  "
          f"theta_hat^2 {theta2:.4f}")
    return _assert_lines([
        ("spine_identity_agreement_4se", gap <= 4 * joint,
         f"gap {gap:.5f} (4*joint SE {4 * joint:.5f})")])


def cmd_experiment(args, cfg):
    ec = _experiment_config(cfg, args.seed)
    ec.workers = args.workers
    ctx = prepare(ec)
    results = run_all(ctx)
    out = _out_dir(args, cfg)
    write_results(ctx, results, out)
    pairs = []
    for r in results:
        pairs.extend(r.assertions)
    return _assert_lines(pairs)


_COMMANDS = {
    "validate-law": cmd_validate_law,
    "normalize": cmd_normalize,
    "walk-constants": cmd_walk_constants,
    "renewal": cmd_renewal,
    "simulate": cmd_simulate,
    "spine-check": cmd_spine_check,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="bramble",
        description="Monte Carlo laboratory for boundary-case branching "
                    "random walks.",
        epilog="Exit codes:" + __doc__.split("Exit codes:")[1],
        formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON config path")
        sp.add_argument("--seed", type=int, default=None,
                        help="seed override (64-bit unsigned)")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--workers", type=int,
                        default=int(os.environ.get("BRAMBLE_WORKERS", "1")),
                        help="worker processes (env BRAMBLE_WORKERS)")
        sp.add_argument("--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be a 64-bit unsigned integer", file=sys.stderr)
        return EXIT_USAGE
    import jsonschema
    try:
        cfg = load_config(args.config)
    except FileNotFoundError as e:
        print(f"error: config file not found: {e}", file=sys.stderr)
        return EXIT_MISSING
    except json.JSONDecodeError as e:
        print(f"error: config is not valid JSON: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    except jsonschema.ValidationError as e:
        print(f"error: config schema violation: {e.message}", file=sys.stderr)
        return EXIT_SCHEMA
    try:
        ok = _COMMANDS[args.command](args, cfg)
    except NonBoundaryReducible as e:
        print(f"error: law cannot be normalized to the boundary case: {e}",
              file=sys.stderr)
        return EXIT_NONBOUNDARY
    except (NumericError, DegenerateLawError, TableRangeError,
            TableResolutionError, ExperimentError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigurationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    except BrambleError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK if ok else EXIT_ASSERT


if __name__ == "__main__":
    sys.exit(main())
