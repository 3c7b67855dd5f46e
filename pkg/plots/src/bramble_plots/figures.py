"""The five report figures.

Each renderer takes the parsed rows plus the manifest and returns a
matplotlib Figure.  Rendering settings are pinned so the same inputs
produce byte-identical files.
"""

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams.update({
    "svg.hashsalt": "bramble-plots",
    "svg.fonttype": "none",          # keep text as text, searchable + stable
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "font.family": "DejaVu Sans",
})

import numpy as np                       # noqa: E402
from matplotlib import pyplot as plt     # noqa: E402


def _caption(fig, manifest, extra=""):
    seed = manifest.get("config", {}).get("seed", "?")
    text = f"seed {seed}"
    if extra:
        text += f"; {extra}"
    fig.text(0.01, 0.01, text, fontsize=7, color="0.35")


def ratio_convergence(rows, manifest):
    used = [r for r in rows if r["used"] > 0]
    omitted = [int(r["n"]) for r in rows if r["used"] == 0]
    n = [r["n"] for r in used]
    med = [r["median_ratio"] for r in used]
    q25 = [r["q25"] for r in used]
    q75 = [r["q75"] for r in used]
    target = used[0]["target"]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.fill_between(n, q25, q75, alpha=0.25, color="tab:blue",
                    label="interquartile band")
    ax.plot(n, med, "o-", color="tab:blue", label="median")
    ax.axhline(target, color="tab:red", linestyle="--",
               label=f"limit constant {target:.4f}")
    ax.set_xlabel("n")
    ax.set_ylabel("sqrt(n) W_n / D_n")
    ax.set_title("Scaling ratio convergence")
    ax.legend(loc="best", fontsize=8)
    extra = f"omitted n (no survivors): {omitted}" if omitted else ""
    _caption(fig, manifest, extra)
    return fig


def renewal_linearity(rows, manifest):
    u = np.array([r["u"] for r in rows])
    rv = np.array([r["R"] for r in rows])
    se = np.array([r["SE"] for r in rows])
    c0 = manifest.get("constants", {}).get("c0_hat")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.fill_between(u, rv - 2 * se, rv + 2 * se, alpha=0.25, color="tab:blue")
    ax.plot(u, rv, color="tab:blue", label="R(u)")
    if c0 is not None:
        # asymptote with the independently estimated slope, anchored at the end
        ax.plot(u, rv[-1] + c0 * (u - u[-1]), "--", color="tab:red",
                label=f"slope c0 = {c0:.4f}")
    ax.set_xlabel("u")
    ax.set_ylabel("R(u)")
    ax.set_title("Renewal function linearity")
    ax.legend(loc="best", fontsize=8)
    _caption(fig, manifest)
    return fig


def minpos(rows, manifest):
    used = [r for r in rows if r["used"] > 0]
    omitted = [int(r["n"]) for r in rows if r["used"] == 0]
    n = [r["n"] for r in used]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(n, [r["median_minv_over_logn"] for r in used], "o-",
            color="tab:blue", label="median min_v / log n")
    ax.plot(n, [r["median_running_min_centered"] for r in used], "s-",
            color="tab:green", label="median running min of (min_v - log k / 2)")
    ax.axhspan(1.0, 1.8, alpha=0.12, color="tab:orange", label="pilot band")
    ax.set_xlabel("n")
    ax.set_ylabel("position")
    ax.set_title("Minimal displacement probes")
    ax.legend(loc="best", fontsize=8)
    extra = f"omitted n (no survivors): {omitted}" if omitted else ""
    _caption(fig, manifest, extra)
    return fig


def limsup(rows, manifest):
    fig, ax = plt.subplots(figsize=(6, 4))
    thresholds = sorted({r["t"] for r in rows})
    for t in thresholds:
        sel = [r for r in rows if r["t"] == t]
        ax.plot([r["n"] for r in sel], [r["fraction"] for r in sel], "o-",
                label=f"threshold {t:g}")
    ax.set_xlabel("N")
    ax.set_ylabel("fraction exceeding")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title("Running max of sqrt(k) W_k vs limit multiples")
    ax.legend(loc="best", fontsize=8)
    _caption(fig, manifest)
    return fig


def fixedpoint_residual(rows, manifest):
    t = [r["t"] for r in rows]
    n = int(rows[0]["n"])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(t, [r["residual"] for r in rows], "o-", color="tab:blue",
            label=f"residual at n = {n}")
    ax.axhline(0.0, color="0.4", linewidth=0.8)
    ax.axhline(0.05, color="tab:red", linestyle=":", label="tolerance 0.05")
    ax.axhline(-0.05, color="tab:red", linestyle=":")
    ax.set_xlabel("t")
    ax.set_ylabel("L(t) - E prod L(t exp(-V))")
    ax.set_title("Smoothing-transform fixed-point residual")
    ax.legend(loc="best", fontsize=8)
    _caption(fig, manifest)
    return fig


RENDERERS = {
    "ratio-convergence": ratio_convergence,
    "renewal-linearity": renewal_linearity,
    "minpos": minpos,
    "limsup": limsup,
    "fixedpoint-residual": fixedpoint_residual,
}


def save(fig, path, fmt):
    fig.savefig(path, format=fmt, metadata={"Date": None} if fmt == "svg" else None)
    plt.close(fig)
