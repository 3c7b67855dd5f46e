"""Offspring point-process laws and the boundary-case normalization.

A law describes the point process governing one reproduction event: the
number of children and their displacements relative to the parent.  Three
parametric families are supported:

* ``BinaryGaussianLaw``   -- exactly two children, i.i.d. Gaussian displacements;
* ``CountGaussianLaw``    -- random child count, i.i.d. Gaussian displacements;
* ``TabularLaw``          -- finitely supported point process given by atoms.

The boundary normalization requires the mean of ``sum exp(-V)`` over the
first generation to be 1 and the mean of ``sum V exp(-V)`` to be 0.  Laws
are certified against these conditions by Monte Carlo (``validate_boundary``)
and arbitrary supercritical laws are reduced to the boundary case by a
linear transformation of displacements (``normalize_to_boundary``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateLawError,
    NonBoundaryReducible,
    NumericError,
    UncertifiedLawError,
)

PROB_TOL = 1e-12


# ---------------------------------------------------------------------------
# child-count distributions (for CountGaussianLaw)
# ---------------------------------------------------------------------------

class PoissonCount:
    def __init__(self, lam: float):
        if not (lam > 0 and math.isfinite(lam)):
            raise ConfigurationError(f"count_law.lam must be positive and finite, got {lam}")
        self.lam = float(lam)

    @property
    def mean(self) -> float:
        return self.lam

    def sample(self, rng, size):
        return rng.poisson(self.lam, size)

    def sample_size_biased(self, rng, size):
        # size-biasing a Poisson adds an independent unit atom
        return 1 + rng.poisson(self.lam, size)

    def pgf(self, s):
        return np.exp(self.lam * (np.asarray(s, dtype=float) - 1.0))

    def describe(self):
        return {"type": "poisson", "lam": self.lam}


class CategoricalCount:
    def __init__(self, values, probs):
        values = np.asarray(values, dtype=np.int64)
        probs = np.asarray(probs, dtype=float)
        if values.ndim != 1 or values.shape != probs.shape:
            raise ConfigurationError("count_law values/probs must be 1-d and equal length")
        if np.any(values < 0):
            raise ConfigurationError("count_law values must be nonnegative integers")
        if np.any(probs < 0):
            raise ConfigurationError("count_law probs must be nonnegative")
        if abs(probs.sum() - 1.0) > PROB_TOL:
            raise ConfigurationError(
                f"count_law probs must sum to 1 within {PROB_TOL}, got {probs.sum()!r}")
        self.values = values
        self.probs = probs / probs.sum()
        self._cdf = np.cumsum(self.probs)

    @property
    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    def sample(self, rng, size):
        idx = np.searchsorted(self._cdf, rng.random(size), side="right")
        return self.values[np.minimum(idx, len(self.values) - 1)]

    def sample_size_biased(self, rng, size):
        w = self.values * self.probs
        m = w.sum()
        if m <= 0:
            raise DegenerateLawError("count law has zero mean; size-biasing undefined")
        cdf = np.cumsum(w / m)
        idx = np.searchsorted(cdf, rng.random(size), side="right")
        return self.values[np.minimum(idx, len(self.values) - 1)]

    def pgf(self, s):
        s = np.asarray(s, dtype=float)
        return np.sum(self.probs * np.power.outer(s, self.values.astype(float)), axis=-1)

    def describe(self):
        return {"type": "pmf",
                "values": self.values.tolist(),
                "probs": self.probs.tolist()}


def count_law_from_config(cfg) -> PoissonCount | CategoricalCount:
    if not isinstance(cfg, dict) or "type" not in cfg:
        raise ConfigurationError("count_law must be an object with a 'type' key")
    if cfg["type"] == "poisson":
        return PoissonCount(cfg["lam"])
    if cfg["type"] == "pmf":
        return CategoricalCount(cfg["values"], cfg["probs"])
    raise ConfigurationError(f"unknown count_law type {cfg['type']!r}")


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------

@dataclass
class BoundaryCertificate:
    """Monte Carlo evidence for (or against) the boundary normalization."""

    e_sum: float
    e_vsum: float
    sigma2: float
    x_moment: float
    xtilde_moment: float
    se_e_sum: float
    se_e_vsum: float
    se_sigma2: float
    se_x_moment: float
    se_xtilde_moment: float
    sample_count: int
    tolerance: float
    certified: bool = False
    reasons: list = field(default_factory=list)

    def as_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# law families
# ---------------------------------------------------------------------------

class _LawBase:
    """Shared behaviour; concrete families fill in the sampling primitives."""

    boundary_certified: bool = False
    certificate: BoundaryCertificate | None = None

    # -- sampling ----------------------------------------------------------

    def sample(self, rng):
        counts, disp = self.sample_children(rng, 1)
        return disp

    def sample_children(self, rng, n_parents):
        """Return (counts, flat displacement array) for n_parents reproduction events."""
        raise NotImplementedError

    # -- closed-form moments ----------------------------------------------

    @property
    def mean_offspring(self) -> float:
        raise NotImplementedError

    def exact_e_sum(self) -> float:
        raise NotImplementedError

    def exact_e_vsum(self) -> float:
        raise NotImplementedError

    def exact_sigma2(self) -> float:
        raise NotImplementedError

    # -- log-Laplace functional psi(t) = log E sum exp(-t V) --------------

    def psi(self, t: float) -> float:
        raise NotImplementedError

    def psi_prime(self, t: float) -> float:
        raise NotImplementedError

    def transformed(self, vartheta: float, shift: float):
        """The law of vartheta * V + shift applied to every displacement."""
        raise NotImplementedError

    # -- misc --------------------------------------------------------------

    def step_distribution(self):
        """The law of S_1: ('gaussian', mean, var) or ('discrete', values, probs)."""
        raise NotImplementedError

    def require_certified(self):
        if not self.boundary_certified:
            raise UncertifiedLawError(
                f"{type(self).__name__} is not boundary-certified; "
                "run validate_boundary first")

    def describe(self) -> dict:
        raise NotImplementedError


class CountGaussianLaw(_LawBase):
    """Random child count, displacements i.i.d. Gaussian(mu, s2)."""

    def __init__(self, count_law, mu: float, s2: float):
        if not (s2 > 0 and math.isfinite(s2)):
            raise ConfigurationError(f"s2 must be positive and finite, got {s2}")
        if not math.isfinite(mu):
            raise ConfigurationError(f"mu must be finite, got {mu}")
        self.count = count_law
        self.mu = float(mu)
        self.s2 = float(s2)
        self.sd = math.sqrt(self.s2)

    @property
    def mean_offspring(self):
        return self.count.mean

    def sample_children(self, rng, n_parents):
        counts = self.count.sample(rng, n_parents)
        disp = rng.normal(self.mu, self.sd, int(counts.sum()))
        return counts, disp

    # E exp(-t N(mu, s2)) = exp(-t mu + t^2 s2 / 2)
    def _laplace(self, t):
        return math.exp(-t * self.mu + t * t * self.s2 / 2.0)

    def exact_e_sum(self):
        return self.mean_offspring * self._laplace(1.0)

    def exact_e_vsum(self):
        return self.mean_offspring * self._laplace(1.0) * (self.mu - self.s2)

    def exact_sigma2(self):
        # second moment of the tilted Gaussian N(mu - s2, s2), scaled by e_sum
        m1 = self.mu - self.s2
        return self.exact_e_sum() * (self.s2 + m1 * m1)

    def psi(self, t):
        return math.log(self.mean_offspring) - t * self.mu + t * t * self.s2 / 2.0

    def psi_prime(self, t):
        return -self.mu + t * self.s2

    def transformed(self, vartheta, shift):
        return type(self)._rebuild(self, vartheta, shift)

    @staticmethod
    def _rebuild(law, vartheta, shift):
        return CountGaussianLaw(law.count,
                                vartheta * law.mu + shift,
                                vartheta * vartheta * law.s2)

    def step_distribution(self):
        # tilt by exp(-v): Gaussian(mu - s2, s2), exactly normalized at the boundary
        return ("gaussian", self.mu - self.s2, self.s2)

    def sample_spine_children(self, rng):
        """One size-biased reproduction event: (spine displacement, brother displacements)."""
        k = int(self.count.sample_size_biased(rng, 1)[0])
        spine = rng.normal(self.mu - self.s2, self.sd)
        brothers = rng.normal(self.mu, self.sd, k - 1)
        return spine, brothers

    def describe(self):
        return {"family": "count_gaussian", "count_law": self.count.describe(),
                "mu": self.mu, "s2": self.s2}


class BinaryGaussianLaw(CountGaussianLaw):
    """Exactly two children with i.i.d. Gaussian(mu, s2) displacements."""

    def __init__(self, mu: float, s2: float):
        super().__init__(CategoricalCount([2], [1.0]), mu, s2)

    def sample_children(self, rng, n_parents):
        counts = np.full(n_parents, 2, dtype=np.int64)
        disp = rng.normal(self.mu, self.sd, 2 * n_parents)
        return counts, disp

    @staticmethod
    def _rebuild(law, vartheta, shift):
        return BinaryGaussianLaw(vartheta * law.mu + shift,
                                 vartheta * vartheta * law.s2)

    def describe(self):
        return {"family": "binary_gaussian", "mu": self.mu, "s2": self.s2}


class TabularLaw(_LawBase):
    """Finitely supported point process: atoms of (probability, displacement list)."""

    def __init__(self, atoms):
        if not atoms:
            raise ConfigurationError("atoms must be a non-empty list")
        probs = np.array([a[0] for a in atoms], dtype=float)
        if np.any(probs < 0):
            raise ConfigurationError("atom probabilities must be nonnegative")
        if abs(probs.sum() - 1.0) > PROB_TOL:
            raise ConfigurationError(
                f"atom probabilities must sum to 1 within {PROB_TOL}, got {probs.sum()!r}")
        self.probs = probs / probs.sum()
        self.children = [np.asarray(a[1], dtype=float) for a in atoms]
        for i, c in enumerate(self.children):
            if c.size and not np.all(np.isfinite(c)):
                raise ConfigurationError(f"atom {i} has nonfinite displacements")
        self._cdf = np.cumsum(self.probs)
        self._lens = np.array([len(c) for c in self.children], dtype=np.int64)
        self._flat = (np.concatenate([c for c in self.children if c.size])
                      if self._lens.sum() else np.empty(0))
        self._offsets = np.concatenate([[0], np.cumsum(self._lens)])[:-1]

    @property
    def mean_offspring(self):
        return float(np.dot(self.probs, self._lens))

    def sample_children(self, rng, n_parents):
        idx = np.searchsorted(self._cdf, rng.random(n_parents), side="right")
        idx = np.minimum(idx, len(self.probs) - 1)
        counts = self._lens[idx]
        total = int(counts.sum())
        if total == 0:
            return counts, np.empty(0)
        # ragged gather of each chosen atom's displacement block
        starts = np.repeat(self._offsets[idx], counts)
        within = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        return counts, self._flat[starts + within]

    def _atom_sums(self, t):
        return np.array([np.exp(-t * c).sum() if c.size else 0.0 for c in self.children])

    def exact_e_sum(self):
        return float(np.dot(self.probs, self._atom_sums(1.0)))

    def exact_e_vsum(self):
        s = np.array([(c * np.exp(-c)).sum() if c.size else 0.0 for c in self.children])
        return float(np.dot(self.probs, s))

    def exact_sigma2(self):
        s = np.array([(c * c * np.exp(-c)).sum() if c.size else 0.0 for c in self.children])
        return float(np.dot(self.probs, s))

    def psi(self, t):
        m = float(np.dot(self.probs, self._atom_sums(t)))
        if m <= 0:
            raise NumericError(f"E sum exp(-{t} V) vanishes; psi undefined")
        return math.log(m)

    def psi_prime(self, t):
        num = np.array([(-c * np.exp(-t * c)).sum() if c.size else 0.0 for c in self.children])
        m = float(np.dot(self.probs, self._atom_sums(t)))
        return float(np.dot(self.probs, num)) / m

    def transformed(self, vartheta, shift):
        return TabularLaw([(p, (vartheta * c + shift).tolist())
                           for p, c in zip(self.probs, self.children)])

    def step_distribution(self):
        vals, probs = [], []
        for p, c in zip(self.probs, self.children):
            for v in c:
                vals.append(v)
                probs.append(p * math.exp(-v))
        vals = np.asarray(vals)
        probs = np.asarray(probs)
        total = probs.sum()
        if total <= 0:
            raise DegenerateLawError("tabular law carries no mass after tilting")
        return ("discrete", vals, probs / total)

    def sample_spine_children(self, rng):
        w1 = self.probs * self._atom_sums(1.0)   # atom weight under the W1-biasing
        cdf = np.cumsum(w1 / w1.sum())
        a = int(np.searchsorted(cdf, rng.random(), side="right"))
        a = min(a, len(self.probs) - 1)
        c = self.children[a]
        pe = np.exp(-c)
        j = int(np.searchsorted(np.cumsum(pe / pe.sum()), rng.random(), side="right"))
        j = min(j, len(c) - 1)
        brothers = np.delete(c, j)
        return float(c[j]), brothers

    def describe(self):
        return {"family": "tabular",
                "atoms": [[float(p), c.tolist()] for p, c in zip(self.probs, self.children)]}


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def build_law(spec: dict) -> _LawBase:
    """Build a samplable law object from a plain-dict spec (the JSON config form)."""
    if not isinstance(spec, dict) or "family" not in spec:
        raise ConfigurationError("law spec must be an object with a 'family' key")
    family = spec["family"]
    if family == "binary_gaussian":
        return BinaryGaussianLaw(spec["mu"], spec["s2"])
    if family == "count_gaussian":
        return CountGaussianLaw(count_law_from_config(spec["count_law"]),
                                spec["mu"], spec["s2"])
    if family == "tabular":
        return TabularLaw([(a[0], a[1]) for a in spec["atoms"]])
    raise ConfigurationError(f"unknown law family {family!r}")


def _mean_se(x):
    n = len(x)
    m = float(np.mean(x))
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return m, se


def validate_boundary(law: _LawBase, n_samples: int, tol: float = 1e-3,
                      rng=None, chunk: int = 200_000) -> BoundaryCertificate:
    """Monte Carlo certification of the boundary normalization and moment conditions.

    Estimates E sum exp(-V), E sum V exp(-V), the step variance, and the two
    heavy-tail moments with standard errors; sets ``law.boundary_certified``.
    The tail moments are reported but never block certification.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if n_samples < 2:
        raise ConfigurationError("n_samples must be at least 2")
    if tol <= 0:
        raise ConfigurationError("tol must be positive")

    e_sum = np.empty(n_samples)
    e_vsum = np.empty(n_samples)
    e_v2sum = np.empty(n_samples)
    xlog = np.empty(n_samples)
    xtlog = np.empty(n_samples)

    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        counts, disp = law.sample_children(rng, m)
        if disp.size and not np.all(np.isfinite(disp)):
            bad = disp[~np.isfinite(disp)][0]
            raise NumericError(f"nonfinite displacement drawn: {bad!r}")
        parent = np.repeat(np.arange(m), counts)
        w = np.exp(-disp)
        s = np.bincount(parent, weights=w, minlength=m)
        sv = np.bincount(parent, weights=disp * w, minlength=m)
        sv2 = np.bincount(parent, weights=disp * disp * w, minlength=m)
        svp = np.bincount(parent, weights=np.maximum(disp, 0.0) * w, minlength=m)
        e_sum[done:done + m] = s
        e_vsum[done:done + m] = sv
        e_v2sum[done:done + m] = sv2
        lp = np.where(s > 1, np.log(np.maximum(s, 1.0)), 0.0)
        xlog[done:done + m] = s * lp * lp
        xtlog[done:done + m] = svp * np.where(svp > 1, np.log(np.maximum(svp, 1.0)), 0.0)
        done += m

    es, ses = _mean_se(e_sum)
    ev, sev = _mean_se(e_vsum)
    s2, ss2 = _mean_se(e_v2sum)
    xm, sxm = _mean_se(xlog)
    xt, sxt = _mean_se(xtlog)

    if s2 <= 0:
        raise DegenerateLawError(f"step-variance estimate nonpositive ({s2!r})")

    reasons = []
    if abs(es - 1.0) > max(tol, 3 * ses):
        reasons.append(f"E sum exp(-V) = {es:.6f} is off 1 beyond max(tol, 3 SE)")
    if abs(ev) > max(tol, 3 * sev):
        reasons.append(f"E sum V exp(-V) = {ev:.6f} is off 0 beyond max(tol, 3 SE)")
    if law.mean_offspring <= 1.0:
        reasons.append(f"mean offspring {law.mean_offspring:.6f} <= 1 (not supercritical)")

    cert = BoundaryCertificate(
        e_sum=es, e_vsum=ev, sigma2=s2, x_moment=xm, xtilde_moment=xt,
        se_e_sum=ses, se_e_vsum=sev, se_sigma2=ss2, se_x_moment=sxm,
        se_xtilde_moment=sxt, sample_count=n_samples, tolerance=tol,
        certified=not reasons, reasons=reasons)
    law.boundary_certified = cert.certified
    law.certificate = cert
    return cert


def certify_closed_form(law: _LawBase, tol: float = 1e-9) -> _LawBase:
    """Certify a law from its exact moments (for families with closed forms)."""
    ok = (abs(law.exact_e_sum() - 1.0) <= tol
          and abs(law.exact_e_vsum()) <= tol
          and law.exact_sigma2() > 0
          and law.mean_offspring > 1.0)
    law.boundary_certified = ok
    if not ok:
        raise UncertifiedLawError("closed-form moments violate the boundary normalization")
    return law


def normalize_to_boundary(raw: _LawBase, g_tol: float = 1e-10,
                          bracket: tuple[float, float] = (1e-6, 4.0),
                          max_expand: int = 40):
    """Find the tilt bringing ``raw`` to the boundary normalization.

    Solves t * psi'(t) = psi(t) for t > 0 by bisection with bracket expansion
    and returns ``(transformed_law, vartheta, shift)`` where the transformed
    displacements are vartheta * V + psi(vartheta).
    """
    def g(t):
        with np.errstate(over="ignore", invalid="ignore"):
            return t * raw.psi_prime(t) - raw.psi(t)

    # g is nondecreasing (its derivative is t psi''(t) >= 0), and for laws
    # bounded below it tends to -log E[#{V = essinf}] <= 0 when no tilt
    # exists.  Demand a clearly positive upper bracket so that asymptotic
    # approach to 0 from below is not mistaken for a crossing.
    pos_margin = 1e-8
    lo, hi = bracket
    glo = g(lo)
    ghi = g(hi)
    expand = 0
    while ghi <= pos_margin and expand < max_expand:
        hi *= 2.0
        try:
            ghi = g(hi)
        except (OverflowError, NumericError):
            ghi = math.nan
            break
        expand += 1
    if not (math.isfinite(glo) and math.isfinite(ghi)) or glo > 0 \
            or ghi <= pos_margin:
        raise NonBoundaryReducible(
            "no sign change of t psi'(t) - psi(t) on the search interval; "
            "the law cannot be reduced to the boundary case")

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if abs(gm) <= g_tol:
            break
        if glo * gm <= 0:
            hi = mid
        else:
            lo, glo = mid, gm
    vartheta = mid
    shift = raw.psi(vartheta)
    return raw.transformed(vartheta, shift), vartheta, shift
