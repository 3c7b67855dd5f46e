import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bramble.errors import (ConfigurationError, DegenerateLawError,
                            NonBoundaryReducible, UncertifiedLawError)
from bramble.laws import (BinaryGaussianLaw, CategoricalCount, CountGaussianLaw,
                          PoissonCount, TabularLaw, build_law,
                          certify_closed_form, normalize_to_boundary,
                          validate_boundary)

LOG2 = math.log(2.0)


# ---------------------------------------------------------------------------
# closed-form moments
# ---------------------------------------------------------------------------

def test_binary_gaussian_boundary_moments():
    law = BinaryGaussianLaw(2 * LOG2, 2 * LOG2)
    assert law.exact_e_sum() == pytest.approx(1.0, abs=1e-12)
    assert law.exact_e_vsum() == pytest.approx(0.0, abs=1e-12)
    assert law.exact_sigma2() == pytest.approx(2 * LOG2, rel=1e-12)


def test_tabular_deterministic_atoms_fail_certificate():
    # two children both at log 2: e_sum = 1 but e_vsum = log 2
    law = TabularLaw([(1.0, [LOG2, LOG2])])
    assert law.exact_e_sum() == pytest.approx(1.0, abs=1e-12)
    assert law.exact_e_vsum() == pytest.approx(LOG2, abs=1e-12)
    cert = validate_boundary(law, 1000)
    assert not cert.certified
    assert any("V exp(-V)" in r for r in cert.reasons)


def test_count_gaussian_poisson_closed_form():
    law = CountGaussianLaw(PoissonCount(2.0), 2 * LOG2, 2 * LOG2)
    assert law.exact_e_sum() == pytest.approx(1.0, abs=1e-12)
    assert law.exact_e_vsum() == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------------
# Monte Carlo certification
# ---------------------------------------------------------------------------

def test_validate_boundary_within_4se():
    law = BinaryGaussianLaw(2 * LOG2, 2 * LOG2)
    cert = validate_boundary(law, 100_000, rng=np.random.default_rng(3))
    assert cert.certified
    assert abs(cert.e_sum - 1.0) <= 4 * cert.se_e_sum
    assert abs(cert.e_vsum) <= 4 * cert.se_e_vsum
    assert abs(cert.sigma2 - 2 * LOG2) <= 4 * cert.se_sigma2
    assert law.boundary_certified


def test_validate_boundary_rejects_off_boundary():
    law = BinaryGaussianLaw(1.0, 1.0)
    cert = validate_boundary(law, 50_000, rng=np.random.default_rng(4))
    assert not cert.certified
    with pytest.raises(UncertifiedLawError):
        law.require_certified()


def test_degenerate_sigma2_raises():
    # single child fixed at 0: sum V^2 e^{-V} = 0 identically
    law = TabularLaw([(1.0, [0.0])])
    with pytest.raises(DegenerateLawError):
        validate_boundary(law, 1000)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def test_normalize_poisson_oracle():
    raw = CountGaussianLaw(PoissonCount(2.0), 0.0, 1.0)
    law, vartheta, shift = normalize_to_boundary(raw)
    assert vartheta == pytest.approx(math.sqrt(2 * LOG2), rel=1e-6)
    assert shift == pytest.approx(2 * LOG2, rel=1e-6)
    assert law.mu == pytest.approx(2 * LOG2, rel=1e-6)
    assert law.s2 == pytest.approx(2 * LOG2, rel=1e-6)


def test_normalize_near_critical_oracle():
    raw = CountGaussianLaw(CategoricalCount([1, 2], [0.9, 0.1]), 0.0, 1.0)
    _, vartheta, _ = normalize_to_boundary(raw)
    assert vartheta == pytest.approx(math.sqrt(2 * math.log(1.1)), rel=1e-6)


def test_normalize_rejects_pm1_tabular():
    with pytest.raises(NonBoundaryReducible):
        normalize_to_boundary(TabularLaw([(1.0, [1.0, -1.0])]))


def test_normalize_idempotent_on_boundary_law():
    law = BinaryGaussianLaw(2 * LOG2, 2 * LOG2)
    _, vartheta, shift = normalize_to_boundary(law)
    assert abs(vartheta - 1.0) < 1e-6
    assert abs(shift) < 1e-6


@given(mu=st.floats(-1.0, 1.0), s2=st.floats(0.2, 2.0),
       p2=st.floats(0.05, 0.9))
@settings(max_examples=25, deadline=None)
def test_normalize_lands_on_boundary(mu, s2, p2):
    raw = CountGaussianLaw(CategoricalCount([1, 2], [1 - p2, p2]), mu, s2)
    law, vartheta, _ = normalize_to_boundary(raw)
    assert vartheta > 0
    assert law.exact_e_sum() == pytest.approx(1.0, abs=1e-8)
    assert law.exact_e_vsum() == pytest.approx(0.0, abs=1e-8)


# ---------------------------------------------------------------------------
# build_law and config validation
# ---------------------------------------------------------------------------

def test_build_law_families():
    assert isinstance(build_law({"family": "binary_gaussian",
                                 "mu": 1.0, "s2": 1.0}), BinaryGaussianLaw)
    assert isinstance(build_law({"family": "tabular",
                                 "atoms": [[1.0, [0.5]]]}), TabularLaw)
    with pytest.raises(ConfigurationError):
        build_law({"family": "unknown"})
    with pytest.raises(ConfigurationError):
        build_law({})


def test_count_law_validation():
    with pytest.raises(ConfigurationError):
        CategoricalCount([1, 2], [0.7, 0.2])   # probs do not sum to 1
    with pytest.raises(ConfigurationError):
        CategoricalCount([-1], [1.0])
    with pytest.raises(ConfigurationError):
        PoissonCount(0.0)
    with pytest.raises(ConfigurationError):
        CountGaussianLaw(PoissonCount(2.0), 0.0, -1.0)


def test_tabular_extinction_atom_mean():
    law = TabularLaw([(0.3, []), (0.7, [0.1, 0.2, 0.3])])
    assert law.mean_offspring == pytest.approx(2.1)
    counts, disp = law.sample_children(np.random.default_rng(0), 1000)
    assert set(np.unique(counts)) <= {0, 3}
    assert disp.size == int(counts.sum())


def test_sampled_moments_match_closed_form():
    law = CountGaussianLaw(PoissonCount(2.0), 2 * LOG2, 2 * LOG2)
    cert = validate_boundary(law, 100_000, rng=np.random.default_rng(9))
    assert abs(cert.e_sum - law.exact_e_sum()) <= 4 * cert.se_e_sum
    assert abs(cert.e_vsum - law.exact_e_vsum()) <= 4 * cert.se_e_vsum
    assert abs(cert.sigma2 - law.exact_sigma2()) <= 4 * cert.se_sigma2
