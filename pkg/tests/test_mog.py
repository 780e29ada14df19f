import math

import numpy as np
import pytest
from scipy import stats

from config.settings import Adjacency, DiscretizationConfig
from utils.errors import OutOfRangeError
from utils.mog import (
    MixtureGaussian,
    ProductMixture,
    discretize_pmog,
    gaussian_delta,
    gaussian_epsilon,
    inverse_privacy_loss,
    loss_limits,
    mog_from_binomial,
    mixture_cdf,
    mixture_sf,
    mog_from_hypergeometric,
    pld_from_mog,
    privacy_loss,
    round_up_to_grid,
    sensitivity_pmf,
)
from utils.oracle import brute_force_pmog, hockey_stick_numeric
from utils.pld_core import delta_for_epsilon


def test_privacy_loss_of_single_gaussian_is_linear() -> None:
    mog = MixtureGaussian([1.0], [2.0], 1.5)
    x = np.linspace(-5.0, 5.0, 11)
    expected = (-2.0 * 2.0 * x - 4.0) / (2.0 * 1.5 ** 2)
    np.testing.assert_allclose(privacy_loss(mog, x), expected, rtol=1e-12, atol=1e-12)


def test_privacy_loss_is_decreasing() -> None:
    mog = MixtureGaussian([0.5, 0.3, 0.2], [0.0, 1.0, 2.5], 0.8)
    values = privacy_loss(mog, np.linspace(-10.0, 10.0, 501))
    assert np.all(np.diff(values) < 0)


def test_privacy_loss_accepts_scalars() -> None:
    mog = MixtureGaussian([1.0], [1.0], 1.0)
    assert isinstance(privacy_loss(mog, 0.0), float)
    assert privacy_loss(mog, 0.0) == pytest.approx(-0.5)


def test_mixture_rejects_bad_probabilities() -> None:
    with pytest.raises(ValueError):
        MixtureGaussian([0.5, 0.4], [0.0, 1.0], 1.0)
    with pytest.raises(ValueError):
        MixtureGaussian([1.0], [-1.0], 1.0)


def test_loss_limits() -> None:
    assert loss_limits(MixtureGaussian([0.25, 0.75], [0.0, 1.0], 1.0)) == (pytest.approx(math.log(0.25)), math.inf)
    assert loss_limits(MixtureGaussian([1.0], [1.0], 1.0)) == (-math.inf, math.inf)
    assert loss_limits(MixtureGaussian([1.0], [0.0], 1.0)) == (0.0, 0.0)


@pytest.mark.parametrize("y", [-1.5, -0.2, 0.0, 0.7, 4.0])
def test_inverse_privacy_loss_brackets_the_level(y) -> None:
    mog = MixtureGaussian([0.2, 0.8], [0.0, 1.3], 1.1)
    grid = 1e-4
    x = inverse_privacy_loss(mog, y, grid)
    assert privacy_loss(mog, x) <= y
    assert privacy_loss(mog, x - grid) > y


def test_inverse_privacy_loss_outside_range() -> None:
    mog = MixtureGaussian([0.5, 0.5], [0.0, 1.0], 1.0)
    with pytest.raises(OutOfRangeError):
        inverse_privacy_loss(mog, math.log(0.5) - 0.1, 1e-6)


@pytest.mark.parametrize("probabilities,sensitivities,y,grid,expected", [
    ([0.5, 0.5], [1.0, 0.0], 0.0, 0.25, -0.5),
    ([1.0], [1.0], -0.5, 0.1, 0.0),
    ([1.0], [1.0], -0.55, 0.1, 0.1),
])
def test_inverse_privacy_loss_worked_examples(probabilities, sensitivities, y, grid, expected) -> None:
    mog = MixtureGaussian(probabilities, sensitivities, 1.0)
    assert inverse_privacy_loss(mog, y, grid) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("probabilities,sensitivities,x,expected", [
    ([1.0], [0.0], 0.0, 0.5),
    ([1.0], [0.0], 1.959964, 0.975),
    ([0.5, 0.5], [1.0, 0.0], -0.5, 0.5),
])
def test_mixture_cdf_values(probabilities, sensitivities, x, expected) -> None:
    assert mixture_cdf(MixtureGaussian(probabilities, sensitivities, 1.0), x) == pytest.approx(expected, abs=1e-6)


def test_mixture_cdf_is_the_shifted_normal_mixture() -> None:
    mog = MixtureGaussian([0.3, 0.7], [0.5, 2.0], 1.5)
    x = np.linspace(-8.0, 6.0, 57)
    expected = 0.3 * stats.norm.cdf(x, loc=-0.5, scale=1.5) + 0.7 * stats.norm.cdf(x, loc=-2.0, scale=1.5)
    np.testing.assert_allclose(mixture_cdf(mog, x), expected, atol=1e-12)
    np.testing.assert_allclose(mixture_cdf(mog, x) + mixture_sf(mog, x), 1.0, atol=1e-12)


@pytest.mark.parametrize("adjacency", [Adjacency.REMOVE, Adjacency.ADD])
@pytest.mark.parametrize("epsilon", [0.0, 0.5, 1.0, 2.0])
def test_single_gaussian_pld_matches_analytic_delta(adjacency, epsilon) -> None:
    pld = pld_from_mog(MixtureGaussian([1.0], [1.0], 1.0), DiscretizationConfig(), adjacency)
    exact = gaussian_delta(epsilon, 1.0, 1.0)
    engine = delta_for_epsilon(pld, epsilon)
    assert exact - 1e-12 <= engine <= exact + 1e-4


def test_pld_mass_is_conserved() -> None:
    pld = pld_from_mog(MixtureGaussian([0.9, 0.1], [0.0, 2.0], 0.7), DiscretizationConfig(), Adjacency.REMOVE)
    assert pld.total_mass() == pytest.approx(1.0, abs=1e-9)


def test_zero_sensitivity_gives_point_mass() -> None:
    pld = pld_from_mog(MixtureGaussian([1.0], [0.0], 1.0))
    assert pld.masses.size == 1
    assert delta_for_epsilon(pld, 0.0) == 0.0


def test_pld_from_mog_needs_single_orientation() -> None:
    with pytest.raises(ValueError):
        pld_from_mog(MixtureGaussian([1.0], [1.0], 1.0), adjacency=Adjacency.BOTH)


def test_larger_sensitivity_never_lowers_delta(rng, coarse_cfg) -> None:
    for _ in range(50):
        k = int(rng.integers(1, 5))
        probabilities = rng.dirichlet(np.ones(k))
        sensitivities = rng.uniform(0.0, 2.0, size=k)
        bumped = sensitivities + rng.uniform(0.2, 0.5, size=k)
        sigma = float(rng.uniform(0.5, 2.0))
        low = pld_from_mog(MixtureGaussian(probabilities, sensitivities, sigma), coarse_cfg)
        high = pld_from_mog(MixtureGaussian(probabilities, bumped, sigma), coarse_cfg)
        for epsilon in (0.0, 0.5, 1.0):
            assert delta_for_epsilon(high, epsilon) >= delta_for_epsilon(low, epsilon) - 1e-9


def test_round_up_to_grid_absorbs_division_error() -> None:
    assert round_up_to_grid(np.array([1.0]), 1e-3).tolist() == [1000]
    assert round_up_to_grid(np.array([0.3]), 0.1).tolist() == [3]
    assert round_up_to_grid(np.array([0.30001]), 0.1).tolist() == [4]
    assert round_up_to_grid(np.array([0.0]), 0.1).tolist() == [0]


def test_sensitivity_pmf_of_certain_column_is_an_offset() -> None:
    cfg = DiscretizationConfig(sensitivity_grid=0.5, sensitivity_tail_mass=0.0)
    pmf = sensitivity_pmf(ProductMixture([1.0, 0.5], [1.0, 0.5], 1.0), cfg)
    assert pmf.as_dict() == {2: pytest.approx(0.5), 3: pytest.approx(0.5)}


def test_discretized_product_mixture_matches_enumeration(rng) -> None:
    grid = 0.25
    cfg = DiscretizationConfig(sensitivity_grid=grid, sensitivity_tail_mass=0.0)
    for _ in range(50):
        k = int(rng.integers(1, 13))
        probabilities = rng.uniform(0.05, 0.95, size=k)
        sensitivities = rng.integers(1, 9, size=k) * grid
        pm = ProductMixture(probabilities, sensitivities, 1.0)

        engine = discretize_pmog(pm, cfg)
        exact = brute_force_pmog(pm)
        engine_atoms = dict(zip(np.round(engine.sensitivities / grid).astype(int), engine.probabilities))
        exact_atoms = dict(zip(np.round(exact.sensitivities / grid).astype(int), exact.probabilities))
        assert set(engine_atoms) == set(exact_atoms)
        for index, mass in exact_atoms.items():
            assert engine_atoms[index] == pytest.approx(mass, abs=1e-12)


@pytest.mark.slow
def test_rounding_sensitivities_up_is_pessimistic(rng) -> None:
    cfg = DiscretizationConfig(pld_grid=1e-3, sensitivity_grid=0.1, inverse_tolerance=1e-5)
    for _ in range(50):
        k = int(rng.integers(2, 5))
        pm = ProductMixture(rng.uniform(0.1, 0.9, size=k), rng.uniform(0.05, 1.0, size=k), 1.0)
        pld = pld_from_mog(discretize_pmog(pm, cfg), cfg)
        exact = brute_force_pmog(pm)
        for epsilon in (0.0, 0.5, 1.0):
            assert delta_for_epsilon(pld, epsilon) >= hockey_stick_numeric(exact, epsilon) - 1e-9


def test_tail_folding_moves_light_upper_tail_to_the_top() -> None:
    cfg = DiscretizationConfig(sensitivity_grid=1.0, sensitivity_tail_mass=1e-9)
    pm = ProductMixture([1e-12, 1e-12], [1.0, 2.0], 1.0)
    atoms = sensitivity_pmf(pm, cfg).as_dict()
    assert set(atoms) == {0, 3}
    assert atoms[3] == pytest.approx(2e-12, rel=1e-6)
    assert sum(atoms.values()) == pytest.approx(1.0, abs=1e-15)


def test_tail_folding_disabled_keeps_every_atom() -> None:
    cfg = DiscretizationConfig(sensitivity_grid=1.0, sensitivity_tail_mass=0.0)
    atoms = sensitivity_pmf(ProductMixture([1e-12, 1e-12], [1.0, 2.0], 1.0), cfg).as_dict()
    assert set(atoms) == {0, 1, 2, 3}


def test_binomial_mixture_matches_scipy() -> None:
    mog = mog_from_binomial(20, 0.1, 0.5, 2.0)
    np.testing.assert_allclose(mog.probabilities, stats.binom.pmf(np.arange(21), 20, 0.1), rtol=1e-10)
    np.testing.assert_allclose(mog.sensitivities, 0.5 * np.arange(21))


def test_hypergeometric_mixture_matches_scipy() -> None:
    mog = mog_from_hypergeometric(100, 3, 10, 1.0, 1.0)
    np.testing.assert_allclose(mog.probabilities, stats.hypergeom.pmf(np.arange(4), 100, 3, 10), rtol=1e-10)
    assert mog.probabilities.sum() == pytest.approx(1.0)


def test_gaussian_epsilon_inverts_gaussian_delta() -> None:
    epsilon = gaussian_epsilon(1e-6, 1.0, 2.0)
    assert epsilon > 0
    assert gaussian_delta(epsilon, 1.0, 2.0) == pytest.approx(1e-6, rel=1e-6)


def test_gaussian_epsilon_zero_when_noise_dominates() -> None:
    assert gaussian_epsilon(0.5, 1e-3, 100.0) == 0.0


def test_gaussian_epsilon_depends_only_on_noise_ratio() -> None:
    base = gaussian_epsilon(1e-6, 1.0, 10.0)
    for sensitivity in (math.sqrt(2.0), math.sqrt(5.0), 3.0):
        assert gaussian_epsilon(1e-6, sensitivity, 10.0 * sensitivity) == pytest.approx(base, abs=1e-9)


def test_two_column_row_keeps_its_exact_support() -> None:
    pm = ProductMixture([0.85, 0.85], [1.0, 1.0], 2.0)
    mog = discretize_pmog(pm, DiscretizationConfig())
    np.testing.assert_allclose(mog.sensitivities, [0.0, 1.0, 2.0])
    np.testing.assert_allclose(mog.probabilities, [0.15 ** 2, 2 * 0.15 * 0.85, 0.85 ** 2], atol=1e-15)


def test_fine_grid_support_matches_enumeration(rng) -> None:
    cfg = DiscretizationConfig(sensitivity_grid=1e-3, sensitivity_tail_mass=0.0)
    for _ in range(10):
        k = int(rng.integers(2, 9))
        pm = ProductMixture(rng.uniform(0.05, 0.95, size=k), rng.integers(1, 2000, size=k) * 1e-3, 1.0)
        engine = discretize_pmog(pm, cfg)
        exact = brute_force_pmog(ProductMixture(pm.probabilities, round_up_to_grid(pm.sensitivities, 1e-3), 1.0))
        assert engine.sensitivities.size == exact.sensitivities.size
