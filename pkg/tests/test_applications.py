import pytest

from config.settings import Adjacency
from accountants.applications import (
    black_box_group_epsilon,
    dpsgd_epsilon,
    group_privacy_dpsgd_epsilon,
    last_iterate_linear_epsilon,
)


@pytest.mark.slow
def test_per_round_dpsgd_golden_value() -> None:
    assert dpsgd_epsilon(128, 1 / 128, 1.0, 1e-6) == pytest.approx(0.806, abs=0.02)


@pytest.mark.slow
def test_last_iterate_linear_golden_value() -> None:
    assert last_iterate_linear_epsilon(128, 1 / 128, 1.0, 1e-6) == pytest.approx(0.291, abs=0.02)


def test_last_iterate_beats_per_round_composition(coarse_cfg) -> None:
    per_round = dpsgd_epsilon(16, 1 / 16, 1.0, 1e-5, coarse_cfg)
    last_iterate = last_iterate_linear_epsilon(16, 1 / 16, 1.0, 1e-5, coarse_cfg)
    assert last_iterate < per_round


def test_single_round_last_iterate_is_dpsgd(coarse_cfg) -> None:
    last_iterate = last_iterate_linear_epsilon(1, 0.1, 1.0, 1e-5, coarse_cfg, Adjacency.BOTH)
    assert last_iterate == dpsgd_epsilon(1, 0.1, 1.0, 1e-5, coarse_cfg)


def test_group_of_one_is_dpsgd(coarse_cfg) -> None:
    assert group_privacy_dpsgd_epsilon(1, 0.1, 1.5, 8, 1e-5, coarse_cfg) == dpsgd_epsilon(8, 0.1, 1.5, 1e-5, coarse_cfg)


def test_group_epsilon_grows_with_group_size(coarse_cfg) -> None:
    values = [group_privacy_dpsgd_epsilon(k, 0.1, 2.0, 8, 1e-5, coarse_cfg) for k in (1, 2, 4)]
    assert values[0] < values[1] < values[2]


def test_group_accounting_beats_black_box_conversion(coarse_cfg) -> None:
    rounds, p, sigma, delta = 16, 1 / 16, 2.0, 1e-5
    tight = group_privacy_dpsgd_epsilon(2, p, sigma, rounds, delta, coarse_cfg)
    black_box = black_box_group_epsilon(2, lambda d: dpsgd_epsilon(rounds, p, sigma, d, coarse_cfg), delta)
    assert tight < black_box


def test_fixed_batches_use_hypergeometric_sensitivity(coarse_cfg) -> None:
    epsilon = group_privacy_dpsgd_epsilon(
        2, 0.0, 2.0, 8, 1e-5, coarse_cfg, dataset_size=160, batch_size=10
    )
    assert epsilon > 0


def test_fixed_batches_need_both_sizes() -> None:
    with pytest.raises(ValueError):
        group_privacy_dpsgd_epsilon(2, 0.1, 1.0, 8, 1e-5, dataset_size=100)


def test_black_box_with_constant_epsilon() -> None:
    assert black_box_group_epsilon(3, lambda delta: 0.25, 1e-6) == pytest.approx(0.75)


@pytest.mark.parametrize("n,p,sigma,delta", [(0, 0.1, 1.0, 1e-5), (4, 1.5, 1.0, 1e-5), (4, 0.1, 0.0, 1e-5), (4, 0.1, 1.0, 1.0)])
def test_bad_arguments_rejected(n, p, sigma, delta) -> None:
    with pytest.raises(ValueError):
        dpsgd_epsilon(n, p, sigma, delta)


@pytest.mark.parametrize("p", [1 / 16, 1 / 8, 1 / 4])
def test_last_iterate_never_exceeds_per_round_composition(coarse_cfg, p) -> None:
    for sigma in (0.8, 1.0, 2.0):
        per_round = dpsgd_epsilon(16, p, sigma, 1e-5, coarse_cfg)
        assert last_iterate_linear_epsilon(16, p, sigma, 1e-5, coarse_cfg) <= per_round + 1e-9


def test_last_iterate_defaults_to_add_orientation(coarse_cfg) -> None:
    default = last_iterate_linear_epsilon(16, 1 / 16, 1.0, 1e-5, coarse_cfg)
    add = last_iterate_linear_epsilon(16, 1 / 16, 1.0, 1e-5, coarse_cfg, Adjacency.ADD)
    both = last_iterate_linear_epsilon(16, 1 / 16, 1.0, 1e-5, coarse_cfg, Adjacency.BOTH)
    assert default == add
    assert add <= both
