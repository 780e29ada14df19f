import numpy as np
import pytest

from accountants.applications import dpsgd_epsilon
from accountants.mmcc_accountant import (
    MMCCAccountant,
    compose_with_failure,
    generalized_mmcc,
    generalized_mmcc_all_groups,
    mmcc,
    mmcc_independent_lower,
)
from config.settings import AccountingParams, Adjacency
from utils.matrices import EncoderMatrix, binary_tree, identity, prefix_opt, tree_restart
from utils.mog import MixtureGaussian, gaussian_epsilon, pld_from_mog
from utils.pld_core import epsilon_for_delta, self_compose

REPORT_KEYS = {
    'epsilon', 'delta_total', 'delta1', 'delta2', 'max_ptilde', 'max_ptilde_over_p',
    'unique_rows', 'rows', 'runtime_ms', 'non_adaptive_only',
}


def _params(p: float, sigma: float, delta: float = 1e-6, **kwargs) -> AccountingParams:
    return AccountingParams.from_total_delta(p, sigma, delta, **kwargs)


def test_compose_with_failure_adds_bad_event_budget() -> None:
    pld = pld_from_mog(MixtureGaussian([0.9, 0.1], [0.0, 1.0], 1.0))
    epsilon, delta = compose_with_failure([(pld, 4)], 1e-7, 1e-6)
    assert delta == pytest.approx(1.1e-6)
    assert epsilon == epsilon_for_delta(self_compose(pld, 4, 1e-12), 1e-6)


@pytest.mark.slow
def test_identity_reduces_to_per_round_composition() -> None:
    params = AccountingParams(p=1 / 128, sigma=1.0, delta1=0.0, delta2=1e-6)
    result = mmcc(identity(128), params)
    assert result.epsilon == pytest.approx(dpsgd_epsilon(128, 1 / 128, 1.0, 1e-6), abs=1e-3)
    assert result.unique_row_count == 1
    assert result.row_count == 128
    assert result.max_ptilde_over_p == pytest.approx(1.0)


def test_unused_failure_budget_moves_to_the_pld_query() -> None:
    result = mmcc(identity(4), _params(0.25, 1.0))
    assert result.delta1 == 0.0
    assert result.delta2 == pytest.approx(1e-6)
    assert result.delta_total == pytest.approx(1e-6)


def test_folded_budget_matches_an_explicit_split() -> None:
    folded = mmcc(identity(4), _params(0.25, 1.0))
    explicit = mmcc(identity(4), AccountingParams(p=0.25, sigma=1.0, delta1=0.0, delta2=1e-6))
    assert folded.epsilon == explicit.epsilon


def test_generalized_with_b_one_matches_mmcc_exactly() -> None:
    params = _params(1 / 16, 10.0)
    assert generalized_mmcc(binary_tree(16), params).epsilon == mmcc(binary_tree(16), params).epsilon


def test_dedup_does_not_change_the_result() -> None:
    params = _params(1 / 8, 3.0)
    with_dedup = MMCCAccountant(threads=1, dedup=True).mmcc(binary_tree(8), params)
    without = MMCCAccountant(threads=1, dedup=False).mmcc(binary_tree(8), params)
    assert with_dedup.epsilon == without.epsilon
    assert with_dedup.unique_row_count == without.unique_row_count


def test_result_is_independent_of_thread_count() -> None:
    params = _params(1 / 8, 3.0)
    single = MMCCAccountant(threads=1).mmcc(binary_tree(8), params)
    pooled = MMCCAccountant(threads=4).mmcc(binary_tree(8), params)
    assert single.epsilon == pooled.epsilon
    assert single.max_ptilde == pooled.max_ptilde


def test_full_participation_matches_unamplified_gaussian() -> None:
    params = AccountingParams(p=1.0, sigma=5.0, delta1=0.0, delta2=1e-6)
    result = mmcc(binary_tree(2), params)
    expected = gaussian_epsilon(1e-6, np.sqrt(6.0), 5.0)
    assert result.epsilon >= expected - 1e-6
    assert result.epsilon == pytest.approx(expected, abs=1e-2)


def test_report_schema() -> None:
    report = mmcc(binary_tree(4), _params(0.25, 2.0)).to_dict()
    assert set(report) == REPORT_KEYS
    assert report['rows'] == 7
    assert report['non_adaptive_only'] is True
    assert report['delta_total'] == pytest.approx(1e-6)


def test_lower_triangular_encoder_allows_adaptive_inputs() -> None:
    assert not mmcc(identity(3), _params(0.5, 2.0)).non_adaptive_only


def test_zero_rows_after_the_last_row_are_ignored() -> None:
    tree = binary_tree(4).entries
    padded = EncoderMatrix(np.vstack([tree, np.zeros((2, 4))]))
    params = _params(0.25, 2.0)
    assert mmcc(padded, params).epsilon == mmcc(tree, params).epsilon


@pytest.mark.slow
def test_entrywise_larger_matrix_never_lowers_epsilon(rng, coarse_cfg) -> None:
    accountant = MMCCAccountant(threads=1)
    for _ in range(50):
        C = np.tril(rng.uniform(0.0, 0.5, size=(4, 4)))
        bumped = C + np.tril(rng.uniform(0.2, 0.5, size=(4, 4)) * (rng.random((4, 4)) < 0.3))
        sigma = float(rng.uniform(1.0, 2.0))
        params = AccountingParams.from_total_delta(
            0.2, sigma, 1e-5, adjacency=Adjacency.REMOVE, discretization=coarse_cfg
        )
        assert accountant.mmcc(bumped, params).epsilon >= accountant.mmcc(C, params).epsilon - 1e-9


def test_independent_rows_diagnostic_is_a_lower_bound() -> None:
    params = _params(1 / 8, 2.0)
    guarantee = mmcc(binary_tree(8), params)
    diagnostic = mmcc_independent_lower(binary_tree(8), params)
    assert diagnostic.lower_bound_only
    assert diagnostic.delta1 == 0.0
    assert diagnostic.epsilon <= guarantee.epsilon + 1e-6


def test_mmcc_rejects_min_sep_sampling() -> None:
    with pytest.raises(ValueError):
        mmcc(binary_tree(4), _params(0.1, 1.0, b=2))


def test_generalized_rejects_probability_above_one() -> None:
    with pytest.raises(ValueError):
        generalized_mmcc(binary_tree(4), _params(0.6, 1.0, b=2))


def test_all_groups_covers_the_first_group() -> None:
    matrix = tree_restart(16, 3)
    params = _params(1 / 16, 5.0, b=4)
    first = generalized_mmcc(matrix, params)
    worst = generalized_mmcc_all_groups(matrix, params)
    assert 1 <= worst.group <= 4
    assert worst.epsilon >= first.epsilon


def test_all_groups_with_b_one_is_mmcc() -> None:
    params = _params(1 / 8, 3.0)
    result = generalized_mmcc_all_groups(binary_tree(8), params)
    assert result.group == 1
    assert result.epsilon == mmcc(binary_tree(8), params).epsilon


@pytest.mark.parametrize("dedup", [True, False])
def test_dedup_flag_controls_pld_builds(monkeypatch, dedup) -> None:
    import accountants.mmcc_accountant as module

    calls = []
    original = module._signature_plds

    def counting(signature, params):
        calls.append(signature)
        return original(signature, params)

    monkeypatch.setattr(module, '_signature_plds', counting)
    result = MMCCAccountant(threads=1, dedup=dedup).mmcc(binary_tree(8), _params(1 / 8, 3.0))
    assert len(calls) == (result.unique_row_count if dedup else result.row_count)


def test_epsilon_non_increasing_in_sigma(coarse_cfg) -> None:
    accountant = MMCCAccountant(threads=1)
    values = [
        accountant.mmcc(binary_tree(4), _params(0.25, sigma, discretization=coarse_cfg)).epsilon
        for sigma in (1.5, 2.0, 3.0, 5.0)
    ]
    assert all(later <= earlier + 1e-9 for earlier, later in zip(values, values[1:]))


def test_epsilon_non_decreasing_in_p(coarse_cfg) -> None:
    accountant = MMCCAccountant(threads=1)
    values = [
        accountant.mmcc(binary_tree(4), _params(p, 2.0, discretization=coarse_cfg)).epsilon
        for p in (0.05, 0.1, 0.2, 0.4)
    ]
    assert all(later >= earlier - 1e-9 for earlier, later in zip(values, values[1:]))


def test_first_group_is_worst_for_toeplitz_encoders(coarse_cfg) -> None:
    params = _params(1 / 16, 4.0, b=2, discretization=coarse_cfg)
    result = MMCCAccountant(threads=1).generalized_mmcc_all_groups(prefix_opt(8), params)
    assert result.group == 1
    assert result.epsilon == MMCCAccountant(threads=1).generalized_mmcc(prefix_opt(8), params).epsilon
