"""
Tests for the fidelity model.
"""

import pytest
import numpy as np

import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))

from dataset import Dataset
from errors import InvalidDataset
from fidelity import FidelityMatrix, fit_column, fit_fidelity, instrument_scale
from model_select import Candidate, TuningPolicy
from simgen import SimConfig, five_node_example, simulate

import allure


@pytest.fixture
def gaussian_chain():
    """Y1 = 2 X1 + e, Y2 = 1.5 Y1 + 2 X2 + e, Y3 = 2 X3 + e."""
    rng = np.random.default_rng(42)
    n = 500
    X = rng.standard_normal((n, 3))
    e = 0.5 * rng.standard_normal((n, 3))
    Y = np.zeros((n, 3))
    Y[:, 0] = 2.0 * X[:, 0] + e[:, 0]
    Y[:, 1] = 1.5 * Y[:, 0] + 2.0 * X[:, 1] + e[:, 1]
    Y[:, 2] = 2.0 * X[:, 2] + e[:, 2]
    return Dataset(Y, X, ("gaussian",) * 3)


@pytest.fixture
def policy():
    return TuningPolicy(method="ebic", tau_grid=(0.05, 0.2, 1.0))


class TestFidelity:

    @allure.feature("Fidelity")
    @allure.story("Support")
    @pytest.mark.unit
    def test_supports_follow_ancestry(self, gaussian_chain, policy):
        matrix = fit_fidelity(gaussian_chain, policy)
        assert matrix.supports == [(0,), (0, 1), (2,)]

    @allure.feature("Fidelity")
    @allure.story("Coefficients")
    @pytest.mark.unit
    def test_coefficients_on_original_scale(self, gaussian_chain, policy):
        matrix = fit_fidelity(gaussian_chain, policy)
        assert matrix.V[0, 0] == pytest.approx(2.0, abs=0.1)
        np.testing.assert_allclose(matrix.V[:, 1], [3.0, 2.0, 0.0], atol=0.2)

    @allure.feature("Fidelity")
    @allure.story("Determinism")
    @pytest.mark.unit
    def test_thread_count_does_not_change_result(self, gaussian_chain, policy):
        single = fit_fidelity(gaussian_chain, policy, threads=1)
        pooled = fit_fidelity(gaussian_chain, policy, threads=3)
        np.testing.assert_array_equal(single.V, pooled.V)
        assert single.chosen == pooled.chosen

    @allure.feature("Fidelity")
    @allure.story("Forced Candidate")
    @pytest.mark.unit
    def test_fit_column_with_given_candidate_skips_tuning(self, gaussian_chain, policy):
        fit = fit_column(gaussian_chain, 1, policy, Candidate(0.2, 1))
        assert fit.selection is None
        assert fit.chosen == Candidate(0.2, 1)
        assert fit.support == (0,)

    @allure.feature("Fidelity")
    @allure.story("Cross-Validation")
    @pytest.mark.unit
    def test_cross_validated_column(self, gaussian_chain):
        fit = fit_column(gaussian_chain, 0, TuningPolicy(method="cv", folds=3, tau_grid=(0.2,), k_grid=(1, 2)))
        assert fit.support == (0,)
        assert len(fit.selection.rows) == 2

    @allure.feature("Fidelity")
    @allure.story("Validation")
    @pytest.mark.unit
    def test_single_observation_rejected(self, policy):
        dataset = Dataset(np.zeros((1, 1)), np.ones((1, 1)), ("gaussian",))
        with pytest.raises(InvalidDataset):
            fit_fidelity(dataset, policy)

    @allure.feature("Fidelity")
    @allure.story("Serialization")
    @pytest.mark.unit
    def test_json_uses_one_based_indices(self, gaussian_chain, policy):
        data = fit_fidelity(gaussian_chain, policy).to_json()
        assert data["supports"] == {"1": [1], "2": [1, 2], "3": [3]}
        assert data["chosen"]["2"]["k"] == 2
        assert (data["p"], data["q"]) == (3, 3)

    @allure.feature("Fidelity")
    @allure.story("Scaling")
    @pytest.mark.unit
    def test_constant_instrument_keeps_unit_scale(self):
        X = np.column_stack([np.ones(4), [1.0, -1.0, 1.0, -1.0]])
        np.testing.assert_allclose(instrument_scale(X), [1.0, 1.0])

    @allure.feature("Fidelity")
    @allure.story("Column Replacement")
    @pytest.mark.unit
    def test_with_column_leaves_original_untouched(self, gaussian_chain, policy):
        matrix = FidelityMatrix(np.zeros((3, 3)))
        updated = matrix.with_column(fit_column(gaussian_chain, 0, policy, Candidate(0.2, 1)))
        assert not matrix.V.any()
        assert updated.supports[0] == (0,)
        assert updated.chosen[0] == Candidate(0.2, 1)


class TestFidelityStructure:

    @allure.feature("Fidelity")
    @allure.story("Equivariance")
    @pytest.mark.unit
    def test_permuting_primaries_permutes_columns(self, gaussian_chain, policy):
        permutation = [2, 0, 1]
        matrix = fit_fidelity(gaussian_chain, policy)
        permuted = fit_fidelity(gaussian_chain.permute_primaries(permutation), policy)
        np.testing.assert_array_equal(permuted.V, matrix.V[:, permutation])
        assert permuted.chosen == [matrix.chosen[j] for j in permutation]

    @allure.feature("Fidelity")
    @allure.story("Confounders")
    @pytest.mark.integration
    def test_confounders_do_not_change_supports(self, policy):
        # Arrange
        base = dict(p=4, q=4, n=1000, graph="chain", outcome="gaussian", alpha0=2.0, beta1=1.0, alpha1=2.0,
                    seed=3)
        confounded, _ = simulate(SimConfig(**base, confounded=True))
        clean, _ = simulate(SimConfig(**base, confounded=False))

        # Act
        with_h = fit_fidelity(confounded, policy)
        without_h = fit_fidelity(clean, policy)

        # Assert
        np.testing.assert_array_equal(confounded.X, clean.X)
        assert with_h.supports == without_h.supports == [(0,), (0, 1), (0, 1, 2), (0, 1, 2, 3)]

    @allure.feature("Fidelity")
    @allure.story("Worked Example")
    @pytest.mark.integration
    def test_five_node_support_pattern(self, policy):
        # Arrange
        dataset, truth = five_node_example(n=2000, seed=0)
        ancestors = {j: {k for k, b in truth.ancestral if b == j} for j in range(5)}

        # Act
        matrix = fit_fidelity(dataset, policy)

        # Assert
        assert matrix.supports[0] == (0,)
        assert matrix.supports[4] == (4,)
        for j, support in enumerate(matrix.supports):
            assert j in support
            assert set(support) <= ancestors[j] | {j}

    @allure.feature("Fidelity")
    @allure.story("Intercept")
    @pytest.mark.unit
    def test_count_columns_get_an_intercept_outside_v(self, policy):
        # Arrange
        dataset, _ = simulate(SimConfig(p=4, q=4, n=500, graph="hub", outcome="count", seed=1))

        # Act
        fits = [fit_column(dataset, j, policy) for j in range(4)]

        # Assert
        assert fits[0].support == (0,)
        for j, fit in enumerate(fits):
            assert j in fit.support
            assert set(fit.support) <= {0, j}
            assert fit.coef.shape == (4,)
            assert fit.intercept > 0.5

    @allure.feature("Fidelity")
    @allure.story("Intercept")
    @pytest.mark.unit
    def test_gaussian_columns_have_no_intercept(self, gaussian_chain, policy):
        assert fit_column(gaussian_chain, 0, policy).intercept == 0.0
