"""
Tests for synthetic data generation.
"""

import pytest
import networkx as nx
import numpy as np

import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))

from errors import ConfigError, InvalidCovariance
from glm_core import Family
from simgen import (GraphKind, Outcome, SimConfig, five_node_example, equicorrelation_factor, gen_exogenous,
                    gen_graph, poisson_copula, simulate)

import allure


class TestSimConfig:

    @allure.feature("Simulation")
    @allure.story("Configuration")
    @pytest.mark.unit
    def test_fewer_instruments_than_nodes_rejected(self):
        with pytest.raises(ConfigError, match="q >= p") as excinfo:
            SimConfig(p=5, q=3, n=10)
        assert excinfo.value.field == "q"

    @allure.feature("Simulation")
    @allure.story("Configuration")
    @pytest.mark.unit
    def test_coefficient_defaults_follow_outcome_and_graph(self):
        cfg = SimConfig(p=4, q=4, n=10, graph="chain", outcome="count")
        assert (cfg.alpha0, cfg.beta1, cfg.alpha1) == (5.0, 0.5, 3.0)
        assert cfg.family is Family.POISSON

    @allure.feature("Simulation")
    @allure.story("Configuration")
    @pytest.mark.unit
    def test_unknown_graph(self):
        with pytest.raises(ConfigError) as excinfo:
            SimConfig(p=4, q=4, n=10, graph="star")
        assert excinfo.value.field == "graph"


class TestGraphs:

    @allure.feature("Simulation")
    @allure.story("Graphs")
    @pytest.mark.unit
    def test_hub(self):
        truth = gen_graph(SimConfig(p=5, q=5, n=10, graph=GraphKind.HUB))
        assert truth.edges == {(0, j) for j in range(1, 5)}
        assert truth.roots() == {0}

    @allure.feature("Simulation")
    @allure.story("Graphs")
    @pytest.mark.unit
    def test_chain_segments(self):
        truth = gen_graph(SimConfig(p=10, q=10, n=10, graph=GraphKind.CHAIN))
        assert truth.edges == {(0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (6, 7), (8, 9)}

    @allure.feature("Simulation")
    @allure.story("Graphs")
    @pytest.mark.unit
    def test_random_graph_is_acyclic_and_seeded(self):
        cfg = SimConfig(p=30, q=30, n=10, graph=GraphKind.RANDOM, seed=3)
        truth = gen_graph(cfg)
        graph = nx.DiGraph(list(truth.edges))
        assert nx.is_directed_acyclic_graph(graph)
        assert gen_graph(cfg).edges == truth.edges
        position = {node: i for i, node in enumerate(truth.order)}
        assert all(position[k] < position[j] for k, j in truth.edges)

    @allure.feature("Simulation")
    @allure.story("Graphs")
    @pytest.mark.unit
    def test_random_graph_edge_count_matches_expectation(self):
        counts = [len(gen_graph(SimConfig(p=100, q=100, n=1, graph="random", expected_edges=73.0, seed=s)).edges)
                  for s in range(20)]
        assert all(40 <= c <= 110 for c in counts)
        assert abs(np.mean(counts) - 73.0) < 8.0

    @allure.feature("Simulation")
    @allure.story("Effects")
    @pytest.mark.unit
    def test_scaled_truth_uses_role_specific_strengths(self):
        cfg = SimConfig(p=3, q=3, n=10, graph="hub", alpha0=5.0, beta1=2.5, alpha1=2.0)
        truth = gen_graph(cfg).scaled(cfg.alpha0, cfg.beta1, cfg.alpha1)
        assert truth.W[0, 0] == 5.0
        assert truth.W[1, 1] == 2.0
        assert truth.U[0, 2] == 2.5


class TestExogenous:

    @allure.feature("Simulation")
    @allure.story("Confounders")
    @pytest.mark.unit
    def test_equicorrelation_factor(self):
        factor = equicorrelation_factor(3, 0.95)
        sigma = factor @ factor.T
        np.testing.assert_allclose(np.diag(sigma), 1.0)
        assert sigma[0, 2] == pytest.approx(0.95)

    @allure.feature("Simulation")
    @allure.story("Confounders")
    @pytest.mark.unit
    @pytest.mark.parametrize("corr", [1.0, -0.5])
    def test_equicorrelation_outside_psd_range(self, corr):
        with pytest.raises(InvalidCovariance):
            equicorrelation_factor(3, corr)

    @allure.feature("Simulation")
    @allure.story("Confounders")
    @pytest.mark.unit
    def test_sample_correlation(self):
        _, h = gen_exogenous(SimConfig(p=2, q=2, n=5000, seed=1))
        assert 0.9 <= np.corrcoef(h.T)[0, 1] <= 0.98

    @allure.feature("Simulation")
    @allure.story("Confounders")
    @pytest.mark.unit
    def test_unconfounded_has_zero_confounders(self):
        X, h = gen_exogenous(SimConfig(p=2, q=3, n=50, confounded=False))
        assert X.shape == (50, 3)
        assert not h.any()


class TestOutcomes:

    @allure.feature("Simulation")
    @allure.story("Outcomes")
    @pytest.mark.unit
    def test_binary_outcomes(self):
        dataset, _ = simulate(SimConfig(p=4, q=4, n=200, outcome="binary"))
        assert set(np.unique(dataset.Y)) <= {0.0, 1.0}
        assert dataset.families == (Family.BERNOULLI,) * 4

    @allure.feature("Simulation")
    @allure.story("Outcomes")
    @pytest.mark.unit
    def test_count_marginals(self):
        dataset, _ = simulate(SimConfig(p=3, q=3, n=2000, outcome="count", poisson_rate=5.0))
        means = dataset.Y.mean(axis=0)
        assert np.all(np.abs(means - 5.0) < 3 * np.sqrt(5.0 / 2000) + 0.05)
        assert np.all(dataset.Y == np.round(dataset.Y))

    @allure.feature("Simulation")
    @allure.story("Outcomes")
    @pytest.mark.unit
    def test_copula_preserves_ranks(self):
        latent = np.random.default_rng(0).standard_normal(100)
        counts = poisson_copula(latent, 3.0)
        assert np.all(np.diff(counts[np.argsort(latent)]) >= 0)

    @allure.feature("Simulation")
    @allure.story("Outcomes")
    @pytest.mark.unit
    def test_unconfounded_gaussian_root_effect(self):
        cfg = SimConfig(p=3, q=3, n=2000, outcome=Outcome.GAUSSIAN, confounded=False, alpha0=1.5)
        dataset, _ = simulate(cfg)
        x, y = dataset.X[:, 0], dataset.Y[:, 0]
        estimate = x @ y / (x @ x)
        assert estimate == pytest.approx(1.5, abs=3 / np.sqrt(2000))

    @allure.feature("Simulation")
    @allure.story("Determinism")
    @pytest.mark.unit
    def test_same_seed_same_data(self):
        cfg = SimConfig(p=5, q=6, n=100, graph="random", outcome="count", seed=11)
        first, truth_a = simulate(cfg)
        second, truth_b = simulate(cfg)
        np.testing.assert_array_equal(first.Y, second.Y)
        np.testing.assert_array_equal(first.X, second.X)
        np.testing.assert_array_equal(truth_a.U, truth_b.U)

    @allure.feature("Simulation")
    @allure.story("Example Model")
    @pytest.mark.unit
    def test_five_node_example(self):
        dataset, truth = five_node_example(n=100, seed=2)
        assert truth.edges == {(0, 1), (1, 2), (0, 3), (2, 3)}
        assert truth.ancestral == {(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)}
        assert dataset.Y.shape == (100, 5)
