"""
Top-down estimation of parent-child effects

Nodes are visited from the roots down the causal order of a super-graph.
A root is regressed on its own instruments and keeps the GLM residual
h_k = Y_k - phi(fitted). A child j is regressed on its instruments
(unpenalized) and its ancestors, with an l0 budget K on the ancestor block
that selects the parents. Three variants differ in what the ancestors
contribute:

    dri   residual inclusion: [X_in, Y_an, h_an], budget K' on the h block
    dps   predictor substitution: [X_in, fitted Y_an]
    none  no deconfounding: [X_in, Y_an]
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Set, Tuple

import networkx as nx
import numpy as np
from numpy.typing import NDArray

from dataset import Dataset
from errors import AncestorFailed, FitError, SingularFit
from fidelity import instrument_scale
from glm_core import DesignProblem, append_intercept, fit_subset
from model_select import Candidate, Selection, SolverEvaluator, TuningPolicy, select
from peeling import SuperGraph
from tlp_dc import TlpConfig, default_gamma


logger = logging.getLogger(__name__)


class Method(str, Enum):
    DRI = "dri"
    DPS = "dps"
    NONE = "none"

    @classmethod
    def parse(cls, name: "str | Method") -> "Method":
        if isinstance(name, Method):
            return name
        key = str(name).strip().lower()
        key = {"nodeconf": "none", "no_deconf": "none"}.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"Unknown method: {name!r}. Valid methods: dri, dps, none") from None


@dataclass
class NodeFit:
    node: int
    u: NDArray
    w: NDArray
    alpha: NDArray
    residual: NDArray
    fitted: NDArray
    selection: Optional[Selection] = None
    chosen: Optional[Candidate] = None
    intercept: float = 0.0


@dataclass
class DagEstimate:
    U: NDArray
    W: NDArray
    alpha: NDArray
    residuals: NDArray
    method: str
    failures: Dict[int, str] = field(default_factory=dict)
    selections: Dict[int, Selection] = field(default_factory=dict)
    intercepts: Optional[NDArray] = None

    def __post_init__(self):
        if self.intercepts is None:
            self.intercepts = np.zeros(self.U.shape[0])

    @property
    def p(self) -> int:
        return self.U.shape[0]

    @property
    def q(self) -> int:
        return self.W.shape[0]

    @property
    def edges(self) -> Set[Tuple[int, int]]:
        return {(int(k), int(j)) for k, j in zip(*np.nonzero(self.U))}

    def graph(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.p))
        graph.add_edges_from(self.edges)
        return graph

    def is_acyclic(self) -> bool:
        return nx.is_directed_acyclic_graph(self.graph())

    def to_json(self) -> dict:
        def triples(matrix: NDArray) -> List[list]:
            return [[int(a) + 1, int(b) + 1, float(matrix[a, b])] for a, b in zip(*np.nonzero(matrix))]

        return {
            "method": self.method,
            "p": self.p,
            "q": self.q,
            "edges": triples(self.U),
            "interventions": triples(self.W),
            "alpha": triples(self.alpha),
            "failures": {str(j + 1): reason for j, reason in sorted(self.failures.items())},
            "intercepts": {str(j + 1): float(b) for j, b in enumerate(self.intercepts) if b != 0.0},
        }

    @classmethod
    def from_json(cls, data: dict) -> "DagEstimate":
        """Rebuild the coefficient matrices; residuals are not stored in JSON."""
        p, q = int(data["p"]), int(data["q"])
        U, W, alpha = np.zeros((p, p)), np.zeros((q, p)), np.zeros((p, p))
        for matrix, key in ((U, "edges"), (W, "interventions"), (alpha, "alpha")):
            for a, b, weight in data.get(key, []):
                matrix[int(a) - 1, int(b) - 1] = float(weight)
        failures = {int(j) - 1: reason for j, reason in data.get("failures", {}).items()}
        intercepts = np.zeros(p)
        for j, b in data.get("intercepts", {}).items():
            intercepts[int(j) - 1] = float(b)
        return cls(U, W, alpha, np.zeros((0, p)), str(data.get("method", "unknown")), failures,
                   intercepts=intercepts)


def _node_error(e: FitError, node: int) -> FitError:
    if isinstance(e, SingularFit) and e.node is None:
        return SingularFit(str(e), node=node)
    return e


def fit_root(dataset: Dataset, k: int, instruments: Iterable[int]) -> NodeFit:
    """
    Unpenalized GLM fit of Y_k on its instruments plus its residual.

    Raises:
        SingularFit: with the node id, for degenerate or collinear instruments
    """
    ivs = sorted(instruments)
    if not ivs:
        raise ValueError(f"node {k + 1} has no instruments")
    family = dataset.families[k]
    Z = dataset.X[:, ivs]
    if np.any(np.std(Z, axis=0) == 0):
        raise SingularFit("instrument column has zero variance", node=k)
    if family.needs_intercept:
        Z = append_intercept(Z)
    problem = DesignProblem(Z, dataset.Y[:, k], family)
    try:
        fit = fit_subset(problem, range(problem.d))
    except FitError as e:
        raise _node_error(e, k) from e

    fitted = family.mean(problem.linear_predictor(fit.coef))
    w = np.zeros(dataset.q)
    w[ivs] = fit.coef[:len(ivs)]
    intercept = float(fit.coef[len(ivs)]) if family.needs_intercept else 0.0
    return NodeFit(node=k, u=np.zeros(dataset.p), w=w, alpha=np.zeros(dataset.p),
                   residual=dataset.Y[:, k] - fitted, fitted=fitted, intercept=intercept)


def fit_child(dataset: Dataset, j: int, ancestors: Iterable[int], instruments: Iterable[int],
              residuals: NDArray, fitted: NDArray, method: Method, policy: TuningPolicy,
              candidate: Optional[Candidate] = None) -> NodeFit:
    """
    Constrained fit of a child equation.

    The instruments (and the intercept of a non-Gaussian child) are
    unpenalized. The EBIC dimension term counts only the penalized ancestor
    columns: a for dps and none, 2a for dri.

    Args:
        dataset: observations
        j: node being fitted
        ancestors: ancestor set from the super-graph
        instruments: instruments assigned to j
        residuals: n x p residual columns, filled for every ancestor
        fitted: n x p fitted-mean columns, filled for every ancestor
        method: which ancestor block to use
        policy: tuning of (tau, K, K')
        candidate: skip tuning and use this (tau, K, K')

    Returns:
        NodeFit whose u column is supported on the selected parents
    """
    method = Method.parse(method)
    an = sorted(ancestors)
    ivs = sorted(instruments)
    if not an:
        return fit_root(dataset, j, ivs)

    family = dataset.families[j]
    m, a = len(ivs), len(an)
    blocks = [dataset.X[:, ivs]]
    blocks.append(fitted[:, an] if method is Method.DPS else dataset.Y[:, an])
    if method is Method.DRI:
        blocks.append(residuals[:, an])
    Z = np.hstack(blocks)
    scale = instrument_scale(Z)
    width = Z.shape[1]
    free = set(range(m))
    design = Z / scale
    if family.needs_intercept:
        design = append_intercept(design)
        free.add(width)
    problem = DesignProblem(design, dataset.Y[:, j], family)
    secondary = frozenset(range(m + a, m + 2 * a)) if method is Method.DRI else frozenset()
    n_penalized = width - m

    def config(c: Candidate, n: int) -> TlpConfig:
        return TlpConfig(tau=c.tau, k=c.k, gamma=default_gamma(c.tau, n, n_penalized), free_set=free,
                         secondary_set=secondary, kprime=c.kprime)

    evaluate = SolverEvaluator(problem, config)
    selection = None
    if candidate is None:
        candidates = policy.child_candidates(a, with_kprime=method is Method.DRI)
        selection = select(evaluate, policy, candidates, n=problem.n, d_candidates=n_penalized)
        candidate = selection.chosen
    try:
        fit = evaluate.fit(candidate)
    except FitError as e:
        raise _node_error(e, j) from e

    coef = fit.coef[:width] / scale
    intercept = float(fit.coef[width]) if family.needs_intercept else 0.0
    u, w, alpha = np.zeros(dataset.p), np.zeros(dataset.q), np.zeros(dataset.p)
    w[ivs] = coef[:m]
    u[an] = coef[m:m + a]
    if method is Method.DRI:
        alpha[an] = coef[m + a:]
    mean = family.mean(Z @ coef + intercept)
    logger.debug(f"Node y{j + 1} ({method.value}): parents {[k + 1 for k in np.flatnonzero(u)]} "
                 f"from ancestors {[k + 1 for k in an]}")
    return NodeFit(node=j, u=u, w=w, alpha=alpha, residual=dataset.Y[:, j] - mean, fitted=mean,
                   selection=selection, chosen=candidate, intercept=intercept)


def fit_child_dri(dataset: Dataset, j: int, ancestors: Iterable[int], instruments: Iterable[int],
                  residuals: NDArray, policy: TuningPolicy,
                  candidate: Optional[Candidate] = None) -> NodeFit:
    """Residual-inclusion child fit on [X_in, Y_an, h_an]."""
    fitted = dataset.Y - residuals
    return fit_child(dataset, j, ancestors, instruments, residuals, fitted, Method.DRI, policy, candidate)


def _fit_node(dataset: Dataset, supergraph: SuperGraph, j: int, residuals: NDArray, fitted: NDArray,
              method: Method, policy: TuningPolicy) -> NodeFit:
    ancestors = supergraph.ancestors[j]
    if not ancestors:
        return fit_root(dataset, j, supergraph.instruments[j])
    return fit_child(dataset, j, ancestors, supergraph.instruments[j], residuals, fitted, method, policy)


def run_method(dataset: Dataset, supergraph: SuperGraph, policy: TuningPolicy,
               method: Method = Method.DRI, threads: int = 1) -> DagEstimate:
    """
    Fit every node generation by generation.

    Nodes of one generation share no ancestral relation and run
    concurrently; every ancestor finishes before its descendants start.
    A failed node is recorded and its descendants are skipped.
    """
    method = Method.parse(method)
    if supergraph.p != dataset.p or supergraph.q != dataset.q:
        raise ValueError(f"super-graph is {supergraph.p}x{supergraph.q} but dataset has "
                         f"p={dataset.p}, q={dataset.q}")
    n, p, q = dataset.n, dataset.p, dataset.q
    U, W, alpha = np.zeros((p, p)), np.zeros((q, p)), np.zeros((p, p))
    residuals, fitted = np.zeros((n, p)), np.zeros((n, p))
    intercepts = np.zeros(p)
    failures: Dict[int, str] = {}
    selections: Dict[int, Selection] = {}

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for generation in supergraph.generations():
            futures = {}
            for j in generation:
                failed = sorted(k for k in supergraph.ancestors[j] if k in failures)
                if failed:
                    failures[j] = str(AncestorFailed(j, failed[0]))
                    logger.warning(failures[j])
                    continue
                futures[j] = pool.submit(_fit_node, dataset, supergraph, j, residuals, fitted, method, policy)

            for j in sorted(futures):
                try:
                    node = futures[j].result()
                except FitError as e:
                    failures[j] = str(_node_error(e, j))
                    logger.warning(f"Node y{j + 1} failed: {failures[j]}")
                    continue
                U[:, j], W[:, j], alpha[:, j] = node.u, node.w, node.alpha
                residuals[:, j], fitted[:, j] = node.residual, node.fitted
                intercepts[j] = node.intercept
                if node.selection is not None:
                    selections[j] = node.selection

    estimate = DagEstimate(U=U, W=W, alpha=alpha, residuals=residuals, method=method.value,
                           failures=failures, selections=selections, intercepts=intercepts)
    logger.info(f"{method.value} estimate: {len(estimate.edges)} edges, {len(failures)} failed nodes")
    return estimate


def run_dri(dataset: Dataset, supergraph: SuperGraph, policy: TuningPolicy, threads: int = 1) -> DagEstimate:
    return run_method(dataset, supergraph, policy, Method.DRI, threads)


def run_dps(dataset: Dataset, supergraph: SuperGraph, policy: TuningPolicy, threads: int = 1) -> DagEstimate:
    return run_method(dataset, supergraph, policy, Method.DPS, threads)


def run_no_deconf(dataset: Dataset, supergraph: SuperGraph, policy: TuningPolicy,
                  threads: int = 1) -> DagEstimate:
    return run_method(dataset, supergraph, policy, Method.NONE, threads)
