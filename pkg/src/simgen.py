"""
Synthetic data generation

Builds a ground-truth DAG (hub, chains of fixed length, or a random DAG),
self-paired instruments (X_j intervenes on Y_j only), equicorrelated
Gaussian confounders, and samples the primary variables in topological
order as binary (logistic), Gaussian, or copula-transformed count outcomes.

Random streams: SeedSequence(seed).spawn(4) gives the graph, instrument,
confounder and outcome streams; the last three are spawned once more per
column, so output never depends on thread count or sampling order.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Set, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy import linalg, special, stats

from dataset import Dataset
from errors import ConfigError, InvalidCovariance
from glm_core import Family
from peeling import transitive_closure


logger = logging.getLogger(__name__)


class GraphKind(str, Enum):
    HUB = "hub"
    CHAIN = "chain"
    RANDOM = "random"


class Outcome(str, Enum):
    BINARY = "binary"
    COUNT = "count"
    GAUSSIAN = "gaussian"

    @property
    def family(self) -> Family:
        return {Outcome.BINARY: Family.BERNOULLI, Outcome.COUNT: Family.POISSON,
                Outcome.GAUSSIAN: Family.GAUSSIAN}[self]


# (alpha0, beta1, alpha1): root instrument, parent, child instrument strengths
DEFAULT_COEFFICIENTS = {
    (Outcome.BINARY, GraphKind.HUB): (5.0, 2.5, 2.0),
    (Outcome.BINARY, GraphKind.CHAIN): (5.0, 2.5, 3.0),
    (Outcome.BINARY, GraphKind.RANDOM): (5.0, 3.0, 3.0),
    (Outcome.COUNT, GraphKind.HUB): (5.0, 0.5, 2.0),
    (Outcome.COUNT, GraphKind.CHAIN): (5.0, 0.5, 3.0),
    (Outcome.COUNT, GraphKind.RANDOM): (4.0, 1.0, 2.0),
}
EXPECTED_EDGES_PER_NODE = 0.73


@dataclass(frozen=True)
class SimConfig:
    p: int
    q: int
    n: int
    graph: GraphKind = GraphKind.HUB
    outcome: Outcome = Outcome.BINARY
    alpha0: Optional[float] = None
    beta1: Optional[float] = None
    alpha1: Optional[float] = None
    confounded: bool = True
    confounder_corr: float = 0.95
    poisson_rate: float = 5.0
    noise_sd: float = 1.0
    segment_len: int = 4
    expected_edges: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "graph", GraphKind(self.graph))
        except ValueError:
            raise ConfigError(f"unknown graph {self.graph!r}; valid: hub, chain, random", "graph") from None
        try:
            object.__setattr__(self, "outcome", Outcome(self.outcome))
        except ValueError:
            raise ConfigError(f"unknown outcome {self.outcome!r}; valid: binary, count, gaussian", "outcome") from None

        defaults = DEFAULT_COEFFICIENTS.get((self.outcome, self.graph),
                                            DEFAULT_COEFFICIENTS[(Outcome.BINARY, self.graph)])
        for name, default in zip(("alpha0", "beta1", "alpha1"), defaults):
            value = getattr(self, name)
            object.__setattr__(self, name, float(default if value is None else value))
            if not math.isfinite(getattr(self, name)):
                raise ConfigError("coefficient must be finite", name)
        if self.expected_edges is None:
            object.__setattr__(self, "expected_edges", EXPECTED_EDGES_PER_NODE * self.p)

        if self.p < 2:
            raise ConfigError(f"need at least 2 primary variables, got {self.p}", "p")
        if self.q < self.p:
            raise ConfigError(f"q >= p is required so every node has its own instrument (p={self.p}, q={self.q})", "q")
        if self.n < 1:
            raise ConfigError(f"n must be positive, got {self.n}", "n")
        if not self.poisson_rate > 0:
            raise ConfigError("must be positive", "poisson_rate")
        if not self.noise_sd > 0:
            raise ConfigError("must be positive", "noise_sd")
        if self.segment_len < 2:
            raise ConfigError("chains need at least 2 nodes", "segment_len")
        if not 0 <= self.expected_edges <= self.p * (self.p - 1) / 2:
            raise ConfigError(f"must lie in [0, p(p-1)/2], got {self.expected_edges}", "expected_edges")

    @property
    def family(self) -> Family:
        return self.outcome.family


@dataclass(frozen=True)
class GroundTruth:
    """True effect matrices U (p x p) and W (q x p) plus the sampling order."""

    U: NDArray
    W: NDArray
    order: Tuple[int, ...]

    @property
    def p(self) -> int:
        return self.U.shape[0]

    @property
    def q(self) -> int:
        return self.W.shape[0]

    @property
    def edges(self) -> Set[Tuple[int, int]]:
        return {(int(k), int(j)) for k, j in zip(*np.nonzero(self.U))}

    @property
    def ancestral(self) -> Set[Tuple[int, int]]:
        return transitive_closure(self.edges)

    def roots(self) -> Set[int]:
        return {j for j in range(self.p) if not np.any(self.U[:, j])}

    def scaled(self, alpha0: float, beta1: float, alpha1: float) -> "GroundTruth":
        """Apply root-instrument, parent and child-instrument strengths to the unit pattern."""
        roots = self.roots()
        W = self.W.copy()
        for j in range(self.p):
            W[:, j] *= alpha0 if j in roots else alpha1
        return GroundTruth(beta1 * self.U, W, self.order)

    def to_json(self) -> dict:
        def triples(matrix: NDArray):
            return [[int(a) + 1, int(b) + 1, float(matrix[a, b])] for a, b in zip(*np.nonzero(matrix))]

        return {
            "method": "truth",
            "p": self.p,
            "q": self.q,
            "edges": triples(self.U),
            "interventions": triples(self.W),
            "alpha": [],
            "ancestral": [[k + 1, j + 1] for k, j in sorted(self.ancestral)],
            "order": [j + 1 for j in self.order],
        }


def _streams(seed: int):
    return np.random.SeedSequence(seed).spawn(4)


def gen_graph(cfg: SimConfig) -> GroundTruth:
    """Unit-weight adjacency and the diagonal intervention pattern."""
    p, q = cfg.p, cfg.q
    U = np.zeros((p, p))
    order = tuple(range(p))
    if cfg.graph is GraphKind.HUB:
        U[0, 1:] = 1.0
    elif cfg.graph is GraphKind.CHAIN:
        for start in range(0, p, cfg.segment_len):
            segment = range(start, min(start + cfg.segment_len, p))
            for k, j in zip(segment, list(segment)[1:]):
                U[k, j] = 1.0
    else:
        rng = np.random.default_rng(_streams(cfg.seed)[0])
        permutation = rng.permutation(p)
        probability = min(1.0, 2.0 * cfg.expected_edges / (p * (p - 1)))
        draws = rng.random((p, p))
        for a in range(p):
            for b in range(a + 1, p):
                if draws[a, b] < probability:
                    U[permutation[a], permutation[b]] = 1.0
        order = tuple(int(j) for j in permutation)

    W = np.zeros((q, p))
    W[np.arange(p), np.arange(p)] = 1.0
    return GroundTruth(U, W, order)


def equicorrelation_factor(p: int, corr: float) -> NDArray:
    """
    Lower Cholesky factor of the p x p matrix with unit diagonal and constant off-diagonal.

    Raises:
        InvalidCovariance: unless -1/(p-1) < corr < 1
    """
    lower = -1.0 / (p - 1) if p > 1 else -math.inf
    if not lower < corr < 1.0:
        raise InvalidCovariance(f"equicorrelation {corr} outside ({lower:.4g}, 1) for p={p}", "confounder_corr")
    sigma = np.full((p, p), corr)
    np.fill_diagonal(sigma, 1.0)
    return linalg.cholesky(sigma, lower=True)


def gen_exogenous(cfg: SimConfig) -> Tuple[NDArray, NDArray]:
    """Instruments X (n x q) iid N(0,1) and confounders h (n x p)."""
    _, x_stream, h_stream, _ = _streams(cfg.seed)
    X = np.column_stack([np.random.default_rng(s).standard_normal(cfg.n) for s in x_stream.spawn(cfg.q)])
    if not cfg.confounded:
        return X, np.zeros((cfg.n, cfg.p))
    factor = equicorrelation_factor(cfg.p, cfg.confounder_corr)
    Z = np.column_stack([np.random.default_rng(s).standard_normal(cfg.n) for s in h_stream.spawn(cfg.p)])
    return X, Z @ factor.T


def _outcome_rngs(cfg: SimConfig):
    return [np.random.default_rng(s) for s in _streams(cfg.seed)[3].spawn(cfg.p)]


def _linear_predictor(truth: GroundTruth, Y: NDArray, X: NDArray, h: NDArray, j: int) -> NDArray:
    return Y @ truth.U[:, j] + X @ truth.W[:, j] + h[:, j]


def sample_binary(cfg: SimConfig, truth: GroundTruth, X: NDArray, h: NDArray) -> NDArray:
    """Logistic outcomes sampled in topological order."""
    rngs = _outcome_rngs(cfg)
    Y = np.zeros((cfg.n, cfg.p))
    for j in truth.order:
        probability = special.expit(_linear_predictor(truth, Y, X, h, j))
        Y[:, j] = (rngs[j].random(cfg.n) < probability).astype(float)
    return Y


def sample_gaussian(cfg: SimConfig, truth: GroundTruth, X: NDArray, h: NDArray) -> NDArray:
    rngs = _outcome_rngs(cfg)
    Y = np.zeros((cfg.n, cfg.p))
    for j in truth.order:
        Y[:, j] = _linear_predictor(truth, Y, X, h, j) + cfg.noise_sd * rngs[j].standard_normal(cfg.n)
    return Y


def poisson_copula(latent: NDArray, rate: float) -> NDArray:
    """Map a latent column to Poisson(rate) marginals through its midranks."""
    u = stats.rankdata(latent, method="average") / (len(latent) + 1)
    return stats.poisson.ppf(u, rate).astype(float)


def sample_count_copula(cfg: SimConfig, truth: GroundTruth, X: NDArray, h: NDArray) -> NDArray:
    """Gaussian latent SEM on observed counts, each column mapped to Poisson marginals."""
    rngs = _outcome_rngs(cfg)
    Y = np.zeros((cfg.n, cfg.p))
    for j in truth.order:
        latent = _linear_predictor(truth, Y, X, h, j) + cfg.noise_sd * rngs[j].standard_normal(cfg.n)
        Y[:, j] = poisson_copula(latent, cfg.poisson_rate)
    return Y


_SAMPLERS = {
    Outcome.BINARY: sample_binary,
    Outcome.COUNT: sample_count_copula,
    Outcome.GAUSSIAN: sample_gaussian,
}


def simulate(cfg: SimConfig) -> Tuple[Dataset, GroundTruth]:
    """Dataset and effect-scaled ground truth for a configuration."""
    truth = gen_graph(cfg).scaled(cfg.alpha0, cfg.beta1, cfg.alpha1)
    X, h = gen_exogenous(cfg)
    Y = _SAMPLERS[cfg.outcome](cfg, truth, X, h)
    logger.info(f"Simulated {cfg.outcome.value} {cfg.graph.value} data: n={cfg.n} p={cfg.p} q={cfg.q}, "
                f"{len(truth.edges)} edges, confounded={cfg.confounded}")
    return Dataset(Y, X, (cfg.family,) * cfg.p), truth


def five_node_example(n: int, seed: int = 0, confounded: bool = True) -> Tuple[Dataset, GroundTruth]:
    """
    Five-node logistic SEM

        Y1 = 2 X1 + h1              Y2 = 1.5 Y1 + 2 X2 + h2
        Y3 = 1.5 Y2 + 2 X3 + h3     Y4 = -1.5 Y1 + 1.5 Y3 + 2 X4 + h4
        Y5 = 2 X5 + h5
    """
    cfg = SimConfig(p=5, q=5, n=n, graph=GraphKind.CHAIN, outcome=Outcome.BINARY,
                    confounded=confounded, seed=seed)
    U = np.zeros((5, 5))
    U[0, 1], U[1, 2], U[0, 3], U[2, 3] = 1.5, 1.5, -1.5, 1.5
    truth = GroundTruth(U, 2.0 * np.eye(5), (0, 1, 2, 3, 4))
    X, h = gen_exogenous(cfg)
    Y = sample_binary(cfg, truth, X, h)
    return Dataset(Y, X, (Family.BERNOULLI,) * 5), truth
