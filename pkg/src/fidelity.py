"""
Fidelity model

Fits, for every primary variable Y_j, an l0-constrained GLM regression of
Y_j on all instruments X. The coefficient matrix V (q x p) has the same
support as the marginal dependence of each Y_j on X, which is what the
peeling stage reads. Columns are independent and fitted on a worker pool.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from dataset import Dataset
from errors import FitError, InvalidDataset, NoUsableInstrument
from glm_core import DesignProblem, append_intercept
from model_select import Candidate, Selection, SolverEvaluator, TuningPolicy, select
from tlp_dc import TlpConfig, default_gamma


logger = logging.getLogger(__name__)


def instrument_scale(X: NDArray) -> NDArray:
    """Per-column standard deviation, 1.0 for constant columns."""
    scale = np.std(X, axis=0)
    return np.where(scale > 0, scale, 1.0)


@dataclass
class ColumnFit:
    column: int
    coef: NDArray
    chosen: Candidate
    selection: Optional[Selection]
    converged: bool
    intercept: float = 0.0

    @property
    def support(self) -> Tuple[int, ...]:
        return tuple(int(l) for l in np.flatnonzero(self.coef))


@dataclass
class FidelityMatrix:
    """Instrument-to-primary coefficients V, one fitted column per primary."""

    V: NDArray
    chosen: List[Optional[Candidate]] = field(default_factory=list)
    selections: List[Optional[Selection]] = field(default_factory=list)

    def __post_init__(self):
        self.V = np.asarray(self.V, dtype=float)
        if self.V.ndim != 2:
            raise ValueError(f"V must be a q x p matrix, got shape {self.V.shape}")
        if not self.chosen:
            self.chosen = [None] * self.p
        if not self.selections:
            self.selections = [None] * self.p

    @property
    def q(self) -> int:
        return self.V.shape[0]

    @property
    def p(self) -> int:
        return self.V.shape[1]

    @property
    def supports(self) -> List[Tuple[int, ...]]:
        return [tuple(int(l) for l in np.flatnonzero(self.V[:, j])) for j in range(self.p)]

    def with_column(self, fit: ColumnFit) -> "FidelityMatrix":
        V = self.V.copy()
        V[:, fit.column] = fit.coef
        chosen = list(self.chosen)
        chosen[fit.column] = fit.chosen
        selections = list(self.selections)
        if fit.selection is not None:
            selections[fit.column] = fit.selection
        return FidelityMatrix(V, chosen, selections)

    def to_json(self) -> dict:
        return {
            "p": self.p,
            "q": self.q,
            "V": self.V.tolist(),
            "supports": {str(j + 1): [l + 1 for l in support] for j, support in enumerate(self.supports)},
            "chosen": {
                str(j + 1): {"tau": c.tau, "k": c.k}
                for j, c in enumerate(self.chosen) if c is not None
            },
        }


def _column_config(candidate: Candidate, n: int, q: int, free: FrozenSet[int] = frozenset()) -> TlpConfig:
    return TlpConfig(tau=candidate.tau, k=candidate.k, gamma=default_gamma(candidate.tau, n, q), free_set=free)


def fit_column(dataset: Dataset, j: int, policy: TuningPolicy,
               candidate: Optional[Candidate] = None) -> ColumnFit:
    """
    Fit fidelity column j.

    Non-Gaussian columns carry an unpenalized intercept that stays out of V.
    With `candidate` given the tuning search is skipped, which is how the
    pipeline refits a column with its next-ranked candidate.

    Raises:
        SelectionFailed: if no candidate could be fitted
    """
    q, family = dataset.q, dataset.families[j]
    scale = instrument_scale(dataset.X)
    Z = dataset.X / scale
    free: FrozenSet[int] = frozenset()
    if family.needs_intercept:
        Z, free = append_intercept(Z), frozenset({q})
    problem = DesignProblem(Z, dataset.Y[:, j], family)
    evaluate = SolverEvaluator(problem, lambda c, n: _column_config(c, n, q, free))

    selection = None
    if candidate is None:
        candidates = policy.fidelity_candidates(problem.n, q)
        selection = select(evaluate, policy, candidates, n=problem.n, d_candidates=q)
        candidate = selection.chosen

    fit = evaluate.fit(candidate)
    coef = fit.coef[:q] / scale
    intercept = float(fit.coef[q]) if free else 0.0
    logger.info(f"Fidelity column y{j + 1}: support {[l + 1 for l in np.flatnonzero(coef)]} "
                f"(tau={candidate.tau:.3g}, K={candidate.k})")
    return ColumnFit(column=j, coef=coef, chosen=candidate, selection=selection,
                     converged=fit.trace.converged, intercept=intercept)


def fit_fidelity(dataset: Dataset, policy: TuningPolicy, threads: int = 1) -> FidelityMatrix:
    """
    Fit all p fidelity columns.

    Args:
        dataset: observations; the instrument columns are scaled internally
        policy: tuning of (tau, K) per column
        threads: worker pool size

    Returns:
        FidelityMatrix with V on the original instrument scale

    Raises:
        NoUsableInstrument: if any column failed or ended with an empty support
    """
    if dataset.n < 2:
        raise InvalidDataset(f"fidelity fitting needs n >= 2, got {dataset.n}")

    fits: Dict[int, ColumnFit] = {}
    failures: Dict[int, str] = {}
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = [pool.submit(fit_column, dataset, j, policy) for j in range(dataset.p)]
        for j, future in enumerate(futures):
            try:
                fits[j] = future.result()
            except FitError as e:
                failures[j] = str(e)
                logger.warning(f"Fidelity column y{j + 1} failed: {e}")

    matrix = FidelityMatrix(np.zeros((dataset.q, dataset.p)))
    for j in sorted(fits):
        matrix = matrix.with_column(fits[j])

    empty = [j for j in range(dataset.p) if j in failures or not matrix.supports[j]]
    if empty:
        raise NoUsableInstrument(empty, failures)
    logger.info(f"Fidelity model fitted for {dataset.p} columns on {dataset.q} instruments")
    return matrix
