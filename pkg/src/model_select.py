"""
Hyperparameter selection for (tau, K, K')

Extended BIC over a candidate grid, or k-fold cross-validation of the mean
held-out negative log-likelihood with the one-standard-error rule. Ties and
the one-SE rule resolve towards the most parsimonious candidate: smaller K,
then smaller K', then larger tau.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from itertools import product
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from errors import FitError, SelectionFailed
from glm_core import DesignProblem, nll
from tlp_dc import ConstrainedSolver, TlpConfig


logger = logging.getLogger(__name__)

DEFAULT_TAU_GRID = tuple(float(t) for t in np.geomspace(0.01, 1.0, 8))
DEFAULT_K_MAX = 20


class TuningMethod(str, Enum):
    EBIC = "ebic"
    CV = "cv"


@dataclass(frozen=True, order=True)
class Candidate:
    tau: float
    k: int
    kprime: int = 0

    @property
    def parsimony(self) -> Tuple[int, int, float]:
        return (self.k, self.kprime, -self.tau)


@dataclass(frozen=True)
class TuningPolicy:
    """How (tau, K, K') are chosen for every nodewise fit."""

    method: TuningMethod = TuningMethod.EBIC
    ebic_gamma: float = 0.5
    folds: int = 5
    tau_grid: Tuple[float, ...] = DEFAULT_TAU_GRID
    k_grid: Optional[Tuple[int, ...]] = None
    kprime_grid: Optional[Tuple[int, ...]] = None
    k_max: int = DEFAULT_K_MAX
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", TuningMethod(self.method))
        object.__setattr__(self, "tau_grid", tuple(float(t) for t in self.tau_grid))
        if self.k_grid is not None:
            object.__setattr__(self, "k_grid", tuple(int(k) for k in self.k_grid))
        if self.kprime_grid is not None:
            object.__setattr__(self, "kprime_grid", tuple(int(k) for k in self.kprime_grid))
        if not self.tau_grid or any(t <= 0 for t in self.tau_grid):
            raise ValueError("tau_grid must be a non-empty list of positive values")
        if self.k_grid is not None and (not self.k_grid or any(k < 0 for k in self.k_grid)):
            raise ValueError("k_grid must be a non-empty list of non-negative integers")
        if self.kprime_grid is not None and (not self.kprime_grid or any(k < 0 for k in self.kprime_grid)):
            raise ValueError("kprime_grid must be a non-empty list of non-negative integers")
        if self.folds < 2:
            raise ValueError(f"folds must be at least 2, got {self.folds}")
        if not 0.0 <= self.ebic_gamma <= 1.0:
            raise ValueError(f"ebic_gamma must lie in [0, 1], got {self.ebic_gamma}")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")

    def fidelity_candidates(self, n: int, q: int) -> List[Candidate]:
        """(tau, K) grid for a fidelity column, K in 1..K_max."""
        k_cap = min(q, self.k_max, max(1, math.ceil(n / math.log(max(n, 3)))))
        if self.k_grid is None:
            ks = list(range(1, k_cap + 1))
        else:
            ks = sorted({min(max(k, 1), q) for k in self.k_grid})
        return [Candidate(tau, k) for tau, k in product(self.tau_grid, ks)]

    def child_candidates(self, n_ancestors: int, with_kprime: bool) -> List[Candidate]:
        """(tau, K, K') grid for a child equation, budgets capped at |an(j)|."""
        ks = self._budget_grid(self.k_grid, n_ancestors)
        kps = self._budget_grid(self.kprime_grid if self.kprime_grid is not None else self.k_grid,
                                n_ancestors) if with_kprime else [0]
        return [Candidate(tau, k, kp) for tau, k, kp in product(self.tau_grid, ks, kps)]

    def _budget_grid(self, grid: Optional[Tuple[int, ...]], cap: int) -> List[int]:
        if grid is None:
            return list(range(0, min(cap, self.k_max) + 1))
        return sorted({min(k, cap) for k in grid})


@dataclass(frozen=True)
class CandidateScore:
    nll: float
    k_nonzero: int


# evaluate(candidate, train_rows, test_rows); rows are None for a full-data fit
Evaluator = Callable[[Candidate, Optional[NDArray], Optional[NDArray]], CandidateScore]


@dataclass(frozen=True)
class ScoreRow:
    candidate: Candidate
    score: float
    se: float
    nll: float
    k_nonzero: int
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class Selection:
    chosen: Candidate
    rows: List[ScoreRow] = field(default_factory=list)
    method: TuningMethod = TuningMethod.EBIC

    def ranked(self) -> List[Candidate]:
        """Successful candidates from best to worst score."""
        ok = [row for row in self.rows if row.ok]
        ok.sort(key=lambda row: (row.score, row.candidate.parsimony))
        return [row.candidate for row in ok]

    def next_after(self, candidate: Candidate) -> Optional[Candidate]:
        ranked = self.ranked()
        if candidate not in ranked:
            return ranked[0] if ranked else None
        position = ranked.index(candidate)
        return ranked[position + 1] if position + 1 < len(ranked) else None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([
            {
                "tau": row.candidate.tau,
                "k": row.candidate.k,
                "kprime": row.candidate.kprime,
                "score": row.score,
                "se": row.se,
                "nll": row.nll,
                "k_nonzero": row.k_nonzero,
                "chosen": row.candidate == self.chosen,
                "error": row.error,
            }
            for row in self.rows
        ])


def ebic_score(nll_mean: float, k_nonzero: int, n: int, d_candidates: int, gamma: float) -> float:
    """2*n*nll + k*(log n + 2*gamma*log d)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0 <= k_nonzero <= max(d_candidates, 0):
        raise ValueError(f"k_nonzero={k_nonzero} outside 0..{d_candidates}")
    log_d = math.log(d_candidates) if d_candidates > 0 else 0.0
    return 2.0 * n * nll_mean + k_nonzero * (math.log(n) + 2.0 * gamma * log_d)


class SolverEvaluator:
    """
    Evaluator backed by memoizing constrained solvers.

    `config(candidate, n)` builds the solver configuration for a fit on n
    rows. Full-data scores are in-sample nll; fold scores are held-out nll.
    """

    def __init__(self, problem: DesignProblem, config: Callable[[Candidate, int], TlpConfig]):
        self.problem = problem
        self.config = config
        self.solver = ConstrainedSolver(problem)
        self._fold_solvers: Dict[bytes, ConstrainedSolver] = {}

    def __call__(self, candidate: Candidate, train: Optional[NDArray], test: Optional[NDArray]) -> CandidateScore:
        if train is None:
            fit = self.solver.solve(self.config(candidate, self.problem.n))
            return CandidateScore(fit.fit.nll, fit.penalized_nonzero)
        key = test.tobytes()
        if key not in self._fold_solvers:
            self._fold_solvers[key] = ConstrainedSolver(self.problem.rows(train))
        fit = self._fold_solvers[key].solve(self.config(candidate, len(train)))
        return CandidateScore(nll(self.problem.rows(test), fit.coef), fit.penalized_nonzero)

    def fit(self, candidate: Candidate):
        """Full-data constrained fit for the chosen candidate."""
        return self.solver.solve(self.config(candidate, self.problem.n))


def fold_assignment(n: int, folds: int, seed: int) -> NDArray:
    """Deterministic fold label per observation."""
    if n < folds:
        raise ValueError(f"cannot split {n} observations into {folds} folds")
    permutation = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=int)
    labels[permutation] = np.arange(n) % folds
    return labels


def _most_parsimonious(rows: Sequence[ScoreRow]) -> ScoreRow:
    return min(rows, key=lambda row: row.candidate.parsimony)


def select(evaluate: Evaluator, policy: TuningPolicy, candidates: Sequence[Candidate], *,
           n: int, d_candidates: int) -> Selection:
    """
    Score every candidate and pick one.

    Args:
        evaluate: fits a candidate on the given rows and scores it on the test rows
        policy: tuning method and its parameters
        candidates: grid to search
        n: number of observations
        d_candidates: number of regressors entering the EBIC dimension term

    Raises:
        SelectionFailed: when every candidate failed
    """
    if not candidates:
        raise ValueError("candidate grid is empty")

    rows: List[ScoreRow] = []
    if policy.method is TuningMethod.EBIC:
        for candidate in candidates:
            try:
                result = evaluate(candidate, None, None)
            except (FitError, ValueError) as e:
                rows.append(ScoreRow(candidate, math.inf, math.nan, math.nan, -1, str(e)))
                continue
            score = ebic_score(result.nll, result.k_nonzero, n, d_candidates, policy.ebic_gamma)
            rows.append(ScoreRow(candidate, score, 0.0, result.nll, result.k_nonzero))
    else:
        labels = fold_assignment(n, policy.folds, policy.seed)
        splits = [(np.flatnonzero(labels != f), np.flatnonzero(labels == f)) for f in range(policy.folds)]
        for candidate in candidates:
            try:
                losses = [evaluate(candidate, train, test).nll for train, test in splits]
            except (FitError, ValueError) as e:
                rows.append(ScoreRow(candidate, math.inf, math.nan, math.nan, -1, str(e)))
                continue
            losses = np.asarray(losses)
            se = float(np.std(losses, ddof=1) / math.sqrt(len(losses)))
            rows.append(ScoreRow(candidate, float(np.mean(losses)), se, float(np.mean(losses)), candidate.k + candidate.kprime))

    ok = [row for row in rows if row.ok]
    if not ok:
        raise SelectionFailed(f"all {len(rows)} tuning candidates failed; first error: {rows[0].error}")

    best_score = min(row.score for row in ok)
    if policy.method is TuningMethod.EBIC:
        tied = [row for row in ok if row.score <= best_score + 1e-9 * max(1.0, abs(best_score))]
        chosen = _most_parsimonious(tied)
    else:
        best = _most_parsimonious([row for row in ok if row.score == best_score])
        threshold = best.score + best.se
        chosen = _most_parsimonious([row for row in ok if row.score <= threshold])

    logger.debug(f"{policy.method.value} selected tau={chosen.candidate.tau:.3g} k={chosen.candidate.k} "
                 f"kprime={chosen.candidate.kprime} out of {len(rows)} candidates")
    return Selection(chosen=chosen.candidate, rows=rows, method=policy.method)
