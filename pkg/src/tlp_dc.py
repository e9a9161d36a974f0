"""
Truncated-l1 penalty and the projection-based DC algorithm

Solves the l0-constrained GLM regression

    min nll(v)  subject to  ||v_P||_0 <= k, ||v_S||_0 <= k'

(P the primary penalized coordinates, S an optional secondary block, the
free set unconstrained) by iterating reweighted-l1 relaxations of the
truncated-l1 surrogate and projecting the best relaxed iterate onto the
constraint set, refitting on the retained support.
"""

import logging
import math
import threading
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from glm_core import CD_TOL, DesignProblem, FitResult, fit_subset, fit_weighted_l1


logger = logging.getLogger(__name__)

# Relative steps down the relaxation-strength sequence; with the default
# anchor multiplier of 0.5 these give 0.5, 0.1, 0.05, 0.01 of the anchor.
GAMMA_SEQUENCE = (1.0, 0.2, 0.1, 0.02)
GAMMA_MULTIPLIER = 0.5


def tlp(z, tau: float):
    """Truncated-l1 function J_tau(z) = min(|z| / tau, 1)."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return np.minimum(np.abs(z) / tau, 1.0)


def default_gamma(tau: float, n: int, d: int) -> float:
    """Anchor tau^-1 * sqrt(log d / n) scaled by the leading grid multiplier."""
    return GAMMA_MULTIPLIER * math.sqrt(math.log(max(d, 2)) / max(n, 1)) / tau


@dataclass(frozen=True)
class TlpConfig:
    """
    Tuning of one constrained fit.

    `k` bounds the primary penalized coordinates (everything outside
    `free_set` and `secondary_set`); `kprime` bounds `secondary_set`.
    """

    tau: float
    k: int
    gamma: float
    free_set: FrozenSet[int] = frozenset()
    max_dc_iter: int = 20
    tol: float = CD_TOL
    secondary_set: FrozenSet[int] = frozenset()
    kprime: int = 0

    def __post_init__(self):
        object.__setattr__(self, "free_set", frozenset(int(i) for i in self.free_set))
        object.__setattr__(self, "secondary_set", frozenset(int(i) for i in self.secondary_set))
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.k < 0 or self.kprime < 0:
            raise ValueError("budgets must be non-negative")
        if self.max_dc_iter < 1:
            raise ValueError("max_dc_iter must be at least 1")
        if self.free_set & self.secondary_set:
            raise ValueError("free_set and secondary_set overlap")

    def primary(self, d: int) -> Tuple[int, ...]:
        return tuple(i for i in range(d) if i not in self.free_set and i not in self.secondary_set)

    def penalized(self, d: int) -> Tuple[int, ...]:
        return tuple(i for i in range(d) if i not in self.free_set)

    def check(self, d: int) -> None:
        out_of_range = [i for i in self.free_set | self.secondary_set if i < 0 or i >= d]
        if out_of_range:
            raise ValueError(f"coordinate sets reference {sorted(out_of_range)} outside 0..{d - 1}")
        primary = self.primary(d)
        if self.k > len(primary):
            raise ValueError(f"k={self.k} exceeds the {len(primary)} primary coordinates")
        if self.kprime > len(self.secondary_set):
            raise ValueError(f"kprime={self.kprime} exceeds the {len(self.secondary_set)} secondary coordinates")
        if self.k < 1 and not self.free_set and not self.secondary_set:
            raise ValueError("k must be at least 1 when every coordinate is penalized")

    def with_gamma(self, gamma: float) -> "TlpConfig":
        return replace(self, gamma=gamma)


@dataclass(frozen=True)
class DcIteration:
    iteration: int
    active: FrozenSet[int]
    nll: float
    objective: float
    converged: bool


@dataclass
class DcTrace:
    iterations: List[DcIteration] = field(default_factory=list)
    support: Tuple[int, ...] = ()
    gamma: float = 0.0

    @property
    def converged(self) -> bool:
        return all(record.converged for record in self.iterations)

    @property
    def objectives(self) -> List[float]:
        return [record.objective for record in self.iterations]


@dataclass(frozen=True)
class ConstrainedFit:
    fit: FitResult
    support: Tuple[int, ...]
    trace: DcTrace
    config: TlpConfig

    @property
    def coef(self) -> NDArray:
        return self.fit.coef

    @property
    def penalized_nonzero(self) -> int:
        return sum(1 for i in self.support if i not in self.config.free_set)


def dc_fit(problem: DesignProblem, cfg: TlpConfig,
           init: Optional[NDArray] = None) -> Tuple[NDArray, DcTrace]:
    """
    Relaxation loop of the DC algorithm.

    Iteration t penalizes coordinate l by gamma*tau*I(|v_l^{t-1}| <= tau)
    (free coordinates never) and stops when that weight pattern repeats.
    Returns the iterate with the lowest nll together with the trace.
    """
    d = problem.d
    cfg.check(d)
    penalized = np.zeros(d, dtype=bool)
    penalized[list(cfg.penalized(d))] = True
    previous = np.zeros(d) if init is None else np.asarray(init, dtype=float).ravel().copy()
    if np.count_nonzero(previous[penalized]) > cfg.k + cfg.kprime:
        raise ValueError("initial point violates the l0 budget")

    lam = cfg.gamma * cfg.tau ** 2
    trace = DcTrace(gamma=cfg.gamma)
    seen = set()
    best, best_nll = previous, np.inf
    for t in range(1, cfg.max_dc_iter + 1):
        small = penalized & (np.abs(previous) <= cfg.tau)
        active = frozenset(int(i) for i in np.flatnonzero(small))
        if active in seen:
            break
        seen.add(active)
        fit = fit_weighted_l1(problem, cfg.gamma * cfg.tau * small, warm_start=previous, tol=cfg.tol)
        objective = fit.nll + lam * float(np.sum(tlp(fit.coef[penalized], cfg.tau)))
        trace.iterations.append(DcIteration(t, active, fit.nll, objective, fit.converged))
        logger.debug(f"DC iteration {t}: {len(active)} penalized, nll={fit.nll:.6g}, objective={objective:.6g}")
        if fit.nll < best_nll:
            best, best_nll = fit.coef, fit.nll
        previous = fit.coef

    if not trace.converged:
        logger.warning(f"DC relaxation had non-converged inner fits (tau={cfg.tau:.3g}, gamma={cfg.gamma:.3g})")
    return best.copy(), trace


def select_support(candidate: NDArray, cfg: TlpConfig) -> Tuple[int, ...]:
    """Free coordinates plus the top-k primary and top-k' secondary magnitudes.

    Ties at the cut-off go to the lowest index.
    """
    candidate = np.asarray(candidate, dtype=float)
    d = candidate.shape[0]
    chosen = set(cfg.free_set)
    for block, budget in ((cfg.primary(d), cfg.k), (tuple(sorted(cfg.secondary_set)), cfg.kprime)):
        order = sorted(block, key=lambda l: (-abs(candidate[l]), l))
        chosen.update(order[:budget])
    return tuple(sorted(chosen))


def project_l0(problem: DesignProblem, candidate: NDArray, cfg: TlpConfig) -> NDArray:
    """Project onto the l0 budgets and refit on the retained support."""
    return fit_subset(problem, select_support(candidate, cfg)).coef


def _budget_met(coef: NDArray, cfg: TlpConfig) -> bool:
    d = coef.shape[0]
    primary_nonzero = np.count_nonzero(coef[list(cfg.primary(d))]) if cfg.k else 0
    secondary_nonzero = np.count_nonzero(coef[sorted(cfg.secondary_set)]) if cfg.kprime else 0
    return primary_nonzero >= cfg.k and secondary_nonzero >= cfg.kprime


class ConstrainedSolver:
    """
    Memoizing front end for constrained fits on one design problem.

    The relaxation does not depend on the budgets, so a (tau, k, k') grid
    costs one DC run per (tau, gamma) and one refit per distinct support.
    """

    def __init__(self, problem: DesignProblem):
        self.problem = problem
        self._relaxed: Dict[tuple, Tuple[NDArray, DcTrace]] = {}
        self._subsets: Dict[Tuple[int, ...], FitResult] = {}
        self._lock = threading.RLock()

    def relax(self, cfg: TlpConfig) -> Tuple[NDArray, DcTrace]:
        key = (cfg.tau, cfg.gamma, cfg.free_set, cfg.secondary_set, cfg.max_dc_iter, cfg.tol)
        with self._lock:
            cached = self._relaxed.get(key)
        if cached is None:
            cached = dc_fit(self.problem, cfg)
            with self._lock:
                self._relaxed.setdefault(key, cached)
        return cached

    def refit(self, support: Iterable[int]) -> FitResult:
        key = tuple(sorted(support))
        with self._lock:
            cached = self._subsets.get(key)
        if cached is None:
            cached = fit_subset(self.problem, key)
            with self._lock:
                self._subsets.setdefault(key, cached)
        return cached

    def solve(self, cfg: TlpConfig, gamma_sequence: Sequence[float] = GAMMA_SEQUENCE) -> ConstrainedFit:
        cfg.check(self.problem.d)
        if cfg.k == 0 and cfg.kprime == 0:
            support = tuple(sorted(cfg.free_set))
            return ConstrainedFit(self.refit(support), support, DcTrace(support=support, gamma=cfg.gamma), cfg)

        relaxed, trace = None, None
        for step in gamma_sequence:
            relaxed, trace = self.relax(cfg.with_gamma(cfg.gamma * step))
            if _budget_met(relaxed, cfg):
                break
        support = select_support(relaxed, cfg)
        trace = replace(trace, iterations=list(trace.iterations), support=support)
        return ConstrainedFit(self.refit(support), support, trace, cfg)


def solve_constrained(problem: DesignProblem, cfg: TlpConfig) -> ConstrainedFit:
    """DC relaxation followed by the l0 projection, from a zero start."""
    return ConstrainedSolver(problem).solve(cfg)
