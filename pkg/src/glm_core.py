"""
GLM families and fitters

Canonical-link exponential families (Gaussian, Bernoulli, Poisson) with their
cumulant, inverse link and curvature, the mean negative log-likelihood and its
gradient, a weighted-l1 penalized fitter (IRLS outer loop, cyclic coordinate
descent on the quadratic surrogate) and an unpenalized fitter restricted to a
coordinate subset (damped Newton). Every other module fits through here.

The fitters never add an intercept. Non-Gaussian designs get one through
`append_intercept`; Gaussian responses are modelled without one.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy import linalg, special

from errors import NumericalOverflow, SingularFit


logger = logging.getLogger(__name__)

# Linear predictors are clamped to this range inside IRLS for non-Gaussian
# families so separated data cannot overflow the working weights.
ETA_BOUND = 30.0
WEIGHT_FLOOR = 1e-6
CD_TOL = 1e-7
NEWTON_TOL = 1e-8
MAX_OUTER_ITER = 200
MAX_CD_SWEEPS = 1000
_TINY = 1e-14


class Family(str, Enum):
    """Exponential family with canonical link."""

    GAUSSIAN = "gaussian"
    BERNOULLI = "bernoulli"
    POISSON = "poisson"

    @classmethod
    def parse(cls, name: "str | Family") -> "Family":
        if isinstance(name, Family):
            return name
        key = str(name).strip().lower()
        aliases = {"normal": "gaussian", "binary": "bernoulli", "logistic": "bernoulli",
                   "count": "poisson"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(member.value for member in cls)
            raise ValueError(f"Unknown family: {name!r}. Valid families: {valid}") from None

    def cumulant(self, theta: NDArray) -> NDArray:
        """A(theta)."""
        theta = np.asarray(theta, dtype=float)
        if self is Family.GAUSSIAN:
            return 0.5 * theta ** 2
        if self is Family.BERNOULLI:
            return np.logaddexp(0.0, theta)
        with np.errstate(over="ignore"):
            return np.exp(theta)

    def mean(self, theta: NDArray) -> NDArray:
        """Inverse link phi(theta) = A'(theta)."""
        theta = np.asarray(theta, dtype=float)
        if self is Family.GAUSSIAN:
            return theta.copy()
        if self is Family.BERNOULLI:
            return special.expit(theta)
        with np.errstate(over="ignore"):
            return np.exp(theta)

    def variance(self, theta: NDArray) -> NDArray:
        """A''(theta)."""
        theta = np.asarray(theta, dtype=float)
        if self is Family.GAUSSIAN:
            return np.ones_like(theta)
        if self is Family.BERNOULLI:
            p = special.expit(theta)
            return p * (1.0 - p)
        with np.errstate(over="ignore"):
            return np.exp(theta)

    def in_support(self, y: NDArray) -> bool:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            return False
        if self is Family.BERNOULLI:
            return bool(np.all((y == 0.0) | (y == 1.0)))
        if self is Family.POISSON:
            return bool(np.all((y >= 0.0) & (y == np.round(y))))
        return True

    def clamp(self, theta: NDArray) -> NDArray:
        if self is Family.GAUSSIAN:
            return theta
        return np.clip(theta, -ETA_BOUND, ETA_BOUND)

    @property
    def needs_intercept(self) -> bool:
        return self is not Family.GAUSSIAN


def append_intercept(Z: NDArray) -> NDArray:
    """Z with a trailing column of ones."""
    Z = np.asarray(Z, dtype=float)
    return np.column_stack([Z, np.ones(Z.shape[0])])


@dataclass(frozen=True)
class DesignProblem:
    """Regressors Z (n x d), response y, family and a fixed offset."""

    Z: NDArray
    y: NDArray
    family: Family
    offset: Optional[NDArray] = None

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if Z.ndim != 2 or Z.shape[0] < 1 or Z.shape[1] < 1:
            raise ValueError(f"Z must be a non-empty n x d matrix, got shape {Z.shape}")
        if y.shape[0] != Z.shape[0]:
            raise ValueError(f"y has {y.shape[0]} rows but Z has {Z.shape[0]}")
        family = Family.parse(self.family)
        if not family.in_support(y):
            raise ValueError(f"response values are outside the {family.value} support")
        offset = np.zeros(y.shape[0]) if self.offset is None else np.asarray(self.offset, dtype=float).ravel()
        if offset.shape != y.shape:
            raise ValueError("offset must have one entry per row")
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "offset", offset)

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def d(self) -> int:
        return self.Z.shape[1]

    def linear_predictor(self, coef: NDArray) -> NDArray:
        return self.Z @ coef + self.offset

    def rows(self, index: NDArray) -> "DesignProblem":
        """Restriction to a subset of observations (CV folds)."""
        return DesignProblem(self.Z[index], self.y[index], self.family, self.offset[index])


@dataclass(frozen=True)
class FitResult:
    coef: NDArray
    nll: float
    iterations: int
    converged: bool
    objective_trace: Tuple[float, ...] = field(default=())

    @property
    def support(self) -> Tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.coef))


def _check_coef(problem: DesignProblem, coef: NDArray) -> NDArray:
    coef = np.asarray(coef, dtype=float).ravel()
    if coef.shape[0] != problem.d:
        raise ValueError(f"coef has length {coef.shape[0]}, expected {problem.d}")
    return coef


def nll(problem: DesignProblem, coef: NDArray) -> float:
    """Mean negative log-likelihood n^-1 sum(-y*theta + A(theta)).

    Data-only constants of the density (log y! for Poisson) are dropped.

    Raises:
        NumericalOverflow: if the value is not finite
    """
    coef = _check_coef(problem, coef)
    theta = problem.linear_predictor(coef)
    with np.errstate(over="ignore", invalid="ignore"):
        value = float(np.mean(-problem.y * theta + problem.family.cumulant(theta)))
    if not np.isfinite(value):
        raise NumericalOverflow(f"non-finite {problem.family.value} negative log-likelihood")
    return value


def nll_grad(problem: DesignProblem, coef: NDArray) -> NDArray:
    """Gradient n^-1 Z'(phi(theta) - y)."""
    coef = _check_coef(problem, coef)
    theta = problem.linear_predictor(coef)
    with np.errstate(over="ignore", invalid="ignore"):
        grad = problem.Z.T @ (problem.family.mean(theta) - problem.y) / problem.n
    if not np.all(np.isfinite(grad)):
        raise NumericalOverflow(f"non-finite {problem.family.value} gradient")
    return grad


def _safe_objective(problem: DesignProblem, coef: NDArray, weights: NDArray) -> float:
    try:
        return nll(problem, coef) + float(np.sum(weights * np.abs(coef)))
    except NumericalOverflow:
        return np.inf


def _working_hessian(problem: DesignProblem, coef: NDArray, columns=slice(None)) -> NDArray:
    theta = problem.family.clamp(problem.linear_predictor(coef))
    weights = np.maximum(problem.family.variance(theta), WEIGHT_FLOOR)
    Zc = problem.Z[:, columns]
    return (Zc * weights[:, None]).T @ Zc / problem.n


def _coordinate_descent(H: NDArray, g: NDArray, center: NDArray, weights: NDArray,
                        tol: float, max_sweeps: int) -> NDArray:
    """Minimise g'(b-c) + (b-c)'H(b-c)/2 + sum(w|b|) cyclically, starting from c."""
    b = center.copy()
    grad = g.copy()
    diag = np.diag(H)
    for _ in range(max_sweeps):
        max_change = 0.0
        for l in range(b.size):
            h = diag[l]
            if h <= _TINY:
                new = 0.0
            else:
                z = h * b[l] - grad[l]
                new = np.sign(z) * max(abs(z) - weights[l], 0.0) / h
            change = new - b[l]
            if change != 0.0:
                grad += H[:, l] * change
                b[l] = new
                max_change = max(max_change, abs(change))
        if max_change < tol:
            break
    return b


def fit_weighted_l1(problem: DesignProblem, l1_weights: Sequence[float],
                    warm_start: Optional[NDArray] = None, *, tol: float = CD_TOL,
                    max_iter: int = MAX_OUTER_ITER) -> FitResult:
    """
    Minimise nll(coef) + sum(l1_weights * |coef|).

    Each outer iteration builds the IRLS quadratic surrogate at the current
    iterate, solves it by cyclic coordinate descent and backtracks along the
    step until the penalized objective does not increase.

    Args:
        problem: design, response and family
        l1_weights: non-negative per-coordinate weights, zero means unpenalized
        warm_start: optional starting coefficients

    Returns:
        FitResult with converged=False when max_iter was exhausted
    """
    weights = np.asarray(l1_weights, dtype=float).ravel()
    if weights.shape[0] != problem.d:
        raise ValueError(f"l1_weights has length {weights.shape[0]}, expected {problem.d}")
    if not np.all(np.isfinite(weights)) or np.any(weights < 0):
        raise ValueError("l1_weights must be finite and non-negative")

    coef = np.zeros(problem.d) if warm_start is None else _check_coef(problem, warm_start).copy()
    objective = _safe_objective(problem, coef, weights)
    if not np.isfinite(objective):
        coef = np.zeros(problem.d)
        objective = _safe_objective(problem, coef, weights)
    trace = [objective]
    converged = False

    iteration = 0
    for iteration in range(1, max_iter + 1):
        grad = nll_grad(problem, coef)
        H = _working_hessian(problem, coef)
        target = _coordinate_descent(H, grad, coef, weights, tol, MAX_CD_SWEEPS)
        step = target - coef

        t = 1.0
        candidate = target
        candidate_obj = _safe_objective(problem, candidate, weights)
        while candidate_obj > objective + 1e-12 * max(1.0, abs(objective)) and t > 1e-10:
            t *= 0.5
            candidate = coef + t * step
            candidate_obj = _safe_objective(problem, candidate, weights)
        rejected = candidate_obj > objective
        if rejected:
            candidate, candidate_obj = coef, objective

        change = float(np.max(np.abs(candidate - coef))) if problem.d else 0.0
        coef, objective = candidate, min(candidate_obj, objective)
        trace.append(objective)
        if rejected:
            # stalled: only a negligible step counts as convergence
            converged = float(np.max(np.abs(step))) < tol
            if not converged:
                logger.debug(f"weighted-l1 line search rejected the step at iteration {iteration}")
            break
        if change < tol:
            converged = True
            break

    if not converged:
        logger.debug(f"weighted-l1 fit stopped after {iteration} iterations without converging")
    return FitResult(coef=coef, nll=nll(problem, coef), iterations=max(iteration, 1),
                     converged=converged, objective_trace=tuple(trace))


def fit_subset(problem: DesignProblem, support: Iterable[int], *, tol: float = NEWTON_TOL,
               max_iter: int = MAX_OUTER_ITER) -> FitResult:
    """
    Unpenalized MLE with coordinates outside `support` fixed at zero.

    Raises:
        SingularFit: if the restricted design is collinear
    """
    support = sorted({int(i) for i in support})
    if any(i < 0 or i >= problem.d for i in support):
        raise ValueError(f"support {support} outside 0..{problem.d - 1}")
    coef = np.zeros(problem.d)
    if not support:
        return FitResult(coef=coef, nll=nll(problem, coef), iterations=1, converged=True)

    Zs = problem.Z[:, support]
    gram = Zs.T @ Zs / problem.n
    eigen = np.linalg.eigvalsh(gram)
    if eigen[0] <= 1e-10 * max(1.0, eigen[-1]):
        raise SingularFit(f"restricted design on {len(support)} coordinates is collinear")

    current = nll(problem, coef)
    trace = [current]
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        grad = nll_grad(problem, coef)[support]
        if float(np.max(np.abs(grad))) < tol:
            converged = True
            break
        H = _working_hessian(problem, coef, support)
        try:
            step = linalg.cho_solve(linalg.cho_factor(H), -grad)
        except linalg.LinAlgError:
            raise SingularFit("restricted information matrix is singular") from None

        full_step = np.zeros(problem.d)
        full_step[support] = step
        slope = float(grad @ step)
        t = 1.0
        while True:
            candidate = coef + t * full_step
            try:
                value = nll(problem, candidate)
            except NumericalOverflow:
                value = np.inf
            if value <= current + 1e-4 * t * slope or t < 1e-10:
                break
            t *= 0.5
        if not np.isfinite(value) or value > current:
            break
        coef, current = candidate, value
        trace.append(current)

    if not converged:
        logger.debug(f"subset fit on {support} stopped after {iteration} iterations without converging")
    return FitResult(coef=coef, nll=current, iterations=max(iteration, 1),
                     converged=converged, objective_trace=tuple(trace))
