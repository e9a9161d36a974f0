"""
Fidelity -> peel -> deconfound composition

Runs the three stages on a dataset, retrying the peel after refitting
stuck fidelity columns with their next-ranked tuning candidate, and emits
the assumption-level warnings (p > q, majority rule for Gaussian nodes).
"""

import logging
import time
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from dataset import Dataset
from deconfound import DagEstimate, Method, run_method
from errors import GampiWarning, PeelStalled
from fidelity import FidelityMatrix, fit_column, fit_fidelity
from glm_core import Family
from model_select import TuningPolicy
from peeling import SuperGraph, peel


logger = logging.getLogger(__name__)

DEFAULT_PEEL_RETRIES = 3


class Stage(str, Enum):
    FIDELITY = "fidelity"
    PEEL = "peel"
    FULL = "full"


@dataclass
class PipelineResult:
    fidelity: FidelityMatrix
    supergraph: Optional[SuperGraph] = None
    estimates: Dict[str, DagEstimate] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    peel_retries: int = 0

    @property
    def estimate(self) -> Optional[DagEstimate]:
        return next(iter(self.estimates.values()), None)

    @property
    def failed_nodes(self) -> Dict[str, Dict[int, str]]:
        return {method: est.failures for method, est in self.estimates.items() if est.failures}


def _warn(message: str, collected: List[str]) -> None:
    logger.warning(message)
    warnings.warn(message, GampiWarning, stacklevel=3)
    collected.append(message)


def majority_rule_risk(fidelity: FidelityMatrix, supergraph: SuperGraph,
                       families: Sequence[Family]) -> List[int]:
    """
    Gaussian nodes where instruments not assigned to any node, but with a
    nonzero fidelity coefficient, are at least as many as the assigned ones.
    """
    assigned = set().union(*supergraph.instruments)
    risky = []
    for j, family in enumerate(families):
        if family is not Family.GAUSSIAN:
            continue
        unassigned = [l for l in np.flatnonzero(fidelity.V[:, j]) if l not in assigned]
        if len(unassigned) >= len(supergraph.instruments[j]):
            risky.append(j)
    return risky


def peel_with_retries(dataset: Dataset, fidelity: FidelityMatrix, policy: TuningPolicy,
                      max_retries: int = DEFAULT_PEEL_RETRIES) -> Tuple[SuperGraph, FidelityMatrix, int]:
    """
    Peel, refitting stuck columns with their next-ranked candidate on a stall.

    Raises:
        PeelStalled: once the retries are spent or no stuck column has a candidate left
    """
    for attempt in range(max_retries + 1):
        try:
            return peel(fidelity), fidelity, attempt
        except PeelStalled as e:
            if attempt == max_retries:
                raise
            changed = False
            for j in e.columns:
                selection, current = fidelity.selections[j], fidelity.chosen[j]
                candidate = selection.next_after(current) if selection is not None else None
                if candidate is None:
                    continue
                logger.warning(f"Peeling stalled; refitting y{j + 1} with tau={candidate.tau:.3g}, K={candidate.k}")
                fidelity = fidelity.with_column(fit_column(dataset, j, policy, candidate))
                changed = True
            if not changed:
                raise
    raise AssertionError("unreachable")


def run_pipeline(dataset: Dataset, policy: TuningPolicy, methods: Union[str, Sequence[str]] = Method.DRI,
                 stage: Union[str, Stage] = Stage.FULL, threads: int = 1,
                 max_peel_retries: int = DEFAULT_PEEL_RETRIES) -> PipelineResult:
    """
    Run the pipeline up to `stage`.

    Args:
        dataset: observations
        policy: tuning policy shared by every stage
        methods: one or more deconfounding methods fitted on the same super-graph
        stage: last stage to run
        threads: worker pool size
        max_peel_retries: refit rounds allowed when peeling stalls

    Returns:
        PipelineResult; per-node failures are inside each estimate
    """
    stage = Stage(stage)
    methods = [Method.parse(methods)] if isinstance(methods, (str, Method)) else [Method.parse(m) for m in methods]
    collected: List[str] = []
    timings: Dict[str, float] = {}

    if dataset.p > dataset.q:
        _warn(f"p={dataset.p} exceeds q={dataset.q}; the causal order may not be identifiable", collected)

    start = time.perf_counter()
    fidelity = fit_fidelity(dataset, policy, threads)
    timings["fidelity"] = time.perf_counter() - start
    result = PipelineResult(fidelity=fidelity, timings=timings, warnings=collected)
    if stage is Stage.FIDELITY:
        return result

    start = time.perf_counter()
    supergraph, fidelity, retries = peel_with_retries(dataset, fidelity, policy, max_peel_retries)
    timings["peel"] = time.perf_counter() - start
    result.fidelity, result.supergraph, result.peel_retries = fidelity, supergraph, retries

    risky = majority_rule_risk(fidelity, supergraph, dataset.families)
    if risky:
        _warn(f"majority rule may fail for Gaussian nodes {[j + 1 for j in risky]}: "
              f"unassigned instruments are at least as many as assigned ones", collected)
    if stage is Stage.PEEL:
        return result

    for method in methods:
        start = time.perf_counter()
        result.estimates[method.value] = run_method(dataset, supergraph, policy, method, threads)
        timings[f"deconfound_{method.value}"] = time.perf_counter() - start
    return result
