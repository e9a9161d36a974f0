"""
Edge-set evaluation

Confusion counts are taken over ordered node pairs (no self-loops); SHD
over unordered pairs, where any change of a pair's status (insert, delete
or flip) costs 1. Metrics with a zero denominator are None and render as
"NA" in CSV.
"""

import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Tuple

import numpy as np
from numpy.typing import NDArray


Edge = Tuple[int, int]

CSV_COLUMNS = ("tp", "fp", "tn", "fn", "fpr", "fdr", "fscore", "mcc", "shd", "frobenius")


def _adjacency(edges: Iterable[Edge], p: int) -> NDArray:
    A = np.zeros((p, p), dtype=bool)
    for k, j in edges:
        if not (0 <= k < p and 0 <= j < p):
            raise ValueError(f"edge ({k + 1}, {j + 1}) outside 1..{p}")
        if k == j:
            raise ValueError(f"self-loop on node {k + 1}")
        A[k, j] = True
    return A


def _ratio(numerator: float, denominator: float) -> Optional[float]:
    return numerator / denominator if denominator else None


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    tn: int
    fn: int
    fpr: Optional[float]
    fdr: Optional[float]
    fscore: Optional[float]
    mcc: Optional[float]
    shd: int
    frobenius: Optional[float] = None

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int, shd: int = 0,
                    frobenius: Optional[float] = None) -> "EvalReport":
        # F is undefined when either precision or recall is
        fscore = _ratio(2 * tp, 2 * tp + fp + fn) if (tp + fp) and (tp + fn) else None
        marginals = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
        mcc = (tp * tn - fp * fn) / math.sqrt(marginals) if marginals else None
        return cls(tp=tp, fp=fp, tn=tn, fn=fn, fpr=_ratio(fp, fp + tn), fdr=_ratio(fp, tp + fp),
                   fscore=fscore, mcc=mcc, shd=shd, frobenius=frobenius)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def csv_row(self) -> str:
        values = self.to_dict()
        return ",".join("NA" if values[c] is None else repr(values[c]) if isinstance(values[c], float)
                        else str(values[c]) for c in CSV_COLUMNS)

    def to_csv(self) -> str:
        return ",".join(CSV_COLUMNS) + "\n" + self.csv_row() + "\n"

    def table(self) -> str:
        """Human-readable two-column table."""
        width = max(len(c) for c in CSV_COLUMNS)
        lines = []
        for column in CSV_COLUMNS:
            value = getattr(self, column)
            text = "NA" if value is None else f"{value:.4f}" if isinstance(value, float) else str(value)
            lines.append(f"{column.ljust(width)}  {text}")
        return "\n".join(lines)


def shd(g1: Iterable[Edge], g2: Iterable[Edge], p: int) -> int:
    """Structural Hamming distance; a reversed edge counts once."""
    differ = _adjacency(g1, p) != _adjacency(g2, p)
    return int(np.count_nonzero(np.triu(differ | differ.T, k=1)))


def frobenius_error(U_hat: NDArray, U_true: NDArray) -> float:
    """Squared Frobenius norm of the effect-matrix error."""
    U_hat, U_true = np.asarray(U_hat, dtype=float), np.asarray(U_true, dtype=float)
    if U_hat.shape != U_true.shape:
        raise ValueError(f"shape mismatch {U_hat.shape} vs {U_true.shape}")
    return float(np.sum((U_hat - U_true) ** 2))


def evaluate(estimated: Iterable[Edge], truth: Iterable[Edge], p: int,
             U_hat: Optional[NDArray] = None, U_true: Optional[NDArray] = None) -> EvalReport:
    """
    Compare an estimated edge set with the true one.

    Args:
        estimated: directed edges (k, j), 0-based
        truth: true directed edges, 0-based
        p: number of nodes
        U_hat, U_true: optional effect matrices for the Frobenius error

    Raises:
        ValueError: for edges outside the node range or self-loops
    """
    estimated, truth = set(estimated), set(truth)
    E, T = _adjacency(estimated, p), _adjacency(truth, p)
    tp = int(np.count_nonzero(E & T))
    fp = int(np.count_nonzero(E & ~T))
    fn = int(np.count_nonzero(~E & T))
    tn = p * (p - 1) - tp - fp - fn
    frobenius = frobenius_error(U_hat, U_true) if U_hat is not None and U_true is not None else None
    return EvalReport.from_counts(tp, fp, tn, fn, shd(estimated, truth, p), frobenius)
