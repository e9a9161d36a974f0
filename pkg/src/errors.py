"""
Exception hierarchy for the GAMPI pipeline.

Every error carries the process exit code the command-line front end
returns when the error reaches it: 2 config, 3 io, 4 peel, 5 fit.
"""

from typing import Dict, Iterable, Optional, Sequence, Tuple


class GampiError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1


class GampiWarning(UserWarning):
    """Assumption-level warnings a library caller may want to filter."""


class ConfigError(GampiError):
    """Invalid configuration, flags or input data."""

    exit_code = 2

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        self.detail = message
        super().__init__(f"{field}: {message}" if field else message)


class InvalidDataset(ConfigError):
    """Dataset shapes or values do not match the declared families."""


class InvalidCovariance(ConfigError):
    """Equicorrelation outside the positive semidefinite range."""


class ArtifactIOError(GampiError):
    """An input or output file could not be read or written."""

    exit_code = 3


class PeelError(GampiError):
    """Bottom-up peeling could not produce a valid super-graph."""

    exit_code = 4


class PeelStalled(PeelError):
    """A peel iteration found no row with positive support."""

    def __init__(self, rows: Sequence[int], columns: Sequence[int]):
        self.rows = tuple(rows)
        self.columns = tuple(columns)
        super().__init__(
            f"peeling stalled with columns {[c + 1 for c in self.columns]} "
            f"left and no instrument row among {[r + 1 for r in self.rows]}"
        )


class CyclicAncestry(PeelError):
    """An ancestral relation contains a directed cycle."""

    def __init__(self, cycle: Iterable[Tuple[int, int]]):
        self.cycle = tuple(cycle)
        super().__init__(f"ancestral relation has a cycle: {[(k + 1, j + 1) for k, j in self.cycle]}")


class FitError(GampiError):
    """A model fit failed."""

    exit_code = 5


class NumericalOverflow(FitError):
    """Negative log-likelihood is not finite; inputs are likely ill-scaled."""


class SingularFit(FitError):
    """Restricted information matrix is singular (collinear support)."""

    def __init__(self, message: str, node: Optional[int] = None):
        self.node = node
        super().__init__(message if node is None else f"node {node + 1}: {message}")


class SelectionFailed(FitError):
    """Every tuning candidate failed to fit."""


class AncestorFailed(FitError):
    """A node was skipped because one of its ancestors failed."""

    def __init__(self, node: int, ancestor: int):
        self.node = node
        self.ancestor = ancestor
        super().__init__(f"node {node + 1} skipped: ancestor {ancestor + 1} failed")


class NoUsableInstrument(FitError):
    """A fidelity column ended with no instrument in its support."""

    def __init__(self, columns: Sequence[int], details: Optional[Dict[int, str]] = None):
        self.columns = tuple(columns)
        self.details = dict(details or {})
        message = f"no usable instrument for columns {[c + 1 for c in self.columns]}"
        if self.details:
            message += "; " + "; ".join(f"y{c + 1}: {reason}" for c, reason in sorted(self.details.items()))
        super().__init__(message)
