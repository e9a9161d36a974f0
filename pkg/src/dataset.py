"""
Observation data for the pipeline

A Dataset holds the primary variables Y (n x p), the instruments X (n x q)
and one GLM family per primary column. On disk it is a CSV file with header
y1..yp,x1..xq and one observation per line, written at 17 significant
digits so a write/read cycle is lossless.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from errors import ArtifactIOError, InvalidDataset
from glm_core import Family


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    Y: NDArray
    X: NDArray
    families: Tuple[Family, ...]

    def __post_init__(self):
        Y = np.array(self.Y, dtype=float)
        X = np.array(self.X, dtype=float)
        if Y.ndim != 2 or X.ndim != 2:
            raise InvalidDataset(f"Y and X must be matrices, got shapes {Y.shape} and {X.shape}")
        if Y.shape[0] != X.shape[0]:
            raise InvalidDataset(f"Y has {Y.shape[0]} rows but X has {X.shape[0]}")
        if Y.shape[0] < 1 or Y.shape[1] < 1 or X.shape[1] < 1:
            raise InvalidDataset(f"need n, p, q >= 1, got n={Y.shape[0]} p={Y.shape[1]} q={X.shape[1]}")
        if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(X))):
            raise InvalidDataset("data contain non-finite values")
        try:
            families = tuple(Family.parse(f) for f in self.families)
        except ValueError as e:
            raise InvalidDataset(str(e)) from None
        if len(families) != Y.shape[1]:
            raise InvalidDataset(f"{len(families)} families given for {Y.shape[1]} primary columns")
        for j, family in enumerate(families):
            if not family.in_support(Y[:, j]):
                raise InvalidDataset(f"column y{j + 1} has values outside the {family.value} support")
        Y.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "families", families)

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.Y.shape[1]

    @property
    def q(self) -> int:
        return self.X.shape[1]

    def permute_primaries(self, permutation: Sequence[int]) -> "Dataset":
        permutation = list(permutation)
        return Dataset(self.Y[:, permutation], self.X, tuple(self.families[j] for j in permutation))

    def to_frame(self) -> pd.DataFrame:
        columns = [f"y{j + 1}" for j in range(self.p)] + [f"x{l + 1}" for l in range(self.q)]
        return pd.DataFrame(np.hstack([self.Y, self.X]), columns=columns)


def parse_families(spec: Union[str, Sequence[str]], p: int) -> Tuple[Family, ...]:
    """
    Expand a family spec to one family per primary column.

    A single name is broadcast; otherwise a comma list of exactly p names.

    Raises:
        InvalidDataset: on unknown names or a length mismatch
    """
    names = [s.strip() for s in spec.split(",")] if isinstance(spec, str) else list(spec)
    names = [name for name in names if name]
    try:
        families = tuple(Family.parse(name) for name in names)
    except ValueError as e:
        raise InvalidDataset(str(e)) from None
    if len(families) == 1:
        return families * p
    if len(families) != p:
        raise InvalidDataset(f"family spec lists {len(families)} families for {p} primary columns")
    return families


def write_dataset_csv(dataset: Dataset, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        dataset.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    except OSError as e:
        raise ArtifactIOError(f"cannot write dataset to {path}: {e}") from e
    logger.info(f"Wrote dataset n={dataset.n} p={dataset.p} q={dataset.q} to {path}")
    return path


def read_dataset_csv(path: Union[str, Path], families: Union[str, Sequence[str]]) -> Dataset:
    """
    Read a y1..yp,x1..xq CSV.

    Raises:
        ArtifactIOError: if the file cannot be read or parsed
        InvalidDataset: if the header or values are inconsistent
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ArtifactIOError(f"cannot read dataset {path}: {e}") from e

    y_cols = [c for c in frame.columns if str(c).startswith("y")]
    x_cols = [c for c in frame.columns if str(c).startswith("x")]
    expected = [f"y{j + 1}" for j in range(len(y_cols))] + [f"x{l + 1}" for l in range(len(x_cols))]
    if list(frame.columns) != expected:
        raise InvalidDataset(f"{path}: header must be y1..yp,x1..xq, got {list(frame.columns)}")
    try:
        values = frame.to_numpy(dtype=float)
    except ValueError as e:
        raise InvalidDataset(f"{path}: non-numeric entries ({e})") from None

    p = len(y_cols)
    dataset = Dataset(values[:, :p], values[:, p:], parse_families(families, p))
    logger.info(f"Read dataset n={dataset.n} p={dataset.p} q={dataset.q} from {path}")
    return dataset
