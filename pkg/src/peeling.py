"""
Bottom-up peeling

Reads the fidelity matrix V from the leaves upwards. Each iteration takes
the instrument rows with the smallest positive row support over the
remaining columns; each such row points at a leaf node (its largest
coefficient), and any earlier-peeled node the row also touches is a
descendant of that leaf. Peeled rows and columns are removed and the loop
repeats. The collected ancestral relation is transitively closed into the
super-graph, which fixes a causal order and for every node its ancestors
and assigned instruments.

Indices are 0-based in memory and 1-based in JSON.
"""

import logging
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Set, Tuple, Union

import networkx as nx
import numpy as np
from numpy.typing import NDArray

from errors import CyclicAncestry, NoUsableInstrument, PeelStalled
from fidelity import FidelityMatrix


logger = logging.getLogger(__name__)

Pair = Tuple[int, int]


def _dag(pairs: Iterable[Pair], nodes: Iterable[int] = ()) -> nx.DiGraph:
    graph = nx.DiGraph()
    graph.add_nodes_from(nodes)
    graph.add_edges_from(pairs)
    if not nx.is_directed_acyclic_graph(graph):
        raise CyclicAncestry(nx.find_cycle(graph))
    return graph


def transitive_closure(pairs: Iterable[Pair]) -> Set[Pair]:
    """
    Smallest transitively closed superset of an acyclic relation.

    Raises:
        CyclicAncestry: if the relation has a directed cycle
    """
    return set(nx.transitive_closure_dag(_dag(pairs)).edges())


@dataclass(frozen=True)
class SuperGraph:
    p: int
    q: int
    ancestral_pairs: FrozenSet[Pair]
    order: Tuple[int, ...]
    ancestors: Tuple[FrozenSet[int], ...]
    instruments: Tuple[FrozenSet[int], ...]
    leaf_iv_pairs: Tuple[Tuple[Pair, ...], ...] = ()

    @classmethod
    def build(cls, p: int, q: int, pairs: Iterable[Pair], instruments: Dict[int, Iterable[int]],
              leaf_iv_pairs: Iterable[Iterable[Pair]] = ()) -> "SuperGraph":
        """Close the relation and derive the order and per-node sets."""
        closed = nx.transitive_closure_dag(_dag(pairs, range(p)))
        order = tuple(node for generation in nx.topological_generations(closed) for node in sorted(generation))
        return cls(
            p=p,
            q=q,
            ancestral_pairs=frozenset(closed.edges()),
            order=order,
            ancestors=tuple(frozenset(closed.predecessors(j)) for j in range(p)),
            instruments=tuple(frozenset(instruments.get(j, ())) for j in range(p)),
            leaf_iv_pairs=tuple(tuple(batch) for batch in leaf_iv_pairs),
        )

    def graph(self) -> nx.DiGraph:
        return _dag(self.ancestral_pairs, range(self.p))

    def generations(self) -> List[List[int]]:
        """Nodes grouped by depth; no ancestral relation inside a group."""
        return [sorted(generation) for generation in nx.topological_generations(self.graph())]

    def roots(self) -> List[int]:
        return [j for j in range(self.p) if not self.ancestors[j]]

    def support_pattern(self) -> NDArray:
        """Instrument-by-node support a fidelity matrix consistent with this graph would have."""
        pattern = np.zeros((self.q, self.p), dtype=bool)
        for j in range(self.p):
            for node in self.ancestors[j] | {j}:
                pattern[sorted(self.instruments[node]), j] = True
        return pattern

    def validate(self) -> None:
        graph = self.graph()
        if any(k == j for k, j in self.ancestral_pairs):
            raise ValueError("ancestral relation is not irreflexive")
        closure = set(nx.transitive_closure_dag(graph).edges())
        if closure != set(self.ancestral_pairs):
            raise ValueError("ancestral relation is not transitively closed")
        position = {node: i for i, node in enumerate(self.order)}
        if sorted(self.order) != list(range(self.p)):
            raise ValueError("order is not a permutation of the nodes")
        if any(position[k] > position[j] for k, j in self.ancestral_pairs):
            raise ValueError("order is not a topological linearization")
        missing = [j for j in range(self.p) if not self.instruments[j]]
        if missing:
            raise ValueError(f"nodes {[j + 1 for j in missing]} have no assigned instrument")

    def to_json(self) -> dict:
        return {
            "p": self.p,
            "q": self.q,
            "order": [j + 1 for j in self.order],
            "ancestral": [[k + 1, j + 1] for k, j in sorted(self.ancestral_pairs)],
            "instruments": {str(j + 1): sorted(l + 1 for l in self.instruments[j]) for j in range(self.p)},
            "leaf_iv_pairs": [[[l + 1, k + 1] for l, k in batch] for batch in self.leaf_iv_pairs],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SuperGraph":
        p, q = int(data["p"]), int(data["q"])
        pairs = [(int(k) - 1, int(j) - 1) for k, j in data["ancestral"]]
        instruments = {int(j) - 1: [int(l) - 1 for l in ivs] for j, ivs in data["instruments"].items()}
        batches = [[(int(l) - 1, int(k) - 1) for l, k in batch] for batch in data.get("leaf_iv_pairs", [])]
        return cls.build(p, q, pairs, instruments, batches)


def peel(V: Union[FidelityMatrix, NDArray]) -> SuperGraph:
    """
    Recover the super-graph from a fidelity matrix.

    Args:
        V: q x p fidelity matrix (or its coefficient array)

    Returns:
        SuperGraph with leaf/instrument pairs recorded per iteration

    Raises:
        NoUsableInstrument: if a column of V is entirely zero
        PeelStalled: if remaining columns have no instrument row with positive support
    """
    V = np.asarray(V.V if isinstance(V, FidelityMatrix) else V, dtype=float)
    q, p = V.shape
    nonzero = V != 0
    empty = [j for j in range(p) if not nonzero[:, j].any()]
    if empty:
        raise NoUsableInstrument(empty)

    rows_left = list(range(q))
    cols_left = list(range(p))
    peeled: List[int] = []
    pairs: Set[Pair] = set()
    instruments: Dict[int, Set[int]] = {j: set() for j in range(p)}
    batches: List[List[Pair]] = []

    iteration = 0
    while cols_left:
        iteration += 1
        norms = nonzero[np.ix_(rows_left, cols_left)].sum(axis=1)
        if not np.any(norms > 0):
            raise PeelStalled(rows_left, cols_left)
        smallest = norms[norms > 0].min()
        leaf_rows = [rows_left[i] for i in np.flatnonzero(norms == smallest)]

        batch: List[Pair] = []
        leaves: Set[int] = set()
        for l in leaf_rows:
            # argmax returns the first maximum, so ties go to the lowest column
            k = cols_left[int(np.argmax(np.abs(V[l, cols_left])))]
            batch.append((l, k))
            leaves.add(k)
            instruments[k].add(l)
            pairs.update((k, j) for j in peeled if nonzero[l, j])

        batches.append(batch)
        logger.debug(f"Peel iteration {iteration}: " + ", ".join(f"x{l + 1}->y{k + 1}" for l, k in batch))
        rows_left = [r for r in rows_left if r not in leaf_rows]
        peeled.extend(sorted(leaves))
        cols_left = [c for c in cols_left if c not in leaves]

    supergraph = SuperGraph.build(p, q, pairs, instruments, batches)
    logger.info(f"Peeled {p} nodes in {iteration} iterations; "
                f"{len(supergraph.ancestral_pairs)} ancestral relations")
    return supergraph
