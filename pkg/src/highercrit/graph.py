"""Graph view of a precision matrix: induced graph, sparsity, greedy coloring.

A K-sparse matrix (at most K nonzeros per row, diagonal included) induces a
graph of maximum degree K-1, whose chromatic number is therefore at most K;
greedy coloring in node order realizes the max-degree+1 bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import SparseSymMatrix

__all__ = ["InducedGraph", "induced_graph", "sparsity_degree", "Coloring", "greedy_coloring"]


@dataclass
class InducedGraph:
    """Adjacency lists (sorted) of the graph with edges at nonzero off-diagonals."""

    p: int
    adjacency: list[np.ndarray]

    @property
    def max_degree(self) -> int:
        return max((a.size for a in self.adjacency), default=0)

    @property
    def num_edges(self) -> int:
        return sum(a.size for a in self.adjacency) // 2

    def degree(self, i: int) -> int:
        return self.adjacency[i].size


def induced_graph(omega: SparseSymMatrix) -> InducedGraph:
    """Edge (i, j) present iff omega(i, j) != 0 and i != j."""
    adj = []
    for i in range(omega.p):
        cols, _ = omega.row(i)
        adj.append(cols[cols != i].copy())
    return InducedGraph(p=omega.p, adjacency=adj)


def sparsity_degree(omega: SparseSymMatrix) -> int:
    """K of a K-sparse matrix: max row nonzero count, diagonal included."""
    return omega.k_sparsity


@dataclass
class Coloring:
    color: np.ndarray
    num_colors: int

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("node,color\n")
            for i, c in enumerate(self.color):
                fh.write(f"{i},{c}\n")


def greedy_coloring(graph: InducedGraph) -> Coloring:
    """Greedy proper coloring in node order, smallest available color first.

    Uses at most max_degree + 1 colors.
    """
    color = np.full(graph.p, -1, dtype=np.int64)
    for u in range(graph.p):
        taken = {color[v] for v in graph.adjacency[u] if color[v] >= 0}
        c = 0
        while c in taken:
            c += 1
        color[u] = c
    num = int(color.max()) + 1 if graph.p else 1
    return Coloring(color=color, num_colors=max(num, 1))
