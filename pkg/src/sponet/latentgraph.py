"""DoF adjacency taken from the structural sparsity of the mass matrix."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .fespace import FeSpace, assemble_mass
from .sparse import CsrMatrix


@dataclass(frozen=True, eq=False)
class LatentGraph:
    """Directed edge list with both orientations and no self-loops.

    Edges are sorted by receiver: ``dst`` is non-decreasing and
    ``neighbor_lists[neighbor_offsets[i]:neighbor_offsets[i + 1]]`` are the
    senders of node ``i``.
    """

    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    neighbor_offsets: np.ndarray

    @property
    def neighbor_lists(self) -> np.ndarray:
        return self.src

    @property
    def edges(self) -> np.ndarray:
        return np.column_stack([self.src, self.dst])

    @property
    def num_edges(self) -> int:
        return len(self.src)

    @cached_property
    def degree(self) -> np.ndarray:
        return np.diff(self.neighbor_offsets)

    def permuted(self, perm: np.ndarray) -> "LatentGraph":
        """Relabel nodes so that old node ``perm[k]`` becomes node ``k``."""
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return graph_from_pairs(self.num_nodes, inv[self.src], inv[self.dst])


def graph_from_pairs(num_nodes: int, src, dst) -> LatentGraph:
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    keep = src != dst
    src, dst = src[keep], dst[keep]
    order = np.lexsort((src, dst))
    src, dst = src[order], dst[order]
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(dst, minlength=num_nodes), out=offsets[1:])
    return LatentGraph(num_nodes, src, dst, offsets)


def graph_from_matrix(m: CsrMatrix) -> LatentGraph:
    if m.n_rows != m.n_cols:
        raise ValueError("adjacency matrix must be square")
    return graph_from_pairs(m.n_rows, m.col_indices, m.row_indices())


def build_graph(space: FeSpace) -> LatentGraph:
    return graph_from_matrix(assemble_mass(space))
