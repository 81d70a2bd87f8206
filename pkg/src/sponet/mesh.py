"""Structured triangulations of the unit square and nested refinement hierarchies."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SIDES = ("bottom", "right", "top", "left")


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Uniform ``n x n`` grid on [0,1]^2, every cell split along its
    lower-left to upper-right diagonal.

    Vertices are numbered row-major, ``v = j * (n + 1) + i`` for the point
    ``(i / n, j / n)``. Cell ``(i, j)`` owns triangles ``2c`` (below the
    diagonal) and ``2c + 1`` (above it) with ``c = j * n + i``.
    """

    n: int
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_facets: list[tuple[tuple[int, int], str]] = field(repr=False)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def facets(self, tag: str) -> np.ndarray:
        """Vertex pairs of the boundary facets carrying ``tag``."""
        if tag not in SIDES:
            raise ValueError(f"unknown boundary tag {tag!r}")
        return np.array([pair for pair, t in self.boundary_facets if t == tag], dtype=np.int64)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Index of a triangle containing each point (grid arithmetic)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = self.n
        s = points * n
        ij = np.clip(np.floor(s).astype(np.int64), 0, n - 1)
        local = s - ij
        upper = local[:, 1] > local[:, 0]
        return 2 * (ij[:, 1] * n + ij[:, 0]) + upper


def unit_square_mesh(n_x: int) -> TriMesh:
    if int(n_x) != n_x or n_x < 1:
        raise ValueError(f"n_x must be a positive integer, got {n_x!r}")
    n = int(n_x)
    xs = np.arange(n + 1) / n
    gx, gy = np.meshgrid(xs, xs)
    vertices = np.column_stack([gx.ravel(), gy.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    k = np.arange(n)
    facets: list[tuple[tuple[int, int], str]] = []
    facets += [((int(a), int(a + 1)), "bottom") for a in k]
    facets += [((int(a * (n + 1) + n), int((a + 1) * (n + 1) + n)), "right") for a in k]
    facets += [((int(n * (n + 1) + a), int(n * (n + 1) + a + 1)), "top") for a in k]
    facets += [((int(a * (n + 1)), int((a + 1) * (n + 1))), "left") for a in k]
    return TriMesh(n=n, vertices=vertices, triangles=triangles, boundary_facets=facets)


@dataclass(frozen=True, eq=False)
class MeshHierarchy:
    """Nested meshes ordered finest first.

    ``refinement_map[i]`` gives, for every triangle of ``levels[i]``, the
    index of its parent triangle in ``levels[i + 1]``.
    """

    levels: list[TriMesh]
    refinement_map: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def resolutions(self) -> list[int]:
        return [m.n for m in self.levels]


def _parents(fine: TriMesh, coarse: TriMesh) -> np.ndarray:
    centroids = fine.vertices[fine.triangles].mean(axis=1)
    return coarse.locate(centroids)


def mesh_hierarchy(coarse_n_x: int, refinements: int) -> MeshHierarchy:
    if refinements < 0:
        raise ValueError("refinements must be non-negative")
    coarse = unit_square_mesh(coarse_n_x)
    levels = [unit_square_mesh(coarse.n * 2**r) for r in range(refinements, 0, -1)] + [coarse]
    maps = [_parents(levels[i], levels[i + 1]) for i in range(len(levels) - 1)]
    return MeshHierarchy(levels=levels, refinement_map=maps)
