import numpy as np
import pytest

from sponet.mesh import SIDES, mesh_hierarchy, unit_square_mesh


@pytest.mark.parametrize("n", [1, 2, 5, 8])
def test_counts_and_orientation(n):
    m = unit_square_mesh(n)
    assert m.num_vertices == (n + 1) ** 2
    assert m.num_triangles == 2 * n * n
    areas = m.signed_areas()
    assert np.all(areas > 0)
    assert np.isclose(areas.sum(), 1.0)


def test_diagonal_direction():
    m = unit_square_mesh(1)
    edges = {tuple(sorted(e)) for t in m.triangles for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0]))}
    # lower-left (0) to upper-right (3), never lower-right (1) to upper-left (2)
    assert (0, 3) in edges and (1, 2) not in edges


def test_interior_vertex_degree_is_six():
    n = 4
    m = unit_square_mesh(n)
    nbrs = [set() for _ in range(m.num_vertices)]
    for t in m.triangles:
        for a in t:
            nbrs[a].update(int(b) for b in t if b != a)
    interior = [j * (n + 1) + i for j in range(1, n) for i in range(1, n)]
    assert all(len(nbrs[v]) == 6 for v in interior)


@pytest.mark.parametrize("n", [1, 3, 6])
def test_boundary_facets_cover_boundary(n):
    m = unit_square_mesh(n)
    # brute force: every triangle edge used by exactly one triangle is a boundary edge
    count = {}
    for t in m.triangles:
        for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            k = tuple(sorted(int(v) for v in e))
            count[k] = count.get(k, 0) + 1
    boundary = {k for k, c in count.items() if c == 1}
    tagged = {}
    for tag in SIDES:
        for e in m.facets(tag):
            k = tuple(sorted(int(v) for v in e))
            assert k not in tagged
            tagged[k] = tag
    assert set(tagged) == boundary
    v = m.vertices
    for (a, b), tag in tagged.items():
        xy = v[[a, b]]
        col, val = {"bottom": (1, 0), "top": (1, 1), "left": (0, 0), "right": (0, 1)}[tag]
        assert np.all(xy[:, col] == val)


def test_unknown_tag_and_bad_resolution():
    with pytest.raises(ValueError):
        unit_square_mesh(0)
    with pytest.raises((KeyError, ValueError)):
        unit_square_mesh(2).facets("front")


def test_locate_finds_containing_triangle(rng):
    m = unit_square_mesh(5)
    pts = rng.random((200, 2))
    cells = m.locate(pts)
    tri = m.vertices[m.triangles[cells]]
    # barycentric coordinates all non-negative
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])
    l1 = ((pts[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (pts[:, 1] - a[:, 1])) / det
    l2 = ((b[:, 0] - a[:, 0]) * (pts[:, 1] - a[:, 1]) - (pts[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])) / det
    assert np.all(l1 >= -1e-12) and np.all(l2 >= -1e-12) and np.all(1 - l1 - l2 >= -1e-12)


def test_hierarchy_nested_and_halving():
    h = mesh_hierarchy(4, 2)
    assert h.resolutions == [16, 8, 4]
    for fine, coarse, parents in zip(h.levels[:-1], h.levels[1:], h.refinement_map):
        assert fine.n == 2 * coarse.n
        fine_set = {tuple(p) for p in np.round(fine.vertices * fine.n).astype(int) * (1)}
        for p in np.round(coarse.vertices * fine.n).astype(int):
            assert tuple(p) in fine_set
        # each fine triangle's centroid sits inside its parent; 4 children per parent
        assert np.all(np.bincount(parents, minlength=coarse.num_triangles) == 4)
        cen = fine.vertices[fine.triangles].mean(1)
        assert np.array_equal(coarse.locate(cen), parents)
