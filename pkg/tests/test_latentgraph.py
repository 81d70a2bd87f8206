import itertools

import numpy as np
import pytest

from sponet.fespace import assemble_mass
from sponet.latentgraph import build_graph, graph_from_pairs

from conftest import space


def oracle_edges(s):
    # pairs of distinct DoFs sharing a cell, i.e. overlapping basis supports
    out = set()
    for cell in s.cell_dofs:
        for a, b in itertools.permutations(cell.tolist(), 2):
            out.add((a, b))
    return out


@pytest.mark.parametrize("deg", [1, 2])
@pytest.mark.parametrize("n", [1, 2, 5, 8])
def test_matches_support_oracle(n, deg):
    s = space(n, deg)
    g = build_graph(s)
    assert g.num_nodes == s.dim
    got = {(int(a), int(b)) for a, b in g.edges}
    assert got == oracle_edges(s)
    assert len(got) == g.num_edges
    assert np.all(g.src != g.dst)
    assert all((b, a) in got for a, b in got)


def test_n1_edge_count():
    # vertices 1 and 2 lie on opposite sides of the split diagonal
    assert build_graph(space(1)).num_edges == 10


def test_degree_bounds():
    assert build_graph(space(8)).degree.max() + 1 == 7
    assert build_graph(space(8, 2)).degree.max() + 1 == 19
    assert assemble_mass(space(8)).row_nnz().max() == 7
    assert assemble_mass(space(8, 2)).row_nnz().max() == 19


def test_corner_degrees():
    n = 4
    g = build_graph(space(n))
    assert g.degree[0] == 3  # on the diagonal
    assert g.degree[n] == 2  # lower-right corner, off the diagonal


def test_sorted_by_receiver_and_permutation(rng):
    g = build_graph(space(3))
    assert np.all(np.diff(g.dst) >= 0)
    perm = rng.permutation(g.num_nodes)
    gp = g.permuted(perm)
    inv = np.argsort(perm)
    assert {(int(inv[a]), int(inv[b])) for a, b in g.edges} == {(int(a), int(b)) for a, b in gp.edges}


def test_self_loops_removed():
    g = graph_from_pairs(3, [0, 1, 1, 2], [0, 2, 1, 1])
    assert g.num_edges == 2
