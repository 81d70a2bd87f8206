"""Continuous Lagrange spaces (CG1, CG2) on :class:`~sponet.mesh.TriMesh`.

DoFs are nodal values. Vertex DoFs come first in vertex order; CG2 edge
DoFs follow, ordered by their (min vertex, max vertex) key. Local CG2
ordering per cell is ``v0, v1, v2, m01, m12, m20``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Union

import numpy as np

from .mesh import SIDES, TriMesh
from .sparse import CsrMatrix

DOMAIN_TOL = 1e-12

# Reference triangle (0,0), (1,0), (0,1); weights sum to its area 1/2.
_RULE_DEG2 = (
    np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]]),
    np.full(3, 1 / 6),
)
_A, _WA = 0.44594849091596488632, 0.22338158967801146570
_B, _WB = 0.091576213509770743460, 0.10995174365532186764
_RULE_DEG4 = (
    np.array(
        [[_A, _A], [1 - 2 * _A, _A], [_A, 1 - 2 * _A],
         [_B, _B], [1 - 2 * _B, _B], [_B, 1 - 2 * _B]]
    ),
    0.5 * np.array([_WA, _WA, _WA, _WB, _WB, _WB]),
)


def triangle_rule(degree: int):
    """Quadrature points and weights on the reference triangle.

    Degrees 2 and 4 use the symmetric 3- and 6-point rules. Anything
    higher falls back to a collapsed (Duffy) Gauss-Legendre product rule.
    """
    if degree <= 2:
        return _RULE_DEG2
    if degree <= 4:
        return _RULE_DEG4
    n = degree // 2 + 1
    g, w = np.polynomial.legendre.leggauss(n)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    u, v = np.meshgrid(g, g, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    x = u.ravel()
    y = (v * (1.0 - u)).ravel()
    weights = (wu * wv * (1.0 - u)).ravel()
    return np.column_stack([x, y]), weights


def reference_basis(degree: int, xi: np.ndarray) -> np.ndarray:
    """Local basis values, shape ``(..., n_local)``."""
    xi = np.asarray(xi, dtype=float)
    l1, l2 = xi[..., 0], xi[..., 1]
    l0 = 1.0 - l1 - l2
    if degree == 1:
        return np.stack([l0, l1, l2], axis=-1)
    if degree == 2:
        return np.stack(
            [l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
             4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0],
            axis=-1,
        )
    raise ValueError(f"unsupported degree {degree}")


def reference_basis_grad(degree: int, xi: np.ndarray) -> np.ndarray:
    """Gradients w.r.t. reference coordinates, shape ``(..., n_local, 2)``."""
    xi = np.asarray(xi, dtype=float)
    l1, l2 = xi[..., 0], xi[..., 1]
    l0 = 1.0 - l1 - l2
    dl0 = np.array([-1.0, -1.0])
    dl1 = np.array([1.0, 0.0])
    dl2 = np.array([0.0, 1.0])
    if degree == 1:
        g = np.stack([dl0, dl1, dl2])
        return np.broadcast_to(g, xi.shape[:-1] + (3, 2)).copy()
    if degree == 2:
        e = lambda a: a[..., None]  # noqa: E731
        return np.stack(
            [
                e(4 * l0 - 1) * dl0,
                e(4 * l1 - 1) * dl1,
                e(4 * l2 - 1) * dl2,
                4 * (e(l0) * dl1 + e(l1) * dl0),
                4 * (e(l1) * dl2 + e(l2) * dl1),
                4 * (e(l2) * dl0 + e(l0) * dl2),
            ],
            axis=-2,
        )
    raise ValueError(f"unsupported degree {degree}")


@dataclass(frozen=True, eq=False)
class FeSpace:
    mesh: TriMesh
    degree: int
    dof_coords: np.ndarray
    cell_dofs: np.ndarray
    boundary_dofs: dict

    @property
    def dim(self) -> int:
        return len(self.dof_coords)

    @property
    def n_x(self) -> int:
        return self.mesh.n

    @cached_property
    def _geometry(self):
        p = self.mesh.vertices[self.mesh.triangles]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)  # columns
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1] / det
        inv[:, 1, 1] = jac[:, 0, 0] / det
        inv[:, 0, 1] = -jac[:, 0, 1] / det
        inv[:, 1, 0] = -jac[:, 1, 0] / det
        return p[:, 0], jac, det, inv

    def same_as(self, other: "FeSpace") -> bool:
        return other is self or (other.degree == self.degree and other.mesh.n == self.mesh.n)

    def __repr__(self) -> str:
        return f"FeSpace(CG{self.degree}, n_x={self.mesh.n}, dim={self.dim})"


@dataclass(eq=False)
class FeFunction:
    space: FeSpace
    dofs: np.ndarray

    def __post_init__(self):
        self.dofs = np.asarray(self.dofs, dtype=np.float64)
        if self.dofs.shape != (self.space.dim,):
            raise ValueError(f"expected {self.space.dim} dofs, got shape {self.dofs.shape}")
        if not np.all(np.isfinite(self.dofs)):
            raise ValueError("non-finite DoF values")

    def __call__(self, points) -> np.ndarray:
        return evaluate(self, points)


Field = Union[FeFunction, Callable[[np.ndarray, np.ndarray], np.ndarray]]


def build_space(mesh: TriMesh, degree: int) -> FeSpace:
    if degree not in (1, 2):
        raise ValueError(f"unsupported degree {degree}; only CG1 and CG2 are available")
    nv = mesh.num_vertices
    tri = mesh.triangles
    bnd_vertices = {}
    for tag in SIDES:
        f = mesh.facets(tag)
        bnd_vertices[tag] = np.unique(f.ravel())
    if degree == 1:
        boundary = {tag: v.copy() for tag, v in bnd_vertices.items()}
        return FeSpace(mesh, 1, mesh.vertices.copy(), tri.copy(), boundary)

    local_edges = [(0, 1), (1, 2), (2, 0)]
    a = np.stack([tri[:, i] for i, _ in local_edges], axis=1)
    b = np.stack([tri[:, j] for _, j in local_edges], axis=1)
    keys = np.minimum(a, b) * nv + np.maximum(a, b)
    uniq, inverse = np.unique(keys.ravel(), return_inverse=True)
    edge_ids = inverse.reshape(keys.shape)
    lo, hi = uniq // nv, uniq % nv
    mids = 0.5 * (mesh.vertices[lo] + mesh.vertices[hi])
    coords = np.vstack([mesh.vertices, mids])
    cell_dofs = np.hstack([tri, nv + edge_ids])
    boundary = {}
    for tag in SIDES:
        f = mesh.facets(tag)
        fk = np.minimum(f[:, 0], f[:, 1]) * nv + np.maximum(f[:, 0], f[:, 1])
        edge_dofs = nv + np.searchsorted(uniq, fk)
        boundary[tag] = np.unique(np.concatenate([bnd_vertices[tag], edge_dofs]))
    return FeSpace(mesh, 2, coords, cell_dofs, boundary)


def _element_matrices(space: FeSpace, kind: str) -> np.ndarray:
    _, jac, det, inv = space._geometry
    area = np.abs(det)
    pts, w = triangle_rule(2 * space.degree)
    if kind == "mass":
        phi = reference_basis(space.degree, pts)  # (q, a)
        local = np.einsum("q,qa,qb->ab", w, phi, phi)
        local = 0.5 * (local + local.T)
        return area[:, None, None] * local[None]
    dphi = reference_basis_grad(space.degree, pts)  # (q, a, 2)
    # physical gradient: inv^T @ dphi
    g = np.einsum("tkd,qak->tqad", inv, dphi)
    elem = area[:, None, None] * np.einsum("q,tqad,tqbd->tab", w, g, g)
    return 0.5 * (elem + elem.transpose(0, 2, 1))


def _assemble(space: FeSpace, elem: np.ndarray) -> CsrMatrix:
    cd = space.cell_dofs
    nloc = cd.shape[1]
    rows = np.repeat(cd, nloc, axis=1).ravel()
    cols = np.tile(cd, (1, nloc)).ravel()
    return CsrMatrix.from_coo(rows, cols, elem.ravel(), (space.dim, space.dim))


def assemble_mass(space: FeSpace) -> CsrMatrix:
    return _assemble(space, _element_matrices(space, "mass"))


def assemble_stiffness(space: FeSpace) -> CsrMatrix:
    return _assemble(space, _element_matrices(space, "stiffness"))


def _quadrature_points(space: FeSpace, degree: int):
    """Physical quadrature points ``(t, q, 2)`` and weights ``(t, q)``."""
    origin, jac, det, _ = space._geometry
    pts, w = triangle_rule(degree)
    x = origin[:, None, :] + np.einsum("tdk,qk->tqd", jac, pts)
    return pts, x, np.abs(det)[:, None] * w[None, :]


def _field_at_quadrature(space: FeSpace, f: Field, degree: int):
    ref, x, wq = _quadrature_points(space, degree)
    if isinstance(f, FeFunction):
        phi = reference_basis(f.space.degree, ref)
        if f.space.same_as(space):
            vals = f.dofs[space.cell_dofs] @ phi.T
        else:
            vals = evaluate(f, x.reshape(-1, 2)).reshape(x.shape[:2])
    else:
        vals = np.broadcast_to(np.asarray(f(x[..., 0], x[..., 1]), dtype=float), x.shape[:2])
    return ref, vals, wq


def assemble_load(space: FeSpace, f: Field) -> np.ndarray:
    """Right-hand side vector ``b_i = \\int f phi_i dx``."""
    ref, vals, wq = _field_at_quadrature(space, f, 2 * space.degree)
    phi = reference_basis(space.degree, ref)  # (q, a)
    local = np.einsum("tq,tq,qa->ta", wq, vals, phi)
    return np.bincount(space.cell_dofs.ravel(), weights=local.ravel(), minlength=space.dim)


def interpolate(field: Callable, space: FeSpace) -> FeFunction:
    x = space.dof_coords
    vals = np.broadcast_to(np.asarray(field(x[:, 0], x[:, 1]), dtype=float), (space.dim,)).copy()
    if not np.all(np.isfinite(vals)):
        raise ValueError("field is not finite at every DoF coordinate")
    return FeFunction(space, vals)


def _check_domain(points: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[-1] != 2:
        raise ValueError("points must be 2D coordinates")
    if np.any(points < -DOMAIN_TOL) or np.any(points > 1.0 + DOMAIN_TOL):
        raise ValueError("point outside the unit square")
    return points


def basis_values(space: FeSpace, points, cells=None):
    """Cells, local basis values and global DoF indices at ``points``."""
    points = _check_domain(points)
    if cells is None:
        cells = space.mesh.locate(points)
    origin, _, _, inv = space._geometry
    xi = np.einsum("tkd,td->tk", inv[cells], points - origin[cells])
    return reference_basis(space.degree, xi), space.cell_dofs[cells]


def basis_matrix(space: FeSpace, points, drop_below: float = 1e-13) -> CsrMatrix:
    """Sparse ``(n_points, dim)`` matrix of basis values at ``points``."""
    phi, dofs = basis_values(space, points)
    rows = np.repeat(np.arange(len(phi)), phi.shape[1])
    return CsrMatrix.from_coo(rows, dofs.ravel(), phi.ravel(), (len(phi), space.dim), drop_below=drop_below)


def evaluate(u: FeFunction, points, cells=None) -> np.ndarray:
    phi, dofs = basis_values(u.space, points, cells)
    return np.einsum("pa,pa->p", phi, u.dofs[dofs])


def l2_norm(u: FeFunction, mass: CsrMatrix | None = None) -> float:
    m = assemble_mass(u.space) if mass is None else mass
    return float(np.sqrt(max(u.dofs @ (m @ u.dofs), 0.0)))


def l2_error(u: FeFunction, v: FeFunction, mass: CsrMatrix | None = None) -> float:
    if not u.space.same_as(v.space):
        raise ValueError("l2_error requires both functions in the same space")
    return l2_norm(FeFunction(u.space, u.dofs - v.dofs), mass)


def l2_error_exact(u: FeFunction, exact: Callable, degree: int = 8) -> float:
    """L2 distance to a callable field by cellwise quadrature."""
    ref, x, wq = _quadrature_points(u.space, degree)
    phi = reference_basis(u.space.degree, ref)
    uh = u.dofs[u.space.cell_dofs] @ phi.T
    ex = np.asarray(exact(x[..., 0], x[..., 1]), dtype=float)
    return float(np.sqrt(np.sum(wq * (uh - ex) ** 2)))


def facet_dofs(space: FeSpace, tag: str) -> np.ndarray:
    """DoFs on each facet of side ``tag``: (start, end) for CG1, plus the
    midpoint DoF for CG2."""
    f = space.mesh.facets(tag)
    if space.degree == 1:
        return f.copy()
    nv = space.mesh.num_vertices
    cd = space.cell_dofs
    a = cd[:, [0, 1, 2]].ravel()
    b = cd[:, [1, 2, 0]].ravel()
    keys = np.minimum(a, b) * nv + np.maximum(a, b)
    keys, first = np.unique(keys, return_index=True)
    mids = cd[:, 3:].ravel()[first]
    fk = np.minimum(f[:, 0], f[:, 1]) * nv + np.maximum(f[:, 0], f[:, 1])
    return np.column_stack([f, mids[np.searchsorted(keys, fk)]])


def _trace_basis(degree: int, s: np.ndarray) -> np.ndarray:
    if degree == 1:
        return np.stack([1.0 - s, s], axis=1)
    return np.stack([(1.0 - s) * (1.0 - 2.0 * s), s * (2.0 * s - 1.0), 4.0 * s * (1.0 - s)], axis=1)


def boundary_l2_error(u: FeFunction, g: Field, tag: str, n_gauss: int | None = None) -> float:
    """L2 norm of ``u - g`` along the boundary side ``tag``.

    Traces are evaluated from facet DoFs only, so two FeFunctions that share
    their boundary DoFs give exactly 0. ``g`` may be a callable or an
    FeFunction on a space with the same mesh; facets use Gauss-Legendre rules.
    """
    space = u.space
    mesh = space.mesh
    facets = mesh.facets(tag)
    n_gauss = n_gauss or space.degree + 2
    s, w = np.polynomial.legendre.leggauss(n_gauss)
    s = 0.5 * (s + 1.0)
    a = mesh.vertices[facets[:, 0]]
    b = mesh.vertices[facets[:, 1]]
    length = np.linalg.norm(b - a, axis=1)
    uv = u.dofs[facet_dofs(space, tag)] @ _trace_basis(space.degree, s).T
    if isinstance(g, FeFunction):
        if g.space.mesh.n != mesh.n:
            raise ValueError("boundary data lives on a different mesh")
        gv = g.dofs[facet_dofs(g.space, tag)] @ _trace_basis(g.space.degree, s).T
    else:
        pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
        gv = np.broadcast_to(np.asarray(g(pts[..., 0], pts[..., 1]), dtype=float), uv.shape)
    diff = uv - gv
    return float(np.sqrt(np.sum(0.5 * length[:, None] * w[None, :] * diff**2)))
