"""Restriction, prolongation and interpolation matrices between FE spaces.

All three are nodal: row ``j`` holds the source basis functions evaluated
at the ``j``-th target DoF coordinate. For nested meshes restriction is
therefore plain injection and ``R @ P`` is the coarse identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore
from .fespace import FeSpace, basis_matrix
from .sparse import CsrMatrix


def _check_nested(coarse: FeSpace, fine: FeSpace) -> None:
    if coarse.degree != fine.degree:
        raise ValueError("transfer between levels requires equal polynomial degree")
    if fine.n_x % coarse.n_x != 0:
        raise ValueError(f"meshes are not nested: n_x={fine.n_x} is not a refinement of n_x={coarse.n_x}")


def build_prolongation(coarse: FeSpace, fine: FeSpace) -> CsrMatrix:
    """Coarse-to-fine matrix of shape ``(fine.dim, coarse.dim)``."""
    _check_nested(coarse, fine)
    return basis_matrix(coarse, fine.dof_coords)


def build_restriction(fine: FeSpace, coarse: FeSpace) -> CsrMatrix:
    """Fine-to-coarse injection of shape ``(coarse.dim, fine.dim)``."""
    _check_nested(coarse, fine)
    return basis_matrix(fine, coarse.dof_coords)


def build_interpolation(u_space: FeSpace, v_space: FeSpace) -> CsrMatrix:
    """Map DoFs of ``u_space`` onto ``v_space`` living on the same mesh."""
    if u_space.n_x != v_space.n_x:
        raise ValueError("interpolation requires both spaces on the same mesh")
    if u_space.same_as(v_space):
        return CsrMatrix.identity(u_space.dim)
    return basis_matrix(u_space, v_space.dof_coords)


def apply(matrix: CsrMatrix, x):
    """Sparse product on a DoF vector, a ``(batch, n)`` / ``(batch, n, c)``
    array, or a :class:`~sponet.diffcore.Tensor` (recorded on the tape)."""
    if isinstance(x, diffcore.Tensor):
        return diffcore.sparse_matvec(matrix, x)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return matrix.matvec(x)
    if x.ndim == 2:
        return matrix.apply_batched(x[:, :, None])[:, :, 0]
    return matrix.apply_batched(x)


@dataclass(eq=False)
class TransferSet:
    """Matrices for a space hierarchy, finest level first.

    ``restrictions[i]`` maps level ``i`` to ``i + 1``; ``prolongations[i]``
    maps level ``i + 1`` back to ``i``; ``interpolations[i]`` maps ``U^i`` to
    ``V^i``.
    """

    restrictions: list
    prolongations: list
    interpolations: list


def build_transfer_set(u_spaces: list, v_spaces: list) -> TransferSet:
    if len(u_spaces) != len(v_spaces):
        raise ValueError("input and output hierarchies differ in length")
    n = len(u_spaces)
    return TransferSet(
        restrictions=[build_restriction(u_spaces[i], u_spaces[i + 1]) for i in range(n - 1)],
        prolongations=[build_prolongation(v_spaces[i + 1], v_spaces[i]) for i in range(n - 1)],
        interpolations=[build_interpolation(u, v) for u, v in zip(u_spaces, v_spaces)],
    )
