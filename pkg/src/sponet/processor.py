"""Learnable maps on DoF tensors: the single-level coarse model and the
multigrid processor built around it."""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .fespace import FeSpace, build_space
from .latentgraph import build_graph
from .mesh import mesh_hierarchy
from .nn import LowRankLinear, Module, ResidualStack, rank_for
from .transfer import build_interpolation, build_transfer_set


def _split_layers(total: int) -> tuple[int, int]:
    if total < 2:
        raise ValueError("the coarse model needs at least 2 message-passing layers")
    return total - total // 2, total // 2


def _check_input(x: Tensor, n: int) -> None:
    if x.ndim != 3 or x.shape[1] != n:
        raise ValueError(f"expected input of shape (batch, {n}, channels), got {x.shape}")


class PsiModel(Module):
    """Low-rank linear encode, message passing on the input graph,
    interpolation to the output space, message passing on the output graph,
    low-rank linear decode."""

    _children = ("w_in", "stack_in", "stack_out", "w_out")

    def __init__(self, u_space: FeSpace, v_space: FeSpace, rng: np.random.Generator,
                 layers: int = 4, hidden: int = 16, k: float = 20, channels: int = 1):
        self.u_space, self.v_space = u_space, v_space
        self.graph_u = build_graph(u_space)
        self.graph_v = self.graph_u if u_space.same_as(v_space) else build_graph(v_space)
        self.interp = build_interpolation(u_space, v_space)
        n_in, n_out = _split_layers(layers)
        self.w_in = LowRankLinear(u_space.dim, rank_for(u_space.dim, k), rng)
        self.stack_in = ResidualStack(n_in, channels, hidden, rng)
        self.stack_out = ResidualStack(n_out, channels, hidden, rng)
        self.w_out = LowRankLinear(v_space.dim, rank_for(v_space.dim, k), rng)

    @property
    def in_dim(self) -> int:
        return self.u_space.dim

    @property
    def out_dim(self) -> int:
        return self.v_space.dim

    def __call__(self, x: Tensor) -> Tensor:
        _check_input(x, self.in_dim)
        h = self.stack_in(self.w_in(x), self.graph_u)
        h = dc.sparse_matvec(self.interp, h)
        h = self.stack_out(h, self.graph_v)
        return self.w_out(h)


def psi_forward(model: PsiModel, f_dofs: Tensor) -> Tensor:
    return model(f_dofs)


class Aggregator(Module):
    """Learnable ``a * x + b * y + c``, initialised to the plain average."""

    _own = ("a", "b", "c")

    def __init__(self):
        self.a = Tensor(np.array(0.5), requires_grad=True)
        self.b = Tensor(np.array(0.5), requires_grad=True)
        self.c = Tensor(np.array(0.0), requires_grad=True)

    def __call__(self, x: Tensor, y: Tensor) -> Tensor:
        return dc.affine_combine(self.a, x, self.b, y, self.c)


def space_hierarchy(n_x: int, levels: int, degree: int) -> list[FeSpace]:
    """Spaces on ``n_x, n_x/2, ..., n_x/2^(levels-1)``, finest first."""
    coarse = n_x // 2 ** (levels - 1)
    if coarse < 1 or coarse * 2 ** (levels - 1) != n_x:
        raise ValueError(f"n_x={n_x} cannot be halved {levels - 1} times")
    return [build_space(m, degree) for m in mesh_hierarchy(coarse, levels - 1).levels]


class MgProcessor(Module):
    """V-cycle shaped processor over a hierarchy (level 0 is the finest).

    Downward: smooth on the finest level, then restrict and smooth on each
    intermediate level; the result is restricted once more to the coarsest
    level where the :class:`PsiModel` runs. Upward: at each level combine
    the interpolated downward state with the prolonged coarse result and
    smooth again with the same level's stack.
    """

    _children = ("stacks", "up_stacks", "aggregators", "psi")

    def __init__(self, u_spaces: list[FeSpace], v_spaces: list[FeSpace], rng: np.random.Generator,
                 mp_layers: int = 1, psi_layers: int = 4, hidden: int = 16, k: float = 1,
                 channels: int = 1):
        if len(u_spaces) < 2:
            raise ValueError("a multigrid processor needs at least 2 levels")
        if len(u_spaces) != len(v_spaces):
            raise ValueError("input and output hierarchies differ in length")
        self.u_spaces, self.v_spaces = list(u_spaces), list(v_spaces)
        n = len(u_spaces)
        self.transfers = build_transfer_set(self.u_spaces, self.v_spaces)
        self.graphs_u = [build_graph(s) for s in self.u_spaces[:-1]]
        self.graphs_v = [
            gu if u.same_as(v) else build_graph(v)
            for gu, u, v in zip(self.graphs_u, self.u_spaces, self.v_spaces)
        ]
        self.stacks = [ResidualStack(mp_layers, channels, hidden, rng) for _ in range(n - 1)]
        self.up_stacks = [
            None if u.same_as(v) else ResidualStack(mp_layers, channels, hidden, rng)
            for u, v in zip(self.u_spaces[:-1], self.v_spaces[:-1])
        ]
        self.aggregators = [Aggregator() for _ in range(n - 1)]
        self.psi = PsiModel(self.u_spaces[-1], self.v_spaces[-1], rng, psi_layers, hidden, k, channels)

    @property
    def num_levels(self) -> int:
        return len(self.u_spaces)

    @property
    def in_dim(self) -> int:
        return self.u_spaces[0].dim

    @property
    def out_dim(self) -> int:
        return self.v_spaces[0].dim

    def named_parameters(self, prefix: str = ""):
        out = []
        for i, s in enumerate(self.stacks):
            out += s.named_parameters(f"{prefix}stacks.{i}.")
        for i, s in enumerate(self.up_stacks):
            if s is not None:
                out += s.named_parameters(f"{prefix}up_stacks.{i}.")
        for i, a in enumerate(self.aggregators):
            out += a.named_parameters(f"{prefix}aggregators.{i}.")
        return out + self.psi.named_parameters(f"{prefix}psi.")

    def _up_stack(self, i: int) -> ResidualStack:
        return self.up_stacks[i] or self.stacks[i]

    def __call__(self, f: Tensor) -> Tensor:
        _check_input(f, self.in_dim)
        t = self.transfers
        n = self.num_levels
        down = [self.stacks[0](f, self.graphs_u[0])]
        for i in range(1, n - 1):
            down.append(self.stacks[i](dc.sparse_matvec(t.restrictions[i - 1], down[-1]), self.graphs_u[i]))
        z = self.psi(dc.sparse_matvec(t.restrictions[n - 2], down[-1]))
        for i in range(n - 2, -1, -1):
            mixed = self.aggregators[i](
                dc.sparse_matvec(t.interpolations[i], down[i]),
                dc.sparse_matvec(t.prolongations[i], z),
            )
            z = self._up_stack(i)(mixed, self.graphs_v[i])
        return z


def mg_forward(model: MgProcessor, f_dofs: Tensor) -> Tensor:
    return model(f_dofs)
