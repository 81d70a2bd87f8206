"""Encoder / processor / decoder composition with strong Dirichlet
conditions, resolution transfer and autoregressive rollout."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .fespace import FeFunction, FeSpace, build_space
from .mesh import SIDES, unit_square_mesh
from .nn import Module, count_params, load_checkpoint, save_checkpoint
from .processor import MgProcessor, PsiModel, space_hierarchy
from .sparse import CsrMatrix
from .transfer import build_interpolation, build_prolongation, build_restriction

ON_BOUNDARY = "on_boundary"


@dataclass(eq=False)
class DirichletBc:
    """Prescribed values ``g(x_dof)`` on the DoFs of one boundary side
    (or ``"on_boundary"`` for all four)."""

    space: FeSpace
    tag: str
    g: Callable
    constrained: np.ndarray = field(init=False, repr=False)
    values: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.tag == ON_BOUNDARY:
            idx = np.unique(np.concatenate([self.space.boundary_dofs[t] for t in SIDES]))
        elif self.tag in SIDES:
            idx = self.space.boundary_dofs[self.tag]
        else:
            raise ValueError(f"unknown boundary tag {self.tag!r}")
        x = self.space.dof_coords[idx]
        vals = np.broadcast_to(np.asarray(self.g(x[:, 0], x[:, 1]), dtype=float), idx.shape).copy()
        if not np.all(np.isfinite(vals)):
            raise ValueError("boundary data is not finite")
        self.constrained = idx
        self.values = vals


def merge_bcs(bcs: Sequence[DirichletBc], dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Constrained indices and values; later conditions win on shared DoFs."""
    vals = np.zeros(dim)
    mask = np.zeros(dim, dtype=bool)
    for bc in bcs:
        if bc.space.dim != dim:
            raise ValueError("boundary condition lives on a different space")
        vals[bc.constrained] = bc.values
        mask[bc.constrained] = True
    idx = np.flatnonzero(mask)
    return idx, vals[idx]


def apply_bcs(dofs: np.ndarray, bcs: Sequence[DirichletBc]) -> np.ndarray:
    """Overwrite constrained entries along the last axis of ``dofs``."""
    out = np.array(dofs, dtype=np.float64)
    if bcs:
        idx, vals = merge_bcs(bcs, out.shape[-1])
        out[..., idx] = vals
    return out


def poisson_top_data(x, y):
    """Dirichlet data on the top side for the Poisson benchmark."""
    return 1e-2 * np.sin(np.pi * x)


def _zero(x, y):
    return np.zeros_like(x)


def bc_preset(name: str, space: FeSpace) -> list[DirichletBc]:
    """Named boundary setups.

    ``poisson``: homogeneous on bottom, right and left, ``1e-2 sin(pi x)``
    on top; top is applied last so it owns the two top corners.
    ``homogeneous``: zero on the whole boundary. ``none``: unconstrained.
    """
    if name == "poisson":
        return [DirichletBc(space, t, _zero) for t in ("bottom", "right", "left")] + [
            DirichletBc(space, "top", poisson_top_data)
        ]
    if name == "homogeneous":
        return [DirichletBc(space, ON_BOUNDARY, _zero)]
    if name == "none":
        return []
    raise ValueError(f"unknown boundary preset {name!r}")


# encoder / decoder ----------------------------------------------------------------


def encode(f) -> np.ndarray:
    """DoF vector of an FeFunction, or a ``(batch, n)`` stack for a list."""
    if isinstance(f, FeFunction):
        return f.dofs.copy()
    return np.stack([fi.dofs for fi in f])


def decode(u_dofs, out_space: FeSpace, bcs: Sequence[DirichletBc] = ()):
    """Wrap predicted DoFs as FeFunction(s) after imposing ``bcs``."""
    arr = u_dofs.data if isinstance(u_dofs, Tensor) else np.asarray(u_dofs, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[..., 0]
    if arr.shape[-1] != out_space.dim:
        raise ValueError(f"expected {out_space.dim} DoFs, got {arr.shape[-1]}")
    arr = apply_bcs(arr, bcs)
    if arr.ndim == 1:
        return FeFunction(out_space, arr)
    return [FeFunction(out_space, row) for row in arr]


def decode_tensor(u: Tensor, bcs: Sequence[DirichletBc]) -> Tensor:
    """Differentiable decoder step: constrained DoFs are set, their
    gradient is zero."""
    if not bcs:
        return u
    idx, vals = merge_bcs(bcs, u.shape[1])
    return dc.overwrite(u, idx, vals)


# model -------------------------------------------------------------------------------


class SponModel(Module):
    _children = ("processor",)

    def __init__(self, in_space: FeSpace, out_space: FeSpace, processor, bcs=(), config=None):
        if processor.in_dim != in_space.dim or processor.out_dim != out_space.dim:
            raise ValueError("processor widths do not match the input/output spaces")
        self.in_space, self.out_space = in_space, out_space
        self.processor = processor
        self.bcs = list(bcs)
        self.config = dict(config or {})

    def forward_tensor(self, f: Tensor) -> Tensor:
        """``(batch, n, 1)`` input DoFs to constrained output DoFs."""
        return decode_tensor(self.processor(f), self.bcs)

    def predict(self, f_dofs: np.ndarray) -> np.ndarray:
        """Plain-array inference, ``(batch, n) -> (batch, m)``."""
        f_dofs = np.atleast_2d(np.asarray(f_dofs, dtype=np.float64))
        return self.forward_tensor(Tensor(f_dofs[:, :, None])).data[:, :, 0]

    @property
    def num_params(self) -> int:
        return count_params(self)


def spon_forward(model: SponModel, f):
    """Apply the network to one FeFunction or a list of them."""
    single = isinstance(f, FeFunction)
    fs = [f] if single else list(f)
    for fi in fs:
        if not fi.space.same_as(model.in_space):
            raise ValueError("input function is not in the model's input space")
    out = decode(model.predict(encode(fs)), model.out_space, model.bcs)
    return out[0] if single else out


def transfer_matrix(src: FeSpace, dst: FeSpace) -> CsrMatrix:
    """Nodal transfer between two nested structured spaces."""
    if src.same_as(dst):
        return CsrMatrix.identity(src.dim)
    if src.n_x == dst.n_x:
        return build_interpolation(src, dst)
    if dst.n_x > src.n_x:
        return build_prolongation(src, dst)
    return build_restriction(src, dst)


def super_resolve_dofs(model: SponModel, f_dofs: np.ndarray, x_space: FeSpace, y_space: FeSpace) -> np.ndarray:
    r = transfer_matrix(x_space, model.in_space)
    p = transfer_matrix(model.out_space, y_space)
    f_dofs = np.atleast_2d(f_dofs)
    u = model.predict(r.apply_batched(f_dofs[:, :, None])[:, :, 0])
    return p.apply_batched(u[:, :, None])[:, :, 0]


def super_resolve(model: SponModel, f: FeFunction, target: FeSpace) -> FeFunction:
    """Evaluate the network on another resolution: transfer the input to
    the training space, run it, transfer the output to ``target``."""
    return FeFunction(target, super_resolve_dofs(model, f.dofs, f.space, target)[0])


def rollout(model: SponModel, u0: FeFunction, steps: int) -> list[FeFunction]:
    if not model.in_space.same_as(model.out_space):
        raise ValueError("rollout needs identical input and output spaces")
    traj = [u0]
    for _ in range(steps):
        traj.append(spon_forward(model, traj[-1]))
    return traj


# construction and persistence ---------------------------------------------------------

DEFAULT_CONFIG = {
    "arch": "spon",
    "nx": 32,
    "degree": 1,
    "levels": 3,
    "mp_layers": 1,
    "psi_layers": 4,
    "hidden": 16,
    "k": 20.0,
    "seed": 0,
    "bcs": "poisson",
}


def build_model(config: dict) -> SponModel:
    """Instantiate a freshly initialised model from a configuration dict."""
    cfg = {**DEFAULT_CONFIG, **config}
    rng = np.random.default_rng(int(cfg["seed"]))
    nx, degree = int(cfg["nx"]), int(cfg["degree"])
    if cfg["arch"] == "spon":
        space = build_space(unit_square_mesh(nx), degree)
        proc = PsiModel(space, space, rng, int(cfg["psi_layers"]), int(cfg["hidden"]), float(cfg["k"]))
    elif cfg["arch"] == "spon-mg":
        spaces = space_hierarchy(nx, int(cfg["levels"]), degree)
        space = spaces[0]
        proc = MgProcessor(spaces, spaces, rng, int(cfg["mp_layers"]), int(cfg["psi_layers"]),
                           int(cfg["hidden"]), float(cfg["k"]))
    else:
        raise ValueError(f"unknown architecture {cfg['arch']!r}")
    return SponModel(space, space, proc, bc_preset(cfg["bcs"], space), cfg)


def save_model(model: SponModel, path) -> None:
    save_checkpoint(path, [(k, p.data) for k, p in model.named_parameters()], model.config)


def load_model(path) -> SponModel:
    config, tensors = load_checkpoint(path)
    model = build_model(config)
    model.load_state_dict(tensors)
    return model
