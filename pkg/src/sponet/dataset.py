"""Poisson benchmark data: random GP sources, reference FE solves and a
flat binary file format.

File layout (all little-endian)::

    offset  size  field
    0       8     magic  b"SPONDS1\\0"
    8       4     u32 format version (1)
    12      4     u32 n_x
    16      4     u32 degree
    20      4     u32 n_train
    24      4     u32 n_val
    28      4     u32 n_test
    32      4     u32 dim (DoFs per field)
    36      8     f64 kernel length-scale
    44      8     u64 seed
    52      ...   payload: per sample, f dofs then u dofs, f64

Samples are stored train, then val, then test.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fespace import FeFunction, FeSpace, assemble_load, assemble_stiffness, build_space
from .mesh import unit_square_mesh
from .spon import DirichletBc, bc_preset, merge_bcs

MAGIC = b"SPONDS1\x00"
VERSION = 1
_HEADER = struct.Struct("<IIIIIIIdQ")
HEADER_BYTES = len(MAGIC) + _HEADER.size


class DataError(ValueError):
    """Malformed or inconsistent dataset file."""


class SolverError(RuntimeError):
    """Iterative solve did not reach its tolerance."""


# sources ---------------------------------------------------------------------------


def se_kernel(points: np.ndarray, length_scale: float) -> np.ndarray:
    d2 = ((points[:, None, :] - points[None, :, :]) ** 2).sum(-1)
    return np.exp(-d2 / (2.0 * length_scale**2))


@lru_cache(maxsize=8)
def _gp_factor(n_x: int, degree: int, length_scale: float) -> np.ndarray:
    space = build_space(unit_square_mesh(n_x), degree)
    k = se_kernel(space.dof_coords, length_scale)
    jitter = 1e-10
    for _ in range(4):
        try:
            return scipy.linalg.cholesky(k + jitter * np.eye(len(k)), lower=True)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise np.linalg.LinAlgError(f"covariance factorization failed with jitter up to {jitter / 10:g}")


def sample_gp_source(space: FeSpace, length_scale: float, seed) -> FeFunction:
    """Zero-mean GP draw with squared-exponential covariance at the DoF
    coordinates. ``seed`` is anything ``numpy.random.default_rng`` takes."""
    if not length_scale > 0:
        raise ValueError("length_scale must be positive")
    chol = _gp_factor(space.n_x, space.degree, float(length_scale))
    z = np.random.default_rng(seed).standard_normal(space.dim)
    return FeFunction(space, chol @ z)


# reference solver -----------------------------------------------------------------


@lru_cache(maxsize=8)
def _stiffness(n_x: int, degree: int):
    return assemble_stiffness(build_space(unit_square_mesh(n_x), degree)).scipy.tocsr()


def solve_poisson(space: FeSpace, f, bcs: Sequence[DirichletBc], rtol: float = 1e-10) -> FeFunction:
    """Solve ``-lap u = f`` with strongly imposed Dirichlet data.

    Constrained rows and columns are eliminated and their values lifted to
    the right-hand side; the free block is solved by Jacobi-preconditioned
    CG. ``f`` may be an FeFunction or a callable ``f(x, y)``.
    """
    k = _stiffness(space.n_x, space.degree)
    b = assemble_load(space, f)
    idx, vals = merge_bcs(bcs, space.dim)
    u = np.zeros(space.dim)
    u[idx] = vals
    free = np.setdiff1d(np.arange(space.dim), idx)
    kff = k[free][:, free]
    rhs = b[free] - k[free][:, idx] @ vals
    bnorm = np.linalg.norm(rhs)
    if bnorm > 0:
        precond = sp.diags(1.0 / kff.diagonal())
        x, info = spla.cg(kff, rhs, rtol=rtol, atol=0.0, maxiter=10 * space.dim, M=precond)
        res = np.linalg.norm(kff @ x - rhs) / bnorm
        if info != 0 or res > rtol:
            raise SolverError(f"CG stopped with info={info}, relative residual {res:.3e}")
        u[free] = x
    return FeFunction(space, u)


# dataset file -------------------------------------------------------------------------


@dataclass
class DatasetFile:
    n_x: int
    degree: int
    counts: tuple[int, int, int]
    length_scale: float
    seed: int
    f: np.ndarray  # (count, dim)
    u: np.ndarray
    version: int = VERSION

    def __post_init__(self):
        self.counts = tuple(int(c) for c in self.counts)
        n = sum(self.counts)
        if self.f.shape != self.u.shape or self.f.ndim != 2 or self.f.shape[0] != n:
            raise DataError(f"arrays {self.f.shape}/{self.u.shape} do not match counts {self.counts}")

    @property
    def dim(self) -> int:
        return self.f.shape[1]

    @property
    def count(self) -> int:
        return sum(self.counts)

    def split_range(self, name: str) -> range:
        a, b, _ = self.counts
        starts = {"train": 0, "val": a, "test": a + b}
        if name not in starts:
            raise KeyError(name)
        i = ("train", "val", "test").index(name)
        return range(starts[name], starts[name] + self.counts[i])

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        r = self.split_range(name)
        return self.f[r.start:r.stop], self.u[r.start:r.stop]

    def space(self) -> FeSpace:
        return build_space(unit_square_mesh(self.n_x), self.degree)

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(self.version, self.n_x, self.degree, *self.counts, self.dim,
                            float(self.length_scale), int(self.seed))
        payload = np.stack([self.f, self.u], axis=1).astype("<f8", copy=False)
        return MAGIC + head + payload.tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "DatasetFile":
        if len(raw) < HEADER_BYTES or raw[:8] != MAGIC:
            raise DataError("not a dataset file (bad magic)")
        version, n_x, degree, a, b, c, dim, ell, seed = _HEADER.unpack_from(raw, 8)
        if version != VERSION:
            raise DataError(f"unsupported dataset version {version}")
        n = a + b + c
        body = raw[HEADER_BYTES:]
        if len(body) != 2 * n * dim * 8:
            raise DataError(f"payload has {len(body)} bytes, expected {2 * n * dim * 8}")
        arr = np.frombuffer(body, dtype="<f8").reshape(n, 2, dim).astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise DataError("payload contains non-finite values")
        return cls(n_x, degree, (a, b, c), ell, seed, arr[:, 0].copy(), arr[:, 1].copy(), version)


def write_dataset(data: DatasetFile, path) -> int:
    raw = data.to_bytes()
    Path(path).write_bytes(raw)
    return len(raw)


def read_dataset(path) -> DatasetFile:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(str(exc)) from exc
    return DatasetFile.from_bytes(raw)


def generate_samples(space: FeSpace, indices, seed: int, length_scale: float = 0.4,
                     bcs: str = "poisson") -> tuple[np.ndarray, np.ndarray]:
    """Sources and solutions for the given global sample indices; sample
    ``i`` is drawn from the generator seeded with ``(seed, i)``."""
    bc = bc_preset(bcs, space)
    fs, us = [], []
    for i in indices:
        f = sample_gp_source(space, length_scale, (int(seed), int(i)))
        fs.append(f.dofs)
        us.append(solve_poisson(space, f, bc).dofs)
    if not fs:
        return np.zeros((0, space.dim)), np.zeros((0, space.dim))
    return np.stack(fs), np.stack(us)


def generate_dataset(n_x: int, degree: int, counts: Sequence[int], seed: int,
                     length_scale: float = 0.4) -> DatasetFile:
    counts = tuple(int(c) for c in counts)
    if len(counts) != 3 or min(counts) < 0:
        raise ValueError("counts must be three non-negative integers")
    space = build_space(unit_square_mesh(n_x), degree)
    f, u = generate_samples(space, range(sum(counts)), seed, length_scale)
    return DatasetFile(n_x, degree, counts, length_scale, seed, f, u)
