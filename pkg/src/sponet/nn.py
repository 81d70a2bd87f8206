"""Trainable building blocks: MLPs, message-passing blocks, residual stacks
and low-rank linear layers, plus the parameter checkpoint format."""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .latentgraph import LatentGraph

CHECKPOINT_MAGIC = b"SPONCK1\x00"
CHECKPOINT_VERSION = 1


class Module:
    """Minimal parameter container; subclasses list children in ``_children``."""

    _children: tuple = ()
    _own: tuple = ()

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = [(prefix + name, getattr(self, name)) for name in self._own]
        for name in self._children:
            child = getattr(self, name)
            if isinstance(child, list):
                for i, c in enumerate(child):
                    out += c.named_parameters(f"{prefix}{name}.{i}.")
            elif child is not None:
                out += child.named_parameters(f"{prefix}{name}.")
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.named_parameters():
            if k not in state:
                raise KeyError(f"missing parameter {k!r}")
            if state[k].shape != p.shape:
                raise ValueError(f"shape mismatch for {k!r}: {state[k].shape} vs {p.shape}")
            p.data[...] = state[k]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def count_params(model: Module) -> int:
    return int(sum(p.size for p in model.parameters()))


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    bound = math.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear(Module):
    _own = ("weight", "bias")

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.weight = _uniform(rng, n_in, (n_in, n_out))
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return dc.linear(x, self.weight, self.bias)


class Mlp(Module):
    """Affine layers with swish in between and a linear output."""

    _children = ("layers",)

    def __init__(self, widths, rng: np.random.Generator):
        self.widths = tuple(int(w) for w in widths)
        self.layers = [Linear(a, b, rng) for a, b in zip(self.widths[:-1], self.widths[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        return dc.mlp(x, [l.weight for l in self.layers], [l.bias for l in self.layers])

    def unfused(self, x: Tensor) -> Tensor:
        """Layer-by-layer evaluation through the elementary primitives."""
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = dc.swish(x)
        return x


def mlp_widths(channels: int, hidden: int, depth: int = 4) -> tuple[int, ...]:
    return (2 * channels,) + (hidden,) * (depth - 1) + (channels,)


class MpBlock(Module):
    """One round of message passing on a latent graph.

    Messages ``m_ij = edge(h_i, h_j - h_i)`` travel along ``j -> i``; each
    receiver averages its messages and updates through ``node(h_i, mean)``.
    """

    _children = ("edge", "node")

    def __init__(self, channels: int, hidden: int, rng: np.random.Generator):
        self.edge = Mlp(mlp_widths(channels, hidden), rng)
        self.node = Mlp(mlp_widths(channels, hidden), rng)

    def __call__(self, h: Tensor, graph: LatentGraph) -> Tensor:
        if h.shape[1] != graph.num_nodes:
            raise ValueError(f"features have {h.shape[1]} nodes, graph has {graph.num_nodes}")
        hi = dc.gather(h, graph.dst)
        hj = dc.gather(h, graph.src)
        msg = self.edge(dc.concat([hi, dc.sub(hj, hi)]))
        agg = dc.scatter_mean(msg, graph.dst, graph.num_nodes)
        return self.node(dc.concat([h, agg]))


class ResidualStack(Module):
    """``H <- H + alpha * block_m(H)`` for ``m = 1..M`` with ``alpha = 1/M``."""

    _children = ("blocks",)

    def __init__(self, n_blocks: int, channels: int, hidden: int, rng: np.random.Generator,
                 alpha: float | None = None):
        if n_blocks < 1:
            raise ValueError("a residual stack needs at least one block")
        self.blocks = [MpBlock(channels, hidden, rng) for _ in range(n_blocks)]
        self.alpha = 1.0 / n_blocks if alpha is None else float(alpha)

    def __call__(self, h: Tensor, graph: LatentGraph) -> Tensor:
        for block in self.blocks:
            h = dc.add(h, dc.scale(block(h, graph), self.alpha))
        return h


def rank_for(n: int, k: float) -> int:
    """Rank giving roughly ``2 n^2 / k`` parameters for an ``n x n`` map."""
    return max(1, math.ceil(n / k))


class LowRankLinear(Module):
    """``W = up @ down`` acting on the node axis, without bias."""

    _own = ("up", "down")

    def __init__(self, n: int, rank: int, rng: np.random.Generator):
        self.n, self.rank = int(n), int(rank)
        self.down = _uniform(rng, n, (rank, n))
        self.up = _uniform(rng, rank, (n, rank))

    def __call__(self, x: Tensor) -> Tensor:
        return dc.lmatmul(self.up, dc.lmatmul(self.down, x))

    def dense(self) -> np.ndarray:
        return self.up.data @ self.down.data


# checkpoint format -------------------------------------------------------------


def save_checkpoint(path, named: list[tuple[str, np.ndarray]], config: dict) -> None:
    """Write a versioned checkpoint.

    Layout: 8-byte magic, ``<u4`` version, ``<u4`` header length ``L``,
    ``L`` bytes of UTF-8 JSON (``config`` plus a ``tensors`` manifest of
    name, shape and element offset), then all tensors as little-endian
    float64 in manifest order.
    """
    manifest, offset = [], 0
    for name, arr in named:
        arr = np.asarray(arr)
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    header = json.dumps({"config": config, "tensors": manifest}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for _, arr in named:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", raw, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16:16 + hlen])
    payload = np.frombuffer(raw, dtype="<f8", offset=16 + hlen)
    tensors = {}
    for entry in header["tensors"]:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        tensors[entry["name"]] = payload[start:start + size].reshape(entry["shape"]).astype(np.float64)
    return header["config"], tensors
