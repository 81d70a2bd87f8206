"""Relative-L2 loss, AdamW, learning-rate schedule and the training loop."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .fespace import assemble_mass
from .sparse import CsrMatrix
from .spon import SponModel, save_model

log = logging.getLogger(__name__)

NORM_FLOOR = 1e-14


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


def relative_l2_loss(pred: Tensor, target, mass: CsrMatrix) -> Tensor:
    """Batch mean of ``||pred - target||_M / ||target||_M``.

    ``pred`` is ``(batch, n, 1)``; ``target`` an array of shape
    ``(batch, n)`` or ``(batch, n, 1)``.
    """
    t = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    tnorm2 = np.einsum("bi,bi->b", t[:, :, 0], mass.apply_batched(t)[:, :, 0])
    scale = 1.0 / np.sqrt(np.maximum(tnorm2, NORM_FLOOR**2))
    d2 = dc.quad_form(dc.sub(pred, Tensor(t)), mass)
    per = dc.mul(dc.sqrt(d2), Tensor(scale))
    return dc.mean(per)


def relative_l2(pred: np.ndarray, target: np.ndarray, mass: CsrMatrix) -> np.ndarray:
    """Per-sample relative L2 errors for plain ``(batch, n)`` arrays."""
    d = pred - target
    md = (mass.scipy @ d.T).T
    mt = (mass.scipy @ target.T).T
    num = np.sqrt(np.maximum((d * md).sum(1), 0.0))
    den = np.sqrt(np.maximum((target * mt).sum(1), NORM_FLOOR**2))
    return num / den


# optimizer -------------------------------------------------------------------------------


@dataclass
class AdamWState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adamw_step(params: list[Tensor], grads: list[np.ndarray], state: AdamWState, lr: float,
               betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 1e-4) -> AdamWState:
    """In-place AdamW update with bias-corrected moments and decoupled decay."""
    b1, b2 = betas
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        p.data *= 1.0 - lr * weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def lr_schedule(epoch: int, total: int, lr_start: float, lr_end: float) -> float:
    """Geometric decay from ``lr_start`` at epoch 0 to ``lr_end`` at the last epoch."""
    if total <= 1:
        return lr_start
    return lr_start * (lr_end / lr_start) ** (epoch / (total - 1))


# loop ---------------------------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 4
    lr_start: float = 1e-4
    lr_end: float = 1e-6
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.lr_end <= self.lr_start:
            raise ValueError("need 0 < lr_end <= lr_start")


class MetricsLog:
    FIELDS = ("epoch", "lr", "train_rel_l2", "val_rel_l2", "seconds")

    def __init__(self):
        self.rows: list[dict] = []

    def append(self, **row) -> None:
        if self.rows and row["epoch"] <= self.rows[-1]["epoch"]:
            raise ValueError("epoch index must increase")
        self.rows.append({k: row[k] for k in self.FIELDS})

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.FIELDS)
            for r in self.rows:
                w.writerow([r["epoch"], repr(float(r["lr"])), repr(float(r["train_rel_l2"])),
                            repr(float(r["val_rel_l2"])), f"{r['seconds']:.3f}"])

    @classmethod
    def read_csv(cls, path) -> "MetricsLog":
        out = cls()
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                out.append(epoch=int(r["epoch"]), **{k: float(r[k]) for k in cls.FIELDS[1:]})
        return out


@dataclass
class TrainResult:
    model: SponModel
    metrics: MetricsLog
    best_epoch: int
    best_val: float
    steps: int


def evaluate_rel_l2(model: SponModel, f: np.ndarray, u: np.ndarray, mass: Optional[CsrMatrix] = None,
                    batch: int = 16) -> np.ndarray:
    mass = mass or assemble_mass(model.out_space)
    out = [model.predict(f[i:i + batch]) for i in range(0, len(f), batch)]
    if not out:
        return np.zeros(0)
    return relative_l2(np.concatenate(out), u, mass)


def train(model: SponModel, data, config: TrainConfig, checkpoint_path=None) -> TrainResult:
    """Mini-batch AdamW training on the train split, validating each epoch.

    The returned model carries the parameters of the best validation epoch
    (the training loss is used when the val split is empty).
    """
    f_tr, u_tr = data.split("train")
    f_va, u_va = data.split("val")
    if len(f_tr) == 0:
        raise ValueError("empty training split")
    if f_tr.shape[1] != model.in_space.dim:
        raise ValueError(f"data has {f_tr.shape[1]} DoFs, model expects {model.in_space.dim}")
    mass = assemble_mass(model.out_space)
    params = model.parameters()
    state = AdamWState()
    rng = np.random.default_rng(config.seed)
    metrics = MetricsLog()
    best = (math.inf, -1, None)
    steps = 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        lr = lr_schedule(epoch, config.epochs, config.lr_start, config.lr_end)
        order = rng.permutation(len(f_tr))
        losses, sizes = [], []
        for bi, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start:start + config.batch_size]
            with dc.Tape() as tape:
                pred = model.forward_tensor(Tensor(f_tr[idx][:, :, None]))
                loss = relative_l2_loss(pred, u_tr[idx], mass)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {bi}, lr {lr:.3e}")
            model.zero_grad()
            tape.backward(loss)
            adamw_step(params, [p.grad for p in params], state, lr,
                       (config.beta1, config.beta2), config.eps, config.weight_decay)
            steps += 1
            losses.append(value)
            sizes.append(len(idx))
        train_err = float(np.average(losses, weights=sizes))
        val_err = float(evaluate_rel_l2(model, f_va, u_va, mass).mean()) if len(f_va) else float("nan")
        seconds = time.perf_counter() - t0
        metrics.append(epoch=epoch, lr=lr, train_rel_l2=train_err, val_rel_l2=val_err, seconds=seconds)
        log.info("epoch %d lr %.3e train %.4e val %.4e (%.2fs)", epoch, lr, train_err, val_err, seconds)
        score = val_err if len(f_va) else train_err
        if score < best[0]:
            best = (score, epoch, model.state_dict())
        if checkpoint_path and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            save_model(model, checkpoint_path)
    model.load_state_dict(best[2])
    if checkpoint_path:
        save_model(model, checkpoint_path)
    return TrainResult(model, metrics, best[1], best[0], steps)


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
