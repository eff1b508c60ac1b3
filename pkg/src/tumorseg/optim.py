"""Soft Dice loss, Adam, and the training loop."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass

import numpy as np

from .augment import AugmentationSpec, augment, sample_seed
from .data import SliceSample
from .tensor import Graph, ShapeError, Tensor, as_tensor, emit
from .unet import UNetModel, forward

logger = logging.getLogger(__name__)


def soft_dice_loss(probs: Tensor, target, smooth: float = 1.0) -> Tensor:
    """1 - (2 sum(p g) + s) / (sum(p^2) + sum(g^2) + s), pooled over the batch.

    ``p`` is the foreground channel (index 1) of ``probs`` [N, 2, H, W] and
    ``g`` the binary target [N, H, W].
    """
    probs = as_tensor(probs)
    g = np.asarray(target)
    if probs.data.ndim != 4 or probs.shape[1] != 2:
        raise ShapeError(f"soft_dice_loss: probs must be [N,2,H,W], got {probs.shape}")
    if g.shape != (probs.shape[0], *probs.shape[2:]):
        raise ShapeError(f"soft_dice_loss: target {g.shape} does not match probs {probs.shape}")
    if not np.isin(g, (0, 1)).all():
        raise ValueError("soft_dice_loss: target must be binary")
    g = g.astype(probs.dtype)
    p = probs.data[:, 1]
    inter = (p * g).sum()
    denom = (p * p).sum() + (g * g).sum() + smooth
    num = 2 * inter + smooth
    loss = 1 - num / denom

    def grad_fn(grad):
        dp = -(2 * g * denom - num * 2 * p) / denom ** 2
        out = np.zeros_like(probs.data)
        out[:, 1] = grad * dp
        return (out,)

    return emit("soft_dice_loss", (probs,), np.asarray(loss, dtype=probs.dtype), grad_fn)


class Adam:
    """Adam with bias correction; optional L2 term added to the gradient."""

    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, l2_lambda: float = 0.0):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.l2_lambda = l2_lambda
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place."""
        for k in params:
            if grads[k].shape != params[k].shape:
                raise ShapeError(f"{k}: grad {grads[k].shape} vs param {params[k].shape}")
        self.t += 1
        bc1 = 1 - self.beta1 ** self.t
        bc2 = 1 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k].astype(p.dtype, copy=False)
            if self.l2_lambda:
                g = g + self.l2_lambda * p
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            p -= (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.dtype)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    max_epochs: int = 100
    batch_size: int = 4
    l2_lambda: float = 0.0
    seed: int = 0
    log_every: int = 1

    def errors(self) -> list[str]:
        errs = []
        if self.learning_rate < 0:
            errs.append(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.max_epochs < 1:
            errs.append(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size < 1:
            errs.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.l2_lambda < 0:
            errs.append(f"l2_lambda must be non-negative, got {self.l2_lambda}")
        return errs


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    wall_seconds: float


def train(model: UNetModel, samples: list[SliceSample], aug: AugmentationSpec | None,
          config: TrainConfig, callback=None) -> list[EpochLog]:
    """Train ``model`` in place on 2-D slices; returns one log entry per epoch.

    Each epoch shuffles the slices with a generator seeded from
    (seed, epoch) and augments every slice with its own (seed, epoch, index)
    generator, so results do not depend on processing order.
    """
    if not samples:
        raise ValueError("train: empty dataset")
    errs = config.errors()
    if errs:
        raise ValueError("invalid TrainConfig: " + "; ".join(errs))
    aug = aug or AugmentationSpec.disabled()
    dtype = next(iter(model.params.values())).dtype
    opt = Adam(config.learning_rate, l2_lambda=config.l2_lambda or model.config.l2_lambda)
    history = []
    for epoch in range(config.max_epochs):
        start = time.perf_counter()
        order = np.random.default_rng([config.seed, epoch]).permutation(len(samples))
        losses, weights = [], []
        for b0 in range(0, len(order), config.batch_size):
            idx = order[b0:b0 + config.batch_size]
            batch = [augment(samples[i], aug, sample_seed(config.seed, epoch, int(i))) for i in idx]
            images = np.stack([s.image for s in batch])[:, None].astype(dtype)
            targets = np.stack([s.target for s in batch])
            graph = Graph()
            drop_rng = np.random.default_rng([config.seed, epoch, b0, 1])
            probs = forward(model, images, training=True, graph=graph, rng=drop_rng)
            loss = soft_dice_loss(probs, targets)
            grads = graph.backward(loss)
            opt.step(model.params, grads)
            losses.append(loss.item())
            weights.append(len(idx))
        entry = EpochLog(epoch + 1, float(np.average(losses, weights=weights)),
                         time.perf_counter() - start)
        history.append(entry)
        if config.log_every and (epoch + 1) % config.log_every == 0:
            logger.info("epoch %d loss %.5f (%.1fs)", entry.epoch, entry.mean_loss,
                        entry.wall_seconds)
        if callback is not None:
            callback(entry)
    return history


def write_loss_log(history: list[EpochLog], path, include_time: bool = True) -> None:
    """CSV with columns epoch, mean_loss, wall_seconds.

    With ``include_time=False`` the wall_seconds cells are left empty so that
    reruns produce identical files.
    """
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "mean_loss", "wall_seconds"])
        for e in history:
            w.writerow([e.epoch, repr(e.mean_loss), f"{e.wall_seconds:.3f}" if include_time else ""])
