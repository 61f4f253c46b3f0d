"""Minibatch negative ELBO and SGD with classical momentum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ForwardCache, Network
from .numeric import RngStream, log_softmax


@dataclass
class ElboConfig:
    """``dataset_size`` and ``batch_size`` set the per-step KL scale ``B/N``.

    ``reduction="mean"`` divides the whole objective by the batch size, which
    leaves the optimum unchanged but keeps step sizes independent of ``B``.
    """

    dataset_size: int
    batch_size: int
    kl_weight: float | None = None
    reduction: str = "sum"

    def __post_init__(self):
        if self.batch_size < 1 or self.dataset_size < 1:
            raise ValueError("dataset_size and batch_size must be >= 1")
        if self.batch_size > self.dataset_size:
            raise ValueError("batch_size cannot exceed dataset_size")
        if self.reduction not in ("sum", "mean"):
            raise ValueError(f"unknown reduction {self.reduction!r}")

    def kl_scale(self, batch: int) -> float:
        if self.kl_weight is not None:
            return float(self.kl_weight)
        return batch / self.dataset_size


@dataclass
class ElboResult:
    loss: float
    nll: float
    kl: float
    kl_scale: float
    probs: np.ndarray
    cache: ForwardCache
    labels: np.ndarray
    divisor: float


def elbo_loss(net: Network, batch: np.ndarray, labels: np.ndarray, cfg: ElboConfig,
              weight_rng: RngStream | None = None, gate_rng: RngStream | None = None,
              mode: str = "hard", noise=None) -> ElboResult:
    """Summed cross-entropy of one stochastic forward plus the scaled KL."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= net.n_classes):
        raise ValueError(f"labels must lie in [0, {net.n_classes})")
    probs, cache = net.forward(batch, weight_rng, gate_rng, mode, noise)
    logp = log_softmax(cache.logits)
    nll = float(-np.sum(logp[np.arange(len(labels)), labels]))
    kl = net.kl()
    scale = cfg.kl_scale(len(labels))
    divisor = float(len(labels)) if cfg.reduction == "mean" else 1.0
    loss = (nll + scale * kl) / divisor
    return ElboResult(loss, nll, kl, scale, probs, cache, labels, divisor)


def elbo_gradients(net: Network, res: ElboResult) -> dict[str, np.ndarray]:
    g_logits = res.probs.copy()
    g_logits[np.arange(len(res.labels)), res.labels] -= 1.0
    grads = net.backward(res.cache, g_logits)
    for k, v in net.kl_grads().items():
        grads[k] = grads[k] + res.kl_scale * v
    if res.divisor != 1.0:
        grads = {k: v / res.divisor for k, v in grads.items()}
    return grads


class SgdMomentum:
    """``v <- m*v + g``; ``p <- p - lr*v``, updating parameter arrays in place."""

    def __init__(self, momentum: float = 0.9, weight_decay: float = 0.0):
        if not 0 <= momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[str, np.ndarray] = {}

    def reset(self) -> None:
        self.velocity.clear()

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        for name in grads:
            if params[name].shape != grads[name].shape:
                raise ValueError(f"gradient shape mismatch for {name}")
            if not np.all(np.isfinite(grads[name])):
                raise FloatingPointError(f"non-finite gradient in {name}")
        for name, g in grads.items():
            p = params[name]
            if self.weight_decay:
                g = g + self.weight_decay * p
            v = self.velocity.get(name)
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[name] = v
            p -= lr * v
