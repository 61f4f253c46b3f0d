"""Sequential ensemble training: one exploration phase, then M exploitation
phases separated by perturbations of the variational means.

Snapshot file layout (all integers little-endian)::

    b"SBYSNAP\\0"                      8-byte magic
    u32  format version (1)
    u64  header length, then UTF-8 JSON header (sorted keys)
    per tensor listed in header["tensors"]:
        u64 byte length, then the raw array bytes (dtype given in the header)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import Dataset, augment
from .layers import LayerNoise, PriorConfig
from .metrics import nll as mean_nll
from .model import Network, NetworkSpec
from .numeric import AUGMENT, DATA, EVAL, GATES, INIT, PERTURB, WEIGHTS, RngStream
from .objective import ElboConfig, SgdMomentum, elbo_gradients, elbo_loss
from .schedule import PhaseEvent, PhasePlan, event_at, lr_at

TRAIN_MODES = ("dense-bnn", "sebays-freeze", "sebays-no-freeze")
SNAPSHOT_MAGIC = b"SBYSNAP\0"
SNAPSHOT_VERSION = 1


class SnapshotError(ValueError):
    """A snapshot file is unreadable, truncated or otherwise corrupt."""


class TrainingDivergence(RuntimeError):
    pass


@dataclass
class TrainerConfig:
    plan: PhasePlan = field(default_factory=PhasePlan)
    rho: float = 3.0
    mode: str = "sebays-no-freeze"
    sigma_reset: float = 1e-6
    init_sigma: float = 1e-4
    init_gamma: float = 0.99
    seed: int = 0
    batch_size: int = 128
    momentum: float = 0.9
    kl_weight: float | None = None
    reduction: str = "mean"
    freeze_variant: str = "mask"
    augment: bool = False
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.mode not in TRAIN_MODES:
            raise ValueError(f"unknown training mode {self.mode!r}")
        if not self.rho >= 0:
            raise ValueError("rho must be >= 0")
        if not self.sigma_reset > 0 or not self.init_sigma > 0:
            raise ValueError("sigma_reset and init_sigma must be > 0")
        if not 0.5 < self.init_gamma < 1:
            raise ValueError("init_gamma must lie in (0.5, 1)")
        if self.freeze_variant not in ("mask", "sampled"):
            raise ValueError("freeze_variant must be 'mask' or 'sampled'")
        if self.batch_size < 1 or self.checkpoint_every < 0:
            raise ValueError("batch_size must be >= 1 and checkpoint_every >= 0")


# -- snapshots --------------------------------------------------------------------

@dataclass
class BaseLearnerSnapshot:
    index: int
    spec: dict
    prior: dict
    temperature: float
    params: dict[str, np.ndarray]
    masks: dict[int, np.ndarray]
    meta: dict = field(default_factory=dict)

    @classmethod
    def capture(cls, net: Network, index: int, **meta) -> "BaseLearnerSnapshot":
        return cls(
            index=index,
            spec=net.spec.to_dict(),
            prior={"sigma0": net.prior.sigma0, "lam": net.prior.lam},
            temperature=net.temperature,
            params={k: v.copy() for k, v in net.parameters().items()},
            masks={i: m.copy() for i, m in net.masks().items()},
            meta=dict(meta),
        )

    @property
    def frozen(self) -> bool:
        return bool(self.masks)

    @property
    def eval_mode(self) -> str:
        return "frozen-mask" if self.masks else "hard"

    def to_network(self) -> Network:
        net = Network(NetworkSpec.from_dict(self.spec), PriorConfig(**self.prior), self.temperature)
        params = net.parameters()
        if set(params) != set(self.params):
            raise ValueError("snapshot tensors do not match the network layout")
        for k, v in self.params.items():
            params[k][...] = v
        for i, m in self.masks.items():
            net.layers[i].gate.mask = m.astype(np.float64)
        return net

    def to_bytes(self) -> bytes:
        tensors = [(f"param/{k}", v) for k, v in sorted(self.params.items())]
        tensors += [(f"mask/{i}", m.astype(np.uint8)) for i, m in sorted(self.masks.items())]
        header = {
            "format_version": SNAPSHOT_VERSION,
            "index": self.index,
            "spec": self.spec,
            "prior": self.prior,
            "temperature": self.temperature,
            "meta": self.meta,
            "tensors": [{"name": n, "dtype": a.dtype.newbyteorder("<").str if a.dtype.itemsize > 1
                         else a.dtype.str, "shape": list(a.shape)} for n, a in tensors],
        }
        hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        parts = [SNAPSHOT_MAGIC, struct.pack("<IQ", SNAPSHOT_VERSION, len(hb)), hb]
        for entry, (_, a) in zip(header["tensors"], tensors):
            data = np.ascontiguousarray(a, dtype=np.dtype(entry["dtype"])).tobytes()
            parts += [struct.pack("<Q", len(data)), data]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "BaseLearnerSnapshot":
        if raw[:8] != SNAPSHOT_MAGIC:
            raise SnapshotError("not a snapshot file (bad magic)")
        try:
            version, hlen = struct.unpack_from("<IQ", raw, 8)
            if version != SNAPSHOT_VERSION:
                raise SnapshotError(f"unsupported snapshot version {version}")
            pos = 20
            header = json.loads(raw[pos:pos + hlen].decode())
            pos += hlen
            params, masks = {}, {}
            for entry in header["tensors"]:
                (n,) = struct.unpack_from("<Q", raw, pos)
                pos += 8
                if pos + n > len(raw):
                    raise SnapshotError("truncated snapshot")
                a = np.frombuffer(raw[pos:pos + n], dtype=np.dtype(entry["dtype"]))
                a = a.reshape(entry["shape"]).copy()
                pos += n
                kind, name = entry["name"].split("/", 1)
                if kind == "param":
                    params[name] = a.astype(np.float64)
                else:
                    masks[int(name)] = a
            if pos != len(raw):
                raise SnapshotError("trailing bytes in snapshot")
        except SnapshotError:
            raise
        except (struct.error, KeyError, ValueError, TypeError, UnicodeDecodeError) as exc:
            raise SnapshotError(f"corrupt snapshot: {exc}") from None
        return cls(header["index"], header["spec"], header["prior"], header["temperature"],
                   params, masks, header.get("meta", {}))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "BaseLearnerSnapshot":
        try:
            return cls.from_bytes(Path(path).read_bytes())
        except SnapshotError as exc:
            raise SnapshotError(f"{path}: {exc}") from None


def snapshot_path(directory, index: int) -> Path:
    return Path(directory) / f"learner_{index:03d}.snap"


def load_snapshots(directory) -> list[BaseLearnerSnapshot]:
    paths = sorted(Path(directory).glob("learner_*.snap"))
    return [BaseLearnerSnapshot.load(p) for p in paths]


# -- Algorithm pieces -----------------------------------------------------------------

def initialize(net: Network, cfg: TrainerConfig, rng: RngStream) -> Network:
    """He-normal means, small constant sigmas, inclusion probabilities near 1."""
    for i, layer in enumerate(net.layers):
        gain = 2.0 if layer.activation == "relu" else 1.0
        std = np.sqrt(gain / layer.fan_in)
        layer.weight.mu[...] = std * rng.derive(i).normal(layer.weight.shape)
        layer.weight.set_sigma(cfg.init_sigma)
        if layer.bias is not None:
            layer.bias.mu[...] = 0.0
            layer.bias.set_sigma(cfg.init_sigma)
        if layer.gate is not None:
            layer.gate.set_gamma(np.full(layer.n_units, cfg.init_gamma))
            layer.gate.mask = None
    return net


def perturb(net: Network, rho: float, sign_rng: RngStream, sigma_reset: float = 1e-6) -> Network:
    """``mu <- mu + s * rho * sigma`` with i.i.d. random signs, then reset sigma.

    Signs are drawn tensor by tensor in layer order (weights before biases).
    Gates are left untouched.
    """
    for layer in net.layers:
        for vt in (layer.weight, layer.bias):
            if vt is None:
                continue
            signs = 2.0 * sign_rng.integers(0, 2, vt.shape) - 1.0
            vt.mu += signs * (rho * vt.sigma)
            vt.set_sigma(sigma_reset)
    return net


@dataclass
class TrainResult:
    snapshots: list[BaseLearnerSnapshot]
    log: list[dict]
    trajectory: list[dict]
    perturbations: list[dict]
    post_perturbation: list[BaseLearnerSnapshot]
    net: Network


def _dataset_nll(net: Network, x: np.ndarray, y: np.ndarray, mode: str) -> float:
    """Training NLL of the mean network: eps = 0 and u = 1/2 (gate open iff gamma > 1/2).

    Noise-free so that resetting sigma does not by itself move the measurement.
    """
    noise = [LayerNoise(np.zeros(l.weight.shape), None if l.bias is None else np.zeros(l.bias.shape),
                        None if l.gate is None or mode == "frozen-mask" else np.full(l.n_units, 0.5))
             for l in net.layers]
    probs, _ = net.forward(x, mode=mode, noise=noise)
    return mean_nll(probs, y)


def train(cfg: TrainerConfig, net: Network, dataset: Dataset, eval_x: np.ndarray | None = None,
          norm: tuple[np.ndarray, np.ndarray] | None = None, snapshot_dir=None,
          on_epoch_end: Callable[[int, Network, dict], None] | None = None) -> TrainResult:
    """Run every phase of the plan on ``dataset`` (raw, un-normalised features).

    ``norm`` is a ``(mean, std)`` pair applied after augmentation; ``eval_x``
    (already normalised) receives periodic prediction checkpoints.
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    if cfg.mode == "dense-bnn" and net.gated:
        raise ValueError("dense-bnn mode needs a network without gates")
    if cfg.mode != "dense-bnn" and not net.gated:
        raise ValueError(f"{cfg.mode} needs at least one spike-and-slab layer")
    plan = cfg.plan
    n = len(dataset)
    batch = min(cfg.batch_size, n)
    seed = cfg.seed
    initialize(net, cfg, RngStream(seed, INIT))
    opt = SgdMomentum(cfg.momentum)
    elbo_cfg = ElboConfig(n, batch, cfg.kl_weight, cfg.reduction)
    w_base, g_base = RngStream(seed, WEIGHTS), RngStream(seed, GATES)
    aug_base, eval_base = RngStream(seed, AUGMENT), RngStream(seed, EVAL)
    freeze = cfg.mode == "sebays-freeze"
    frozen = False
    bshape = (1, -1, 1, 1) if dataset.is_image else (1, -1)

    def normalized(xb):
        if norm is None:
            return xb
        return (xb - norm[0].reshape(bshape)) / norm[1].reshape(bshape)

    def prep(xb, idx, epoch):
        if cfg.augment and dataset.is_image:
            xb = augment(xb, aug_base, epoch, idx)
        return normalized(xb)

    full_x = normalized(dataset.x)
    snapshots, post, log, trajectory, perturbations = [], [], [], [], []
    if snapshot_dir is not None:
        Path(snapshot_dir).mkdir(parents=True, exist_ok=True)
    ckpt_id = 0
    pending = None
    for epoch in range(plan.total_epochs):
        phase, e = plan.phase_of(epoch)
        if freeze and phase >= 1 and not frozen:
            if cfg.freeze_variant == "mask":
                net.freeze_gates(0.5)
            frozen = True
        mode = "frozen-mask" if frozen and cfg.freeze_variant == "mask" else "hard"
        lr = lr_at(plan, epoch)
        perm = RngStream(seed, DATA).derive(epoch).permutation(n)
        nll_sum = 0.0
        params = net.parameters()
        for step, start in enumerate(range(0, n, batch)):
            idx = perm[start:start + batch]
            xb = prep(dataset.x[idx], idx, epoch)
            res = elbo_loss(net, xb, dataset.y[idx], elbo_cfg, w_base.derive(epoch, step),
                            g_base.derive(epoch, step), mode)
            if not np.isfinite(res.loss):
                raise TrainingDivergence(f"non-finite loss at epoch {epoch}, step {step}")
            grads = elbo_gradients(net, res)
            if frozen:
                grads = {k: v for k, v in grads.items() if not k.endswith("gate.logit")}
            try:
                opt.step(params, grads, lr)
            except FloatingPointError as exc:
                raise TrainingDivergence(f"epoch {epoch}, step {step}: {exc}") from None
            nll_sum += res.nll
        sp = net.sparsity_report(0.5)
        kl = net.kl()
        row = {
            "epoch": epoch, "phase": phase, "lr": lr,
            "loss": nll_sum / n + kl / n, "nll": nll_sum / n, "kl": kl,
            "remaining_param_ratio": sp.remaining_param_ratio,
            "remaining_flop_ratio": sp.remaining_flop_ratio,
        }
        log.append(row)
        if on_epoch_end is not None:
            on_epoch_end(epoch, net, row)

        if eval_x is not None and cfg.checkpoint_every and phase >= 1:
            k = epoch - plan.t0 + 1
            if k % cfg.checkpoint_every == 0:
                probs, _ = net.forward(eval_x, eval_base.derive(0, epoch),
                                       eval_base.derive(1, epoch), mode)
                for ex, p in enumerate(probs):
                    trajectory.append({"checkpoint_id": ckpt_id, "epoch": epoch, "phase": phase,
                                       "example_id": ex, "probs": p})
                ckpt_id += 1

        event = event_at(plan, epoch)
        if event is PhaseEvent.NONE:
            continue
        m = phase
        if pending is not None:
            pending["train_nll_phase_end"] = _dataset_nll(net, full_x, dataset.y, mode)
            pending = None
        snap = BaseLearnerSnapshot.capture(
            net, m, mode=cfg.mode, kind="learner",
            epoch_range=[plan.t0 + (m - 1) * plan.t_ex, epoch + 1], final_lr=lr, seed=seed)
        snapshots.append(snap)
        if snapshot_dir is not None:
            snap.save(snapshot_path(snapshot_dir, m))
        if event is PhaseEvent.PERTURB_AND_SNAPSHOT:
            before = _dataset_nll(net, full_x, dataset.y, mode)
            perturb(net, cfg.rho, RngStream(seed, PERTURB).derive(m), cfg.sigma_reset)
            opt.reset()
            after = _dataset_nll(net, full_x, dataset.y, mode)
            pending = {"after_learner": m, "epoch": epoch, "train_nll_before": before,
                       "train_nll_after": after, "train_nll_phase_end": None}
            perturbations.append(pending)
            ps = BaseLearnerSnapshot.capture(net, m, mode=cfg.mode, kind="post-perturbation",
                                             epoch=epoch + 1, seed=seed)
            post.append(ps)
            if snapshot_dir is not None:
                ps.save(Path(snapshot_dir) / f"perturbed_{m:03d}.snap")
    return TrainResult(snapshots, log, trajectory, perturbations, post, net)
