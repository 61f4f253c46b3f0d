"""Feed-forward classifiers assembled from variational layers."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from .layers import (
    GaussianConv2d,
    GaussianLayer,
    LayerNoise,
    PriorConfig,
    SpikeSlabConv2d,
    SpikeSlabLayer,
)
from .numeric import RngStream, softmax

LAYER_KINDS = ("gaussian", "spike-slab")


@dataclass
class LayerSpec:
    kind: str
    units: int
    activation: str = "relu"
    kernel: int | None = None
    padding: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.units < 1:
            raise ValueError("layer units must be >= 1")


@dataclass
class NetworkSpec:
    input_shape: tuple[int, ...]
    n_classes: int
    layers: list[LayerSpec] = field(default_factory=list)

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        self.layers = [l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in self.layers]
        if not self.layers:
            if self.input_shape != (self.n_classes,):
                raise ValueError("a network without layers needs input width == class count")
            return
        if self.layers[-1].units != self.n_classes:
            raise ValueError("final layer must emit one logit per class")
        seen_dense = False
        for spec in self.layers:
            if spec.kernel is None:
                seen_dense = True
            elif seen_dense:
                raise ValueError("convolutional layers must precede dense layers")
            elif len(self.input_shape) != 3:
                raise ValueError("convolutional layers need a (channels, height, width) input")

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "n_classes": self.n_classes,
            "layers": [asdict(l) for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(tuple(d["input_shape"]), int(d["n_classes"]),
                   [LayerSpec(**l) for l in d.get("layers", [])])


def mlp_spec(input_dim: int, hidden: list[int], n_classes: int, sparse: bool) -> NetworkSpec:
    """MLP with spike-and-slab (or Gaussian) hidden layers and a Gaussian head."""
    kind = "spike-slab" if sparse else "gaussian"
    layers = [LayerSpec(kind, h, "relu") for h in hidden]
    layers.append(LayerSpec("gaussian", n_classes, "identity"))
    return NetworkSpec((input_dim,), n_classes, layers)


@dataclass
class ForwardCache:
    layer_caches: list
    logits: np.ndarray
    noise: list[LayerNoise]


@dataclass
class SparsityReport:
    remaining_param_ratio: float
    remaining_flop_ratio: float
    mask: list[np.ndarray]


@dataclass
class _Topology:
    # how a layer's fan-in decomposes into upstream units
    in_units: int
    group: int
    positions: int
    upstream: int | None  # index of the gated-or-not upstream layer, None for raw input


class Network:
    def __init__(self, spec: NetworkSpec, prior: PriorConfig | None = None,
                 temperature: float = 0.5):
        self.spec = spec
        self.prior = prior or PriorConfig()
        self.temperature = temperature
        self.layers: list[GaussianLayer] = []
        self.topology: list[_Topology] = []
        shape = spec.input_shape
        for i, ls in enumerate(spec.layers):
            sparse = ls.kind == "spike-slab"
            if ls.kernel is not None:
                cls = SpikeSlabConv2d if sparse else GaussianConv2d
                layer = cls(shape[0], ls.units, ls.kernel, shape[1:], ls.padding,
                            ls.activation, self.prior, temperature=temperature)
                topo = _Topology(shape[0], ls.kernel**2, int(np.prod(layer.out_hw)),
                                 i - 1 if i else None)
                shape = layer.out_shape
            else:
                fan_in = int(np.prod(shape))
                cls = SpikeSlabLayer if sparse else GaussianLayer
                layer = cls(fan_in, ls.units, ls.activation, self.prior, temperature=temperature)
                if i and len(shape) == 3:
                    topo = _Topology(shape[0], shape[1] * shape[2], 1, i - 1)
                else:
                    topo = _Topology(fan_in, 1, 1, i - 1 if i else None)
                shape = (ls.units,)
            self.layers.append(layer)
            self.topology.append(topo)

    @property
    def n_classes(self) -> int:
        return self.spec.n_classes

    @property
    def gated(self) -> bool:
        return any(l.gate is not None for l in self.layers)

    # -- parameters ------------------------------------------------------------
    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, l in enumerate(self.layers) for k, v in l.parameters().items()}

    def kl(self) -> float:
        return float(sum(l.kl() for l in self.layers))

    def kl_grads(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, l in enumerate(self.layers) for k, v in l.kl_grads().items()}

    def masks(self) -> dict[int, np.ndarray]:
        return {i: l.gate.mask for i, l in enumerate(self.layers)
                if l.gate is not None and l.gate.mask is not None}

    def freeze_gates(self, threshold: float = 0.5) -> None:
        for l in self.layers:
            if l.gate is not None:
                l.gate.freeze(threshold)

    def clone(self) -> "Network":
        return copy.deepcopy(self)

    # -- forward / backward -------------------------------------------------
    def sample_noise(self, weight_rng: RngStream, gate_rng: RngStream | None,
                     mode: str = "hard") -> list[LayerNoise]:
        return [l.sample_noise(weight_rng, gate_rng, mode) for l in self.layers]

    def forward(self, batch: np.ndarray, weight_rng: RngStream | None = None,
                gate_rng: RngStream | None = None, mode: str = "hard",
                noise: list[LayerNoise] | None = None):
        """Class probabilities for ``batch`` plus the cache needed by ``backward``."""
        x = np.asarray(batch, dtype=np.float64)
        if x.shape[1:] != self.spec.input_shape:
            raise ValueError(f"batch shape {x.shape[1:]} != network input {self.spec.input_shape}")
        if noise is None:
            if self.layers and weight_rng is None:
                raise ValueError("forward needs random streams or explicit noise")
            noise = self.sample_noise(weight_rng, gate_rng, mode) if self.layers else []
        caches = []
        for layer, n in zip(self.layers, noise):
            if not isinstance(layer, GaussianConv2d) and x.ndim > 2:
                x = x.reshape(x.shape[0], -1)
            x, c = layer.forward(x, n, mode)
            caches.append(c)
        logits = x
        return softmax(logits), ForwardCache(caches, logits, noise)

    def backward(self, cache: ForwardCache, grad_logits: np.ndarray) -> dict[str, np.ndarray]:
        grads: dict[str, np.ndarray] = {}
        g = grad_logits
        for i in range(len(self.layers) - 1, -1, -1):
            g, lg = self.layers[i].backward(cache.layer_caches[i], g)
            for k, v in lg.items():
                grads[f"{i}.{k}"] = v
        return grads

    def predict_mc(self, batch: np.ndarray, weight_rng: RngStream, gate_rng: RngStream | None,
                   mc: int = 1, mode: str = "hard") -> np.ndarray:
        """Average of ``mc`` stochastic forwards; sample ``s`` uses sub-stream ``s``."""
        if mc < 1:
            raise ValueError("mc must be >= 1")
        total = None
        for s in range(mc):
            g = gate_rng.derive(s) if gate_rng is not None else None
            p, _ = self.forward(batch, weight_rng.derive(s), g, mode)
            total = p if total is None else total + p
        return total / mc

    # -- accounting ---------------------------------------------------------
    def alive_mask(self, threshold: float = 0.5) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            if l.gate is None:
                out.append(np.ones(l.n_units, dtype=bool))
            else:
                out.append(l.gate.gamma >= threshold)
        return out

    def sparsity_report(self, threshold: float = 0.5) -> SparsityReport:
        """Remaining parameter and FLOP ratios after pruning nodes with gamma < threshold.

        A surviving node keeps its bias and the incoming weights from surviving
        upstream units; FLOPs are 2 per kept weight per output position, biases
        are excluded from FLOPs.
        """
        if not 0 < threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        alive = self.alive_mask(threshold)
        params = params_dense = flops = flops_dense = 0
        for i, (layer, topo) in enumerate(zip(self.layers, self.topology)):
            n_in_alive = topo.in_units if topo.upstream is None else int(alive[topo.upstream].sum())
            per_node_w = topo.group * n_in_alive
            bias = 1 if layer.bias is not None else 0
            n_out = int(alive[i].sum())
            params += n_out * (per_node_w + bias)
            params_dense += layer.n_units * (topo.group * topo.in_units + bias)
            flops += n_out * 2 * per_node_w * topo.positions
            flops_dense += layer.n_units * 2 * topo.group * topo.in_units * topo.positions
        pr = params / params_dense if params_dense else 1.0
        fr = flops / flops_dense if flops_dense else 1.0
        return SparsityReport(pr, fr, [m.astype(np.uint8) for m in alive])
