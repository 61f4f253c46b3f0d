"""Mean-field Gaussian and node-wise spike-and-slab variational layers.

Weights are stored as ``(fan_in, fan_out)`` so that column ``j`` holds every
weight incident onto output node (or channel) ``j``; a spike-and-slab gate
multiplies that node's activation by a Bernoulli indicator.

Forward modes:

``hard``
    Sample ``u`` per node, ``z = 1{z_soft > 0.5}`` multiplies the activation.
    Backward is straight-through: the activation gradient uses ``z`` and the
    gate-logit gradient flows through ``z_soft``.
``relaxed``
    ``z_soft`` itself multiplies the activation; gradients are exact.
``frozen-mask``
    A stored binary mask replaces ``z``; no ``u`` is drawn and the gate gets
    no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .numeric import RngStream

MODES = ("hard", "relaxed", "frozen-mask")
ACTIVATIONS = ("relu", "identity")


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def sigma_to_raw(sigma) -> np.ndarray:
    """Unconstrained value whose softplus is as close as possible to ``sigma``.

    The closed-form inverse is refined over neighbouring floats so that the
    round trip is exact whenever some float maps onto ``sigma`` exactly, and
    otherwise lands on the nearest representable value.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    raw = np.atleast_1d(softplus_inv(sigma)).copy()
    target = np.atleast_1d(sigma)
    best = raw.copy()
    best_err = np.abs(softplus(raw) - target)
    for direction in (np.inf, -np.inf):
        cand = raw.copy()
        for _ in range(32):
            cand = np.nextafter(cand, direction)
            err = np.abs(softplus(cand) - target)
            better = err < best_err
            best[better] = cand[better]
            best_err[better] = err[better]
    return best.reshape(sigma.shape)


def kl_normal(mu, sigma, sigma0: float):
    """Elementwise KL(N(mu, sigma^2) || N(0, sigma0^2))."""
    return np.log(sigma0 / sigma) + (sigma**2 + mu**2) / (2.0 * sigma0**2) - 0.5


def kl_bernoulli_logit(logit, lam: float):
    """Elementwise KL(Bernoulli(expit(logit)) || Bernoulli(lam)), stable at the ends."""
    g = expit(logit)
    g1 = expit(-logit)
    log_g = -np.logaddexp(0.0, -logit)
    log_g1 = -np.logaddexp(0.0, logit)
    return g * (log_g - np.log(lam)) + g1 * (log_g1 - np.log1p(-lam))


@dataclass(frozen=True)
class PriorConfig:
    sigma0: float = 1.0
    lam: float = 0.5

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise ValueError(f"prior sigma0 must be > 0, got {self.sigma0}")
        if not 0 < self.lam < 1:
            raise ValueError(f"prior inclusion probability must lie in (0, 1), got {self.lam}")


class VariationalTensor:
    """Means and softplus-stored standard deviations of a factorised Gaussian."""

    def __init__(self, mu: np.ndarray, sigma_raw: np.ndarray):
        mu = np.asarray(mu, dtype=np.float64)
        sigma_raw = np.asarray(sigma_raw, dtype=np.float64)
        if mu.shape != sigma_raw.shape:
            raise ValueError(f"mu {mu.shape} and sigma_raw {sigma_raw.shape} differ in shape")
        self.mu = mu
        self.sigma_raw = sigma_raw

    @classmethod
    def filled(cls, shape, mu: float = 0.0, sigma: float = 1e-4) -> "VariationalTensor":
        raw = np.full(shape, float(sigma_to_raw(sigma)))
        return cls(np.full(shape, float(mu)), raw)

    @property
    def shape(self):
        return self.mu.shape

    @property
    def sigma(self) -> np.ndarray:
        return softplus(self.sigma_raw)

    def set_sigma(self, value) -> None:
        value = np.broadcast_to(np.asarray(value, dtype=np.float64), self.shape)
        if value.size and np.all(value == value.flat[0]):
            self.sigma_raw[...] = sigma_to_raw(value.flat[0])
        else:
            self.sigma_raw[...] = sigma_to_raw(value)


class NodeGate:
    """Per-node inclusion probability with its relaxed and hard samples."""

    def __init__(self, n: int, gamma: float = 0.99, temperature: float = 0.5):
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.logit = np.full(n, float(np.log(gamma) - np.log1p(-gamma)))
        self.temperature = float(temperature)
        self.last_hard_z: np.ndarray | None = None
        self.last_soft_z: np.ndarray | None = None
        self.mask: np.ndarray | None = None

    @property
    def gamma(self) -> np.ndarray:
        return expit(self.logit)

    def set_gamma(self, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        self.logit[...] = np.log(value) - np.log1p(-value)

    def freeze(self, threshold: float = 0.5) -> np.ndarray:
        self.mask = (self.gamma >= threshold).astype(np.float64)
        return self.mask

    def relax(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Gumbel-softmax sample for given uniforms: returns (hard z, soft z)."""
        eta = self.logit + np.log(u) - np.log1p(-u)
        soft = expit(eta / self.temperature)
        hard = (soft > 0.5).astype(np.float64)
        return hard, soft


@dataclass
class LayerNoise:
    eps_w: np.ndarray
    eps_b: np.ndarray | None
    u: np.ndarray | None = None


@dataclass
class LayerCache:
    layer: object
    mode: str
    x_shape: tuple
    x_mat: np.ndarray
    ctx: object
    noise: LayerNoise
    w: np.ndarray
    pre: np.ndarray
    act: np.ndarray
    z: np.ndarray | None = None
    z_soft: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


class GaussianLayer:
    """Fully connected layer with a factorised Gaussian over weights and biases."""

    kind = "gaussian"
    gated = False

    def __init__(self, fan_in: int, fan_out: int, activation: str = "relu",
                 prior: PriorConfig | None = None, bias: bool = True,
                 temperature: float = 0.5):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.fan_in = int(fan_in)
        self.fan_out = int(fan_out)
        self.activation = activation
        self.prior = prior or PriorConfig()
        self.weight = VariationalTensor.filled((self.fan_in, self.fan_out))
        self.bias = VariationalTensor.filled((self.fan_out,)) if bias else None
        self.gate = NodeGate(self.fan_out, temperature=temperature) if self.gated else None

    # -- shape hooks (overridden by convolutions) -------------------------
    def _to_matrix(self, x):
        if x.ndim != 2 or x.shape[1] != self.fan_in:
            raise ValueError(f"expected input of shape (batch, {self.fan_in}), got {x.shape}")
        return x, None

    def _from_matrix(self, y, ctx):
        return y

    def _from_matrix_grad(self, g, ctx):
        return g

    def _to_matrix_grad(self, g, ctx):
        return g

    @property
    def n_units(self) -> int:
        return self.fan_out

    # -- parameters --------------------------------------------------------
    def parameters(self) -> dict[str, np.ndarray]:
        params = {"weight.mu": self.weight.mu, "weight.sigma_raw": self.weight.sigma_raw}
        if self.bias is not None:
            params["bias.mu"] = self.bias.mu
            params["bias.sigma_raw"] = self.bias.sigma_raw
        if self.gate is not None:
            params["gate.logit"] = self.gate.logit
        return params

    def sample_noise(self, weight_rng: RngStream, gate_rng: RngStream | None = None,
                     mode: str = "hard") -> LayerNoise:
        eps_w = weight_rng.normal(self.weight.shape)
        eps_b = weight_rng.normal(self.bias.shape) if self.bias is not None else None
        u = None
        if self.gate is not None and mode != "frozen-mask":
            if gate_rng is None:
                raise ValueError("gated layer needs a gate random stream")
            u = gate_rng.uniform_open(self.n_units)
        return LayerNoise(eps_w, eps_b, u)

    # -- forward / backward -------------------------------------------------
    def forward(self, x: np.ndarray, noise: LayerNoise, mode: str = "hard"):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        x = np.asarray(x, dtype=np.float64)
        x_mat, ctx = self._to_matrix(x)
        w = self.weight.mu + self.weight.sigma * noise.eps_w
        pre = x_mat @ w
        if self.bias is not None:
            pre = pre + (self.bias.mu + self.bias.sigma * noise.eps_b)
        act = np.maximum(pre, 0.0) if self.activation == "relu" else pre
        cache = LayerCache(self, mode, x.shape, x_mat, ctx, noise, w, pre, act)
        out = act
        if self.gate is not None:
            if mode == "frozen-mask":
                if self.gate.mask is None:
                    raise ValueError("frozen-mask mode requires a stored gate mask")
                cache.z = self.gate.mask
                out = act * cache.z
            else:
                if noise.u is None:
                    raise ValueError("gate uniforms missing from noise")
                hard, soft = self.gate.relax(noise.u)
                self.gate.last_hard_z, self.gate.last_soft_z = hard, soft
                cache.z, cache.z_soft = hard, soft
                out = act * (soft if mode == "relaxed" else hard)
        return self._from_matrix(out, ctx), cache

    def backward(self, cache: LayerCache | None, grad_out: np.ndarray):
        if cache is None or cache.layer is not self:
            raise ValueError("missing or stale cache for this layer")
        g = self._from_matrix_grad(np.asarray(grad_out, dtype=np.float64), cache.ctx)
        if g.shape != cache.act.shape:
            raise ValueError(f"gradient shape {g.shape} does not match output {cache.act.shape}")
        grads: dict[str, np.ndarray] = {}
        if self.gate is not None:
            if cache.mode == "frozen-mask":
                g_act = g * cache.z
                grads["gate.logit"] = np.zeros_like(self.gate.logit)
            else:
                factor = cache.z_soft if cache.mode == "relaxed" else cache.z
                g_act = g * factor
                d_soft = np.sum(g * cache.act, axis=0)
                s = cache.z_soft
                grads["gate.logit"] = d_soft * s * (1.0 - s) / self.gate.temperature
        else:
            g_act = g
        g_pre = g_act * (cache.pre > 0) if self.activation == "relu" else g_act
        d_w = cache.x_mat.T @ g_pre
        grads["weight.mu"] = d_w
        grads["weight.sigma_raw"] = d_w * cache.noise.eps_w * expit(self.weight.sigma_raw)
        if self.bias is not None:
            d_b = np.sum(g_pre, axis=0)
            grads["bias.mu"] = d_b
            grads["bias.sigma_raw"] = d_b * cache.noise.eps_b * expit(self.bias.sigma_raw)
        g_in = self._to_matrix_grad(g_pre @ cache.w.T, cache.ctx)
        return g_in.reshape(cache.x_shape), grads

    # -- KL -------------------------------------------------------------------
    def _slab_kl_per_node(self) -> np.ndarray:
        kl = kl_normal(self.weight.mu, self.weight.sigma, self.prior.sigma0)
        return np.sum(kl, axis=0)

    def kl(self) -> float:
        per_node = self._slab_kl_per_node()
        if self.gate is None:
            total = np.sum(per_node)
        else:
            gamma = self.gate.gamma
            total = np.sum(kl_bernoulli_logit(self.gate.logit, self.prior.lam) + gamma * per_node)
        if self.bias is not None:
            total += np.sum(kl_normal(self.bias.mu, self.bias.sigma, self.prior.sigma0))
        return float(total)

    def kl_grads(self) -> dict[str, np.ndarray]:
        s0sq = self.prior.sigma0**2
        sigma = self.weight.sigma
        weight = self.gate.gamma if self.gate is not None else 1.0
        grads = {
            "weight.mu": weight * self.weight.mu / s0sq,
            "weight.sigma_raw": weight * (sigma / s0sq - 1.0 / sigma) * expit(self.weight.sigma_raw),
        }
        if self.bias is not None:
            bs = self.bias.sigma
            grads["bias.mu"] = self.bias.mu / s0sq
            grads["bias.sigma_raw"] = (bs / s0sq - 1.0 / bs) * expit(self.bias.sigma_raw)
        if self.gate is not None:
            lam = self.prior.lam
            gamma = self.gate.gamma
            d_gamma = self.gate.logit - (np.log(lam) - np.log1p(-lam)) + self._slab_kl_per_node()
            grads["gate.logit"] = gamma * (1.0 - gamma) * d_gamma
        return grads


class SpikeSlabLayer(GaussianLayer):
    """Fully connected layer whose output nodes carry spike-and-slab gates."""

    kind = "spike-slab"
    gated = True


class GaussianConv2d(GaussianLayer):
    """Stride-1 2-D convolution lowered to a matrix product over patches."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, in_hw: tuple[int, int],
                 padding: int = 0, activation: str = "relu", prior: PriorConfig | None = None,
                 bias: bool = True, temperature: float = 0.5):
        self.in_channels = int(in_channels)
        self.kernel = int(kernel)
        self.padding = int(padding)
        self.in_hw = (int(in_hw[0]), int(in_hw[1]))
        self.out_hw = (self.in_hw[0] + 2 * self.padding - self.kernel + 1,
                       self.in_hw[1] + 2 * self.padding - self.kernel + 1)
        if min(self.out_hw) < 1:
            raise ValueError("kernel larger than padded input")
        super().__init__(in_channels * kernel * kernel, out_channels, activation, prior, bias,
                         temperature)

    @property
    def out_shape(self) -> tuple[int, int, int]:
        return (self.fan_out, *self.out_hw)

    def _to_matrix(self, x):
        expected = (self.in_channels, *self.in_hw)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ValueError(f"expected input of shape (batch, {expected}), got {x.shape}")
        p, k = self.padding, self.kernel
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (k, k), axis=(2, 3))  # B, C, Ho, Wo, k, k
        b = x.shape[0]
        ho, wo = self.out_hw
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, self.fan_in)
        return cols, b

    def _from_matrix(self, y, b):
        ho, wo = self.out_hw
        return y.reshape(b, ho, wo, self.fan_out).transpose(0, 3, 1, 2)

    def _from_matrix_grad(self, g, b):
        return g.transpose(0, 2, 3, 1).reshape(-1, self.fan_out)

    def _to_matrix_grad(self, g_cols, b):
        p, k = self.padding, self.kernel
        ho, wo = self.out_hw
        h, w = self.in_hw
        g6 = g_cols.reshape(b, ho, wo, self.in_channels, k, k)
        gp = np.zeros((b, self.in_channels, h + 2 * p, w + 2 * p))
        for ky in range(k):
            for kx in range(k):
                gp[:, :, ky:ky + ho, kx:kx + wo] += g6[:, :, :, :, ky, kx].transpose(0, 3, 1, 2)
        return gp[:, :, p:p + h, p:p + w]


class SpikeSlabConv2d(GaussianConv2d):
    """Convolution with one spike-and-slab gate per output channel."""

    kind = "spike-slab"
    gated = True
