"""Builders shared by several test modules."""

import numpy as np

from sebays.layers import PriorConfig
from sebays.model import Network, mlp_spec
from sebays.numeric import RngStream, finite_diff_gradient
from sebays.objective import ElboConfig, elbo_gradients, elbo_loss


def random_network(seed: int, sizes=(2, 16, 16, 3), sparse: bool = True, sigma_scale: float = 0.3,
                   prior: PriorConfig | None = None) -> Network:
    """MLP with random means, sigmas and inclusion probabilities."""
    net = Network(mlp_spec(sizes[0], list(sizes[1:-1]), sizes[-1], sparse), prior)
    rng = RngStream(seed, 99)
    for layer in net.layers:
        layer.weight.mu[...] = rng.normal(layer.weight.shape) * 0.7
        layer.weight.set_sigma(sigma_scale * (0.2 + rng.random(layer.weight.shape)))
        layer.bias.mu[...] = rng.normal(layer.bias.shape) * 0.3
        layer.bias.set_sigma(sigma_scale * (0.2 + rng.random(layer.bias.shape)))
        if layer.gate is not None:
            layer.gate.set_gamma(0.15 + 0.7 * rng.random(layer.n_units))
    return net


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def elbo_gradient_errors(net: Network, seed: int, mode: str, names=None, batch: int = 8,
                         h: float = 1e-5) -> dict[str, float]:
    """Relative error of analytic vs central-difference gradients of the frozen-noise loss."""
    rng = RngStream(seed, 98)
    x = rng.normal((batch, net.spec.input_shape[0]))
    y = rng.integers(0, net.n_classes, batch)
    noise = net.sample_noise(rng.derive(1), rng.derive(2), mode)
    cfg = ElboConfig(dataset_size=100, batch_size=batch)
    res = elbo_loss(net, x, y, cfg, mode=mode, noise=noise)
    grads = elbo_gradients(net, res)
    params = net.parameters()
    errors = {}
    for name in names or params:
        p = params[name]
        orig = p.copy()

        def f(v, p=p):
            p[...] = v
            return elbo_loss(net, x, y, cfg, mode=mode, noise=noise).loss

        numeric = finite_diff_gradient(f, orig, h)
        p[...] = orig
        errors[name] = relative_error(grads[name], numeric)
    return errors
