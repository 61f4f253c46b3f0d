"""Slow, loop-based reference implementations used to check the vectorised code."""

import math

import numpy as np

from sebays.layers import GaussianConv2d
from sebays.metrics import PROB_FLOOR
from sebays.model import Network


def _argmax(row):
    best = 0
    for j in range(1, len(row)):
        if row[j] > row[best]:
            best = j
    return best


def disagreement_pairs(p1, p2):
    return sum(_argmax(a) != _argmax(b) for a, b in zip(p1, p2)) / len(p1)


def kl_terms(p1, p2):
    return [x * (math.log(max(x, PROB_FLOOR)) - math.log(max(y, PROB_FLOOR)))
            for a, b in zip(p1, p2) for x, y in zip(a, b)]


def diversity_pairs(preds):
    """(d_dis, d_KL) from explicit loops; KL uses one correctly rounded total."""
    pairs = [(i, j) for i in range(len(preds)) for j in range(len(preds)) if i != j]
    n = len(preds[0])
    differ = sum(_argmax(a) != _argmax(b) for i, j in pairs for a, b in zip(preds[i], preds[j]))
    kl = math.fsum(t for i, j in pairs for t in kl_terms(preds[i], preds[j]))
    return differ / (len(pairs) * n), kl / (len(pairs) * n)


def auroc_pairs(s_in, s_out):
    wins = 0.0
    for a in s_in:
        for b in s_out:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(s_in) * len(s_out))


def ece_bins(preds, labels, bins):
    groups = {}
    for row, y in zip(preds, labels):
        conf = max(row)
        b = max(0, min(bins - 1, math.ceil(conf * bins) - 1))
        groups.setdefault(b, []).append((conf, float(_argmax(row) == y)))
    total = 0.0
    for items in groups.values():
        acc = sum(c for _, c in items) / len(items)
        conf = sum(c for c, _ in items) / len(items)
        total += len(items) / len(preds) * abs(acc - conf)
    return total


def _unit_graph(net: Network):
    """(upstream units, taps per unit pair, output positions) rebuilt from layer shapes."""
    out, prev = [], None
    for layer in net.layers:
        if isinstance(layer, GaussianConv2d):
            out.append((layer.in_channels, layer.kernel**2, layer.out_hw[0] * layer.out_hw[1]))
        elif isinstance(prev, GaussianConv2d):
            out.append((prev.fan_out, prev.out_hw[0] * prev.out_hw[1], 1))
        else:
            out.append((layer.fan_in, 1, 1))
        prev = layer
    return out


def edge_count_ratios(net: Network, threshold: float) -> tuple[float, float]:
    """Count surviving edges one by one over an explicit unit graph."""
    alive = [l.gate.gamma >= threshold if l.gate is not None else np.ones(l.n_units, bool)
             for l in net.layers]
    kept_p = all_p = kept_f = all_f = 0
    for i, (layer, (in_units, taps, positions)) in enumerate(zip(net.layers, _unit_graph(net))):
        up_alive = np.ones(in_units, bool) if i == 0 else alive[i - 1]
        for out_unit in range(layer.n_units):
            for in_unit in range(in_units):
                for _ in range(taps):
                    all_p += 1
                    all_f += 2 * positions
                    if alive[i][out_unit] and up_alive[in_unit]:
                        kept_p += 1
                        kept_f += 2 * positions
            all_p += 1  # bias
            if alive[i][out_unit]:
                kept_p += 1
    return kept_p / all_p, kept_f / all_f
