"""Fully connected networks stored as one flat parameter vector.

Layer ``i`` occupies ``widths[i] * widths[i+1]`` matrix entries (row-major,
``(fan_in, fan_out)``) followed by ``widths[i+1]`` biases.  Hidden layers
use relu; the output activation is ``"linear"`` or ``"expm1"``
(``max(exp(x) - 1, 0)``).
"""
import numpy as np

from . import autodiff as ad


def layer_shapes(widths):
    return [(widths[i], widths[i + 1]) for i in range(len(widths) - 1)]


def n_params(widths):
    return sum(a * b + b for a, b in layer_shapes(widths))


def unflatten(params, widths):
    params = np.asarray(params, float)
    if params.shape != (n_params(widths),):
        raise ValueError(f"expected {n_params(widths)} parameters for widths {tuple(widths)}, got shape {params.shape}")
    layers, off = [], 0
    for a, b in layer_shapes(widths):
        w = params[off:off + a * b].reshape(a, b)
        off += a * b
        layers.append((w, params[off:off + b]))
        off += b
    return layers


def flatten(layers):
    return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in layers])


def init(widths, rng, out_std=None):
    """He-normal weights and zero biases; ``out_std`` overrides the last layer's scale."""
    layers = []
    shapes = layer_shapes(widths)
    for i, (a, b) in enumerate(shapes):
        std = np.sqrt(2.0 / a)
        if i == len(shapes) - 1 and out_std is not None:
            std = out_std
        layers.append((rng.normal(0.0, std, size=(a, b)), np.zeros(b)))
    return flatten(layers)


def _activate(z, out):
    if out == "linear":
        return z
    if out == "expm1":
        return np.maximum(np.exp(z) - 1.0, 0.0)
    raise ValueError(f"unknown output activation {out!r}")


def forward(params, widths, x, out="linear"):
    h = np.asarray(x, float)
    layers = unflatten(params, widths)
    for w, b in layers[:-1]:
        h = np.maximum(h @ w + b, 0.0)
    w, b = layers[-1]
    return _activate(h @ w + b, out)


def graph_layers(g: ad.Graph, params_node, widths):
    """Slice a flat parameter node into per-layer ``(W, b)`` nodes."""
    layers, off = [], 0
    for a, b in layer_shapes(widths):
        w = g.slice(params_node, (slice(off, off + a * b),), shape=(a, b))
        off += a * b
        layers.append((w, g.slice(params_node, (slice(off, off + b),))))
        off += b
    return layers


def graph_forward(g: ad.Graph, layers, x_node, out="linear"):
    h = x_node
    for w, b in layers[:-1]:
        h = g.relu(g.linear(h, w, b))
    w, b = layers[-1]
    z = g.linear(h, w, b)
    if out == "linear":
        return z
    if out == "expm1":
        return g.relu(g.shift(g.exp(z), -1.0))
    raise ValueError(f"unknown output activation {out!r}")
