"""Per-cell re-ID embedding network with hand-written backprop, an Adam
optimiser, and the 2x average-pool that feeds the cost volume."""
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ShapeError, StateError
from .gridmath import FeatureGrid, matmul

EMBED_DIM = 128


@dataclass
class Layer:
    weight: np.ndarray  # c_in x c_out
    bias: np.ndarray  # c_out
    relu: bool = True


class EmbeddingNet:
    """Stack of 1x1 layers applied independently at every grid cell.

    ReLU between layers, linear output so embeddings can be signed.
    """

    def __init__(self, layers):
        if not layers:
            raise ShapeError("embedding net needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.weight.shape[1] != b.weight.shape[0]:
                raise ShapeError(
                    f"layer dims do not chain: {a.weight.shape} -> {b.weight.shape}")
        for layer in layers:
            if layer.bias.shape != (layer.weight.shape[1],):
                raise ShapeError("bias length must equal layer output width")
        self.layers = layers
        self._cache = None

    @classmethod
    def init(cls, input_channels, output_channels=EMBED_DIM, hidden=64,
             n_layers=3, rng=None, scheme="looks_linear"):
        """Random stack; ``rng`` is a numpy Generator.

        ``scheme="he"`` draws every weight independently. ``"looks_linear"``
        mirrors each hidden unit (weights w and -w), so that
        relu(u) - relu(-u) = u and the untrained net is an exact random linear
        map. That keeps distinct appearance vectors apart from the first step,
        where a plain ReLU stack squeezes all outputs into one narrow cone.
        """
        if rng is None:
            rng = np.random.default_rng(0)
        if n_layers < 1:
            raise ShapeError("embedding net needs at least one layer")
        if scheme not in ("he", "looks_linear"):
            raise InputError(f"unknown init scheme {scheme!r}")
        if scheme == "looks_linear" and n_layers > 1 and hidden % 2:
            raise ShapeError("looks_linear init needs an even hidden width")
        dims = [input_channels] + [hidden] * (n_layers - 1) + [output_channels]
        layers = []
        for k in range(n_layers):
            c_in, c_out = dims[k], dims[k + 1]
            relu = k < n_layers - 1
            if scheme == "he" or n_layers == 1:
                w = rng.normal(0.0, np.sqrt(2.0 / c_in), size=(c_in, c_out))
            else:
                # inputs arrive as [relu(u), relu(-u)] except at the first layer
                n_in = c_in if k == 0 else c_in // 2
                n_out = c_out // 2 if relu else c_out
                half = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out))
                if relu:
                    half = np.hstack([half, -half])
                w = half if k == 0 else np.vstack([half, -half])
            layers.append(Layer(w, np.zeros(c_out), relu=relu))
        return cls(layers)

    @property
    def input_channels(self):
        return self.layers[0].weight.shape[0]

    @property
    def output_channels(self):
        return self.layers[-1].weight.shape[1]

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend([layer.weight, layer.bias])
        return out

    def set_parameters(self, params):
        for k, layer in enumerate(self.layers):
            layer.weight = params[2 * k]
            layer.bias = params[2 * k + 1]

    def forward_cells(self, x):
        """x: N x C_in cell matrix. Caches activations for backward_cells."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_channels:
            raise ShapeError(
                f"expected N x {self.input_channels} input, got {x.shape}")
        acts = [x]
        pre = []
        h = x
        for layer in self.layers:
            z = matmul(h, layer.weight) + layer.bias
            pre.append(z)
            h = np.maximum(z, 0.0) if layer.relu else z
            acts.append(h)
        self._cache = (acts, pre)
        return h

    def backward_cells(self, upstream):
        """Returns ([dW0, db0, dW1, ...], d input) for the last forward_cells call."""
        if self._cache is None:
            raise StateError("backward called before forward")
        acts, pre = self._cache
        g = np.asarray(upstream, dtype=np.float64)
        if g.shape != acts[-1].shape:
            raise ShapeError(f"upstream {g.shape} does not match output {acts[-1].shape}")
        grads = [None] * (2 * len(self.layers))
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            if layer.relu:
                g = g * (pre[k] > 0)
            grads[2 * k] = acts[k].T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ layer.weight.T
        return grads, g


def embed_forward(net, f):
    if f.channels != net.input_channels:
        raise ShapeError(
            f"grid has {f.channels} channels, net expects {net.input_channels}")
    h, w, c = f.shape
    out = net.forward_cells(f.data.reshape(h * w, c))
    return FeatureGrid(out.reshape(h, w, -1), f.stride)


def embed_backward(net, upstream):
    """Gradients of the last embed_forward. ``upstream`` is a FeatureGrid or array
    shaped like that output; returns (parameter grads, grad w.r.t. input grid data)."""
    up = upstream.data if isinstance(upstream, FeatureGrid) else np.asarray(upstream)
    if up.ndim != 3:
        raise ShapeError("upstream gradient must be H x W x C")
    if net._cache is None:
        raise StateError("backward called before forward")
    h, w, c = up.shape
    grads, gx = net.backward_cells(up.reshape(h * w, c))
    return grads, gx.reshape(h, w, -1)


@dataclass
class OptimizerState:
    learning_rate: float = 1.25e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def optimizer_step(state, params, grads):
    """One Adam update with bias correction. Parameters are updated in place
    and also returned."""
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ShapeError(f"param {np.shape(p)} vs grad {np.shape(g)}")
    if not state.m:
        state.m = [np.zeros_like(p, dtype=np.float64) for p in params]
        state.v = [np.zeros_like(p, dtype=np.float64) for p in params]
    elif len(state.m) != len(params):
        raise ShapeError("optimizer state was built for a different parameter list")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for k, (p, g) in enumerate(zip(params, grads)):
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * g * g
        m_hat = state.m[k] / (1 - b1 ** t)
        v_hat = state.v[k] / (1 - b2 ** t)
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def downsample_embedding(e):
    if e.height % 2 or e.width % 2:
        raise ShapeError(f"cannot halve odd grid {e.height}x{e.width}")
    d = e.data
    pooled = 0.25 * (d[0::2, 0::2] + d[1::2, 0::2] + d[0::2, 1::2] + d[1::2, 1::2])
    return FeatureGrid(pooled, e.stride * 2)


def downsample_backward(grad):
    """Adjoint of downsample_embedding: spread each coarse gradient over its 2x2 block."""
    g = np.asarray(grad, dtype=np.float64)
    return 0.25 * np.repeat(np.repeat(g, 2, axis=0), 2, axis=1)
