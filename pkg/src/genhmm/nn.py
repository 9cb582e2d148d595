"""Minimal dense feed-forward networks with explicit backpropagation.

These nets are the building blocks of the coupling-layer maps: small,
fully connected, tanh hidden activations, linear output.  Gradients are
accumulated into an explicit :class:`GradientTape` so that one tape can
collect contributions from many frames before a single Adam update.

All forward/backward entry points accept either a single input vector
``(in_dim,)`` or a batch ``(n, in_dim)``.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeError",
    "NonFiniteGradientError",
    "DenseNet",
    "GradientTape",
    "AdamState",
    "adam_step",
]


class ShapeError(ValueError):
    """Input or cache does not match the network's dimensions."""


class NonFiniteGradientError(FloatingPointError):
    """A gradient buffer contains NaN or infinity; the update was rejected."""


class DenseNet:
    """Fully connected network: tanh on hidden layers, linear output.

    Parameters
    ----------
    dims : sequence of int
        Layer widths including input and output, e.g. ``[2, 24, 24, 3]``.
    rng : numpy.random.Generator
        Source for the initial weights (uniform in
        ``+-sqrt(6 / (fan_in + fan_out))``, biases zero).
    """

    def __init__(self, dims, rng):
        if len(dims) < 2:
            raise ShapeError("need at least an input and an output width")
        if any(int(d) <= 0 for d in dims):
            raise ShapeError(f"layer widths must be positive, got {dims}")
        self.dims = [int(d) for d in dims]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.dims[:-1], self.dims[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))

    @property
    def input_dim(self):
        return self.dims[0]

    @property
    def output_dim(self):
        return self.dims[-1]

    @property
    def n_layers(self):
        return len(self.weights)

    def parameters(self):
        """Parameter arrays in a fixed order (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self):
        dup = object.__new__(DenseNet)
        dup.dims = list(self.dims)
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup

    def forward(self, x):
        """Evaluate the net, returning the output and a backward cache.

        The cache records every layer input plus the hidden activations;
        it is valid only while the parameter shapes are unchanged.
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.ndim != 2 or h.shape[1] != self.input_dim:
            raise ShapeError(
                f"expected input width {self.input_dim}, got shape {x.shape}")
        if not np.all(np.isfinite(h)):
            raise ShapeError("non-finite input to DenseNet.forward")
        inputs = []
        hidden = []
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            h = h @ w.T + b
            if i < last:
                h = np.tanh(h)
                hidden.append(h)
        cache = _Cache(self.dims, inputs, hidden, single)
        return (h[0] if single else h), cache

    def backward(self, cache, grad_out, tape=None):
        """Accumulate parameter gradients and return the input gradient.

        ``grad_out`` is d(loss)/d(output) for the batch that produced
        ``cache``.  Parameter gradients are summed into ``tape`` when one
        is given.
        """
        if cache.dims != self.dims:
            raise ShapeError("stale cache: network dimensions changed")
        grad_out = np.asarray(grad_out, dtype=np.float64)
        g = grad_out[None, :] if cache.single else grad_out
        if g.shape != (cache.inputs[0].shape[0], self.output_dim):
            raise ShapeError(
                f"expected output-grad width {self.output_dim}, got {grad_out.shape}")
        if tape is not None:
            tape.check_matches(self)
            tape.count += g.shape[0]
        for i in range(self.n_layers - 1, -1, -1):
            if i < self.n_layers - 1:
                g = g * (1.0 - cache.hidden[i] ** 2)
            if tape is not None:
                tape.grad_w[i] += g.T @ cache.inputs[i]
                tape.grad_b[i] += g.sum(axis=0)
            g = g @ self.weights[i]
        return g[0] if cache.single else g


class _Cache:
    __slots__ = ("dims", "inputs", "hidden", "single")

    def __init__(self, dims, inputs, hidden, single):
        self.dims = dims
        self.inputs = inputs
        self.hidden = hidden
        self.single = single


class GradientTape:
    """Gradient accumulator whose buffers mirror one net's parameters."""

    def __init__(self, net):
        self.shapes = [w.shape for w in net.weights]
        self.grad_w = [np.zeros_like(w) for w in net.weights]
        self.grad_b = [np.zeros_like(b) for b in net.biases]
        self.count = 0

    def check_matches(self, net):
        if [w.shape for w in net.weights] != self.shapes:
            raise ShapeError("tape does not mirror this network's parameters")

    def buffers(self):
        out = []
        for gw, gb in zip(self.grad_w, self.grad_b):
            out.append(gw)
            out.append(gb)
        return out

    def scale(self, factor):
        for buf in self.buffers():
            buf *= factor

    def reset(self):
        for buf in self.buffers():
            buf[:] = 0.0
        self.count = 0

    def is_finite(self):
        return all(np.all(np.isfinite(buf)) for buf in self.buffers())

    def is_empty(self):
        return self.count == 0


class AdamState:
    """Adam moment buffers and hyperparameters for one net."""

    def __init__(self, net, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in net.parameters()]
        self.v = [np.zeros_like(p) for p in net.parameters()]


def adam_step(net, tape, state):
    """Move ``net`` one Adam step in the ascent direction of ``tape``.

    The tape holds gradients of the objective being *maximized*; it is
    reset after a successful update.  A tape containing non-finite
    entries rejects the update (parameters and moments untouched).
    """
    if tape.is_empty():
        raise ValueError("adam_step called with an empty tape")
    if not tape.is_finite():
        raise NonFiniteGradientError("non-finite gradient; update rejected")
    tape.check_matches(net)
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(net.parameters(), tape.buffers(), state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p += state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    tape.reset()
