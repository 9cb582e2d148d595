"""Invertible generators built from affine coupling layers.

A generator maps latent vectors to data vectors through a stack of
coupling layers.  Each layer leaves one part of its input unchanged and
applies an elementwise affine map to the rest, with scale and shift
produced by small dense nets of the unchanged part.  The Jacobian of
each layer is triangular, so the log-determinant of the whole
data-to-latent map is an exact sum of the (soft-clamped) raw scale
outputs: with the scale parameterized as ``exp(s)``, each layer
contributes ``sum(s)``.

Conventions:

* ``inverse`` is the data-to-latent direction used for likelihoods; it
  multiplies the active part by ``exp(s)`` and adds the shift.
* ``forward`` is the latent-to-data direction used for sampling.
* A *block* is a pair of layers with opposite orientation, so every
  coordinate is transformed at least once per block.

Frames are passed as ``(n, dim)`` batches; single ``(dim,)`` vectors are
accepted everywhere and returned in kind.
"""

from __future__ import annotations

import numpy as np

from .nn import AdamState, DenseNet, GradientTape, ShapeError

__all__ = [
    "FlowError",
    "CouplingLayer",
    "FlowGenerator",
    "FlowTapes",
    "FlowAdam",
    "gaussian_logdensity",
]

# Raw scale outputs pass through scale_cap*tanh(s/scale_cap) before exp,
# bounding each layer's multiplier to exp(+-scale_cap).
SCALE_CAP = 5.0

LOG_TWO_PI = np.log(2.0 * np.pi)


class FlowError(FloatingPointError):
    """A flow evaluation produced a non-finite intermediate."""


def gaussian_logdensity(z):
    """Log-density of a standard normal at the rows of ``z``."""
    z = np.atleast_2d(z)
    return -0.5 * (z.shape[1] * LOG_TWO_PI + np.sum(z * z, axis=1))


def _soft_clamp(raw):
    return SCALE_CAP * np.tanh(raw / SCALE_CAP)


def _soft_clamp_grad(raw):
    t = np.tanh(raw / SCALE_CAP)
    return 1.0 - t * t


class CouplingLayer:
    """One affine coupling step on vectors of width ``n_dim``.

    ``swap=False`` keeps the first ``n_dim // 2`` coordinates fixed and
    transforms the rest; ``swap=True`` does the opposite (for odd widths
    the larger half is the fixed part in that case).
    """

    def __init__(self, n_dim, hidden, n_net_layers, swap, rng):
        if n_dim < 2:
            raise ShapeError("coupling layers need at least 2 coordinates")
        self.n_dim = int(n_dim)
        self.split = self.n_dim // 2
        self.swap = bool(swap)
        n_fixed = self.n_dim - self.split if swap else self.split
        n_active = self.n_dim - n_fixed
        dims = [n_fixed] + [int(hidden)] * max(int(n_net_layers) - 1, 1) + [n_active]
        self.scale_net = DenseNet(dims, rng)
        self.shift_net = DenseNet(dims, rng)

    def _parts(self, h):
        if self.swap:
            return h[:, self.split:], h[:, :self.split]
        return h[:, :self.split], h[:, self.split:]

    def _join(self, fixed, active):
        if self.swap:
            return np.concatenate([active, fixed], axis=1)
        return np.concatenate([fixed, active], axis=1)

    def inverse_step(self, h):
        """Data-to-latent step: returns (output, log_det per row, cache)."""
        fixed, active = self._parts(h)
        raw, scale_cache = self.scale_net.forward(fixed)
        shift, shift_cache = self.shift_net.forward(fixed)
        s = _soft_clamp(raw)
        mult = np.exp(s)
        out = self._join(fixed, mult * active + shift)
        cache = (fixed, active, raw, s, mult, scale_cache, shift_cache)
        return out, s.sum(axis=1), cache

    def forward_step(self, h):
        """Latent-to-data step, the exact inverse of :meth:`inverse_step`."""
        fixed, active = self._parts(h)
        raw, _ = self.scale_net.forward(fixed)
        shift, _ = self.shift_net.forward(fixed)
        return self._join(fixed, (active - shift) * np.exp(-_soft_clamp(raw)))

    def backward_step(self, cache, grad_out, logdet_weight, scale_tape, shift_tape):
        """Backpropagate through :meth:`inverse_step`.

        ``grad_out`` is the gradient w.r.t. this layer's output;
        ``logdet_weight`` (per row) seeds the direct dependence of the
        objective on this layer's log-det term.  Parameter gradients go
        to the two tapes; the gradient w.r.t. the layer input is
        returned.
        """
        fixed, active, raw, s, mult, scale_cache, shift_cache = cache
        g_fixed, g_active_out = self._parts(grad_out)
        grad_active = g_active_out * mult
        grad_s = g_active_out * active * mult + logdet_weight[:, None]
        grad_raw = grad_s * _soft_clamp_grad(raw)
        grad_fixed = g_fixed.copy()
        grad_fixed += self.scale_net.backward(scale_cache, grad_raw, scale_tape)
        grad_fixed += self.shift_net.backward(shift_cache, g_active_out, shift_tape)
        return self._join(grad_fixed, grad_active)

    def parameters(self):
        return self.scale_net.parameters() + self.shift_net.parameters()

    def copy(self):
        dup = object.__new__(CouplingLayer)
        dup.n_dim = self.n_dim
        dup.split = self.split
        dup.swap = self.swap
        dup.scale_net = self.scale_net.copy()
        dup.shift_net = self.shift_net.copy()
        return dup


class FlowGenerator:
    """Stack of coupling blocks forming one invertible generator.

    Parameters
    ----------
    n_dim : int
        Frame width.
    n_blocks : int
        Number of blocks; the layer count is ``2 * n_blocks``.
    hidden : int
        Hidden width of the coupling nets.
    n_net_layers : int
        Dense layers per coupling net.
    rng : numpy.random.Generator
    """

    def __init__(self, n_dim, n_blocks=4, hidden=24, n_net_layers=3, rng=None):
        if n_blocks < 1:
            raise ShapeError("need at least one flow block")
        if rng is None:
            rng = np.random.default_rng()
        self.n_dim = int(n_dim)
        self.layers = []
        for _ in range(int(n_blocks)):
            self.layers.append(CouplingLayer(n_dim, hidden, n_net_layers, False, rng))
            self.layers.append(CouplingLayer(n_dim, hidden, n_net_layers, True, rng))

    @property
    def n_layers(self):
        return len(self.layers)

    def _as_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.ndim != 2 or h.shape[1] != self.n_dim:
            raise ShapeError(f"expected frames of width {self.n_dim}, got {x.shape}")
        return h, single

    def inverse(self, x):
        """Map data to latent: returns ``(z, log_det, cache)``.

        ``log_det`` is the per-row log |det| of the data-to-latent map,
        accumulated analytically layer by layer.
        """
        h, single = self._as_batch(x)
        if not np.all(np.isfinite(h)):
            raise FlowError("non-finite input to flow inverse")
        log_det = np.zeros(h.shape[0])
        caches = []
        for i, layer in enumerate(self.layers):
            h, ld, cache = layer.inverse_step(h)
            if not np.all(np.isfinite(h)):
                raise FlowError(f"non-finite output of coupling layer {i}")
            log_det += ld
            caches.append(cache)
        if single:
            return h[0], float(log_det[0]), (caches, single)
        return h, log_det, (caches, single)

    def forward(self, z):
        """Map latent to data; exact inverse of :meth:`inverse`."""
        h, single = self._as_batch(z)
        if not np.all(np.isfinite(h)):
            raise FlowError("non-finite input to flow forward")
        for i, layer in enumerate(reversed(self.layers)):
            h = layer.forward_step(h)
            if not np.all(np.isfinite(h)):
                raise FlowError(f"non-finite output of coupling layer {self.n_layers - 1 - i}")
        return h[0] if single else h

    def loglik(self, x):
        """Exact log-density of frames under the generator.

        Change of variables: standard-normal log-density at the latent
        image plus the log-det of the data-to-latent map.
        """
        z, log_det, (caches, single) = self.inverse(x)
        zb = z[None, :] if single else z
        ll = gaussian_logdensity(zb) + np.atleast_1d(log_det)
        cache = (zb, caches)
        return (float(ll[0]) if single else ll), cache

    def loglik_backward(self, cache, weight, tapes):
        """Accumulate ``weight * d loglik / d params`` into ``tapes``.

        ``weight`` is a per-frame coefficient (scalar for a single
        frame).  Frames with non-finite weights are skipped; the number
        skipped is returned.
        """
        zb, caches = cache
        w = np.atleast_1d(np.asarray(weight, dtype=np.float64))
        if w.shape != (zb.shape[0],):
            raise ShapeError(f"expected {zb.shape[0]} weights, got {w.shape}")
        bad = ~np.isfinite(w)
        n_skipped = int(bad.sum())
        if n_skipped:
            w = np.where(bad, 0.0, w)
        grad = -zb * w[:, None]
        for layer, layer_cache, (scale_tape, shift_tape) in zip(
                reversed(self.layers), reversed(caches), reversed(tapes.pairs)):
            grad = layer.backward_step(layer_cache, grad, w, scale_tape, shift_tape)
        return n_skipped

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def copy(self):
        dup = object.__new__(FlowGenerator)
        dup.n_dim = self.n_dim
        dup.layers = [layer.copy() for layer in self.layers]
        return dup


class FlowTapes:
    """Gradient tapes for every coupling net of one generator."""

    def __init__(self, gen):
        self.pairs = [(GradientTape(layer.scale_net), GradientTape(layer.shift_net))
                      for layer in gen.layers]

    def all(self):
        return [t for pair in self.pairs for t in pair]

    def scale(self, factor):
        for t in self.all():
            t.scale(factor)

    def reset(self):
        for t in self.all():
            t.reset()

    def is_empty(self):
        return all(t.is_empty() for t in self.all())


class FlowAdam:
    """Adam state for every coupling net of one generator."""

    def __init__(self, gen, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.pairs = [(AdamState(layer.scale_net, lr, beta1, beta2, eps),
                       AdamState(layer.shift_net, lr, beta1, beta2, eps))
                      for layer in gen.layers]

    def step(self, gen, tapes):
        from .nn import adam_step
        for layer, (scale_tape, shift_tape), (scale_state, shift_state) in zip(
                gen.layers, tapes.pairs, self.pairs):
            adam_step(layer.scale_net, scale_tape, scale_state)
            adam_step(layer.shift_net, shift_tape, shift_state)
