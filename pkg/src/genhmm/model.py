"""Flow-mixture HMMs and their EM training loop.

One :class:`GenHmm` models one class: a hidden chain (start
distribution + transitions) whose states each emit frames through a
mixture of invertible flow generators.  Training alternates stochastic
gradient ascent on the generators' expected-complete-data objective
(posteriors frozen at the iteration-start snapshot) with the exact
closed-form updates for the chain and mixture parameters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .flow import FlowAdam, FlowGenerator, FlowTapes
from .hmm import (FrameLogLik, HmmCore, forward_backward, uniform_mixture,
                  update_initial, update_mixture, update_transition,
                  upper_triangular_transitions)
from .nn import NonFiniteGradientError

__all__ = [
    "GenHmm",
    "TrainConfig",
    "TrainState",
    "TrainingError",
    "em_step",
    "train",
    "resume_train",
    "classify",
    "states_from_lengths",
]

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Training aborted (non-finite objective or monotonicity breach)."""


def _forward_only(core, framelog):
    with np.errstate(divide="ignore"):
        log_start = np.ascontiguousarray(np.log(core.startprob))
        log_trans = np.ascontiguousarray(np.log(core.transmat))
    _, loglik = _kernels.forward_log(
        log_start, log_trans, np.ascontiguousarray(framelog.by_state))
    return float(loglik)


def _split_framelogs(model, seqs):
    """Score all sequences' frames in one batch, then split per sequence."""
    lengths = [np.asarray(s).shape[0] for s in seqs]
    flat = np.concatenate([np.asarray(s, dtype=np.float64) for s in seqs], axis=0)
    by_comp = model._by_comp(flat)
    out = []
    start = 0
    for n in lengths:
        out.append(FrameLogLik.from_components(model.mix,
                                               by_comp[start:start + n]))
        start += n
    return out


def states_from_lengths(lengths, frames_per_state=3, lo=3, hi=5):
    """State count from the mean sequence length of a class.

    Mean length divided by ``frames_per_state``, rounded, clipped to
    ``[lo, hi]``.
    """
    if len(lengths) == 0:
        raise ValueError("need at least one sequence length")
    raw = int(round(float(np.mean(lengths)) / frames_per_state))
    return int(min(max(raw, lo), hi))


class GenHmm:
    """One class's model: hidden chain + per-state flow mixtures."""

    kind = "genhmm"

    def __init__(self, label, core, mix_weights, gens):
        self.label = label
        self.core = core
        self.mix = np.asarray(mix_weights, dtype=np.float64)
        self.gens = gens
        if self.mix.shape[0] != core.n_states or len(gens) != core.n_states:
            raise ValueError("mixture/generator grid does not match state count")
        dims = {g.n_dim for row in gens for g in row}
        if len(dims) != 1:
            raise ValueError(f"generators disagree on frame width: {dims}")
        self.n_dim = dims.pop()

    @classmethod
    def build(cls, label, n_states, n_comp, n_dim, n_blocks=4, hidden=24,
              n_net_layers=3, rng=None):
        """Fresh model: uniform start/mixture, left-to-right transitions,
        randomly initialized generators."""
        if rng is None:
            rng = np.random.default_rng()
        core = HmmCore(np.full(n_states, 1.0 / n_states),
                       upper_triangular_transitions(n_states))
        gens = [[FlowGenerator(n_dim, n_blocks, hidden, n_net_layers, rng)
                 for _ in range(n_comp)] for _ in range(n_states)]
        return cls(label, core, uniform_mixture(n_states, n_comp), gens)

    @property
    def n_states(self):
        return self.core.n_states

    @property
    def n_comp(self):
        return self.mix.shape[1]

    def copy(self):
        return GenHmm(self.label, self.core.copy(), self.mix.copy(),
                      [[g.copy() for g in row] for row in self.gens])

    def parameters(self):
        """All generator parameter arrays, in a fixed traversal order."""
        out = []
        for row in self.gens:
            for g in row:
                out.extend(g.parameters())
        return out

    def _by_comp(self, frames):
        """Per-component log-densities of a flat frame batch: (n, S, K)."""
        frames = np.asarray(frames, dtype=np.float64)
        table = np.empty((frames.shape[0], self.n_states, self.n_comp))
        for s in range(self.n_states):
            for k in range(self.n_comp):
                ll, _ = self.gens[s][k].loglik(frames)
                table[:, s, k] = ll
        return table

    def frame_loglik(self, seq):
        """Emission log-likelihood table of a sequence under this model."""
        return FrameLogLik.from_components(self.mix, self._by_comp(seq))

    def frame_logliks(self, seqs):
        """Tables for many sequences; frames are scored in one batch per
        generator, which is much cheaper than per-sequence calls."""
        return _split_framelogs(self, seqs)

    def posteriors(self, seq):
        return forward_backward(self.core, self.mix, self.frame_loglik(seq))

    def posteriors_many(self, seqs):
        return [forward_backward(self.core, self.mix, fll)
                for fll in self.frame_logliks(seqs)]

    def sequence_loglik(self, seq):
        """log p(sequence) via the forward recursion; -inf if degenerate."""
        return _forward_only(self.core, self.frame_loglik(seq))

    def sequence_logliks(self, seqs):
        return np.array([_forward_only(self.core, fll)
                         for fll in self.frame_logliks(seqs)])

    def weighted_loglik(self, seq, weights):
        """Posterior-weighted emission objective for one sequence.

        ``weights[t, s, k]`` multiplies the frame's log-density under
        generator ``(s, k)``; this is the quantity whose gradient the
        inner training loop ascends, with the weights held fixed.
        """
        seq = np.asarray(seq, dtype=np.float64)
        total = 0.0
        for s in range(self.n_states):
            for k in range(self.n_comp):
                ll, _ = self.gens[s][k].loglik(seq)
                total += float(np.dot(weights[:, s, k], np.atleast_1d(ll)))
        return total

    def sample(self, n_frames, rng):
        """Draw one sequence: state path, component picks, flow samples."""
        frames = np.empty((n_frames, self.n_dim))
        state = rng.choice(self.n_states, p=self.core.startprob)
        for t in range(n_frames):
            comp = rng.choice(self.n_comp, p=self.mix[state])
            z = rng.standard_normal(self.n_dim)
            frames[t] = self.gens[state][comp].forward(z)
            if t + 1 < n_frames:
                state = rng.choice(self.n_states, p=self.core.transmat[state])
        return frames


@dataclass
class TrainConfig:
    """Knobs of the EM loop; defaults match the single-class CLI defaults."""

    lr: float = 1e-3
    batch_size: int | None = 32        # None or >= dataset size: full batches
    inner_batches: int = 4             # gradient batches per EM iteration
    max_iters: int = 50
    tol: float = 1e-4                  # relative change of per-frame loglik
    seed: int = 0
    monotone_slack: float = 1e-3       # nats/frame, checked on the history
    assert_monotone: bool = False

    def __post_init__(self):
        if self.lr <= 0 or self.inner_batches < 1 or self.tol <= 0:
            raise ValueError("lr, inner_batches and tol must be positive")
        if self.max_iters < 0 or self.seed < 0:
            raise ValueError("max_iters and seed must be non-negative")


class TrainState:
    """Mutable training-progress record: iteration count, objective
    history, and one Adam state per generator."""

    def __init__(self, model, config):
        self.config = config
        self.em_iter = 0
        self.history_frame = []   # dataset loglik per frame, one entry per iter
        self.history_seq = []     # dataset loglik per sequence
        self.n_degenerate = 0
        self.n_skipped_terms = 0
        self.n_rejected_updates = 0
        self.monotone_violations = []
        # GMM baselines have no gradient-trained parameters, hence no Adam
        self.adam = [[FlowAdam(g, lr=config.lr) for g in row]
                     for row in getattr(model, "gens", [])]


def _iteration_rng(config, em_iter):
    # Batch order depends only on (seed, iteration) so an interrupted run
    # resumes identically from a saved state.
    return np.random.default_rng(np.random.SeedSequence([config.seed, em_iter]))


def em_step(model, dataset, state, rng=None):
    """One EM iteration, in place.

    Gradient batches and the closed-form statistics both use posteriors
    under the iteration-start snapshot of the model; the snapshot is
    replaced by the updated model only at the end (so the objective
    history records the model as of the start of each iteration).
    Returns the dataset per-frame log-likelihood under that snapshot.
    """
    cfg = state.config
    if rng is None:
        rng = _iteration_rng(cfg, state.em_iter)
    if len(dataset) == 0:
        raise ValueError("em_step needs a nonempty dataset")
    old = model.copy()
    # One posterior pass under the snapshot serves every gradient batch
    # (posteriors under a fixed model are pure per sequence) and the
    # closed-form statistics afterwards.
    tables = old.posteriors_many(dataset)
    weights = [t.state_post[:, :, None] * t.comp_post for t in tables]

    n_seq = len(dataset)
    batch_size = n_seq if cfg.batch_size is None else min(cfg.batch_size, n_seq)
    tapes = [[FlowTapes(g) for g in row] for row in model.gens]

    for _ in range(cfg.inner_batches):
        if batch_size < n_seq:
            idxs = rng.permutation(n_seq)[:batch_size]
        else:
            idxs = np.arange(n_seq)
        good = [int(i) for i in idxs if not tables[int(i)].degenerate]
        if not good:
            logger.warning("EM iter %d: batch had only degenerate sequences; "
                           "skipped", state.em_iter)
            continue
        frames = np.concatenate(
            [np.asarray(dataset[i], dtype=np.float64) for i in good], axis=0)
        batch_weights = np.concatenate([weights[i] for i in good], axis=0)
        n_frames_batch = frames.shape[0]
        for s in range(model.n_states):
            for k in range(model.n_comp):
                ll, llcache = model.gens[s][k].loglik(frames)
                state.n_skipped_terms += model.gens[s][k].loglik_backward(
                    llcache, batch_weights[:, s, k], tapes[s][k])
                tapes[s][k].scale(1.0 / n_frames_batch)
                try:
                    state.adam[s][k].step(model.gens[s][k], tapes[s][k])
                except NonFiniteGradientError:
                    logger.warning("EM iter %d: non-finite gradient for "
                                   "generator (%d, %d); update rejected",
                                   state.em_iter, s, k)
                    state.n_rejected_updates += 1
                    tapes[s][k].reset()

    model.core.startprob = update_initial(tables, model.core.startprob)
    model.core.transmat = update_transition(tables, model.core.transmat)
    model.mix = update_mixture(tables, model.mix)

    usable = [t for t in tables if not t.degenerate]
    state.n_degenerate += n_seq - len(usable)
    if not usable:
        raise TrainingError(
            f"EM iteration {state.em_iter}: every sequence is degenerate")
    total = sum(t.loglik for t in usable)
    per_frame = total / sum(t.n_frames for t in usable)
    state.history_seq.append(total / len(usable))
    state.history_frame.append(per_frame)
    state.em_iter += 1
    return per_frame


def resume_train(model, dataset, state, callback=None):
    """Run EM from an existing state until convergence or the cap."""
    cfg = state.config
    while state.em_iter < cfg.max_iters:
        try:
            per_frame = em_step(model, dataset, state)
        except (FloatingPointError, ValueError) as exc:
            raise TrainingError(
                f"EM iteration {state.em_iter}: {exc}") from exc
        if not np.isfinite(per_frame):
            raise TrainingError(
                f"EM iteration {state.em_iter - 1}: non-finite dataset "
                f"log-likelihood {per_frame}")
        hist = state.history_frame
        if len(hist) >= 2 and hist[-1] < hist[-2] - cfg.monotone_slack:
            drop = hist[-2] - hist[-1]
            state.monotone_violations.append((state.em_iter - 1, drop))
            msg = (f"EM iteration {state.em_iter - 1}: per-frame objective "
                   f"dropped by {drop:.3e} nats")
            if cfg.assert_monotone:
                raise TrainingError(msg)
            logger.warning(msg)
        if callback is not None:
            callback(model, state)
        if len(hist) >= 2:
            prev, cur = hist[-2], hist[-1]
            if abs(cur - prev) / max(abs(prev), 1e-12) < cfg.tol:
                break
    return state


def train(model, dataset, config, callback=None):
    """Train ``model`` in place on a list of sequences; returns the state."""
    state = TrainState(model, config)
    return resume_train(model, dataset, state, callback)


def classify(models, seq, per_frame=False):
    """Most likely class for one sequence.

    Returns ``(index, scores)``; ``index`` is None when every class
    scores ``-inf`` (unclassifiable).  Ties break to the lowest index.
    ``per_frame=True`` divides scores by the sequence length.
    """
    if not models:
        raise ValueError("classify needs at least one model")
    seq = np.asarray(seq, dtype=np.float64)
    scores = np.array([m.sequence_loglik(seq) for m in models])
    if per_frame:
        scores = scores / max(seq.shape[0], 1)
    if np.all(np.isneginf(scores)):
        return None, scores
    return int(np.argmax(scores)), scores
