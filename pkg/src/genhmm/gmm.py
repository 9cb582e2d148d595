"""Diagonal-covariance GMM-HMM baseline, sharing the HMM core updates.

The emission model per state is a mixture of axis-aligned Gaussians.
Training is plain Baum-Welch: the chain and mixture-weight updates are
the shared closed-form ones, means and variances come from
responsibility-weighted sufficient statistics.
"""

from __future__ import annotations

import logging

import numpy as np

from .hmm import (FrameLogLik, HmmCore, forward_backward, uniform_mixture,
                  update_initial, update_mixture, update_transition,
                  upper_triangular_transitions)
from .model import _forward_only, _split_framelogs

__all__ = ["GmmHmm", "gmm_em_step", "train_gmm", "VAR_FLOOR"]

logger = logging.getLogger(__name__)

VAR_FLOOR = 1e-6
LOG_TWO_PI = np.log(2.0 * np.pi)


class GmmHmm:
    """One class's baseline model: hidden chain + diagonal GMM emissions."""

    kind = "gmmhmm"

    def __init__(self, label, core, mix_weights, means, variances):
        self.label = label
        self.core = core
        self.mix = np.asarray(mix_weights, dtype=np.float64)
        self.means = np.asarray(means, dtype=np.float64)        # (S, K, N)
        self.variances = np.asarray(variances, dtype=np.float64)
        if self.means.shape != self.variances.shape:
            raise ValueError("means and variances must have matching shapes")
        if self.means.shape[:2] != self.mix.shape:
            raise ValueError("emission grid does not match mixture weights")
        if np.any(self.variances < VAR_FLOOR):
            raise ValueError(f"variances must be >= {VAR_FLOOR}")

    @classmethod
    def build(cls, label, n_states, n_comp, n_dim, dataset=None, rng=None):
        """Fresh model; means drawn from random data frames when a dataset
        is given, variances from the global per-dimension variance."""
        if rng is None:
            rng = np.random.default_rng()
        core = HmmCore(np.full(n_states, 1.0 / n_states),
                       upper_triangular_transitions(n_states))
        if dataset:
            frames = np.concatenate([np.asarray(s) for s in dataset], axis=0)
            picks = rng.integers(0, frames.shape[0], size=n_states * n_comp)
            means = frames[picks].reshape(n_states, n_comp, n_dim).copy()
            variances = np.maximum(frames.var(axis=0), VAR_FLOOR)
            variances = np.broadcast_to(variances, means.shape).copy()
        else:
            means = rng.standard_normal((n_states, n_comp, n_dim))
            variances = np.ones((n_states, n_comp, n_dim))
        return cls(label, core, uniform_mixture(n_states, n_comp), means, variances)

    @property
    def n_states(self):
        return self.core.n_states

    @property
    def n_comp(self):
        return self.mix.shape[1]

    @property
    def n_dim(self):
        return self.means.shape[2]

    def copy(self):
        return GmmHmm(self.label, self.core.copy(), self.mix.copy(),
                      self.means.copy(), self.variances.copy())

    def _by_comp(self, frames):
        """Diagonal-Gaussian log-densities of a flat frame batch: (n, S, K)."""
        frames = np.asarray(frames, dtype=np.float64)
        diff = frames[:, None, None, :] - self.means[None, :, :, :]
        return -0.5 * np.sum(
            LOG_TWO_PI + np.log(self.variances)[None]
            + diff * diff / self.variances[None], axis=3)

    def frame_loglik(self, seq):
        """Component log-densities of one sequence and their mixture."""
        return FrameLogLik.from_components(self.mix, self._by_comp(seq))

    def frame_logliks(self, seqs):
        return _split_framelogs(self, seqs)

    def posteriors(self, seq):
        return forward_backward(self.core, self.mix, self.frame_loglik(seq))

    def posteriors_many(self, seqs):
        return [forward_backward(self.core, self.mix, fll)
                for fll in self.frame_logliks(seqs)]

    def sequence_loglik(self, seq):
        return _forward_only(self.core, self.frame_loglik(seq))

    def sequence_logliks(self, seqs):
        return np.array([_forward_only(self.core, fll)
                         for fll in self.frame_logliks(seqs)])

    def sample(self, n_frames, rng):
        frames = np.empty((n_frames, self.n_dim))
        state = rng.choice(self.n_states, p=self.core.startprob)
        for t in range(n_frames):
            comp = rng.choice(self.n_comp, p=self.mix[state])
            frames[t] = self.means[state, comp] + (
                np.sqrt(self.variances[state, comp]) * rng.standard_normal(self.n_dim))
            if t + 1 < n_frames:
                state = rng.choice(self.n_states, p=self.core.transmat[state])
        return frames


def gmm_em_step(model, dataset, rng=None):
    """One exact Baum-Welch iteration, in place.

    Returns the dataset per-frame log-likelihood under the pre-update
    parameters.  Components that receive no responsibility mass are
    reseeded from a random frame (their mixture weight floored) and the
    event is logged; this is the only step that can break exact
    monotonicity, and it fires only on collapsed components.
    """
    if len(dataset) == 0:
        raise ValueError("gmm_em_step needs a nonempty dataset")
    if rng is None:
        rng = np.random.default_rng()
    tables = model.posteriors_many(dataset)
    usable = [(np.asarray(seq, dtype=np.float64), t)
              for seq, t in zip(dataset, tables) if not t.degenerate]
    if not usable:
        raise ValueError("every sequence is degenerate under the current model")

    n_states, n_comp, n_dim = model.means.shape
    resp_sum = np.zeros((n_states, n_comp))
    first_moment = np.zeros((n_states, n_comp, n_dim))
    second_moment = np.zeros((n_states, n_comp, n_dim))
    for seq, t in usable:
        resp = t.state_post[:, :, None] * t.comp_post       # (T, S, K)
        resp_sum += resp.sum(axis=0)
        first_moment += np.einsum("tsk,td->skd", resp, seq)
        second_moment += np.einsum("tsk,td->skd", resp, seq * seq)

    model.core.startprob = update_initial(tables, model.core.startprob)
    model.core.transmat = update_transition(tables, model.core.transmat)
    model.mix = update_mixture(tables, model.mix)

    live = resp_sum > 0
    denom = np.where(live, resp_sum, 1.0)[:, :, None]
    new_means = np.where(live[:, :, None], first_moment / denom, model.means)
    new_vars = second_moment / denom - new_means * new_means
    new_vars = np.where(live[:, :, None],
                        np.maximum(new_vars, VAR_FLOOR), model.variances)
    model.means = new_means
    model.variances = new_vars

    dead = np.argwhere(~live)
    if dead.size:
        frames = np.concatenate([seq for seq, _ in usable], axis=0)
        global_var = np.maximum(frames.var(axis=0), VAR_FLOOR)
        for s, k in dead:
            model.means[s, k] = frames[rng.integers(0, frames.shape[0])]
            model.variances[s, k] = global_var
            model.mix[s, k] = max(model.mix[s, k], 1.0 / (10.0 * n_comp))
            logger.warning("reseeded empty component (state %d, comp %d)", s, k)
        model.mix /= model.mix.sum(axis=1, keepdims=True)

    total = sum(t.loglik for _, t in usable)
    return total / sum(t.n_frames for _, t in usable)


def train_gmm(model, dataset, max_iters=50, tol=1e-6, rng=None, callback=None):
    """Baum-Welch to convergence; returns the per-frame objective history."""
    if rng is None:
        rng = np.random.default_rng(0)
    history = []
    for _ in range(max_iters):
        history.append(gmm_em_step(model, dataset, rng))
        if callback is not None:
            callback(model, history)
        if len(history) >= 2:
            prev, cur = history[-2], history[-1]
            if abs(cur - prev) / max(abs(prev), 1e-12) < tol:
                break
    return history
