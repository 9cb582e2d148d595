"""Log-space forward-backward inference and closed-form HMM updates.

Everything here is generic over the emission model: callers supply a
table of per-frame log-likelihoods (per state, and per state/component
for mixtures) and get back posterior tables.  The accumulation-style
update functions implement the exact maximizers of the expected
complete-data objective for the start distribution, the transition
matrix, and the per-state mixture weights.

``-inf`` entries are legal everywhere (impossible emissions, structural
transition zeros) and propagate without NaNs; a frame that no state can
emit marks the whole sequence degenerate and the sequence is then
excluded from the updates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _kernels

__all__ = [
    "HmmCore",
    "FrameLogLik",
    "PosteriorTables",
    "forward_backward",
    "kappa_posterior",
    "update_initial",
    "update_transition",
    "update_mixture",
    "uniform_mixture",
    "upper_triangular_transitions",
    "check_distribution",
    "check_row_stochastic",
]

logger = logging.getLogger(__name__)

_DIST_TOL = 1e-9


def check_distribution(p, name="distribution", tol=_DIST_TOL):
    p = np.asarray(p)
    if np.any(p < 0) or abs(p.sum() - 1.0) > tol:
        raise ValueError(f"{name} is not a probability vector: {p}")


def check_row_stochastic(m, name="matrix", tol=_DIST_TOL):
    m = np.asarray(m)
    if np.any(m < 0) or np.any(np.abs(m.sum(axis=-1) - 1.0) > tol):
        raise ValueError(f"rows of {name} do not sum to one")


def upper_triangular_transitions(n_states):
    """Left-to-right transition matrix, uniform over allowed targets."""
    trans = np.triu(np.ones((n_states, n_states)))
    return trans / trans.sum(axis=1, keepdims=True)


def uniform_mixture(n_states, n_comp):
    return np.full((n_states, n_comp), 1.0 / n_comp)


@dataclass
class HmmCore:
    """Start distribution and transition matrix of one chain."""

    startprob: np.ndarray
    transmat: np.ndarray

    def __post_init__(self):
        self.startprob = np.asarray(self.startprob, dtype=np.float64)
        self.transmat = np.asarray(self.transmat, dtype=np.float64)
        self.validate()

    @property
    def n_states(self):
        return self.startprob.shape[0]

    def validate(self):
        if self.transmat.shape != (self.n_states, self.n_states):
            raise ValueError("transition matrix shape does not match state count")
        check_distribution(self.startprob, "start distribution")
        check_row_stochastic(self.transmat, "transition matrix")

    def copy(self):
        return HmmCore(self.startprob.copy(), self.transmat.copy())


@dataclass
class FrameLogLik:
    """Per-frame emission log-likelihoods for one sequence.

    ``by_comp[t, s, k]`` is the frame's log-density under component
    ``k`` of state ``s``; ``by_state`` is the mixture logsumexp of
    ``by_comp`` with the log mixture weights.
    """

    by_state: np.ndarray   # (n_frames, n_states)
    by_comp: np.ndarray    # (n_frames, n_states, n_comp)

    @classmethod
    def from_components(cls, mix_weights, by_comp):
        with np.errstate(divide="ignore"):
            log_mix = np.log(mix_weights)
        by_state = logsumexp(log_mix[None, :, :] + by_comp, axis=2)
        return cls(by_state=by_state, by_comp=by_comp)


@dataclass
class PosteriorTables:
    """Posterior tables of one sequence under a fixed model.

    ``state_post[t, i] = p(state_t = i | sequence)``;
    ``pair_post[t, i, j] = p(state_t = i, state_{t+1} = j | sequence)``;
    ``comp_post[t, s, k] = p(component_t = k | state_t = s, sequence)``.
    A degenerate sequence (some frame impossible under every state)
    carries ``loglik = -inf`` and zeroed tables.
    """

    state_post: np.ndarray
    pair_post: np.ndarray
    comp_post: np.ndarray
    loglik: float
    degenerate: bool = False
    uniform_comp_fallbacks: int = field(default=0, compare=False)

    @property
    def n_frames(self):
        return self.state_post.shape[0]


def kappa_posterior(mix_weights, by_comp):
    """Posterior over mixture components per frame and state.

    Rows where every component is impossible fall back to uniform (the
    state's posterior mass is ~0 there anyway); the number of fallback
    rows is returned alongside the table.
    """
    n_comp = by_comp.shape[2]
    with np.errstate(divide="ignore"):
        scores = np.log(mix_weights)[None, :, :] + by_comp
    norm = logsumexp(scores, axis=2)
    empty = np.isneginf(norm)
    n_fallback = int(empty.sum())
    with np.errstate(invalid="ignore"):
        post = np.exp(scores - norm[:, :, None])
    if n_fallback:
        post[empty] = 1.0 / n_comp
        logger.warning("kappa_posterior: %d (frame, state) cells had no "
                       "feasible component; using uniform fallback", n_fallback)
    return post, n_fallback


def forward_backward(core, mix_weights, framelog):
    """Exact posteriors of one sequence, computed entirely in log space.

    Parameters
    ----------
    core : HmmCore
    mix_weights : (n_states, n_comp) array
    framelog : FrameLogLik

    Returns
    -------
    PosteriorTables
    """
    by_state = np.ascontiguousarray(framelog.by_state, dtype=np.float64)
    n_frames, n_states = by_state.shape
    if n_frames < 1:
        raise ValueError("forward_backward needs at least one frame")
    with np.errstate(divide="ignore"):
        log_start = np.log(core.startprob)
        log_trans = np.log(core.transmat)
    log_start = np.ascontiguousarray(log_start)
    log_trans = np.ascontiguousarray(log_trans)

    comp_post, n_fallback = kappa_posterior(mix_weights, framelog.by_comp)

    log_alpha, loglik = _kernels.forward_log(log_start, log_trans, by_state)
    if not np.isfinite(loglik):
        logger.warning("degenerate sequence: no state path has positive "
                       "probability; excluded from updates")
        return PosteriorTables(
            state_post=np.zeros((n_frames, n_states)),
            pair_post=np.zeros((max(n_frames - 1, 0), n_states, n_states)),
            comp_post=comp_post,
            loglik=float("-inf"),
            degenerate=True,
            uniform_comp_fallbacks=n_fallback,
        )
    log_beta = _kernels.backward_log(log_trans, by_state)

    state_post = np.exp(log_alpha + log_beta - loglik)
    # pair_post[t] = exp(alpha[t, i] + log A[i, j] + b[t+1, j] + beta[t+1, j] - loglik);
    # structural zeros of A stay exactly zero through exp(-inf).
    pair_post = np.exp(
        log_alpha[:-1, :, None]
        + log_trans[None, :, :]
        + (by_state[1:] + log_beta[1:])[:, None, :]
        - loglik)
    return PosteriorTables(
        state_post=state_post,
        pair_post=pair_post,
        comp_post=comp_post,
        loglik=float(loglik),
        uniform_comp_fallbacks=n_fallback,
    )


def _usable(tables):
    return [t for t in tables if not t.degenerate]


def update_initial(tables, prev_startprob):
    """Mean first-frame state posterior across usable sequences."""
    usable = _usable(tables)
    if not usable:
        logger.warning("update_initial: no usable sequences; keeping previous value")
        return np.array(prev_startprob, copy=True)
    return np.mean([t.state_post[0] for t in usable], axis=0)


def update_transition(tables, prev_transmat):
    """Row-normalized sum of pairwise posteriors.

    Rows with zero accumulated mass (states never visited) keep their
    previous value; structural zeros are inherited from the pairwise
    tables, so a left-to-right topology is preserved exactly.
    """
    usable = [t for t in _usable(tables) if t.n_frames >= 2]
    if not usable:
        logger.warning("update_transition: every sequence has fewer than two "
                       "frames; keeping previous value")
        return np.array(prev_transmat, copy=True)
    counts = np.zeros_like(np.asarray(prev_transmat, dtype=np.float64))
    for t in usable:
        counts += t.pair_post.sum(axis=0)
    out = np.array(prev_transmat, copy=True)
    mass = counts.sum(axis=1)
    rows = mass > 0
    out[rows] = counts[rows] / mass[rows, None]
    return out


def update_mixture(tables, prev_mix):
    """Row-normalized joint state/component posterior mass.

    The joint is ``state_post[t, s] * comp_post[t, s, k]``; rows with no
    mass keep their previous value.
    """
    usable = _usable(tables)
    if not usable:
        logger.warning("update_mixture: no usable sequences; keeping previous value")
        return np.array(prev_mix, copy=True)
    counts = np.zeros_like(np.asarray(prev_mix, dtype=np.float64))
    for t in usable:
        counts += (t.state_post[:, :, None] * t.comp_post).sum(axis=0)
    out = np.array(prev_mix, copy=True)
    mass = counts.sum(axis=1)
    rows = mass > 0
    out[rows] = counts[rows] / mass[rows, None]
    return out
