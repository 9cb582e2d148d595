"""Pure numpy reference kernels for the log-space recursions.

These mirror the compiled kernels in ``_core.pyx`` exactly; the
recursion over time cannot be vectorized away, so a compiled version is
selected at import when available (see the package ``__init__``).
"""

import numpy as np


def _lse(a, axis):
    """logsumexp with columns of all -inf mapping to -inf, never NaN."""
    mx = np.max(a, axis=axis)
    finite = mx > -np.inf
    out = np.full(mx.shape, -np.inf)
    if np.any(finite):
        shifted = np.exp(a - np.expand_dims(np.where(finite, mx, 0.0), axis))
        total = shifted.sum(axis=axis)
        out[finite] = mx[finite] + np.log(total[finite])
    return out


def forward_log(log_start, log_trans, framelog):
    """Forward recursion in log space.

    Returns ``(log_alpha, loglik)`` where ``log_alpha[t, j]`` is the log
    joint of the first ``t + 1`` frames and state ``j`` at time ``t``.
    """
    n_frames, n_states = framelog.shape
    log_alpha = np.empty((n_frames, n_states))
    log_alpha[0] = log_start + framelog[0]
    for t in range(1, n_frames):
        log_alpha[t] = _lse(log_alpha[t - 1][:, None] + log_trans, axis=0)
        log_alpha[t] += framelog[t]
    return log_alpha, float(_lse(log_alpha[-1], axis=0))


def backward_log(log_trans, framelog):
    """Backward recursion in log space; returns ``log_beta``."""
    n_frames, n_states = framelog.shape
    log_beta = np.empty((n_frames, n_states))
    log_beta[-1] = 0.0
    for t in range(n_frames - 2, -1, -1):
        log_beta[t] = _lse(
            log_trans + (framelog[t + 1] + log_beta[t + 1])[None, :], axis=1)
    return log_beta
