"""CTC loss via the log-space forward-backward recursion.

The loss is the negative log of the total probability of every
blank-augmented frame alignment of the target; its gradient over the logits
is softmax(logits) minus the posterior symbol occupancy. Blank index is 0.
The alpha/beta recursion is the hot kernel of the attack loop, so it exists
both as a numba scalar-loop version and a vectorized numpy fallback (see
``_accel``); the two agree to rounding.
"""

import math

import numpy as np

from . import _accel
from .errors import InvalidInputError

NEG_INF = -np.inf


def extended_labels(target_ids):
    """Blank-interleaved label sequence: [0, t1, 0, t2, ..., 0]."""
    ext = np.zeros(2 * len(target_ids) + 1, dtype=np.int64)
    ext[1::2] = target_ids
    return ext


def min_frames(target_ids):
    """Shortest logit sequence that can emit the target."""
    t = np.asarray(target_ids)
    repeats = int(np.sum(t[1:] == t[:-1])) if t.size > 1 else 0
    return int(t.size + repeats)


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _ladd(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def _fb_loops(logp, ext):
    T = logp.shape[0]
    K = logp.shape[1]
    S = ext.shape[0]
    alpha = np.full((T, S), NEG_INF)
    beta = np.full((T, S), NEG_INF)

    alpha[0, 0] = logp[0, ext[0]]
    if S > 1:
        alpha[0, 1] = logp[0, ext[1]]
    for t in range(1, T):
        for s in range(S):
            a = alpha[t - 1, s]
            if s >= 1:
                a = _ladd(a, alpha[t - 1, s - 1])
            if s >= 2 and ext[s] != 0 and ext[s] != ext[s - 2]:
                a = _ladd(a, alpha[t - 1, s - 2])
            alpha[t, s] = a + logp[t, ext[s]]

    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        for s in range(S):
            b = logp[t + 1, ext[s]] + beta[t + 1, s]
            if s + 1 < S:
                b = _ladd(b, logp[t + 1, ext[s + 1]] + beta[t + 1, s + 1])
            if s + 2 < S and ext[s + 2] != 0 and ext[s + 2] != ext[s]:
                b = _ladd(b, logp[t + 1, ext[s + 2]] + beta[t + 1, s + 2])
            beta[t, s] = b

    log_z = alpha[T - 1, S - 1]
    if S > 1:
        log_z = _ladd(log_z, alpha[T - 1, S - 2])

    occupancy = np.zeros((T, K))
    for t in range(T):
        for s in range(S):
            g = alpha[t, s] + beta[t, s] - log_z
            if g > -700.0:
                occupancy[t, ext[s]] += math.exp(g)
    return -log_z, occupancy


def _fb_numpy(logp, ext):
    T, K = logp.shape
    S = ext.shape[0]
    emit = logp[:, ext]  # (T, S)
    skip_ok = np.zeros(S, dtype=bool)
    if S > 2:
        skip_ok[2:] = (ext[2:] != 0) & (ext[2:] != ext[:-2])

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        shifted1 = np.full(S, NEG_INF)
        shifted1[1:] = prev[:-1]
        shifted2 = np.full(S, NEG_INF)
        if S > 2:
            shifted2[2:] = prev[:-2]
        shifted2 = np.where(skip_ok, shifted2, NEG_INF)
        alpha[t] = np.logaddexp(np.logaddexp(prev, shifted1), shifted2) + emit[t]

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        shifted1 = np.full(S, NEG_INF)
        shifted1[:-1] = nxt[1:]
        shifted2 = np.full(S, NEG_INF)
        if S > 2:
            shifted2[:-2] = nxt[2:]
        skip_fwd = np.zeros(S, dtype=bool)
        if S > 2:
            skip_fwd[:-2] = skip_ok[2:]
        shifted2 = np.where(skip_fwd, shifted2, NEG_INF)
        beta[t] = np.logaddexp(np.logaddexp(nxt, shifted1), shifted2)

    log_z = alpha[T - 1, S - 1]
    if S > 1:
        log_z = np.logaddexp(log_z, alpha[T - 1, S - 2])

    with np.errstate(under="ignore"):
        gamma = np.exp(alpha + beta - log_z)
    occupancy = np.zeros((T, K))
    for s in range(S):
        occupancy[:, ext[s]] += gamma[:, s]
    return -float(log_z), occupancy


if _accel.USING_NUMBA:
    _ladd = _accel.jit_kernel(_ladd)
    _forward_backward = _accel.jit_kernel(_fb_loops)
else:
    _forward_backward = _fb_numpy


def ctc_loss(logits, target_ids):
    """Negative log-likelihood of the target plus its gradient over the logits.

    Raises when the target cannot fit into the available frames.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] < 1:
        raise InvalidInputError(f"logits must be (frames, vocab), got {logits.shape}")
    ids = np.asarray(target_ids, dtype=np.int64)
    if ids.size and (ids.min() < 1 or ids.max() >= logits.shape[1]):
        raise InvalidInputError("target ids must lie in [1, vocab)")
    need = min_frames(ids)
    if logits.shape[0] < need:
        raise InvalidInputError(
            f"target needs at least {need} frames, logits provide {logits.shape[0]}"
        )
    logp = log_softmax(logits)
    loss, occupancy = _forward_backward(np.ascontiguousarray(logp), extended_labels(ids))
    grad = np.exp(logp) - occupancy
    return float(loss), grad
