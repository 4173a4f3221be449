"""Forward-algorithm variants for CPD-factored HMMs.

Three routes to the same ``log Z``:

* :func:`dense_forward` on the reconstructed ``(m, m, o)`` tensor, O(n m^2).
* :func:`lowrank_forward` through the factors in state space, O(n m r).
* :func:`rank_forward` on the compiled rank-space HMM, O(n r^2).

A sequence is an integer array of vocabulary ids whose last entry is
normally ``<eos>``. The first word is emitted by the first transition out of
the start distribution.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ZeroProbabilityError
from .logsemiring import log_mat_vec_exp, log_sum_exp


@dataclass(frozen=True, eq=False)
class ForwardTrellis:
    messages: np.ndarray  # (n, d) log forward messages after each token
    logZ: float


@dataclass(frozen=True, eq=False)
class PosteriorRanks:
    gamma: np.ndarray  # (n, r) log posterior of the rank emitting token t
    logZ: float


def check_sequence(seq, o):
    seq = np.asarray(seq, dtype=np.int64)
    if seq.ndim != 1 or seq.size == 0:
        raise ValueError("sequence must be a non-empty 1-D array of token ids")
    if seq.min() < 0 or seq.max() >= o:
        bad = int(seq[(seq < 0) | (seq >= o)][0])
        raise ValueError(f"token id {bad} outside vocabulary of size {o}")
    return seq


def _shifted_exp(x):
    s = np.max(x)
    s = s if np.isfinite(s) else 0.0
    return np.exp(x - s), s


def dense_forward(model, seq):
    seq = check_sequence(seq, model.o)
    Tw = model.T_by_word
    f = model.start
    out = np.empty((len(seq), model.m))
    for t, w in enumerate(seq):
        ef, s = _shifted_exp(f)
        with np.errstate(divide="ignore"):
            f = np.log(ef @ np.exp(Tw[w])) + s
        out[t] = f
    return ForwardTrellis(out, log_sum_exp(f))


def lowrank_forward(model, seq):
    seq = check_sequence(seq, model.o)
    expU, expV, W = model.expU, model.expV, model.W
    f = model.start
    out = np.empty((len(seq), model.m))
    with np.errstate(divide="ignore"):
        for t, w in enumerate(seq):
            ef, s = _shifted_exp(f)
            # project into rank space and emit there before going back through V
            g = np.log(ef @ expU) + s + W[:, w]
            eg, s = _shifted_exp(g)
            f = np.log(eg @ expV) + s
            out[t] = f
    return ForwardTrellis(out, log_sum_exp(f))


def rank_forward(model, seq):
    seq = check_sequence(seq, model.o)
    expA, W = model.expA, model.W
    out = np.empty((len(seq), model.r))
    h = model.pi_r + W[:, seq[0]]
    out[0] = h
    with np.errstate(divide="ignore"):
        for t in range(1, len(seq)):
            eh, s = _shifted_exp(h)
            h = np.log(eh @ expA) + s + W[:, seq[t]]
            out[t] = h
    return ForwardTrellis(out, log_sum_exp(h))


def _backward_messages(model, seq):
    n = len(seq)
    b = np.empty((n, model.r))
    b[-1] = 0.0
    for t in range(n - 2, -1, -1):
        b[t] = log_mat_vec_exp(model.expA, model.W[:, seq[t + 1]] + b[t + 1])
    return b


def rank_backward(model, seq, trellis=None):
    """Posterior over the rank emitting each token.

    Raises :class:`ZeroProbabilityError` when the sequence has probability 0.
    """
    seq = check_sequence(seq, model.o)
    trellis = trellis or rank_forward(model, seq)
    if not np.isfinite(trellis.logZ):
        raise ZeroProbabilityError("zero-probability sequence")
    b = _backward_messages(model, seq)
    return PosteriorRanks(trellis.messages + b - trellis.logZ, trellis.logZ)


@dataclass(frozen=True, eq=False)
class RankCounts:
    """Expected usage of each compiled parameter in one sentence.

    Each count equals ``param * d logZ / d param``.
    """

    logZ: float
    pi_r: np.ndarray  # (r,)
    A_r: np.ndarray  # (r, r)
    W: np.ndarray  # (r, o)


def rank_expected_counts(model, seq):
    seq = check_sequence(seq, model.o)
    fw = rank_forward(model, seq)
    logZ = fw.logZ
    if not np.isfinite(logZ):
        raise ZeroProbabilityError("zero-probability sequence")
    h = fw.messages
    b = _backward_messages(model, seq)
    gamma = np.exp(h + b - logZ)
    cW = np.zeros((model.r, model.o))
    np.add.at(cW.T, seq, gamma)
    cA = np.zeros((model.r, model.r))
    if len(seq) > 1:
        # y[t] is the log score of continuing from step t+1 onward
        y = model.W[:, seq[1:]].T + b[1:]
        a = h[:-1].max(axis=1, keepdims=True)
        c = y.max(axis=1, keepdims=True)
        a = np.where(np.isfinite(a), a, 0.0)
        c = np.where(np.isfinite(c), c, 0.0)
        scale = np.exp(a + c - logZ)
        cA = (np.exp(h[:-1] - a).T @ (np.exp(y - c) * scale)) * model.expA
    return RankCounts(logZ, gamma[0], cA, cW)
