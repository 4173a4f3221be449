"""Log-domain primitives shared by the dynamic programs.

All values are natural-log probabilities. Zero probability is ``-inf``; no
function here produces NaN for inputs that are finite or ``-inf``.
"""
import numpy as np

NEG_INF = -np.inf


def _finite_max(x, axis=None, keepdims=False):
    # Replace an all -inf max by 0 so the shift never yields inf - inf.
    m = np.max(x, axis=axis, keepdims=keepdims)
    return np.where(np.isfinite(m), m, 0.0)


def log_sum_exp(xs, axis=None):
    """Return ``log(sum(exp(xs)))`` computed by max-shifting.

    Reduces over every entry when ``axis`` is None.
    """
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0 or (axis is not None and xs.shape[axis] == 0):
        raise ValueError("empty reduction")
    m = _finite_max(xs, axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(xs - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def log_mat_vec(M, v):
    """Log-domain matrix-vector product ``out_i = logsumexp_j(M_ij + v_j)``.

    Uses the log-einsum-exp trick: ``v`` is shifted by its max, exponentiated
    and pushed through a real matrix product with ``exp(M)``. ``v`` may also be
    a batch of vectors stacked along its leading axes.
    """
    M = np.asarray(M, dtype=float)
    v = np.asarray(v, dtype=float)
    if M.ndim != 2 or v.shape[-1] != M.shape[1]:
        raise ValueError(f"dimension mismatch: matrix {M.shape} vs vector {v.shape}")
    return log_mat_vec_exp(np.exp(M), v)


def log_mat_vec_exp(expM, v):
    """Same as :func:`log_mat_vec` with ``exp(M)`` already computed.

    Kernels call this with matrices exponentiated once per model.
    """
    shift = _finite_max(v, axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(v - shift) @ expM.T) + shift


def log_matmul(A, B):
    """Log-domain matrix product ``out_ik = logsumexp_j(A_ij + B_jk)``.

    Rows of ``A`` and columns of ``B`` are shifted by their own max before the
    real-domain product.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape[-1] != B.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape} @ {B.shape}")
    a = _finite_max(A, axis=-1, keepdims=True)
    b = _finite_max(B, axis=0, keepdims=True)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(A - a) @ np.exp(B - b)) + a + b


def log_hadamard(a, b):
    """Entrywise product in the log domain (entrywise addition)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return a + b


def log_normalize(x, axis=-1):
    """Shift log-weights so they exponentiate to a distribution along ``axis``."""
    x = np.asarray(x, dtype=float)
    return x - np.expand_dims(log_sum_exp(x, axis=axis), axis)


def safe_exp_ratio(log_num, log_den):
    """``exp(log_num - log_den)`` with 0/0 read as 0."""
    with np.errstate(invalid="ignore"):
        d = log_num - log_den
    return np.where(np.isneginf(log_num), 0.0, np.exp(np.where(np.isnan(d), NEG_INF, d)))
