"""Model types for CPD-factored HMMs and PCFGs.

Every parameter array holds natural-log probabilities. Factor orientation is
fixed by meaning rather than by axis name: rows of ``U`` are distributions
over ranks given a parent state, rows of ``V``/``W`` are distributions over
child states (or words) given a rank. Reconstructing a dense tensor from
row-normalized factors therefore always yields a valid conditional tensor.

PCFG symbols are laid out nonterminals first: index ``a < num_nt`` is a
nonterminal, ``num_nt + p`` is preterminal ``p``. Only nonterminals expand
into binary rules and only preterminals emit words.
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .logsemiring import log_matmul, log_sum_exp

UNK = "<unk>"
EOS = "<eos>"


@dataclass(frozen=True, eq=False)
class Vocab:
    tokens: tuple
    unk: str = UNK
    eos: str = EOS
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        tokens = tuple(self.tokens)
        object.__setattr__(self, "tokens", tokens)
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be distinct")
        for special in (self.unk, self.eos):
            if special not in tokens:
                raise ValueError(f"vocabulary is missing reserved token {special!r}")
        if len(tokens) < 2:
            raise ValueError("vocabulary needs at least 2 tokens")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(tokens)})

    @classmethod
    def default(cls, o):
        """``<unk>``, ``<eos>`` then ``w0, w1, ...`` up to size ``o``."""
        if o < 2:
            raise ValueError("vocabulary size must be >= 2")
        return cls((UNK, EOS) + tuple(f"w{i}" for i in range(o - 2)))

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    @property
    def unk_id(self):
        return self._index[self.unk]

    @property
    def eos_id(self):
        return self._index[self.eos]

    def index(self, token):
        return self._index[token]

    def encode(self, tokens, use_unk=True):
        """Map tokens to ids; raises ``KeyError`` on OOV when ``use_unk`` is off."""
        if use_unk:
            unk = self.unk_id
            return np.array([self._index.get(t, unk) for t in tokens], dtype=np.int64)
        return np.array([self._index[t] for t in tokens], dtype=np.int64)

    def decode(self, ids):
        return [self.tokens[i] for i in ids]


def _arr(x):
    a = np.array(x, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DenseJointHMM:
    """``T[a, b, w] = log p(next state b, word w | state a)``."""

    start: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "start", _arr(self.start))
        object.__setattr__(self, "T", _arr(self.T))
        m = self.start.shape[0]
        if self.T.ndim != 3 or self.T.shape[:2] != (m, m):
            raise ValueError(f"T must be (m, m, o) with m={m}, got {self.T.shape}")

    @property
    def m(self):
        return self.T.shape[0]

    @property
    def o(self):
        return self.T.shape[2]

    @cached_property
    def T_by_word(self):
        """``(o, m, m)`` contiguous copy so per-word slices are cheap."""
        return np.ascontiguousarray(np.moveaxis(self.T, 2, 0))


@dataclass(frozen=True, eq=False)
class CpdHMM:
    """HMM whose merged transition-emission factor is rank-``r`` CPD."""

    start: np.ndarray  # (m,)
    U: np.ndarray  # (m, r)   p(rank | state)
    V: np.ndarray  # (r, m)   p(next state | rank)
    W: np.ndarray  # (r, o)   p(word | rank)

    def __post_init__(self):
        for name in ("start", "U", "V", "W"):
            object.__setattr__(self, name, _arr(getattr(self, name)))
        m, r = self.U.shape
        if self.start.shape != (m,) or self.V.shape != (r, m) or self.W.shape[0] != r:
            raise ValueError(
                f"inconsistent CpdHMM shapes: start {self.start.shape}, U {self.U.shape}, "
                f"V {self.V.shape}, W {self.W.shape}"
            )

    @property
    def m(self):
        return self.U.shape[0]

    @property
    def r(self):
        return self.U.shape[1]

    @property
    def o(self):
        return self.W.shape[1]

    @cached_property
    def expU(self):
        return np.exp(self.U)

    @cached_property
    def expV(self):
        return np.exp(self.V)


@dataclass(frozen=True, eq=False)
class RankHMM:
    """HMM over rank variables after marginalizing every state node."""

    pi_r: np.ndarray  # (r,)
    A_r: np.ndarray  # (r, r)
    W: np.ndarray  # (r, o)

    def __post_init__(self):
        for name in ("pi_r", "A_r", "W"):
            object.__setattr__(self, name, _arr(getattr(self, name)))
        r = self.pi_r.shape[0]
        if self.A_r.shape != (r, r) or self.W.shape[0] != r:
            raise ValueError("inconsistent RankHMM shapes")

    @property
    def r(self):
        return self.pi_r.shape[0]

    @property
    def o(self):
        return self.W.shape[1]

    @cached_property
    def expA(self):
        return np.exp(self.A_r)


@dataclass(frozen=True, eq=False)
class CpdPCFG:
    start: np.ndarray  # (num_nt,)
    U: np.ndarray  # (num_nt, r)  p(rank | parent)
    V: np.ndarray  # (r, m)       p(left child | rank)
    W: np.ndarray  # (r, m)       p(right child | rank)
    E: np.ndarray  # (num_pt, o)  p(word | preterminal)

    def __post_init__(self):
        for name in ("start", "U", "V", "W", "E"):
            object.__setattr__(self, name, _arr(getattr(self, name)))
        num_nt, r = self.U.shape
        m = num_nt + self.E.shape[0]
        if (
            self.start.shape != (num_nt,)
            or self.V.shape != (r, m)
            or self.W.shape != (r, m)
            or self.E.ndim != 2
        ):
            raise ValueError(
                f"inconsistent CpdPCFG shapes: start {self.start.shape}, U {self.U.shape}, "
                f"V {self.V.shape}, W {self.W.shape}, E {self.E.shape}"
            )

    @property
    def num_nt(self):
        return self.U.shape[0]

    @property
    def num_pt(self):
        return self.E.shape[0]

    @property
    def m(self):
        return self.num_nt + self.num_pt

    @property
    def r(self):
        return self.U.shape[1]

    @property
    def o(self):
        return self.E.shape[1]

    @cached_property
    def expU(self):
        return np.exp(self.U)

    @cached_property
    def expV_nt(self):
        return np.exp(self.V[:, : self.num_nt])

    @cached_property
    def expW_nt(self):
        return np.exp(self.W[:, : self.num_nt])


@dataclass(frozen=True, eq=False)
class DensePCFG:
    start: np.ndarray  # (num_nt,)
    binary: np.ndarray  # (num_nt, m, m)
    emission: np.ndarray  # (num_pt, o)

    def __post_init__(self):
        for name in ("start", "binary", "emission"):
            object.__setattr__(self, name, _arr(getattr(self, name)))
        num_nt = self.start.shape[0]
        m = num_nt + self.emission.shape[0]
        if self.binary.shape != (num_nt, m, m):
            raise ValueError(f"binary must be ({num_nt}, {m}, {m}), got {self.binary.shape}")

    @property
    def num_nt(self):
        return self.binary.shape[0]

    @property
    def num_pt(self):
        return self.emission.shape[0]

    @property
    def m(self):
        return self.binary.shape[1]

    @property
    def o(self):
        return self.emission.shape[1]

    @cached_property
    def exp_binary(self):
        return np.exp(self.binary)


@dataclass(frozen=True, eq=False)
class LpcfgView:
    """Matricized low-rank view: ``binary = U @ Vprime`` over flattened children."""

    U: np.ndarray  # (num_nt, r)
    Vprime: np.ndarray  # (r, m, m)

    def __post_init__(self):
        object.__setattr__(self, "U", _arr(self.U))
        object.__setattr__(self, "Vprime", _arr(self.Vprime))
        if self.Vprime.ndim != 3 or self.Vprime.shape[0] != self.U.shape[1]:
            raise ValueError("inconsistent LpcfgView shapes")

    @cached_property
    def expU(self):
        return np.exp(self.U)

    @cached_property
    def expVprime(self):
        return np.exp(self.Vprime)


@dataclass(frozen=True, eq=False)
class RankPCFG:
    """Compiled rank-space PCFG.

    ``H``/``I`` carry a span's rank score to the parent rank when the span is
    a left/right child; ``J``/``K`` do the same for a single word.
    """

    L: np.ndarray  # (r,)
    H: np.ndarray  # (r, r)
    I: np.ndarray  # (r, r)
    J: np.ndarray  # (r, o)
    K: np.ndarray  # (r, o)

    def __post_init__(self):
        for name in ("L", "H", "I", "J", "K"):
            object.__setattr__(self, name, _arr(getattr(self, name)))
        r = self.L.shape[0]
        if (
            self.H.shape != (r, r)
            or self.I.shape != (r, r)
            or self.J.shape[0] != r
            or self.K.shape != self.J.shape
        ):
            raise ValueError("inconsistent RankPCFG shapes")

    @property
    def r(self):
        return self.L.shape[0]

    @property
    def o(self):
        return self.J.shape[1]

    @cached_property
    def expH(self):
        return np.exp(self.H)

    @cached_property
    def expI(self):
        return np.exp(self.I)


# ---------------------------------------------------------------------------
# validation


def _check_values(name, arr, out):
    if np.isnan(arr).any():
        out.append(f"{name}: contains NaN")
    if np.isposinf(arr).any():
        out.append(f"{name}: contains +inf")


def _check_rows(name, arr, tol, out):
    # 1-D: one distribution. N-D: one distribution per leading index over the rest.
    if arr.ndim == 1:
        masses, labels = [np.exp(log_sum_exp(arr))], [name]
    else:
        masses = np.exp(log_sum_exp(arr.reshape(arr.shape[0], -1), axis=-1))
        labels = [f"{name} row {i}" for i in range(arr.shape[0])]
    for label, s in zip(labels, masses):
        if not abs(s - 1.0) <= tol:
            out.append(f"{label}: mass {s:.12g} != 1")


def validate(model, tol=1e-9):
    """List every normalization or finiteness violation of ``model``.

    An empty list means the model is valid. Violations are data, not errors.
    """
    out = []
    if isinstance(model, CpdHMM):
        fields = {"start": model.start, "U": model.U, "V": model.V, "W": model.W}
        for k, v in fields.items():
            _check_values(k, v, out)
            _check_rows(k, v, tol, out)
    elif isinstance(model, DenseJointHMM):
        _check_values("start", model.start, out)
        _check_values("T", model.T, out)
        _check_rows("start", model.start, tol, out)
        _check_rows("T", model.T, tol, out)
    elif isinstance(model, RankHMM):
        for k in ("pi_r", "A_r", "W"):
            v = getattr(model, k)
            _check_values(k, v, out)
            _check_rows(k, v, tol, out)
    elif isinstance(model, CpdPCFG):
        for k in ("start", "U", "V", "W", "E"):
            v = getattr(model, k)
            _check_values(k, v, out)
            _check_rows(k, v, tol, out)
    elif isinstance(model, DensePCFG):
        for k in ("start", "binary", "emission"):
            _check_values(k, getattr(model, k), out)
        _check_rows("start", model.start, tol, out)
        _check_rows("binary", model.binary, tol, out)
        _check_rows("emission", model.emission, tol, out)
    elif isinstance(model, LpcfgView):
        _check_values("U", model.U, out)
        _check_values("Vprime", model.Vprime, out)
        _check_rows("U", model.U, tol, out)
        _check_rows("Vprime", model.Vprime, tol, out)
    elif isinstance(model, RankPCFG):
        for k in ("L", "H", "I", "J", "K"):
            _check_values(k, getattr(model, k), out)
    else:
        raise TypeError(f"cannot validate {type(model).__name__}")
    return out


# ---------------------------------------------------------------------------
# generation


def _dirichlet_rows(rng, rows, cols, concentration):
    g = rng.gamma(concentration, 1.0, size=(rows, cols))
    with np.errstate(divide="ignore"):
        return np.log(g) - np.log(g.sum(axis=1, keepdims=True))


def random_model(kind, *, r, o, seed, m=None, num_nt=None, num_pt=None, concentration=1.0):
    """Draw a valid CPD model with symmetric-Dirichlet rows.

    ``kind`` is ``"hmm"`` (needs ``m``) or ``"pcfg"`` (needs ``num_nt`` and
    ``num_pt``). Identical arguments give bit-identical models.
    """
    if concentration <= 0:
        raise ValueError("concentration must be positive")
    if r is None or r < 1 or o is None or o < 1:
        raise ValueError("r and o must be >= 1")
    rng = np.random.default_rng(seed)
    if kind in ("hmm", "cpd_hmm"):
        if m is None or m < 1:
            raise ValueError("m must be >= 1")
        start = _dirichlet_rows(rng, 1, m, concentration)[0]
        U = _dirichlet_rows(rng, m, r, concentration)
        V = _dirichlet_rows(rng, r, m, concentration)
        W = _dirichlet_rows(rng, r, o, concentration)
        return CpdHMM(start, U, V, W)
    if kind in ("pcfg", "cpd_pcfg"):
        if num_nt is None or num_pt is None or num_nt < 1 or num_pt < 1:
            raise ValueError("num_nt and num_pt must be >= 1")
        total = num_nt + num_pt
        start = _dirichlet_rows(rng, 1, num_nt, concentration)[0]
        U = _dirichlet_rows(rng, num_nt, r, concentration)
        V = _dirichlet_rows(rng, r, total, concentration)
        W = _dirichlet_rows(rng, r, total, concentration)
        E = _dirichlet_rows(rng, num_pt, o, concentration)
        return CpdPCFG(start, U, V, W, E)
    raise ValueError(f"unknown model kind {kind!r}")


def uniform_hmm(m, r, o):
    return CpdHMM(
        np.full(m, -np.log(m)),
        np.full((m, r), -np.log(r)),
        np.full((r, m), -np.log(m)),
        np.full((r, o), -np.log(o)),
    )


# ---------------------------------------------------------------------------
# reconstruction and compilation


def _log_outer_sum(a, b):
    return a[..., :, None] + b[..., None, :]


def reconstruct_hmm(model):
    """Dense ``(m, m, o)`` joint transition-emission tensor of a CpdHMM."""
    # T[a, b, w] = logsumexp_q U[a, q] + V[q, b] + W[q, w]
    m, r, o = model.m, model.r, model.o
    VW = _log_outer_sum(model.V, model.W).reshape(r, m * o)
    T = log_matmul(model.U, VW).reshape(m, m, o)
    return DenseJointHMM(model.start, T)


def reconstruct_pcfg(model):
    m, r = model.m, model.r
    VW = _log_outer_sum(model.V, model.W).reshape(r, m * m)
    binary = log_matmul(model.U, VW).reshape(model.num_nt, m, m)
    return DensePCFG(model.start, binary, model.E)


def cpd_to_lpcfg(model):
    return LpcfgView(model.U, _log_outer_sum(model.V, model.W))


def compile_rank_pcfg(model):
    """Marginalize every state node, leaving rank-to-rank and rank-to-word maps."""
    nt = model.num_nt
    V_nt, V_pt = model.V[:, :nt], model.V[:, nt:]
    W_nt, W_pt = model.W[:, :nt], model.W[:, nt:]
    return RankPCFG(
        L=log_matmul(model.start[None, :], model.U)[0],
        H=log_matmul(V_nt, model.U),
        I=log_matmul(W_nt, model.U),
        J=log_matmul(V_pt, model.E),
        K=log_matmul(W_pt, model.E),
    )


def compile_rank_hmm(model):
    return RankHMM(
        pi_r=log_matmul(model.start[None, :], model.U)[0],
        A_r=log_matmul(model.V, model.U),
        W=model.W,
    )


def rank_hmm_as_cpd(model):
    """View a RankHMM as a CpdHMM with states and ranks interchanged.

    The ``r`` rank variables become the states; each new state emits through
    its own one-hot rank, so ``U`` is the identity.
    """
    r = model.r
    eye = np.where(np.eye(r, dtype=bool), 0.0, -np.inf)
    return CpdHMM(model.pi_r, eye, model.A_r, model.W)
