"""Inside-algorithm variants, span marginals and MBR decoding for PCFGs.

Charts are ``(n + 1, n + 1, d)`` log arrays indexed by span ``[i, j)``; cells
that a variant does not fill hold ``-inf``. Within one span width every cell
is independent, so each width is filled with a single vectorized sweep.

State-space variants (:func:`dense_inside`, :func:`td_inside`,
:func:`lpcfg_inside`) score children over all ``m`` symbols: a width-1 child
is a preterminal emitting its word, a wider child is a nonterminal.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ZeroProbabilityError
from .logsemiring import NEG_INF, log_mat_vec_exp, log_matmul, log_sum_exp

# Caps the scratch buffer of the dense and LPCFG contractions (in doubles).
_CHUNK_ELEMS = 1 << 22


@dataclass(frozen=True, eq=False)
class InsideChart:
    n: int
    alpha: np.ndarray  # (n+1, n+1, d)
    logZ: float
    alphaL: np.ndarray = None  # rank-space only
    alphaR: np.ndarray = None

    def span(self, i, j):
        return self.alpha[i, j]


@dataclass(frozen=True, eq=False)
class SpanMarginals:
    n: int
    mu: np.ndarray  # (n+1, n+1); zero for spans narrower than 2

    def __getitem__(self, span):
        i, j = span
        return float(self.mu[i, j])

    def spans(self):
        return [(i, i + w) for w in range(2, self.n + 1) for i in range(self.n - w + 1)]

    def items(self):
        return [(s, self[s]) for s in self.spans()]

    @classmethod
    def from_dict(cls, n, mu):
        arr = np.zeros((n + 1, n + 1))
        for (i, j), v in mu.items():
            arr[i, j] = v
        return cls(n, arr)


@dataclass(frozen=True)
class ParseTree:
    """Binary bracketing over ``n`` leaves, as the set of spans of width >= 2."""

    n: int
    spans: frozenset

    def __post_init__(self):
        object.__setattr__(self, "spans", frozenset(tuple(s) for s in self.spans))
        if self.n >= 2 and (0, self.n) not in self.spans:
            raise ValueError("tree must contain the whole-sentence span")
        if len(self.spans) != max(self.n - 1, 0):
            raise ValueError(f"a binary tree over {self.n} leaves has {self.n - 1} spans")
        self._split(0, self.n)

    def _split(self, i, j):
        if j - i < 2:
            return None
        for k in range(i + 1, j):
            left_ok = k - i == 1 or (i, k) in self.spans
            right_ok = j - k == 1 or (k, j) in self.spans
            if left_ok and right_ok:
                return k
        raise ValueError(f"span ({i}, {j}) has no binary split in the tree")

    def to_brackets(self):
        def render(i, j):
            if j - i == 1:
                return str(i)
            k = self._split(i, j)
            return f"({render(i, k)} {render(k, j)})"

        return render(0, self.n)

    @classmethod
    def from_brackets(cls, text):
        tokens = text.replace("(", " ( ").replace(")", " ) ").split()
        pos = 0
        spans = []
        leaves = []

        def parse():
            nonlocal pos
            if pos >= len(tokens):
                raise ValueError(f"unexpected end of bracket string {text!r}")
            tok = tokens[pos]
            pos += 1
            if tok == "(":
                children = []
                while pos < len(tokens) and tokens[pos] != ")":
                    children.append(parse())
                if pos >= len(tokens) or len(children) != 2:
                    raise ValueError(f"malformed binary bracketing {text!r}")
                pos += 1
                span = (children[0][0], children[1][1])
                if children[0][1] != children[1][0]:
                    raise ValueError(f"non-contiguous children in {text!r}")
                spans.append(span)
                return span
            if tok == ")":
                raise ValueError(f"unexpected ')' in {text!r}")
            idx = int(tok)
            leaves.append(idx)
            return (idx, idx + 1)

        parse()
        if pos != len(tokens):
            raise ValueError(f"trailing tokens in {text!r}")
        n = len(leaves)
        if leaves != list(range(n)):
            raise ValueError(f"leaves must be 0..n-1 in order in {text!r}")
        return cls(n, frozenset(spans))


def _check_sentence(seq, o):
    seq = np.asarray(seq, dtype=np.int64)
    if seq.ndim != 1:
        raise ValueError("sentence must be a 1-D array of token ids")
    if seq.size < 2:
        raise ValueError(
            "sentences of length 1 are not supported by the binary-rule inside algorithm"
        )
    if seq.min() < 0 or seq.max() >= o:
        bad = int(seq[(seq < 0) | (seq >= o)][0])
        raise ValueError(f"token id {bad} outside vocabulary of size {o}")
    return seq


def _width_index(n, w):
    """Parent span starts/ends and split points for every span of width ``w``."""
    i = np.arange(n - w + 1)
    j = i + w
    k = i[:, None] + np.arange(1, w)[None, :]
    return i, j, k


def _row_shift(x, axis=-1):
    s = np.max(x, axis=axis, keepdims=True)
    return np.where(np.isfinite(s), s, 0.0)


def _lse_splits(x):
    """logsumexp over the split axis (axis 1) of an ``(S, K, d)`` array."""
    s = _row_shift(x, axis=1)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(x - s).sum(axis=1)) + s[:, 0]


def _symbol_leaves(num_nt, emission, seq):
    """Width-1 child scores over all m symbols: -inf for nonterminals."""
    n = len(seq)
    leaves = np.full((n, num_nt + emission.shape[0]), NEG_INF)
    leaves[:, num_nt:] = emission[:, seq].T
    return leaves


def _state_chart(n, num_nt, m, leaves):
    """Chart over all m symbols for use as children; nonterminal rows filled later."""
    beta = np.full((n + 1, n + 1, m), NEG_INF)
    idx = np.arange(n)
    beta[idx, idx + 1] = leaves
    return beta


def _pairwise_contract(eL, eR, expT, out_dim):
    """``sum_{b,c} expT[a, b, c] * eL[b] * eR[c]`` for batches of child pairs.

    ``expT`` is ``(out_dim, m, m)``. The right child is contracted first.
    """
    rows, m = eR.shape
    flat = expT.reshape(out_dim * m, m)
    out = np.empty((rows, out_dim))
    step = max(1, _CHUNK_ELEMS // (out_dim * m))
    for lo in range(0, rows, step):
        hi = min(rows, lo + step)
        t = (eR[lo:hi] @ flat.T).reshape(hi - lo, out_dim, m)
        out[lo:hi] = np.einsum("sab,sb->sa", t, eL[lo:hi])
    return out


def _trilinear_width(beta, n, w, expT, out_dim):
    """Sum over splits of the binary contraction for every span of width w."""
    i, j, k = _width_index(n, w)
    left = beta[i[:, None], k]  # (S, K, m)
    right = beta[k, j[:, None]]
    sl = _row_shift(left)
    sr = _row_shift(right)
    S, K, m = left.shape
    prod = _pairwise_contract(
        np.exp(left - sl).reshape(S * K, m), np.exp(right - sr).reshape(S * K, m), expT, out_dim
    ).reshape(S, K, out_dim)
    shift = (sl + sr)[..., 0]  # (S, K)
    top = _row_shift(shift, axis=1)
    with np.errstate(divide="ignore"):
        return np.log(np.einsum("ska,sk->sa", prod, np.exp(shift - top))) + top


def _split_outer_sums(beta, n, w):
    """Per span of width w: ``sum_k exp(left_k) (x) exp(right_k)`` with a shared shift.

    Returns ``(M, shift)`` with ``M`` of shape ``(S, m, m)``.
    """
    i, j, k = _width_index(n, w)
    left = beta[i[:, None], k]  # (S, K, m)
    right = beta[k, j[:, None]]
    sl = _row_shift(left)
    sr = _row_shift(right)
    pair = (sl + sr)[..., 0]  # (S, K)
    top = _row_shift(pair, axis=1)
    eL = np.exp(left - sl) * np.exp(pair - top)[..., None]
    M = np.matmul(eL.transpose(0, 2, 1), np.exp(right - sr))
    return M, top[:, 0]


def dense_inside(model, seq):
    """Inside algorithm on the full rule tensor.

    Splits are summed first into one outer-product matrix per span, giving
    O(n^3 m^2 + n^2 num_nt m^2).
    """
    seq = _check_sentence(seq, model.o)
    n, nt, m = len(seq), model.num_nt, model.m
    beta = _state_chart(n, nt, m, _symbol_leaves(nt, model.emission, seq))
    flatB = model.exp_binary.reshape(nt, m * m)
    for w in range(2, n + 1):
        i, j, _ = _width_index(n, w)
        M, shift = _split_outer_sums(beta, n, w)
        with np.errstate(divide="ignore"):
            beta[i, j, :nt] = np.log(M.reshape(len(i), m * m) @ flatB.T) + shift[:, None]
    alpha = beta[..., :nt]
    return InsideChart(n, alpha, log_sum_exp(model.start + alpha[0, n]))


def td_inside(model, seq):
    """Inside algorithm with cached V/W projections, O(n^3 r + n^2 m r)."""
    seq = _check_sentence(seq, model.o)
    n, nt, r = len(seq), model.num_nt, model.r
    alpha = np.full((n + 1, n + 1, nt), NEG_INF)
    valpha = np.full((n + 1, n + 1, r), NEG_INF)
    walpha = np.full((n + 1, n + 1, r), NEG_INF)
    idx = np.arange(n)
    words = model.E[:, seq]
    valpha[idx, idx + 1] = log_matmul(model.V[:, nt:], words).T
    walpha[idx, idx + 1] = log_matmul(model.W[:, nt:], words).T
    for w in range(2, n + 1):
        i, j, k = _width_index(n, w)
        beta = _lse_splits(valpha[i[:, None], k] + walpha[k, j[:, None]])
        a = log_mat_vec_exp(model.expU, beta)
        alpha[i, j] = a
        if w < n:
            valpha[i, j] = log_mat_vec_exp(model.expV_nt, a)
            walpha[i, j] = log_mat_vec_exp(model.expW_nt, a)
    return InsideChart(n, alpha, log_sum_exp(model.start + alpha[0, n]))


def lpcfg_inside(view, emission, start, seq):
    """Inside algorithm over the matricized view, O(n^3 m^2 r + n^2 m r)."""
    emission = np.asarray(emission, dtype=float)
    start = np.asarray(start, dtype=float)
    seq = _check_sentence(seq, emission.shape[1])
    nt, r = view.U.shape
    m = view.Vprime.shape[1]
    n = len(seq)
    beta = _state_chart(n, nt, m, _symbol_leaves(nt, emission, seq))
    expVp = view.expVprime
    for w in range(2, n + 1):
        i, j, _ = _width_index(n, w)
        ranks = _trilinear_width(beta, n, w, expVp, r)
        beta[i, j, :nt] = log_mat_vec_exp(view.expU, ranks)
    alpha = beta[..., :nt]
    return InsideChart(n, alpha, log_sum_exp(start + alpha[0, n]))


def rank_inside(model, seq):
    """Rank-space inside algorithm, O(n^3 r + n^2 r^2).

    ``alphaL``/``alphaR`` hold a span's score already mapped to the parent
    rank for the span acting as a left/right child.
    """
    seq = _check_sentence(seq, model.o)
    n, r = len(seq), model.r
    alpha = np.full((n + 1, n + 1, r), NEG_INF)
    alphaL = np.full((n + 1, n + 1, r), NEG_INF)
    alphaR = np.full((n + 1, n + 1, r), NEG_INF)
    idx = np.arange(n)
    # a left leaf reaches its parent rank through V (J = V E), a right leaf through W
    alphaL[idx, idx + 1] = model.J[:, seq].T
    alphaR[idx, idx + 1] = model.K[:, seq].T
    for w in range(2, n + 1):
        i, j, k = _width_index(n, w)
        a = _lse_splits(alphaL[i[:, None], k] + alphaR[k, j[:, None]])
        alpha[i, j] = a
        if w < n:
            alphaL[i, j] = log_mat_vec_exp(model.expH, a)
            alphaR[i, j] = log_mat_vec_exp(model.expI, a)
    return InsideChart(n, alpha, log_sum_exp(model.L + alpha[0, n]), alphaL, alphaR)


@dataclass(frozen=True, eq=False)
class RankAdjoints:
    """Log adjoints ``d Z / d cell`` of the rank-space chart."""

    chart: InsideChart
    alpha: np.ndarray
    alphaL: np.ndarray
    alphaR: np.ndarray


def rank_outside(model, chart):
    """Reverse sweep over :func:`rank_inside`, widest spans first.

    Within one parent width every child cell receives at most one
    contribution, so scatters never collide.
    """
    n, r = chart.n, model.r
    gA = np.full((n + 1, n + 1, r), NEG_INF)
    gL = np.full((n + 1, n + 1, r), NEG_INF)
    gR = np.full((n + 1, n + 1, r), NEG_INF)
    gA[0, n] = model.L
    expHt, expIt = model.expH.T, model.expI.T
    for w in range(n, 1, -1):
        i, j, k = _width_index(n, w)
        if w < n:
            gA[i, j] = np.logaddexp(
                log_mat_vec_exp(expHt, gL[i, j]), log_mat_vec_exp(expIt, gR[i, j])
            )
        parent = gA[i, j][:, None, :]
        I, J = np.broadcast_to(i[:, None], k.shape), np.broadcast_to(j[:, None], k.shape)
        gL[I, k] = np.logaddexp(gL[I, k], parent + chart.alphaR[k, J])
        gR[k, J] = np.logaddexp(gR[k, J], parent + chart.alphaL[I, k])
    return RankAdjoints(chart, gA, gL, gR)


def span_marginals(model, seq, chart=None):
    """Posterior probability of every span of width >= 2.

    Z is linear in each chart cell, so ``mu = <adjoint, alpha> / Z``.
    """
    chart = chart or rank_inside(model, seq)
    if not np.isfinite(chart.logZ):
        raise ZeroProbabilityError("zero-probability sentence")
    adj = rank_outside(model, chart)
    mu = np.exp(log_sum_exp_cells(adj.alpha + chart.alpha) - chart.logZ)
    idx = np.arange(chart.n)
    mu[idx, idx + 1] = 0.0
    return SpanMarginals(chart.n, mu)


def log_sum_exp_cells(x):
    s = _row_shift(x)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(x - s).sum(axis=-1)) + s[..., 0]


def mbr_decode(marginals):
    """Tree with the largest total span marginal, ties to the smallest split."""
    n = marginals.n
    if n < 2:
        return ParseTree(n, frozenset())
    mu = marginals.mu
    best = np.zeros((n + 1, n + 1))
    split = np.zeros((n + 1, n + 1), dtype=np.int64)
    for w in range(2, n + 1):
        for i in range(n - w + 1):
            j = i + w
            cand = [best[i, k] + best[k, j] for k in range(i + 1, j)]
            kbest = int(np.argmax(cand))  # first maximum
            best[i, j] = mu[i, j] + cand[kbest]
            split[i, j] = i + 1 + kbest
    spans = []
    stack = [(0, n)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        spans.append((i, j))
        k = split[i, j]
        stack.extend([(i, k), (k, j)])
    return ParseTree(n, frozenset(spans))


def expected_span_total(tree, marginals):
    return sum(marginals[s] for s in tree.spans)


def sentence_f1(pred, gold):
    """Unlabeled span F1 in percent, ignoring width-1 and whole-sentence spans.

    Both span sets empty counts as a perfect match.
    """
    if pred.n != gold.n:
        raise ValueError(f"sentence length mismatch: predicted {pred.n}, gold {gold.n}")
    whole = (0, pred.n)
    p = {s for s in pred.spans if s != whole}
    g = {s for s in gold.spans if s != whole}
    if not p and not g:
        return 100.0
    overlap = len(p & g)
    if overlap == 0:
        return 0.0
    prec = overlap / len(p)
    rec = overlap / len(g)
    return 100.0 * 2 * prec * rec / (prec + rec)


def corpus_f1(preds, golds):
    """Sentence-level (macro-averaged) F1 over a corpus."""
    if len(preds) != len(golds):
        raise ValueError(f"corpus length mismatch: {len(preds)} predicted vs {len(golds)} gold")
    if not preds:
        raise ValueError("empty corpus")
    return float(np.mean([sentence_f1(p, g) for p, g in zip(preds, golds)]))


def parse_sentence(model, seq):
    """MBR tree and marginals of one sentence under a compiled RankPCFG."""
    marg = span_marginals(model, seq)
    return mbr_decode(marg), marg


def corpus_parse(model, corpus, gold=None):
    """Parse every sentence; returns ``(trees, marginals, s_f1 or None)``."""
    trees, margs = [], []
    for seq in corpus:
        tree, marg = parse_sentence(model, seq)
        trees.append(tree)
        margs.append(marg)
    f1 = None
    if gold is not None:
        if len(gold) != len(trees):
            raise ValueError(f"corpus length mismatch: {len(trees)} sentences vs {len(gold)} gold trees")
        for idx, (t, g) in enumerate(zip(trees, gold)):
            if t.n != g.n:
                raise ValueError(
                    f"sentence {idx}: gold tree has {g.n} leaves, sentence has {t.n}"
                )
        f1 = corpus_f1(trees, gold)
    return trees, margs, f1


@dataclass(frozen=True, eq=False)
class RankPCFGCounts:
    """Expected usage of each compiled parameter, ``param * d logZ / d param``."""

    logZ: float
    L: np.ndarray
    H: np.ndarray
    I: np.ndarray
    J: np.ndarray
    K: np.ndarray


def _outer_counts(G, A, logZ):
    """``sum_s exp(G[s, q] + A[s, q'] - logZ)`` with per-row shifts."""
    if G.shape[0] == 0:
        return np.zeros((G.shape[1], A.shape[1]))
    a, b = _row_shift(G), _row_shift(A)
    return np.exp(G - a).T @ (np.exp(A - b) * np.exp(a + b - logZ))


def rank_expected_counts(model, seq):
    seq = _check_sentence(seq, model.o)
    chart = rank_inside(model, seq)
    if not np.isfinite(chart.logZ):
        raise ZeroProbabilityError("zero-probability sentence")
    adj = rank_outside(model, chart)
    n, logZ = chart.n, chart.logZ
    inner = [(i, i + w) for w in range(2, n) for i in range(n - w + 1)]
    si = np.array([s[0] for s in inner], dtype=np.int64)
    sj = np.array([s[1] for s in inner], dtype=np.int64)
    spans_alpha = chart.alpha[si, sj]
    H = _outer_counts(adj.alphaL[si, sj], spans_alpha, logZ) * model.expH
    I = _outer_counts(adj.alphaR[si, sj], spans_alpha, logZ) * model.expI
    idx = np.arange(n)
    J = np.zeros((model.r, model.o))
    K = np.zeros((model.r, model.o))
    np.add.at(J.T, seq, np.exp(adj.alphaL[idx, idx + 1] + chart.alphaL[idx, idx + 1] - logZ))
    np.add.at(K.T, seq, np.exp(adj.alphaR[idx, idx + 1] + chart.alphaR[idx, idx + 1] - logZ))
    L = np.exp(model.L + chart.alpha[0, n] - logZ)
    return RankPCFGCounts(logZ, L, H, I, J, K)
