"""Brute-force references for tiny instances.

Everything here enumerates derivations literally and accumulates in the real
domain with ``math.fsum`` (exactly rounded summation). Nothing is shared with
the log-domain dynamic programs, so a bug there cannot hide here.
"""
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

from .errors import BudgetExceededError


@dataclass(frozen=True)
class EnumerationBudget:
    max_states_hmm: int = 1_000_000
    max_trees: int = 1_000_000

    def __post_init__(self):
        if self.max_states_hmm <= 0 or self.max_trees <= 0:
            raise ValueError("budgets must be positive")


DEFAULT_BUDGET = EnumerationBudget()


def _real(arr):
    return [_real(x) for x in arr] if hasattr(arr, "__len__") else math.exp(arr)


def _log(x):
    return math.log(x) if x > 0 else -math.inf


def hmm_bruteforce_logZ(model, seq, budget=DEFAULT_BUDGET):
    """log of the summed weight of every state sequence of a DenseJointHMM."""
    seq = [int(w) for w in seq]
    m, n = model.m, len(seq)
    count = m ** (n + 1)
    if count > budget.max_states_hmm:
        raise BudgetExceededError(f"{count} state sequences exceed budget {budget.max_states_hmm}")
    start = _real(model.start.tolist())
    T = _real(model.T.tolist())
    terms = []
    for states in itertools.product(range(m), repeat=n + 1):
        p = start[states[0]]
        for t, w in enumerate(seq):
            p *= T[states[t]][states[t + 1]][w]
        terms.append(p)
    return _log(math.fsum(terms))


def hmm_rank_posterior_bruteforce(model, seq, budget=DEFAULT_BUDGET):
    """Posterior over the emitting rank at each position of a RankHMM.

    Returns ``(logZ, gamma)`` with ``gamma[t][q]`` a real probability.
    """
    seq = [int(w) for w in seq]
    r, n = model.r, len(seq)
    if r**n > budget.max_states_hmm:
        raise BudgetExceededError(f"{r ** n} rank sequences exceed budget")
    pi = _real(model.pi_r.tolist())
    A = _real(model.A_r.tolist())
    W = _real(model.W.tolist())
    total = []
    per = [[[] for _ in range(r)] for _ in range(n)]
    for ranks in itertools.product(range(r), repeat=n):
        p = pi[ranks[0]] * W[ranks[0]][seq[0]]
        for t in range(1, n):
            p *= A[ranks[t - 1]][ranks[t]] * W[ranks[t]][seq[t]]
        total.append(p)
        for t, q in enumerate(ranks):
            per[t][q].append(p)
    Z = math.fsum(total)
    gamma = [[math.fsum(per[t][q]) / Z for q in range(r)] for t in range(n)]
    return _log(Z), gamma


@lru_cache(maxsize=None)
def enumerate_bracketings(i, j):
    """Every binary bracketing of leaves ``i..j-1`` as a frozenset of spans (width >= 2)."""
    if j - i == 1:
        return (frozenset(),)
    out = []
    for k in range(i + 1, j):
        for left in enumerate_bracketings(i, k):
            for right in enumerate_bracketings(k, j):
                out.append(frozenset({(i, j)}) | left | right)
    return tuple(out)


def catalan(k):
    return math.comb(2 * k, k) // (k + 1)


def _tree_nodes(spans, n):
    """Internal nodes as ``(i, k, j)`` triples in a fixed order."""
    nodes = []
    for i, j in sorted(spans, key=lambda s: (s[1] - s[0], s[0]), reverse=True):
        for k in range(i + 1, j):
            if (k - i == 1 or (i, k) in spans) and (j - k == 1 or (k, j) in spans):
                nodes.append((i, k, j))
                break
    return nodes


@dataclass(frozen=True)
class PcfgOracleResult:
    logZ: float
    marginals: dict  # (i, j) -> probability, spans of width >= 2
    mbr_tree: frozenset
    mbr_value: float


def pcfg_bruteforce(model, seq, budget=DEFAULT_BUDGET):
    """Enumerate every bracketing and symbol labeling of a DensePCFG.

    Nonterminal ``a`` is symbol ``a``; preterminal ``p`` is symbol ``num_nt + p``.
    """
    seq = [int(w) for w in seq]
    n = len(seq)
    if n < 2:
        raise ValueError("oracle needs sentences of length >= 2")
    nt, pt = model.num_nt, model.num_pt
    cost = catalan(n - 1) * nt ** (n - 1) * pt**n
    if cost > budget.max_trees:
        raise BudgetExceededError(f"{cost} labeled trees exceed budget {budget.max_trees}")
    start = _real(model.start.tolist())
    B = _real(model.binary.tolist())
    E = _real(model.emission.tolist())

    tree_weights = {}
    for spans in enumerate_bracketings(0, n):
        nodes = _tree_nodes(spans, n)
        node_index = {(i, j): idx for idx, (i, _, j) in enumerate(nodes)}
        terms = []
        for nt_labels in itertools.product(range(nt), repeat=n - 1):
            def sym(i, j):
                if j - i == 1:
                    return None
                return nt_labels[node_index[(i, j)]]

            rule_p = start[nt_labels[node_index[(0, n)]]]
            leaf_parents = []
            for idx, (i, k, j) in enumerate(nodes):
                a = nt_labels[idx]
                b, c = sym(i, k), sym(k, j)
                leaf_parents.append((a, b, c, i, k, j))
            for pt_labels in itertools.product(range(pt), repeat=n):
                p = rule_p
                for a, b, c, i, k, j in leaf_parents:
                    b = nt + pt_labels[i] if b is None else b
                    c = nt + pt_labels[k] if c is None else c
                    p *= B[a][b][c]
                for pos, w in enumerate(seq):
                    p *= E[pt_labels[pos]][w]
                terms.append(p)
        tree_weights[spans] = math.fsum(terms)

    Z = math.fsum(tree_weights.values())
    all_spans = [(i, i + w) for w in range(2, n + 1) for i in range(n - w + 1)]
    marginals = {
        s: math.fsum(wt for t, wt in tree_weights.items() if s in t) / Z for s in all_spans
    }
    tree, value = mbr_bruteforce(marginals, n)
    return PcfgOracleResult(_log(Z), marginals, tree, value)


def mbr_bruteforce(marginals, n):
    """Bracketing with the largest summed marginal, found by exhaustive search."""
    best_tree, best_value = None, -math.inf
    for spans in enumerate_bracketings(0, n):
        value = math.fsum(marginals[s] for s in spans)
        if value > best_value:
            best_tree, best_value = spans, value
    return best_tree, best_value
