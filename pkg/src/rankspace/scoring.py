"""Corpus-level scoring: per-sentence log Z, NLL per token and perplexity."""
import math
import os
from concurrent.futures import ProcessPoolExecutor

from . import hmm, pcfg
from .models import (
    CpdHMM,
    CpdPCFG,
    DenseJointHMM,
    DensePCFG,
    RankHMM,
    RankPCFG,
    compile_rank_hmm,
    compile_rank_pcfg,
    cpd_to_lpcfg,
    reconstruct_hmm,
    reconstruct_pcfg,
)

WORKERS_ENV = "RANKSPACE_WORKERS"


def algorithms_for(model):
    if isinstance(model, CpdHMM):
        return ("dense", "lowrank", "rank")
    if isinstance(model, CpdPCFG):
        return ("dense", "lowrank", "td", "lpcfg", "rank")
    if isinstance(model, (DenseJointHMM, DensePCFG)):
        return ("dense",)
    if isinstance(model, (RankHMM, RankPCFG)):
        return ("rank",)
    raise TypeError(f"cannot score {type(model).__name__}")


def default_algorithm(model):
    return algorithms_for(model)[-1]


def make_scorer(model, algo=None):
    """Prepare (reconstruct or compile once) and return ``seq -> log Z``.

    For PCFGs ``lowrank`` is an alias of ``td``. Raises ``ValueError`` for an
    algorithm the model kind does not support.
    """
    algo = algo or default_algorithm(model)
    if algo not in algorithms_for(model):
        raise ValueError(
            f"algorithm {algo!r} is not available for {type(model).__name__}; "
            f"choose from {algorithms_for(model)}"
        )
    if isinstance(model, CpdHMM):
        if algo == "dense":
            return _Scorer(hmm.dense_forward, reconstruct_hmm(model))
        if algo == "lowrank":
            return _Scorer(hmm.lowrank_forward, model)
        return _Scorer(hmm.rank_forward, compile_rank_hmm(model))
    if isinstance(model, CpdPCFG):
        if algo == "dense":
            return _Scorer(pcfg.dense_inside, reconstruct_pcfg(model))
        if algo in ("lowrank", "td"):
            return _Scorer(pcfg.td_inside, model)
        if algo == "lpcfg":
            return _LpcfgScorer(cpd_to_lpcfg(model), model.E, model.start)
        return _Scorer(pcfg.rank_inside, compile_rank_pcfg(model))
    if isinstance(model, DenseJointHMM):
        return _Scorer(hmm.dense_forward, model)
    if isinstance(model, DensePCFG):
        return _Scorer(pcfg.dense_inside, model)
    if isinstance(model, RankHMM):
        return _Scorer(hmm.rank_forward, model)
    return _Scorer(pcfg.rank_inside, model)


class _Scorer:
    # plain class rather than a closure so it pickles into worker processes
    def __init__(self, fn, model):
        self.fn = fn
        self.model = model

    def __call__(self, seq):
        return float(self.fn(self.model, seq).logZ)


class _LpcfgScorer:
    def __init__(self, view, emission, start):
        self.view, self.emission, self.start = view, emission, start

    def __call__(self, seq):
        return float(pcfg.lpcfg_inside(self.view, self.emission, self.start, seq).logZ)


def worker_count(default=1):
    value = os.environ.get(WORKERS_ENV)
    if not value:
        return default
    n = int(value)
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be >= 1")
    return n


def ordered_map(fn, items, workers=1):
    """``map`` that may fan out to processes; results stay in input order."""
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def summarize(logZs, token_counts):
    if not logZs:
        raise ValueError("empty corpus")
    total_tokens = int(sum(token_counts))
    # fixed left-to-right reduction keeps totals bit-stable
    total = 0.0
    for z in logZs:
        total += z
    nll = -total / total_tokens
    return {"total_tokens": total_tokens, "nll_per_token": nll, "ppl": math.exp(nll)}


def score_corpus(model, corpus, algo=None, workers=1):
    """Per-sentence rows ``{index, n_tokens, logZ}`` and a corpus summary."""
    if not corpus:
        raise ValueError("empty corpus")
    scorer = make_scorer(model, algo)
    logZs = ordered_map(scorer, list(corpus), workers)
    rows = [
        {"index": i, "n_tokens": len(seq), "logZ": z}
        for i, (seq, z) in enumerate(zip(corpus, logZs))
    ]
    return rows, summarize(logZs, [len(s) for s in corpus])


def perplexity(model, corpus, algo=None):
    """``exp(-sum log Z / total tokens)``; HMM token counts include ``<eos>``."""
    return score_corpus(model, corpus, algo)[1]["ppl"]
