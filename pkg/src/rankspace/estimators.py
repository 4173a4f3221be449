"""scikit-learn style wrappers around training, scoring and parsing.

``X`` is a sequence of sentences, each either a whitespace-separated string
or a sequence of string tokens.
"""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import scoring
from .corpus import encode_lines, build_vocab, preprocess
from .models import compile_rank_pcfg
from .pcfg import ParseTree, corpus_f1, parse_sentence
from .train import TrainConfig, corpus_nll, fit, init_params


def check_sentences(X, *, min_length=1, lowercase=False, strip_punct=False):
    """Normalize ``X`` to a list of token lists.

    Raises ``ValueError`` on an empty collection, a sentence shorter than
    ``min_length`` after preprocessing, or a non-string token.
    """
    if isinstance(X, str):
        raise ValueError("expected a sequence of sentences, got a single string")
    try:
        items = list(X)
    except TypeError:
        raise ValueError(f"expected a sequence of sentences, got {type(X).__name__}") from None
    if not items:
        raise ValueError("no sentences given")
    out = []
    for idx, sent in enumerate(items):
        tokens = sent.split() if isinstance(sent, str) else list(sent)
        for t in tokens:
            if not isinstance(t, str):
                raise ValueError(f"sentence {idx}: token {t!r} is not a string")
        tokens = preprocess(tokens, lowercase, strip_punct)
        if len(tokens) < min_length:
            raise ValueError(f"sentence {idx}: needs at least {min_length} token(s), got {len(tokens)}")
        out.append(tokens)
    return out


def check_trees(y, lengths):
    """Gold trees as :class:`ParseTree`; bracket strings are parsed."""
    trees = [ParseTree.from_brackets(t) if isinstance(t, str) else t for t in y]
    if len(trees) != len(lengths):
        raise ValueError(f"got {len(trees)} trees for {len(lengths)} sentences")
    for idx, (tree, n) in enumerate(zip(trees, lengths)):
        if not isinstance(tree, ParseTree):
            raise ValueError(f"tree {idx}: expected ParseTree or bracket string")
        if tree.n != n:
            raise ValueError(f"tree {idx}: has {tree.n} leaves, sentence has {n}")
    return trees


def _split_validation(sents, fraction, seed):
    if len(sents) < 2:
        raise ValueError("need at least 2 sentences to hold out a validation split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(sents))
    k = min(len(sents) - 1, max(1, int(round(fraction * len(sents)))))
    val = [sents[i] for i in sorted(order[:k])]
    train = [sents[i] for i in sorted(order[k:])]
    return train, val


class _LanguageModelBase(BaseEstimator):
    _kind = None
    _min_length = 1

    def _config(self):
        overrides = {
            k: getattr(self, k)
            for k in ("lr", "epochs", "batch_tokens", "patience")
            if getattr(self, k) is not None
        }
        return TrainConfig.for_kind(self._kind, seed=self.random_state, **overrides)

    def _encode(self, sents, vocab):
        return encode_lines(
            [" ".join(s) for s in sents], vocab,
            append_eos=self._kind == "hmm", use_unk=True,
        ).sentences

    def _prep(self, X):
        return check_sentences(
            X, min_length=self._min_length, lowercase=self.lowercase, strip_punct=self.strip_punct
        )

    def fit(self, X, y=None, X_val=None):
        """Build a vocabulary from ``X`` and train by gradient descent.

        Without ``X_val`` a ``validation_fraction`` of ``X`` is held out for
        early stopping. ``y`` is ignored.
        """
        sents = self._prep(X)
        if X_val is None:
            sents, val_sents = _split_validation(sents, self.validation_fraction, self.random_state)
        else:
            val_sents = self._prep(X_val)
        self.vocab_ = build_vocab(sents, self.max_vocab)
        train, val = self._encode(sents, self.vocab_), self._encode(val_sents, self.vocab_)
        params = self._init(len(self.vocab_))
        result = fit(params, train, val, self._config())
        self.params_ = result.params
        self.model_ = result.model
        self.trace_ = result.trace
        self.n_steps_ = result.steps
        return self

    def score_samples(self, X):
        """Per-sentence log probability."""
        check_is_fitted(self, "model_")
        seqs = self._encode(self._prep(X), self.vocab_)
        rows, _ = scoring.score_corpus(self.model_, seqs, scoring.default_algorithm(self.model_))
        return np.array([row["logZ"] for row in rows])

    def perplexity(self, X):
        check_is_fitted(self, "model_")
        return float(np.exp(corpus_nll(self.model_, self._encode(self._prep(X), self.vocab_))))

    def score(self, X, y=None):
        """Mean log probability per token (higher is better)."""
        check_is_fitted(self, "model_")
        return -float(corpus_nll(self.model_, self._encode(self._prep(X), self.vocab_)))


class HMMLanguageModel(_LanguageModelBase):
    """CPD-factored HMM language model with ``n_states`` states and rank ``rank``.

    Each sentence is scored with an appended ``<eos>`` token. Tokens outside
    the training vocabulary map to ``<unk>``.
    """

    _kind = "hmm"

    def __init__(self, n_states=16, rank=8, *, max_vocab=10000, lowercase=False, strip_punct=False,
                 lr=None, epochs=None, batch_tokens=None, patience=None,
                 validation_fraction=0.1, init_scale=1.0, random_state=0):
        self.n_states = n_states
        self.rank = rank
        self.max_vocab = max_vocab
        self.lowercase = lowercase
        self.strip_punct = strip_punct
        self.lr = lr
        self.epochs = epochs
        self.batch_tokens = batch_tokens
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.init_scale = init_scale
        self.random_state = random_state

    def _init(self, o):
        return init_params("hmm", m=self.n_states, r=self.rank, o=o,
                           seed=self.random_state, scale=self.init_scale)


class PCFGParser(_LanguageModelBase):
    """Unsupervised CPD-factored PCFG with MBR decoding over span marginals."""

    _kind = "pcfg"
    _min_length = 2

    def __init__(self, n_nonterminals=10, n_preterminals=20, rank=16, *, max_vocab=10000,
                 lowercase=True, strip_punct=True, lr=None, epochs=None, batch_tokens=None,
                 patience=None, validation_fraction=0.1, init_scale=1.0, random_state=0):
        self.n_nonterminals = n_nonterminals
        self.n_preterminals = n_preterminals
        self.rank = rank
        self.max_vocab = max_vocab
        self.lowercase = lowercase
        self.strip_punct = strip_punct
        self.lr = lr
        self.epochs = epochs
        self.batch_tokens = batch_tokens
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.init_scale = init_scale
        self.random_state = random_state

    def _init(self, o):
        return init_params("pcfg", num_nt=self.n_nonterminals, num_pt=self.n_preterminals,
                           r=self.rank, o=o, seed=self.random_state, scale=self.init_scale)

    def _parse(self, X):
        check_is_fitted(self, "model_")
        compiled = compile_rank_pcfg(self.model_)
        return [parse_sentence(compiled, seq) for seq in self._encode(self._prep(X), self.vocab_)]

    def predict(self, X):
        """MBR trees, one :class:`ParseTree` per sentence."""
        return [tree for tree, _ in self._parse(X)]

    def predict_marginals(self, X):
        return [marg for _, marg in self._parse(X)]

    def score(self, X, y=None):
        """Sentence-level F1 against gold trees ``y``; mean log probability per token without."""
        if y is None:
            return super().score(X)
        pred = self.predict(X)
        return corpus_f1(pred, check_trees(y, [t.n for t in pred]))
