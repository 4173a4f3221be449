"""Reading corpora and bracket files."""
import logging
import string
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .models import EOS, UNK, Vocab
from .pcfg import ParseTree

logger = logging.getLogger(__name__)

_PUNCT = set(string.punctuation) | {"``", "''", "--", "-LRB-", "-RRB-", "-lrb-", "-rrb-"}


class CorpusError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def is_punct(token):
    return token in _PUNCT or all(ch in string.punctuation for ch in token)


def preprocess(tokens, lowercase=False, strip_punct=False):
    if strip_punct:
        tokens = [t for t in tokens if not is_punct(t)]
    if lowercase:
        tokens = [t.lower() for t in tokens]
    return tokens


@dataclass
class Corpus:
    sentences: list  # int64 arrays
    line_numbers: list  # 1-based source line of each sentence
    skipped_empty: int = 0

    def __len__(self):
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def __getitem__(self, idx):
        return self.sentences[idx]


def encode_lines(lines, vocab, *, append_eos, use_unk=True, lowercase=False, strip_punct=False):
    """Map whitespace-tokenized lines to id arrays.

    Empty lines (after preprocessing) are skipped and counted. Without
    ``use_unk`` an out-of-vocabulary token raises :class:`CorpusError`
    naming the 1-based line.
    """
    sentences, numbers, skipped = [], [], 0
    for lineno, line in enumerate(lines, start=1):
        tokens = preprocess(line.split(), lowercase, strip_punct)
        if not tokens:
            skipped += 1
            continue
        try:
            ids = vocab.encode(tokens, use_unk=use_unk)
        except KeyError as exc:
            raise CorpusError(f"out-of-vocabulary token {exc.args[0]!r}", lineno) from None
        if append_eos:
            ids = np.append(ids, vocab.eos_id)
        sentences.append(ids)
        numbers.append(lineno)
    if skipped:
        logger.warning("skipped %d empty line(s)", skipped)
    return Corpus(sentences, numbers, skipped)


def build_vocab(token_lists, max_vocab=None):
    """Vocabulary ordered by descending frequency, ties alphabetical.

    ``<unk>`` and ``<eos>`` come first and count toward ``max_vocab``.
    """
    counts = Counter()
    for tokens in token_lists:
        counts.update(tokens)
    counts.pop(UNK, None)
    counts.pop(EOS, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if max_vocab:
        if max_vocab < 2:
            raise ValueError("max_vocab must be >= 2")
        ranked = ranked[: max_vocab - 2]
    return Vocab((UNK, EOS) + tuple(t for t, _ in ranked))


def read_corpus(path, vocab, **kwargs):
    with open(path, encoding="utf-8") as f:
        return encode_lines(f.read().splitlines(), vocab, **kwargs)


def write_id_corpus(corpus, vocab, path):
    """Write sentences as tokens, one per line, dropping a trailing ``<eos>``."""
    with open(path, "w", encoding="utf-8") as f:
        for seq in corpus:
            ids = list(seq)
            if ids and ids[-1] == vocab.eos_id:
                ids = ids[:-1]
            f.write(" ".join(vocab.decode(ids)) + "\n")


def read_brackets(path):
    trees = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                trees.append(ParseTree.from_brackets(line))
            except ValueError as exc:
                raise CorpusError(str(exc), lineno) from None
    return trees
