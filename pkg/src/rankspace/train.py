"""Maximum-likelihood fitting of CPD HMMs and PCFGs.

Parameters are unconstrained score arrays; a row-wise log-softmax turns them
into a valid model. The loss is the per-token negative log-likelihood computed
by rank-space inference, and its gradient is obtained by reverse accumulation
through the rank-space dynamic program, the compiled matrix products and the
softmax, coded by hand.
"""
import csv
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import hmm as hmm_infer
from . import pcfg as pcfg_infer
from .errors import TrainingDivergedError, ZeroProbabilityError
from .logsemiring import log_normalize
from .models import CpdHMM, CpdPCFG, compile_rank_hmm, compile_rank_pcfg

logger = logging.getLogger(__name__)

HMM_GROUPS = ("start", "U", "V", "W")
PCFG_GROUPS = ("start", "U", "V", "W", "E")


@dataclass(eq=False)
class ScoreParams:
    kind: str
    scores: dict

    def __post_init__(self):
        if self.kind not in ("hmm", "pcfg"):
            raise ValueError(f"unknown kind {self.kind!r}")
        groups = HMM_GROUPS if self.kind == "hmm" else PCFG_GROUPS
        if set(self.scores) != set(groups):
            raise ValueError(f"{self.kind} params need groups {groups}")
        self.scores = {k: np.array(self.scores[k], dtype=float) for k in groups}

    @property
    def groups(self):
        return HMM_GROUPS if self.kind == "hmm" else PCFG_GROUPS

    def copy(self):
        return ScoreParams(self.kind, {k: v.copy() for k, v in self.scores.items()})

    def to_model(self):
        logp = {k: log_normalize(v, axis=-1) for k, v in self.scores.items()}
        return CpdHMM(**logp) if self.kind == "hmm" else CpdPCFG(**logp)

    def dot(self, other):
        return sum(float(np.vdot(self.scores[k], other.scores[k])) for k in self.groups)

    def axpy(self, a, other):
        """``self + a * other`` as new params."""
        return ScoreParams(
            self.kind, {k: self.scores[k] + a * other.scores[k] for k in self.groups}
        )

    @classmethod
    def from_model(cls, model):
        """Scores equal to the model's log-probabilities (a valid softmax preimage)."""
        if isinstance(model, CpdHMM):
            return cls("hmm", {k: getattr(model, k) for k in HMM_GROUPS})
        return cls("pcfg", {k: getattr(model, k) for k in PCFG_GROUPS})


def init_params(kind, *, r, o, seed, m=None, num_nt=None, num_pt=None, scale=1.0):
    """Scores drawn i.i.d. from N(0, scale^2)."""
    rng = np.random.default_rng(seed)
    if kind == "hmm":
        shapes = {"start": (m,), "U": (m, r), "V": (r, m), "W": (r, o)}
    elif kind == "pcfg":
        total = num_nt + num_pt
        shapes = {
            "start": (num_nt,),
            "U": (num_nt, r),
            "V": (r, total),
            "W": (r, total),
            "E": (num_pt, o),
        }
    else:
        raise ValueError(f"unknown kind {kind!r}")
    for k, s in shapes.items():
        if min(s) < 1:
            raise ValueError(f"group {k} has empty shape {s}")
    return ScoreParams(kind, {k: scale * rng.standard_normal(s) for k, s in shapes.items()})


def _ratio(count, logp):
    # count / p where count is zero whenever p is
    p = np.exp(logp)
    return np.divide(count, p, out=np.zeros_like(count), where=p > 0)


def _softmax_backward(count, logp):
    """Gradient of ``sum(count * logp)`` w.r.t. the softmax scores."""
    return count - count.sum(axis=-1, keepdims=True) * np.exp(logp)


def _hmm_state_counts(model, compiled, c):
    start, U, V = np.exp(model.start), np.exp(model.U), np.exp(model.V)
    R_pi = _ratio(c.pi_r, compiled.pi_r)
    R_A = _ratio(c.A_r, compiled.A_r)
    return {
        "start": start * (U @ R_pi),
        "U": U * (np.outer(start, R_pi) + V.T @ R_A),
        "V": V * (R_A @ U.T),
        "W": c.W,
    }


def _pcfg_state_counts(model, compiled, c):
    nt = model.num_nt
    start, U, E = np.exp(model.start), np.exp(model.U), np.exp(model.E)
    V, W = np.exp(model.V), np.exp(model.W)
    R_L = _ratio(c.L, compiled.L)
    R_H = _ratio(c.H, compiled.H)
    R_I = _ratio(c.I, compiled.I)
    R_J = _ratio(c.J, compiled.J)
    R_K = _ratio(c.K, compiled.K)
    cV = np.empty_like(V)
    cW = np.empty_like(W)
    cV[:, :nt] = V[:, :nt] * (R_H @ U.T)
    cV[:, nt:] = V[:, nt:] * (R_J @ E.T)
    cW[:, :nt] = W[:, :nt] * (R_I @ U.T)
    cW[:, nt:] = W[:, nt:] * (R_K @ E.T)
    return {
        "start": start * (U @ R_L),
        "U": U * (np.outer(start, R_L) + V[:, :nt].T @ R_H + W[:, :nt].T @ R_I),
        "V": cV,
        "W": cW,
        "E": E * (V[:, nt:].T @ R_J + W[:, nt:].T @ R_K),
    }


def _sum_counts(items):
    it = iter(items)
    total = next(it)
    for c in it:
        for k in total:
            total[k] = total[k] + c[k]
    return total


def loss_and_grad(params, batch):
    """Per-token NLL of ``batch`` and its gradient w.r.t. every score group.

    Tokens are counted as sentence lengths (including ``<eos>`` for HMMs).
    """
    if not batch:
        raise ValueError("empty batch")
    model = params.to_model()
    if params.kind == "hmm":
        compiled = compile_rank_hmm(model)
        counter, Counts = hmm_infer.rank_expected_counts, hmm_infer.RankCounts
    else:
        compiled = compile_rank_pcfg(model)
        counter, Counts = pcfg_infer.rank_expected_counts, pcfg_infer.RankPCFGCounts
    per = []
    total_logZ = 0.0
    n_tokens = 0
    for idx, seq in enumerate(batch):
        try:
            c = counter(compiled, seq)
        except ZeroProbabilityError as exc:
            raise ZeroProbabilityError(f"sentence {idx} has zero probability") from exc
        total_logZ += c.logZ
        n_tokens += len(seq)
        per.append({k: v for k, v in vars(c).items() if k != "logZ"})
    summed = Counts(logZ=total_logZ, **_sum_counts(per))
    if params.kind == "hmm":
        state = _hmm_state_counts(model, compiled, summed)
    else:
        state = _pcfg_state_counts(model, compiled, summed)
    grad = {
        k: -_softmax_backward(state[k], getattr(model, k)) / n_tokens for k in params.groups
    }
    return -total_logZ / n_tokens, ScoreParams(params.kind, grad)


def corpus_nll(params_or_model, corpus):
    """Per-token NLL under rank-space inference."""
    model = params_or_model.to_model() if isinstance(params_or_model, ScoreParams) else params_or_model
    if isinstance(model, CpdHMM):
        compiled, fwd = compile_rank_hmm(model), hmm_infer.rank_forward
    else:
        compiled, fwd = compile_rank_pcfg(model), pcfg_infer.rank_inside
    total = 0.0
    tokens = 0
    for seq in corpus:
        total += fwd(compiled, seq).logZ
        tokens += len(seq)
    return -total / tokens


# ---------------------------------------------------------------------------
# optimization


@dataclass
class TrainConfig:
    optimizer: str = "adamw"
    lr: float = 0.001
    beta1: float = 0.99
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    epochs: int = 30
    batch_tokens: int = 256
    clip_norm: float = 5.0  # 0 disables clipping
    eval_every: int = 1
    patience: int = 2
    lr_decay: float = 0.5
    bucket_batches: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam", "adamw"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr < 0 or self.epochs < 0 or self.batch_tokens <= 0:
            raise ValueError("lr, epochs must be non-negative and batch_tokens positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta values must lie in [0, 1)")
        if self.clip_norm < 0 or self.eval_every <= 0 or self.patience <= 0:
            raise ValueError("clip_norm >= 0, eval_every > 0 and patience > 0 required")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")

    @classmethod
    def for_kind(cls, kind, **overrides):
        """Defaults used for each model family (AdamW for HMMs, Adam for PCFGs)."""
        if kind == "hmm":
            base = cls()
        elif kind == "pcfg":
            base = cls(optimizer="adam", lr=0.002, beta1=0.75, beta2=0.999, clip_norm=0.0)
        else:
            raise ValueError(f"unknown kind {kind!r}")
        return replace(base, **overrides)

    def to_dict(self):
        return asdict(self)


class Optimizer:
    """SGD or Adam with bias correction; ``adamw`` adds decoupled weight decay."""

    def __init__(self, config, params):
        self.config = config
        self.lr = config.lr
        self.t = 0
        self.m1 = {k: np.zeros_like(v) for k, v in params.scores.items()}
        self.m2 = {k: np.zeros_like(v) for k, v in params.scores.items()}

    def step(self, params, grad):
        cfg = self.config
        self.t += 1
        out = {}
        for k, x in params.scores.items():
            g = grad.scores[k]
            if cfg.optimizer == "sgd":
                out[k] = x - self.lr * g
                continue
            self.m1[k] = cfg.beta1 * self.m1[k] + (1 - cfg.beta1) * g
            self.m2[k] = cfg.beta2 * self.m2[k] + (1 - cfg.beta2) * g * g
            mhat = self.m1[k] / (1 - cfg.beta1**self.t)
            vhat = self.m2[k] / (1 - cfg.beta2**self.t)
            new = x - self.lr * mhat / (np.sqrt(vhat) + cfg.eps)
            if cfg.optimizer == "adamw" and cfg.weight_decay:
                new = new - self.lr * cfg.weight_decay * x
            out[k] = new
        return ScoreParams(params.kind, out)


def clip_by_global_norm(grad, max_norm):
    norm = np.sqrt(grad.dot(grad))
    if max_norm and norm > max_norm:
        return ScoreParams(grad.kind, {k: v * (max_norm / norm) for k, v in grad.scores.items()}), norm
    return grad, norm


def make_batches(corpus, batch_tokens, rng, bucket_batches=20):
    """Shuffle, sort by length within buckets, then pack up to ``batch_tokens`` tokens.

    Every batch holds at least one sentence; batch order is shuffled.
    """
    order = rng.permutation(len(corpus))
    lengths = np.array([len(s) for s in corpus])
    bucket = max(1, bucket_batches * max(1, batch_tokens // max(1, int(lengths.mean()))))
    batches = []
    for lo in range(0, len(order), bucket):
        chunk = order[lo : lo + bucket]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        cur, tokens = [], 0
        for idx in chunk:
            if cur and tokens + lengths[idx] > batch_tokens:
                batches.append(cur)
                cur, tokens = [], 0
            cur.append(int(idx))
            tokens += lengths[idx]
        if cur:
            batches.append(cur)
    return [batches[i] for i in rng.permutation(len(batches))]


@dataclass
class FitResult:
    trace: list = field(default_factory=list)  # dicts: epoch, train_nll, val_nll, lr
    params: ScoreParams = None
    steps: int = 0

    @property
    def model(self):
        return self.params.to_model()


def fit(params, train, val, config, callback=None):
    """Mini-batch training with per-epoch evaluation and learning-rate halving.

    Returns the parameters with the best validation NLL seen (the
    initialization counts as epoch 0). Deterministic for a fixed ``config.seed``.
    """
    if not train:
        raise ValueError("empty training corpus")
    if not val:
        raise ValueError("empty validation corpus")
    rng = np.random.default_rng(config.seed)
    opt = Optimizer(config, params)
    best_params = params.copy()
    best_val = corpus_nll(params, val)
    result = FitResult(
        trace=[{"epoch": 0, "train_nll": corpus_nll(params, train), "val_nll": best_val, "lr": opt.lr}]
    )
    stale = 0
    step = 0
    for epoch in range(1, config.epochs + 1):
        loss_sum, tok_sum = 0.0, 0
        for batch_idx in make_batches(train, config.batch_tokens, rng, config.bucket_batches):
            batch = [train[i] for i in batch_idx]
            loss, grad = loss_and_grad(params, batch)
            step += 1
            if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grad.scores.values()):
                raise TrainingDivergedError(step)
            grad, _ = clip_by_global_norm(grad, config.clip_norm)
            params = opt.step(params, grad)
            ntok = sum(len(s) for s in batch)
            loss_sum += loss * ntok
            tok_sum += ntok
        if epoch % config.eval_every:
            continue
        val_nll = corpus_nll(params, val)
        if not np.isfinite(val_nll):
            raise TrainingDivergedError(step, f"validation NLL not finite after step {step}")
        row = {"epoch": epoch, "train_nll": loss_sum / tok_sum, "val_nll": val_nll, "lr": opt.lr}
        result.trace.append(row)
        logger.info("epoch %d train %.4f val %.4f lr %.3g", epoch, row["train_nll"], val_nll, opt.lr)
        if callback is not None:
            callback(row, params)
        if val_nll < best_val:
            best_val, best_params, stale = val_nll, params.copy(), 0
        else:
            stale += 1
            if stale >= config.patience:
                opt.lr *= config.lr_decay
                stale = 0
    result.params = best_params
    result.steps = step
    return result


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["epoch", "train_nll", "val_nll", "lr"])
        writer.writeheader()
        for row in trace:
            writer.writerow({k: (repr(float(v)) if k != "epoch" else v) for k, v in row.items()})


# ---------------------------------------------------------------------------
# synthetic data


def _draw(cdf, u):
    return min(int(np.searchsorted(cdf, u * cdf[-1], side="right")), len(cdf) - 1)


def sample_corpus(model, num_sentences, max_len, seed, eos_id=1, max_retries=1000):
    """Ancestral samples from a CpdHMM, each ending in ``eos_id``.

    Walks start -> state -> rank -> (next state, word) until ``<eos>`` is
    emitted. Sentences that reach ``max_len`` without ``<eos>`` are discarded
    and redrawn.
    """
    if not np.isfinite(model.W[:, eos_id]).any():
        raise ValueError("eos is unreachable: no rank emits it")
    rng = np.random.default_rng(seed)
    start = np.cumsum(np.exp(model.start))
    U = np.cumsum(np.exp(model.U), axis=1)
    V = np.cumsum(np.exp(model.V), axis=1)
    W = np.cumsum(np.exp(model.W), axis=1)
    corpus = []
    for _ in range(num_sentences):
        for _attempt in range(max_retries):
            state = _draw(start, rng.random())
            sent = []
            while len(sent) < max_len:
                q = _draw(U[state], rng.random())
                w = _draw(W[q], rng.random())
                sent.append(w)
                if w == eos_id:
                    break
                state = _draw(V[q], rng.random())
            if sent[-1] == eos_id:
                corpus.append(np.array(sent, dtype=np.int64))
                break
        else:
            raise RuntimeError(f"eos not reached within max_len={max_len} after {max_retries} retries")
    return corpus
