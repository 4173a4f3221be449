import csv
import math

import numpy as np
import pytest

import rankspace.train as train_mod
from rankspace.errors import TrainingDivergedError, ZeroProbabilityError
from rankspace.models import CpdHMM, compile_rank_hmm, random_model
from rankspace.train import (
    ScoreParams,
    TrainConfig,
    clip_by_global_norm,
    corpus_nll,
    fit,
    init_params,
    loss_and_grad,
    make_batches,
    sample_corpus,
    write_trace_csv,
)


def random_direction(params, rng):
    d = ScoreParams(params.kind, {k: rng.standard_normal(v.shape) for k, v in params.scores.items()})
    return d.axpy(1.0 / math.sqrt(d.dot(d)) - 1.0, d)


def fd_relative_error(params, batch, rng, h=1e-4):
    d = random_direction(params, rng)
    _, grad = loss_and_grad(params, batch)
    analytic = grad.dot(d)
    plus, _ = loss_and_grad(params.axpy(h, d), batch)
    minus, _ = loss_and_grad(params.axpy(-h, d), batch)
    numeric = (plus - minus) / (2 * h)
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_hmm_gradient_finite_difference(seed):
    rng = np.random.default_rng(seed)
    params = init_params("hmm", m=4, r=3, o=5, seed=seed)
    batch = [rng.integers(0, 5, size=k) for k in (1, 4, 7)]
    assert fd_relative_error(params, batch, rng) <= 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_pcfg_gradient_finite_difference(seed):
    rng = np.random.default_rng(seed)
    params = init_params("pcfg", num_nt=2, num_pt=3, r=3, o=4, seed=seed)
    batch = [rng.integers(0, 4, size=k) for k in (2, 3, 6)]
    assert fd_relative_error(params, batch, rng) <= 1e-4


@pytest.mark.parametrize("kind", ["hmm", "pcfg"])
def test_gradient_sums_to_zero_on_softmax_axis(kind):
    dims = dict(m=3) if kind == "hmm" else dict(num_nt=2, num_pt=2)
    params = init_params(kind, r=2, o=4, seed=1, **dims)
    _, grad = loss_and_grad(params, [np.array([0, 1, 3]), np.array([2, 2])])
    for v in grad.scores.values():
        np.testing.assert_allclose(v.sum(axis=-1), 0.0, atol=1e-14)


@pytest.mark.parametrize("kind", ["hmm", "pcfg"])
def test_gauge_invariance(kind):
    dims = dict(m=3) if kind == "hmm" else dict(num_nt=2, num_pt=2)
    params = init_params(kind, r=2, o=4, seed=3, **dims)
    batch = [np.array([0, 1, 3]), np.array([2, 2, 1, 0])]
    base, _ = loss_and_grad(params, batch)
    for group in params.groups:
        shifted = params.copy()
        s = shifted.scores[group]
        if s.ndim == 1:
            s += 5.0
        else:
            s[0] += -3.25
        assert abs(loss_and_grad(shifted, batch)[0] - base) <= 1e-12


def test_uniform_point_start_gradient_is_zero():
    params = ScoreParams("hmm", {"start": np.zeros(3), "U": np.zeros((3, 2)),
                                 "V": np.zeros((2, 3)), "W": np.zeros((2, 4))})
    _, grad = loss_and_grad(params, [np.array([0, 3, 1])])
    np.testing.assert_allclose(grad.scores["start"], 0.0, atol=1e-15)


def test_zero_probability_sentence_named():
    model = random_model("hmm", m=2, r=2, o=3, seed=0)
    W = np.array(model.W)
    W[:, 2] = -np.inf
    params = ScoreParams.from_model(CpdHMM(model.start, model.U, model.V, W))
    with pytest.raises(ZeroProbabilityError, match="sentence 1"):
        loss_and_grad(params, [np.array([0, 1]), np.array([2, 1])])


def test_empty_batch():
    with pytest.raises(ValueError):
        loss_and_grad(init_params("hmm", m=2, r=1, o=2, seed=0), [])


def test_loss_matches_corpus_nll():
    params = init_params("pcfg", num_nt=2, num_pt=2, r=3, o=4, seed=2)
    batch = [np.array([0, 1, 2]), np.array([3, 3, 3, 0])]
    assert loss_and_grad(params, batch)[0] == pytest.approx(corpus_nll(params, batch), abs=1e-14)


# -- optimization ----------------------------------------------------------


def test_config_defaults_per_kind():
    h = TrainConfig.for_kind("hmm")
    assert (h.optimizer, h.lr, h.beta1, h.beta2, h.clip_norm, h.epochs, h.batch_tokens, h.lr_decay) == (
        "adamw", 0.001, 0.99, 0.999, 5.0, 30, 256, 0.5)
    p = TrainConfig.for_kind("pcfg")
    assert (p.optimizer, p.lr, p.beta1, p.beta2) == ("adam", 0.002, 0.75, 0.999)
    assert TrainConfig.for_kind("hmm", lr=0.1).lr == 0.1


@pytest.mark.parametrize("bad", [dict(lr=-1.0), dict(beta1=1.0), dict(batch_tokens=0),
                                 dict(optimizer="rmsprop"), dict(epochs=-1)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_clip_by_global_norm():
    g = ScoreParams("hmm", {"start": np.array([3.0]), "U": np.array([[4.0]]),
                            "V": np.zeros((1, 1)), "W": np.zeros((1, 2))})
    clipped, norm = clip_by_global_norm(g, 1.0)
    assert norm == pytest.approx(5.0)
    assert math.sqrt(clipped.dot(clipped)) == pytest.approx(1.0)
    same, _ = clip_by_global_norm(g, 0.0)
    assert same is g


def test_make_batches_cover_and_respect_limit():
    rng = np.random.default_rng(0)
    corpus = [np.zeros(k, dtype=int) for k in rng.integers(1, 30, size=200)]
    batches = make_batches(corpus, 64, np.random.default_rng(1))
    flat = sorted(i for b in batches for i in b)
    assert flat == list(range(200))
    for b in batches:
        assert len(b) == 1 or sum(len(corpus[i]) for i in b) <= 64
    again = make_batches(corpus, 64, np.random.default_rng(1))
    assert batches == again


def test_zero_lr_keeps_init():
    corpus = sample_corpus(random_model("hmm", m=2, r=2, o=4, seed=0), 30, 50, seed=0)
    params = init_params("hmm", m=2, r=2, o=4, seed=1)
    cfg = TrainConfig.for_kind("hmm", lr=0.0, epochs=3, optimizer="sgd")
    res = fit(params, corpus[:20], corpus[20:], cfg)
    assert len({row["val_nll"] for row in res.trace}) == 1
    assert len({row["train_nll"] for row in res.trace[1:]}) == 1
    for k in params.groups:
        np.testing.assert_array_equal(res.params.scores[k], params.scores[k])


def test_single_sentence_converges_to_unigram_entropy():
    sent = [np.array([0, 1])]
    params = init_params("hmm", m=1, r=1, o=2, seed=0)
    cfg = TrainConfig.for_kind("hmm", optimizer="adam", lr=0.1, beta1=0.9, epochs=300, patience=1000)
    res = fit(params, sent, sent, cfg)
    assert res.trace[-1]["val_nll"] == pytest.approx(math.log(2), abs=1e-3)


def test_sgd_overfit_is_monotone():
    sent = [np.array([2, 0, 3, 3, 1])]
    params = init_params("hmm", m=3, r=2, o=4, seed=5)
    opt = train_mod.Optimizer(TrainConfig(optimizer="sgd", lr=1e-2), params)
    losses = []
    for _ in range(50):
        loss, grad = loss_and_grad(params, sent)
        losses.append(loss)
        params = opt.step(params, grad)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_fit_is_deterministic_and_returns_best():
    gen = random_model("hmm", m=3, r=2, o=6, seed=2)
    corpus = sample_corpus(gen, 60, 50, seed=0)
    cfg = TrainConfig.for_kind("hmm", lr=0.05, epochs=4)
    a = fit(init_params("hmm", m=3, r=2, o=6, seed=0), corpus[:50], corpus[50:], cfg)
    b = fit(init_params("hmm", m=3, r=2, o=6, seed=0), corpus[:50], corpus[50:], cfg)
    assert a.trace == b.trace
    best = min(row["val_nll"] for row in a.trace)
    assert corpus_nll(a.params, corpus[50:]) == pytest.approx(best, abs=1e-12)


def test_divergence_reports_step(monkeypatch):
    real = train_mod.loss_and_grad
    calls = {"n": 0}

    def flaky(params, batch):
        calls["n"] += 1
        loss, grad = real(params, batch)
        return (float("nan") if calls["n"] == 3 else loss), grad

    monkeypatch.setattr(train_mod, "loss_and_grad", flaky)
    corpus = [np.array([0, 1])] * 10
    cfg = TrainConfig.for_kind("hmm", batch_tokens=2, epochs=2)
    with pytest.raises(TrainingDivergedError) as info:
        fit(init_params("hmm", m=1, r=1, o=2, seed=0), corpus, corpus, cfg)
    assert info.value.step == 3


def test_trace_csv(tmp_path):
    trace = [{"epoch": 0, "train_nll": 1.5, "val_nll": 1.25, "lr": 0.001}]
    path = tmp_path / "trace.csv"
    write_trace_csv(trace, path)
    rows = list(csv.DictReader(open(path)))
    assert rows == [{"epoch": "0", "train_nll": "1.5", "val_nll": "1.25", "lr": "0.001"}]


# -- sampling --------------------------------------------------------------


def test_sample_all_eos():
    model = random_model("hmm", m=2, r=3, o=4, seed=0)
    W = np.full((3, 4), -np.inf)
    W[:, 1] = 0.0
    corpus = sample_corpus(CpdHMM(model.start, model.U, model.V, W), 10, 5, seed=0)
    assert all(list(s) == [1] for s in corpus)


def test_sample_deterministic():
    model = random_model("hmm", m=3, r=2, o=5, seed=1)
    a = sample_corpus(model, 50, 40, seed=9)
    b = sample_corpus(model, 50, 40, seed=9)
    assert b"".join(s.tobytes() for s in a) == b"".join(s.tobytes() for s in b)


def test_sample_eos_unreachable():
    model = random_model("hmm", m=2, r=2, o=3, seed=0)
    W = np.array(model.W)
    W[:, 1] = -np.inf
    with pytest.raises(ValueError):
        sample_corpus(CpdHMM(model.start, model.U, model.V, W), 1, 5, seed=0)


def test_sample_unigrams_match_exact_marginals():
    model = random_model("hmm", m=4, r=3, o=6, seed=8)
    rh = compile_rank_hmm(model)
    W = np.exp(rh.W)
    cont = (1.0 - W[:, 1])[:, None] * np.exp(rh.A_r)
    visits = np.exp(rh.pi_r) @ np.linalg.inv(np.eye(3) - cont)
    exact = visits @ W / visits.sum()

    corpus = []
    seed = 0
    while sum(len(s) for s in corpus) < 100_000:
        corpus += sample_corpus(model, 2000, 10_000, seed=seed)
        seed += 1
    lengths = np.array([len(s) for s in corpus], dtype=float)
    counts = np.array([np.bincount(s, minlength=6) for s in corpus], dtype=float)
    freq = counts.sum(axis=0) / lengths.sum()
    # ratio-estimator standard error clustered by sentence
    resid = counts - freq[None, :] * lengths[:, None]
    k = len(corpus)
    se = np.sqrt((resid**2).sum(axis=0) * k / (k - 1)) / lengths.sum()
    assert np.all(np.abs(freq - exact) <= 3 * se)
