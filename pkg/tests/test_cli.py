import json
import subprocess
import sys
import time

import numpy as np
import pytest

from rankspace.cli import main
from rankspace.corpus import write_id_corpus
from rankspace.model_io import load_model
from rankspace.models import Vocab, random_model, validate
from rankspace.train import TrainConfig, sample_corpus


def run(argv, capsys):
    try:
        code = main([str(a) for a in argv])
    except SystemExit as exc:
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def hmm_file(tmp_path, capsys):
    path = tmp_path / "hmm.json"
    assert run(["gen", "--kind", "cpd_hmm", "--m", 4, "--r", 2, "--o", 8, "--seed", 1, "--out", path], capsys)[0] == 0
    return path


@pytest.fixture
def pcfg_file(tmp_path, capsys):
    path = tmp_path / "pcfg.json"
    args = ["gen", "--kind", "cpd_pcfg", "--dims", "num_nt=2,num_pt=3,r=3,o=8", "--seed", 2, "--out", path]
    assert run(args, capsys)[0] == 0
    return path


@pytest.fixture
def corpus_file(tmp_path):
    path = tmp_path / "corpus.txt"
    path.write_text("w0 w1 w2\nw3 w4\n\nw5 w1 w2 w3 w0\n")
    return path


def test_gen_writes_valid_model(hmm_file):
    model, vocab = load_model(hmm_file)
    assert validate(model) == []
    assert (model.m, model.r, model.o, len(vocab)) == (4, 2, 8, 8)


def test_gen_is_deterministic(tmp_path, capsys):
    outs = []
    for name in ("a.json", "b.json"):
        run(["gen", "--kind", "cpd_pcfg", "--num-nt", 2, "--num-pt", 2, "--r", 2, "--o", 5,
             "--seed", 4, "--out", tmp_path / name], capsys)
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]


@pytest.mark.parametrize(
    "args",
    [
        ["--kind", "cpd_hmm", "--m", 4, "--r", 0, "--o", 8],
        ["--kind", "cpd_hmm", "--m", 4, "--o", 8],
        ["--kind", "cpd_pcfg", "--num-nt", 2, "--r", 2, "--o", 8],
        ["--kind", "cpd_hmm", "--dims", "m=4,r", "--o", 8],
        ["--kind", "cpd_pcfg", "--num-nt", 1, "--num-pt", 1, "--r", 1, "--o", 4, "--uniform"],
    ],
)
def test_gen_bad_dims_is_usage_error(args, tmp_path, capsys):
    assert run(["gen", *args, "--out", tmp_path / "x.json"], capsys)[0] == 2


def test_score_uniform_ppl(tmp_path, capsys):
    model = tmp_path / "u.json"
    run(["gen", "--kind", "cpd_hmm", "--m", 3, "--r", 2, "--o", 10, "--uniform", "--out", model], capsys)
    corpus = tmp_path / "c.txt"
    corpus.write_text("w0 w1 w2\nw7\nw3 w3 w3 w3\n")
    code, out, _ = run(["score", "--model", model, "--corpus", corpus], capsys)
    assert code == 0
    lines = [json.loads(x) for x in out.splitlines()]
    assert [r["n_tokens"] for r in lines[:-1]] == [4, 2, 5]
    assert lines[-1]["summary"]["ppl"] == pytest.approx(10.0, abs=1e-9)


def test_score_dense_vs_rank(hmm_file, corpus_file, tmp_path, capsys):
    rows = {}
    for algo in ("dense", "lowrank", "rank"):
        out = tmp_path / f"{algo}.jsonl"
        assert run(["score", "--model", hmm_file, "--corpus", corpus_file, "--algo", algo, "--out", out], capsys)[0] == 0
        rows[algo] = [json.loads(x) for x in out.read_text().splitlines()]
    assert len(rows["rank"]) == 3
    for a, b in zip(rows["dense"], rows["rank"]):
        assert a["index"] == b["index"]
        assert abs(a["logZ"] - b["logZ"]) <= 1e-10


def test_score_oov_without_unk(hmm_file, tmp_path, capsys):
    corpus = tmp_path / "c.txt"
    corpus.write_text("w0 w1\nw2 zebra\n")
    code, _, err = run(["score", "--model", hmm_file, "--corpus", corpus, "--no-unk"], capsys)
    assert code == 1
    assert "line 2" in err
    assert run(["score", "--model", hmm_file, "--corpus", corpus], capsys)[0] == 0


def test_score_incompatible_algo(hmm_file, corpus_file, capsys):
    assert run(["score", "--model", hmm_file, "--corpus", corpus_file, "--algo", "td"], capsys)[0] == 2


def test_score_pcfg_defaults_to_no_unk(pcfg_file, tmp_path, capsys):
    corpus = tmp_path / "c.txt"
    corpus.write_text("w0 w1\nw2 zebra\n")
    assert run(["score", "--model", pcfg_file, "--corpus", corpus], capsys)[0] == 1
    assert run(["score", "--model", pcfg_file, "--corpus", corpus, "--unk"], capsys)[0] == 0


def test_missing_or_bad_model_is_data_error(tmp_path, corpus_file, capsys):
    assert run(["score", "--model", tmp_path / "nope.json", "--corpus", corpus_file], capsys)[0] == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    assert run(["score", "--model", bad, "--corpus", corpus_file], capsys)[0] == 1


def test_parse_two_token_sentence(pcfg_file, tmp_path, capsys):
    corpus = tmp_path / "c.txt"
    corpus.write_text("w0 w4\n")
    code, out, _ = run(["parse", "--model", pcfg_file, "--corpus", corpus], capsys)
    assert code == 0
    assert out.splitlines()[0] == "(0 1)"
    assert json.loads(out.splitlines()[-1]) == {"sentences": 1, "s_f1": None}


def test_parse_gold_and_marginals(pcfg_file, corpus_file, tmp_path, capsys):
    pred = tmp_path / "pred.txt"
    margs = tmp_path / "m.jsonl"
    code, out, _ = run(["parse", "--model", pcfg_file, "--corpus", corpus_file, "--out", pred,
                        "--marginals", margs], capsys)
    assert code == 0
    code, out, _ = run(["parse", "--model", pcfg_file, "--corpus", corpus_file, "--gold", pred], capsys)
    assert json.loads(out.splitlines()[-1])["s_f1"] == 100.0
    rows = [json.loads(x) for x in margs.read_text().splitlines()]
    assert set(rows[0]) == {"sentence", "i", "j", "mu"}
    # n = 3, 2, 5 -> 3 + 1 + 10 spans of width >= 2
    assert len(rows) == 14


def test_parse_gold_length_mismatch(pcfg_file, corpus_file, tmp_path, capsys):
    gold = tmp_path / "gold.txt"
    gold.write_text("((0 1) 2)\n")
    assert run(["parse", "--model", pcfg_file, "--corpus", corpus_file, "--gold", gold], capsys)[0] == 1
    gold.write_text("((0 1) 2)\n(0 1)\n(0 1)\n")
    assert run(["parse", "--model", pcfg_file, "--corpus", corpus_file, "--gold", gold], capsys)[0] == 1


def test_parse_rejects_length_one_and_hmm(pcfg_file, hmm_file, tmp_path, capsys):
    corpus = tmp_path / "c.txt"
    corpus.write_text("w0 w1\nw2\n")
    code, _, err = run(["parse", "--model", pcfg_file, "--corpus", corpus], capsys)
    assert code == 1 and "line 2" in err
    assert run(["parse", "--model", hmm_file, "--corpus", corpus], capsys)[0] == 2


def test_parse_deterministic_synthetic(pcfg_file, tmp_path, capsys):
    rng = np.random.default_rng(0)
    lines = [" ".join(f"w{w}" for w in rng.integers(0, 6, size=rng.integers(2, 9))) for _ in range(20)]
    corpus = tmp_path / "c.txt"
    corpus.write_text("\n".join(lines) + "\n")
    outs = []
    for name in ("a.txt", "b.txt"):
        run(["parse", "--model", pcfg_file, "--corpus", corpus, "--out", tmp_path / name], capsys)
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]
    assert len(outs[0].splitlines()) == 20


# -- train -----------------------------------------------------------------


@pytest.fixture
def train_files(tmp_path):
    vocab = Vocab.default(10)
    corpus = sample_corpus(random_model("hmm", m=3, r=2, o=10, seed=1), 80, 30, seed=0)
    corpus = [s for s in corpus if len(s) > 1]
    write_id_corpus(corpus[:60], vocab, tmp_path / "train.txt")
    write_id_corpus(corpus[60:], vocab, tmp_path / "val.txt")
    return tmp_path / "train.txt", tmp_path / "val.txt"


@pytest.mark.parametrize("kind", ["hmm", "pcfg"])
def test_train_defaults_and_outputs(kind, train_files, tmp_path, capsys):
    tr, va = train_files
    dims = ["--m", 3] if kind == "hmm" else ["--num-nt", 2, "--num-pt", 2]
    out_dir = tmp_path / kind
    code, out, _ = run(["train", "--kind", kind, "--corpus", tr, "--val", va, "--r", 2, *dims,
                        "--epochs", 1, "--out-dir", out_dir], capsys)
    assert code == 0
    assert {p.name for p in out_dir.iterdir()} == {"init.json", "model.json", "scores.json", "trace.csv"}
    sidecar = json.loads((out_dir / "scores.json").read_text())
    assert sidecar["config"] == TrainConfig.for_kind(kind, epochs=1).to_dict()
    model, _ = load_model(out_dir / "model.json")
    assert validate(model) == []
    assert json.loads(out.splitlines()[0])["epochs"] == 1


def test_train_zero_lr_keeps_init(train_files, tmp_path, capsys):
    tr, va = train_files
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lr": 0.0, "epochs": 2}))
    out_dir = tmp_path / "zero"
    assert run(["train", "--kind", "hmm", "--corpus", tr, "--val", va, "--m", 3, "--r", 2,
                "--config", cfg, "--out-dir", out_dir], capsys)[0] == 0
    init = json.loads((out_dir / "init.json").read_text())["params"]
    final = json.loads((out_dir / "model.json").read_text())["params"]
    assert init == final


def test_train_seed_list(train_files, tmp_path, capsys):
    tr, va = train_files
    out_dir = tmp_path / "multi"
    code, out, _ = run(["train", "--kind", "hmm", "--corpus", tr, "--val", va, "--m", 2, "--r", 2,
                        "--epochs", 1, "--seed", 1, 2, "--out-dir", out_dir], capsys)
    assert code == 0
    assert {p.name for p in out_dir.iterdir()} == {"seed1", "seed2"}
    assert "mean_best_val_ppl" in json.loads(out.splitlines()[-1])


@pytest.mark.parametrize(
    "args",
    [
        ["--kind", "hmm", "--m", 2, "--r", 2],  # no --val
        ["--kind", "hmm", "--r", 2, "--val", "VAL"],  # no --m
        ["--kind", "pcfg", "--num-nt", 2, "--r", 2, "--val", "VAL"],
    ],
)
def test_train_usage_errors(args, train_files, tmp_path, capsys):
    tr, va = train_files
    args = [va if a == "VAL" else a for a in args]
    assert run(["train", "--corpus", tr, *args, "--out-dir", tmp_path / "o"], capsys)[0] == 2


def test_train_bad_config_is_usage_error(train_files, tmp_path, capsys):
    tr, va = train_files
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"learning_rate": 0.1}))
    assert run(["train", "--kind", "hmm", "--corpus", tr, "--val", va, "--m", 2, "--r", 2,
                "--config", cfg, "--out-dir", tmp_path / "o"], capsys)[0] == 2


# -- oracle-check / bench --------------------------------------------------


def test_oracle_check_default_budget(capsys):
    t0 = time.perf_counter()
    code, out, _ = run(["oracle-check", "--seed", 0], capsys)
    assert time.perf_counter() - t0 < 60
    assert code == 0
    assert out.splitlines()[-1] == "40/40 cases passed"
    assert all("max_abs_log_diff=" in line for line in out.splitlines()[:-1])


def test_oracle_check_corrupt(capsys):
    code, out, _ = run(["oracle-check", "--kind", "hmm", "--cases", 3, "--corrupt"], capsys)
    assert code == 1
    assert "FAIL" in out and "mismatch: U row 0" in out


def test_oracle_check_zero_cases(capsys):
    code, out, _ = run(["oracle-check", "--cases", 0], capsys)
    assert code == 0 and out.strip() == "0/0 cases passed"


def test_bench_command(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"repetitions": 5, "experiments": [
        {"algorithm": "rank_inside", "vary": "r", "values": [2, 4], "fixed": {"n": 4, "m": 6, "o": 5}}]}))
    out_csv = tmp_path / "bench.csv"
    code, _, err = run(["bench", "--spec", spec, "--out", out_csv, "--table"], capsys)
    assert code == 0
    assert out_csv.read_text().startswith("mode,algorithm,")
    assert "slope rank_inside vs r" in err
    spec.write_text(json.dumps({"repetitions": 2, "experiments": []}))
    assert run(["bench", "--spec", spec], capsys)[0] == 2


def test_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "rankspace.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "oracle-check" in res.stdout
    res = subprocess.run([sys.executable, "-m", "rankspace.cli", "frobnicate"], capture_output=True, text=True)
    assert res.returncode == 2
