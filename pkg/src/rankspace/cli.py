"""Command-line interface.

Exit codes: 0 success, 1 data error, 2 usage error.
"""
import argparse
import json
import logging
import os
import sys
import numpy as np

from . import bench, checks, scoring
from .corpus import CorpusError, build_vocab, preprocess, read_brackets, read_corpus
from .errors import TrainingDivergedError, ZeroProbabilityError
from .model_io import ModelFormatError, load_model, save_model
from .models import (
    CpdHMM,
    CpdPCFG,
    Vocab,
    compile_rank_pcfg,
    random_model,
    reconstruct_hmm,
    reconstruct_pcfg,
    uniform_hmm,
    validate,
)
from .pcfg import corpus_parse
from .train import TrainConfig, fit, init_params, write_trace_csv

logger = logging.getLogger("rankspace")

EXIT_DATA = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _parse_dims(text):
    dims = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, _, value = part.partition("=")
        if not value:
            raise UsageError(f"bad --dims entry {part!r}; expected key=value")
        dims[key.strip().replace("-", "_")] = int(value)
    return dims


def _read_vocab(path):
    with open(path, encoding="utf-8") as f:
        tokens = [line.strip() for line in f if line.strip()]
    for special in ("<unk>", "<eos>"):
        if special not in tokens:
            tokens.insert(0 if special == "<unk>" else 1, special)
    return Vocab(tokens)


def _dump_json(obj):
    return json.dumps(obj, sort_keys=False)


def _open_out(path):
    return open(path, "w", encoding="utf-8") if path and path != "-" else None


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args):
    dims = _parse_dims(args.dims) if args.dims else {}
    for key in ("m", "num_nt", "num_pt", "r", "o"):
        value = getattr(args, key)
        if value is not None:
            dims[key] = value
    kind = {"hmm": "cpd_hmm", "pcfg": "cpd_pcfg"}.get(args.kind, args.kind)
    family = "hmm" if kind.endswith("hmm") else "pcfg"
    needed = ("m", "r", "o") if family == "hmm" else ("num_nt", "num_pt", "r", "o")
    missing = [k for k in needed if k not in dims]
    if missing:
        raise UsageError(f"--kind {kind} needs dims {', '.join(missing)}")
    bad = [k for k in needed if dims[k] < 1]
    if bad or dims["o"] < 2:
        raise UsageError(f"dims must be >= 1 (o >= 2); got {dims}")
    vocab = _read_vocab(args.vocab) if args.vocab else Vocab.default(dims["o"])
    if len(vocab) != dims["o"]:
        raise UsageError(f"vocabulary has {len(vocab)} tokens but o={dims['o']}")
    if family == "hmm":
        model = (
            uniform_hmm(dims["m"], dims["r"], dims["o"])
            if args.uniform
            else random_model("hmm", m=dims["m"], r=dims["r"], o=dims["o"], seed=args.seed,
                              concentration=args.concentration)
        )
        if kind == "dense_hmm":
            model = reconstruct_hmm(model)
    else:
        if args.uniform:
            raise UsageError("--uniform is only available for HMMs")
        model = random_model("pcfg", num_nt=dims["num_nt"], num_pt=dims["num_pt"], r=dims["r"],
                             o=dims["o"], seed=args.seed, concentration=args.concentration)
        if kind == "dense_pcfg":
            model = reconstruct_pcfg(model)
    if args.out and args.out != "-":
        save_model(model, vocab, args.out)
    else:
        from .model_io import dumps_model

        sys.stdout.write(dumps_model(model, vocab))
    return 0


# ---------------------------------------------------------------------------
# score / parse


def _load_corpus(args, vocab, is_hmm, default_unk):
    use_unk = default_unk if args.unk is None else args.unk
    return read_corpus(
        args.corpus, vocab, append_eos=is_hmm, use_unk=use_unk,
        lowercase=args.lowercase, strip_punct=args.strip_punct,
    )


def cmd_score(args):
    model, vocab = load_model(args.model)
    is_hmm = "HMM" in type(model).__name__
    algo = args.algo or scoring.default_algorithm(model)
    if algo not in scoring.algorithms_for(model):
        raise UsageError(
            f"--algo {algo} is not compatible with a {type(model).__name__} model; "
            f"choose from {', '.join(scoring.algorithms_for(model))}"
        )
    corpus = _load_corpus(args, vocab, is_hmm, default_unk=is_hmm)
    if len(corpus) == 0:
        raise CorpusError("corpus contains no sentences")
    workers = args.workers or scoring.worker_count()
    try:
        rows, summary = scoring.score_corpus(model, corpus.sentences, algo, workers=workers)
    except ValueError as exc:
        raise CorpusError(str(exc)) from exc
    out = _open_out(args.out)
    stream = out or sys.stdout
    for row in rows:
        stream.write(_dump_json(row) + "\n")
    if out:
        out.close()
    sys.stdout.write(_dump_json({"summary": summary}) + "\n")
    return 0


def _marginal_lines(marginals):
    for idx, marg in enumerate(marginals):
        for (i, j), mu in marg.items():
            yield _dump_json({"sentence": idx, "i": i, "j": j, "mu": mu})


def cmd_parse(args):
    model, vocab = load_model(args.model)
    if not isinstance(model, CpdPCFG):
        raise UsageError(f"parse needs a cpd_pcfg model, got {type(model).__name__}")
    corpus = _load_corpus(args, vocab, is_hmm=False, default_unk=False)
    for seq, line in zip(corpus.sentences, corpus.line_numbers):
        if len(seq) < 2:
            raise CorpusError("sentences of length 1 cannot be parsed with binary rules", line)
    gold = read_brackets(args.gold) if args.gold else None
    if gold is not None and len(gold) != len(corpus):
        raise CorpusError(f"gold file has {len(gold)} trees but corpus has {len(corpus)} sentences")
    compiled = compile_rank_pcfg(model)
    try:
        trees, marginals, f1 = corpus_parse(compiled, corpus.sentences, gold)
    except (ZeroProbabilityError, ValueError) as exc:
        raise CorpusError(str(exc)) from exc
    out = _open_out(args.out)
    stream = out or sys.stdout
    for tree in trees:
        stream.write(tree.to_brackets() + "\n")
    if out:
        out.close()
    if args.marginals:
        with open(args.marginals, "w", encoding="utf-8") as f:
            for line in _marginal_lines(marginals):
                f.write(line + "\n")
    sys.stdout.write(_dump_json({"sentences": len(trees), "s_f1": f1}) + "\n")
    return 0


# ---------------------------------------------------------------------------
# train


def _build_vocab(path, lowercase, strip_punct, max_vocab):
    with open(path, encoding="utf-8") as f:
        lines = [preprocess(line.split(), lowercase, strip_punct) for line in f]
    return build_vocab(lines, max_vocab)


def _train_one(args, seed, out_dir, vocab, train, val, overrides):
    overrides = dict(overrides)
    overrides.setdefault("seed", seed)
    try:
        config = TrainConfig.for_kind(args.kind, **overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad training config: {exc}") from exc
    if args.kind == "hmm":
        params = init_params("hmm", m=args.m, r=args.r, o=len(vocab), seed=seed, scale=args.init_scale)
    else:
        params = init_params("pcfg", num_nt=args.num_nt, num_pt=args.num_pt, r=args.r, o=len(vocab),
                             seed=seed, scale=args.init_scale)
    os.makedirs(out_dir, exist_ok=True)
    save_model(params.to_model(), vocab, os.path.join(out_dir, "init.json"))
    result = fit(params, train, val, config)
    save_model(result.model, vocab, os.path.join(out_dir, "model.json"))
    with open(os.path.join(out_dir, "scores.json"), "w", encoding="utf-8") as f:
        json.dump(
            {"kind": args.kind, "config": config.to_dict(),
             "scores": {k: v.tolist() for k, v in result.params.scores.items()}},
            f,
        )
    write_trace_csv(result.trace, os.path.join(out_dir, "trace.csv"))
    return {
        "seed": seed, "epochs": result.trace[-1]["epoch"], "steps": result.steps,
        "best_val_ppl": float(np.exp(min(r["val_nll"] for r in result.trace))),
    }


def cmd_train(args):
    is_hmm = args.kind == "hmm"
    if is_hmm and args.m is None:
        raise UsageError("--m is required for --kind hmm")
    if not is_hmm and (args.num_nt is None or args.num_pt is None):
        raise UsageError("--num-nt and --num-pt are required for --kind pcfg")
    overrides = {}
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            overrides.update(json.load(f))
    for key in ("lr", "epochs", "batch_tokens"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    vocab = (
        _read_vocab(args.vocab)
        if args.vocab
        else _build_vocab(args.corpus, args.lowercase, args.strip_punct, args.max_vocab)
    )
    load = dict(append_eos=is_hmm, use_unk=True, lowercase=args.lowercase, strip_punct=args.strip_punct)
    train = read_corpus(args.corpus, vocab, **load).sentences
    val = read_corpus(args.val, vocab, **load).sentences
    if not is_hmm:
        train = [s for s in train if len(s) >= 2]
        val = [s for s in val if len(s) >= 2]
    if not train or not val:
        raise CorpusError("training and validation corpora must be non-empty")
    seeds = args.seed
    runs = []
    for seed in seeds:
        out_dir = args.out_dir if len(seeds) == 1 else os.path.join(args.out_dir, f"seed{seed}")
        runs.append(_train_one(args, seed, out_dir, vocab, train, val, overrides))
    for run in runs:
        sys.stdout.write(_dump_json(run) + "\n")
    if len(runs) > 1:
        mean = float(np.mean([r["best_val_ppl"] for r in runs]))
        sys.stdout.write(_dump_json({"seeds": seeds, "mean_best_val_ppl": mean}) + "\n")
    return 0


# ---------------------------------------------------------------------------
# oracle-check / bench


def cmd_oracle_check(args):
    if args.cases < 0:
        raise UsageError("--cases must be >= 0")
    results = checks.run_checks(args.kind, args.cases, args.seed, tol=args.tol, corrupt=args.corrupt)
    for res in results:
        sys.stdout.write(res.line() + "\n")
        for v in res.violations:
            sys.stdout.write(f"  mismatch: {v}\n")
    failed = sum(not r.passed for r in results)
    sys.stdout.write(f"{len(results) - failed}/{len(results)} cases passed\n")
    return EXIT_DATA if failed else 0


def cmd_bench(args):
    with open(args.spec, encoding="utf-8") as f:
        spec = json.load(f)
    workers = args.workers or scoring.worker_count()
    try:
        report = bench.run_grid(spec, seed=args.seed, workers=workers)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"bad bench spec: {exc}") from exc
    text = report.to_csv()
    if args.out and args.out != "-":
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    if args.table:
        sys.stderr.write(report.table() + "\n")
    return 0


# ---------------------------------------------------------------------------


def _add_corpus_flags(p, unk_help):
    p.add_argument("--corpus", required=True, help="one sentence per line, whitespace-separated")
    p.add_argument("--unk", dest="unk", action="store_true", default=None, help=unk_help)
    p.add_argument("--no-unk", dest="unk", action="store_false")
    p.add_argument("--lowercase", action="store_true")
    p.add_argument("--strip-punct", action="store_true", help="drop punctuation-only tokens")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rankspace", description="Low-rank and rank-space inference for HMMs and PCFGs."
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a random model file")
    p.add_argument("--kind", required=True,
                   choices=["cpd_hmm", "cpd_pcfg", "dense_hmm", "dense_pcfg", "hmm", "pcfg"])
    p.add_argument("--dims", help="comma list such as m=4,r=2,o=8")
    p.add_argument("--m", type=int)
    p.add_argument("--num-nt", type=int)
    p.add_argument("--num-pt", type=int)
    p.add_argument("--r", type=int)
    p.add_argument("--o", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--concentration", type=float, default=1.0)
    p.add_argument("--uniform", action="store_true", help="uniform HMM instead of random rows")
    p.add_argument("--vocab", help="token list file; <unk>/<eos> are added if missing")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("score", help="per-sentence log Z and perplexity")
    p.add_argument("--model", required=True)
    _add_corpus_flags(p, "map OOV tokens to <unk> (default: on for HMMs, off for PCFGs)")
    p.add_argument("--algo", choices=["dense", "lowrank", "td", "lpcfg", "rank"])
    p.add_argument("--out", help="per-sentence JSONL destination (default stdout)")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("parse", help="MBR parse with rank-space span marginals")
    p.add_argument("--model", required=True)
    _add_corpus_flags(p, "map OOV tokens to <unk> (default off)")
    p.add_argument("--gold", help="gold bracket file for sentence-level F1")
    p.add_argument("--out", help="bracket output (default stdout)")
    p.add_argument("--marginals", help="write span marginals as JSONL")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("train", help="fit a CPD model by gradient descent")
    p.add_argument("--kind", required=True, choices=["hmm", "pcfg"])
    p.add_argument("--corpus", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--config", help="JSON file of TrainConfig overrides")
    p.add_argument("--m", type=int)
    p.add_argument("--num-nt", type=int)
    p.add_argument("--num-pt", type=int)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--vocab")
    p.add_argument("--max-vocab", type=int, default=10000)
    p.add_argument("--lowercase", action="store_true")
    p.add_argument("--strip-punct", action="store_true")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-tokens", type=int)
    p.add_argument("--init-scale", type=float, default=1.0)
    p.add_argument("--seed", type=int, nargs="+", default=[0],
                   help="one or more seeds; several seeds train into seed<N>/ subdirectories")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("oracle-check", help="compare every algorithm with brute force")
    p.add_argument("--kind", choices=["hmm", "pcfg", "all"], default="all")
    p.add_argument("--cases", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--corrupt", action="store_true",
                   help="break one row of the model fed to the fast routes")
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("bench", help="timing grid with log-log slope fits")
    p.add_argument("--spec", required=True, help="JSON grid spec")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="CSV destination (default stdout)")
    p.add_argument("--table", action="store_true", help="print a readable table to stderr")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (CorpusError, ModelFormatError, ZeroProbabilityError, TrainingDivergedError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA
    except FileNotFoundError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
