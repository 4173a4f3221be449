"""Wall-clock grids and log-log scaling fits for the inference kernels.

A grid spec is a dict (or JSON file) like::

    {"seed": 0, "repetitions": 5, "warmup": 1, "budget_seconds": 600,
     "experiments": [
        {"algorithm": "rank_forward", "vary": "r", "values": [256, 512, 1024],
         "fixed": {"n": 64, "o": 1024}}]}

Model preparation (reconstruction, compilation) happens outside the timed
region; compilation is reported as its own one-time row.
"""
import csv
import io
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import hmm, pcfg
from .models import (
    compile_rank_hmm,
    compile_rank_pcfg,
    cpd_to_lpcfg,
    random_model,
    reconstruct_hmm,
    reconstruct_pcfg,
)

HMM_ALGOS = ("dense_forward", "lowrank_forward", "rank_forward")
PCFG_ALGOS = ("dense_inside", "td_inside", "lpcfg_inside", "rank_inside")
AXES = ("n", "m", "r", "o")
DEFAULTS = {"n": 32, "m": 64, "r": 16, "o": 64}

COLUMNS = [
    "mode", "algorithm", "n", "m", "num_nt", "num_pt", "r", "o",
    "repetitions", "median_s", "mad_s",
]


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)
    slopes: list = field(default_factory=list)  # dicts: algorithm, axis, slope, points
    incomplete: bool = False

    def slope(self, algorithm, axis):
        for s in self.slopes:
            if s["algorithm"] == algorithm and s["axis"] == axis:
                return s["slope"]
        return None

    def median(self, algorithm, **dims):
        for row in self.rows:
            if row["algorithm"] == algorithm and row["mode"] == "latency" and all(
                row[k] == v for k, v in dims.items()
            ):
                return row["median_s"]
        return None

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: row.get(k, "") for k in COLUMNS})
        buf.write("\n")
        slope_writer = csv.DictWriter(
            buf, fieldnames=["algorithm", "axis", "slope", "points"], lineterminator="\n"
        )
        slope_writer.writeheader()
        for s in self.slopes:
            slope_writer.writerow(s)
        if self.incomplete:
            buf.write("# incomplete: time budget exceeded\n")
        return buf.getvalue()

    def table(self):
        lines = [
            f"{'mode':<10} {'algorithm':<16} {'n':>5} {'m':>6} {'r':>5} {'o':>6} "
            f"{'median ms':>11} {'mad ms':>9}"
        ]
        for row in self.rows:
            lines.append(
                f"{row['mode']:<10} {row['algorithm']:<16} {row['n']:>5} {row['m']:>6} {row['r']:>5} {row['o']:>6} "
                f"{1e3 * row['median_s']:>11.3f} {1e3 * row['mad_s']:>9.3f}"
            )
        for s in self.slopes:
            lines.append(f"slope {s['algorithm']} vs {s['axis']}: {s['slope']:.3f}")
        if self.incomplete:
            lines.append("INCOMPLETE: time budget exceeded")
        return "\n".join(lines)


def pcfg_split(m):
    """Nonterminal/preterminal counts at the 1:2 ratio."""
    num_nt = max(1, m // 3)
    return num_nt, max(1, m - num_nt)


def prepare(algorithm, dims, seed):
    """Build the model a kernel consumes plus a random sentence of length n.

    Returns ``(run, compile_seconds)`` where ``run()`` executes one inference.
    """
    n, m, r, o = (int(dims[k]) for k in AXES)
    rng = np.random.default_rng(seed)
    seq = rng.integers(0, o, size=n)
    compile_s = None
    if algorithm in HMM_ALGOS:
        model = random_model("hmm", m=m, r=r, o=o, seed=seed)
        if algorithm == "dense_forward":
            dense = reconstruct_hmm(model)
            dense.T_by_word
            return (lambda: hmm.dense_forward(dense, seq)), None
        if algorithm == "lowrank_forward":
            model.expU, model.expV
            return (lambda: hmm.lowrank_forward(model, seq)), None
        t0 = time.perf_counter()
        compiled = compile_rank_hmm(model)
        compiled.expA
        compile_s = time.perf_counter() - t0
        return (lambda: hmm.rank_forward(compiled, seq)), compile_s
    if algorithm in PCFG_ALGOS:
        num_nt, num_pt = pcfg_split(m)
        model = random_model("pcfg", num_nt=num_nt, num_pt=num_pt, r=r, o=o, seed=seed)
        if algorithm == "dense_inside":
            dense = reconstruct_pcfg(model)
            dense.exp_binary
            return (lambda: pcfg.dense_inside(dense, seq)), None
        if algorithm == "td_inside":
            model.expU, model.expV_nt, model.expW_nt
            return (lambda: pcfg.td_inside(model, seq)), None
        if algorithm == "lpcfg_inside":
            view = cpd_to_lpcfg(model)
            view.expU, view.expVprime
            return (lambda: pcfg.lpcfg_inside(view, model.E, model.start, seq)), None
        t0 = time.perf_counter()
        compiled = compile_rank_pcfg(model)
        compiled.expH, compiled.expI
        compile_s = time.perf_counter() - t0
        return (lambda: pcfg.rank_inside(compiled, seq)), compile_s
    raise ValueError(f"unknown algorithm {algorithm!r}")


def _time(run, repetitions, warmup):
    for _ in range(warmup):
        run()
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        run()
        times.append(time.perf_counter() - t0)
    med = statistics.median(times)
    mad = statistics.median(abs(t - med) for t in times)
    return med, mad


def _throughput_job(args):
    algorithm, dims, seed, count = args
    run, _ = prepare(algorithm, dims, seed)
    for _ in range(count):
        run()
    return count


def fit_slope(xs, ys):
    """Least-squares slope of log(y) against log(x)."""
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def _row(mode, algorithm, dims, reps, med, mad):
    num_nt, num_pt = pcfg_split(dims["m"]) if algorithm in PCFG_ALGOS else ("", "")
    return {
        "mode": mode, "algorithm": algorithm, "n": dims["n"], "m": dims["m"],
        "num_nt": num_nt, "num_pt": num_pt, "r": dims["r"], "o": dims["o"],
        "repetitions": reps, "median_s": med, "mad_s": mad,
    }


def run_grid(spec, seed=None, workers=1):
    """Time every cell of every experiment and fit one slope per experiment.

    A slope is reported only when the fastest median exceeds four times the
    timer resolution. When ``budget_seconds`` runs out the report is returned
    early with ``incomplete`` set.
    """
    seed = spec.get("seed", 0) if seed is None else seed
    reps = int(spec.get("repetitions", 5))
    warmup = int(spec.get("warmup", 1))
    if reps < 5:
        raise ValueError("repetitions must be >= 5")
    budget = float(spec.get("budget_seconds", float("inf")))
    resolution = time.get_clock_info("perf_counter").resolution
    report = BenchReport()
    began = time.perf_counter()
    for exp in spec["experiments"]:
        algorithm, axis = exp["algorithm"], exp.get("vary")
        if axis is not None and axis not in AXES:
            raise ValueError(f"unknown axis {axis!r}")
        values = exp.get("values", [None])
        xs, ys = [], []
        for v in values:
            if time.perf_counter() - began > budget:
                report.incomplete = True
                return report
            dims = dict(DEFAULTS, **exp.get("fixed", {}))
            if axis is not None:
                dims[axis] = v
            dims = {k: int(dims[k]) for k in AXES}
            run, compile_s = prepare(algorithm, dims, seed)
            if compile_s is not None:
                report.rows.append(_row("compile", algorithm, dims, 1, compile_s, 0.0))
            med, mad = _time(run, reps, warmup)
            report.rows.append(_row("latency", algorithm, dims, reps, med, mad))
            if workers > 1:
                t0 = time.perf_counter()
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    list(pool.map(_throughput_job, [(algorithm, dims, seed, reps)] * workers))
                elapsed = time.perf_counter() - t0
                report.rows.append(
                    _row("throughput", algorithm, dims, reps * workers, elapsed / (reps * workers), 0.0)
                )
            if axis is not None:
                xs.append(v)
                ys.append(med)
        if axis is not None and len(xs) >= 2 and min(ys) > 4 * resolution:
            report.slopes.append(
                {"algorithm": algorithm, "axis": axis, "slope": fit_slope(xs, ys), "points": len(xs)}
            )
    return report
