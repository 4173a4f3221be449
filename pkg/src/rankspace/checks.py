"""Cross-checks of every inference route against the brute-force oracle."""
from dataclasses import dataclass, field

import numpy as np

from . import hmm, oracle, pcfg
from .models import (
    CpdHMM,
    CpdPCFG,
    compile_rank_hmm,
    compile_rank_pcfg,
    cpd_to_lpcfg,
    random_model,
    reconstruct_hmm,
    reconstruct_pcfg,
    validate,
)


@dataclass
class CaseResult:
    index: int
    kind: str
    dims: dict
    n: int
    logZ: dict  # route name -> log Z
    max_log_diff: float
    max_marginal_diff: float = 0.0
    violations: list = field(default_factory=list)
    passed: bool = True

    def line(self):
        dims = " ".join(f"{k}={v}" for k, v in self.dims.items())
        status = "PASS" if self.passed else "FAIL"
        extra = f" max_marginal_diff={self.max_marginal_diff:.3e}" if self.kind == "pcfg" else ""
        viol = f" violations={len(self.violations)}" if self.violations else ""
        return (
            f"case {self.index} {self.kind} {dims} n={self.n} "
            f"max_abs_log_diff={self.max_log_diff:.3e}{extra}{viol} {status}"
        )


def _spread(values):
    vals = list(values)
    if any(not np.isfinite(v) for v in vals):
        return 0.0 if len(set(vals)) == 1 else float("inf")
    return float(max(vals) - min(vals))


def _corrupted(model):
    """Double the first ``U`` row, breaking its normalization."""
    U = np.array(model.U)
    U[0] = U[0] + np.log(2.0)
    if isinstance(model, CpdHMM):
        return CpdHMM(model.start, U, model.V, model.W)
    return CpdPCFG(model.start, U, model.V, model.W, model.E)


def check_hmm(model, seq, index=0, tol=1e-9, corrupt=False):
    """Compare dense, low-rank and rank-space forward against enumeration.

    With ``corrupt`` the fast routes see a model with one broken row while the
    oracle keeps the original, so a correct checker reports a mismatch.
    """
    fast = _corrupted(model) if corrupt else model
    dense = reconstruct_hmm(fast)
    z = {
        "dense": hmm.dense_forward(dense, seq).logZ,
        "lowrank": hmm.lowrank_forward(fast, seq).logZ,
        "rank": hmm.rank_forward(compile_rank_hmm(fast), seq).logZ,
        "oracle": oracle.hmm_bruteforce_logZ(reconstruct_hmm(model), seq),
    }
    diff = _spread(z.values())
    violations = validate(fast)
    return CaseResult(
        index, "hmm", {"m": model.m, "r": model.r, "o": model.o}, len(seq), z, diff,
        violations=violations, passed=diff <= tol and not violations,
    )


def check_pcfg(model, seq, index=0, tol=1e-9, corrupt=False):
    fast = _corrupted(model) if corrupt else model
    compiled = compile_rank_pcfg(fast)
    z = {
        "dense": pcfg.dense_inside(reconstruct_pcfg(fast), seq).logZ,
        "td": pcfg.td_inside(fast, seq).logZ,
        "lpcfg": pcfg.lpcfg_inside(cpd_to_lpcfg(fast), fast.E, fast.start, seq).logZ,
        "rank": pcfg.rank_inside(compiled, seq).logZ,
    }
    ref = oracle.pcfg_bruteforce(reconstruct_pcfg(model), seq)
    z["oracle"] = ref.logZ
    diff = _spread(z.values())
    mu = pcfg.span_marginals(compiled, seq)
    mdiff = max(abs(mu[s] - p) for s, p in ref.marginals.items())
    violations = validate(fast)
    return CaseResult(
        index, "pcfg",
        {"num_nt": model.num_nt, "num_pt": model.num_pt, "r": model.r, "o": model.o},
        len(seq), z, diff, mdiff, violations,
        passed=diff <= tol and mdiff <= tol and not violations,
    )


def random_case(kind, rng):
    """Small random model and sentence within the oracle's budget."""
    seed = int(rng.integers(2**31))
    if kind == "hmm":
        m, r, o = (int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(2, 5)))
        model = random_model("hmm", m=m, r=r, o=o, seed=seed)
        n = int(rng.integers(1, 7))
    else:
        nt, pt = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        r, o = int(rng.integers(1, 4)), int(rng.integers(2, 4))
        model = random_model("pcfg", num_nt=nt, num_pt=pt, r=r, o=o, seed=seed)
        n = int(rng.integers(2, 6))
    seq = rng.integers(0, model.o, size=n)
    return model, seq


def run_checks(kind, cases, seed, tol=1e-9, corrupt=False):
    """Run ``cases`` random checks per kind (``hmm``, ``pcfg`` or ``all``)."""
    kinds = ("hmm", "pcfg") if kind == "all" else (kind,)
    rng = np.random.default_rng(seed)
    results = []
    for k in kinds:
        for idx in range(cases):
            model, seq = random_case(k, rng)
            check = check_hmm if k == "hmm" else check_pcfg
            results.append(check(model, seq, idx, tol, corrupt))
    return results
