"""Exact inference for CPD-factored HMMs and PCFGs in rank space."""
from .errors import BudgetExceededError, TrainingDivergedError, ZeroProbabilityError
from .estimators import HMMLanguageModel, PCFGParser
from .model_io import load_model, loads_model, dumps_model, save_model
from .models import (
    CpdHMM,
    CpdPCFG,
    DenseJointHMM,
    DensePCFG,
    RankHMM,
    RankPCFG,
    Vocab,
    compile_rank_hmm,
    compile_rank_pcfg,
    random_model,
    reconstruct_hmm,
    reconstruct_pcfg,
    validate,
)
from .scoring import perplexity, score_corpus

__version__ = "0.1.0"

__all__ = [
    "BudgetExceededError", "TrainingDivergedError", "ZeroProbabilityError",
    "HMMLanguageModel", "PCFGParser",
    "load_model", "loads_model", "dumps_model", "save_model",
    "CpdHMM", "CpdPCFG", "DenseJointHMM", "DensePCFG", "RankHMM", "RankPCFG", "Vocab",
    "compile_rank_hmm", "compile_rank_pcfg", "random_model", "reconstruct_hmm",
    "reconstruct_pcfg", "validate", "perplexity", "score_corpus",
]
