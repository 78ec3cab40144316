"""Anytime bag-of-visual-words retrieval with early-stopping quantization."""

from .descriptors import (
    Dataset, ImageRecord, SynthConfig, load_dataset, save_dataset, synthesize,
    synthesize_with_info,
)
from .eval import EvalConfig, evaluate, features_needed_profile, sweep
from .index import InvertedIndex, build_index, lookup
from .query import QueryResult, ScoreHistogram, run_query, run_query_trace
from .stopping import Hoeffding, Never, Rule1, Rule2, Rule3, StopState, race_simulate, should_stop
from .vocabulary import KMeansConfig, Vocabulary, compute_idf, quantize, train

__all__ = [
    "Dataset", "ImageRecord", "SynthConfig", "load_dataset", "save_dataset", "synthesize",
    "synthesize_with_info",
    "EvalConfig", "evaluate", "features_needed_profile", "sweep",
    "InvertedIndex", "build_index", "lookup",
    "QueryResult", "ScoreHistogram", "run_query", "run_query_trace",
    "Hoeffding", "Never", "Rule1", "Rule2", "Rule3", "StopState", "race_simulate", "should_stop",
    "KMeansConfig", "Vocabulary", "compute_idf", "quantize", "train",
]
