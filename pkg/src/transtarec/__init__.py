"""Time-adaptive translating embeddings for next-POI recommendation."""

__version__ = "0.1.0"

from .data import (
    Corpus,
    Split,
    Task,
    TimeKey,
    chronological_split,
    decompose_time,
    generate_synthetic,
    make_transitions,
    parse_dataset,
    write_tsv,
)
from .evaluation import EvalConfig, EvalReport, align_split, case_study, compare, evaluate
from .model import HyperParams, ModelParams, Triplet, rank_candidates, score_triplet
from .persistence import ModelArchive, load, save
from .training import TrainConfig, train

__all__ = [
    "Corpus",
    "EvalConfig",
    "EvalReport",
    "HyperParams",
    "ModelArchive",
    "ModelParams",
    "Split",
    "Task",
    "TimeKey",
    "TrainConfig",
    "Triplet",
    "align_split",
    "case_study",
    "chronological_split",
    "compare",
    "decompose_time",
    "evaluate",
    "generate_synthetic",
    "load",
    "make_transitions",
    "parse_dataset",
    "rank_candidates",
    "save",
    "score_triplet",
    "train",
    "write_tsv",
]
