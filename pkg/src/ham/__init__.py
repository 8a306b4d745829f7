"""Hierarchical attention over dependency-parsed stories for multiple-choice
comprehension, built on a small numpy autodiff tape."""

__version__ = "0.1.0"

from .answer import grade, select, target_distribution
from .datagen import SynthConfig, generate, split
from .model import HamModel, ModelConfig
from .training import TrainConfig, evaluate, load_checkpoint, save_checkpoint, train
from .treebank import DepTree, ProblemSet, parse_conllu, read_jsonl, validate, write_jsonl

__all__ = [
    "DepTree",
    "HamModel",
    "ModelConfig",
    "ProblemSet",
    "SynthConfig",
    "TrainConfig",
    "evaluate",
    "generate",
    "grade",
    "load_checkpoint",
    "parse_conllu",
    "read_jsonl",
    "save_checkpoint",
    "select",
    "split",
    "target_distribution",
    "train",
    "validate",
    "write_jsonl",
]
