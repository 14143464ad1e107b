"""Variable name recovery for decompiled code."""

from .core import BinaryProgram, DecompiledFunction, load_binary
from .correlation import correlated_names
from .evalkit import evaluate, precision, recall
from .validation import ValidationConfig, run_inference, validate_names
from .voting import HashEmbedding, semantics_vote

__version__ = "0.1.0"

__all__ = [
    "BinaryProgram",
    "DecompiledFunction",
    "HashEmbedding",
    "ValidationConfig",
    "correlated_names",
    "evaluate",
    "load_binary",
    "precision",
    "recall",
    "run_inference",
    "semantics_vote",
    "validate_names",
]
