"""Optimal transport kernel embedding of variable-size feature sets.

Sets are mapped to a fixed-size vector by transporting their (Nyström)
features onto trainable references with entropic optimal transport and
pooling along the plan.
"""
__version__ = "0.1.0"

from .checkpoint import load_model, save_model
from .classifier import LinearClassifier
from .data import Dataset, PaddedBatch, SynthSpec, generate_synthetic, load_jsonl, make_batches
from .embedding import ReferenceBank, embed_batch, embed_set
from .estimators import MeanPoolEmbedding, OTKEClassifier, OTKEmbedding
from .exceptions import (
    DimensionMismatch,
    EmptyDataset,
    EmptySet,
    InsufficientData,
    NonFiniteError,
    OTKEError,
    ParseError,
    TooLarge,
)
from .kernels import KernelSpec, NystromMap, fit_nystrom
from .references import fit_refs_kmeans, fit_refs_wasserstein
from .sinkhorn import TransportPlan, sinkhorn, sinkhorn_batched
from .training import OTKEModel, TrainConfig, evaluate, train_supervised, train_unsupervised

__all__ = [
    "Dataset", "DimensionMismatch", "EmptyDataset", "EmptySet", "InsufficientData",
    "KernelSpec", "LinearClassifier", "MeanPoolEmbedding", "NonFiniteError", "NystromMap",
    "OTKEClassifier", "OTKEError", "OTKEModel", "OTKEmbedding", "PaddedBatch", "ParseError",
    "ReferenceBank", "SynthSpec", "TooLarge", "TrainConfig", "TransportPlan", "embed_batch",
    "embed_set", "evaluate", "fit_nystrom", "fit_refs_kmeans", "fit_refs_wasserstein",
    "generate_synthetic", "load_jsonl", "load_model", "make_batches", "save_model", "sinkhorn",
    "sinkhorn_batched", "train_supervised", "train_unsupervised",
]
