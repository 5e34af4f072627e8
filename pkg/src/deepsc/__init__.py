"""Deep sparse coding: multi-layer sparse coding with contrastive sparse-to-dense bridges."""

from .classifier import EvalReport, LinearOvaSVM, evaluate, export_sparse_text, load_sparse_text
from .descriptors import DenseSIFT, DescriptorGrid, compute_descriptors, load_descriptors, save_descriptors
from .embedding import DrlimConfig, EmbeddingMap, LinearDRLIM, generate_pairs, train_embedding
from .grid import CodeGrid, SamplingGrid, build_grid, coarsen_grid
from .pipeline import DeepSC, DeepSCModel, LayerConfig, extract_features, load_model, save_model, train_model
from .sparse_coding import Dictionary, OnlineDictionaryLearning, SparseCoder, encode, learn_dictionary

__version__ = "0.1.0"

__all__ = [
    "CodeGrid", "DeepSC", "DeepSCModel", "DenseSIFT", "DescriptorGrid", "Dictionary",
    "DrlimConfig", "EmbeddingMap", "EvalReport", "LayerConfig", "LinearDRLIM", "LinearOvaSVM",
    "OnlineDictionaryLearning", "SamplingGrid", "SparseCoder", "build_grid", "coarsen_grid",
    "compute_descriptors", "encode", "evaluate", "export_sparse_text", "extract_features",
    "generate_pairs", "learn_dictionary", "load_descriptors", "load_model", "load_sparse_text",
    "save_descriptors", "save_model", "train_embedding", "train_model",
]
