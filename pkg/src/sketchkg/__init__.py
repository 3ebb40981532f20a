"""Topology knowledge graphs, sketch-variant synthesis and structure-aware sketch-to-diagram retrieval."""

__version__ = "0.1.0"

from .align import ProjectionHead, TrainConfig, cosine_similarity, info_nce_loss_and_grad, train_projection
from .degradation import VARIANT_NAMES, aggregate_variant_losses, compute_variant_loss
from .embed import EmbeddingVector, embed_feature_hash, read_embedding_file, write_embedding_file
from .evaluation import aggregate_judge_verdicts, compute_retrieval_metrics, parse_judge_verdict
from .exceptions import InputError, SketchKGError
from .index import build_index, load_index, query_top_k, save_index
from .kg import TopologyGraph, normalize_graph, parse_graph_record, validate_graph
from .variants import SeedSpec, generate_variant_set

__all__ = [
    "EmbeddingVector", "InputError", "ProjectionHead", "SeedSpec", "SketchKGError",
    "TopologyGraph", "TrainConfig", "VARIANT_NAMES", "aggregate_judge_verdicts",
    "aggregate_variant_losses", "build_index", "compute_retrieval_metrics",
    "compute_variant_loss", "cosine_similarity", "embed_feature_hash", "generate_variant_set",
    "info_nce_loss_and_grad", "load_index", "normalize_graph", "parse_graph_record",
    "parse_judge_verdict", "query_top_k", "read_embedding_file", "save_index",
    "train_projection", "validate_graph", "write_embedding_file",
]
