"""Ultrasound report generation at desk scale.

Pipeline stages: corpus preprocessing, report embedding, manifold reduction,
topic clustering, visual/text model training and report evaluation, wired
together by the ``sonogen`` command-line tool.
"""

from .clustering import KMeans, grid_select, kmeans, silhouette_score
from .corpus import (
    RawRecord,
    SplitManifest,
    TokenizedReport,
    Vocabulary,
    generate_synthetic_corpus,
    normalize_measurements,
    split_dataset,
    tokenize,
)
from .embedding import BowEmbedder, EmbeddingMatrix, ExternalEmbedder, TfidfEmbedder
from .metrics import EntityLexicon, EvalReport, builtin_lexicon, evaluate_pairs
from .model import ModelConfig, ReportModel, desk_config, full_config
from .reduction import LayoutConfig, PcaReducer, UmapReducer, umap_reduce
from .training import SimilarityComparer, TrainConfig, Trainer, desk_train_config

__version__ = "0.1.0"

__all__ = [
    "BowEmbedder",
    "EmbeddingMatrix",
    "EntityLexicon",
    "EvalReport",
    "ExternalEmbedder",
    "KMeans",
    "LayoutConfig",
    "ModelConfig",
    "PcaReducer",
    "RawRecord",
    "ReportModel",
    "SimilarityComparer",
    "SplitManifest",
    "TfidfEmbedder",
    "TokenizedReport",
    "TrainConfig",
    "Trainer",
    "UmapReducer",
    "Vocabulary",
    "builtin_lexicon",
    "desk_config",
    "desk_train_config",
    "evaluate_pairs",
    "generate_synthetic_corpus",
    "grid_select",
    "kmeans",
    "normalize_measurements",
    "full_config",
    "silhouette_score",
    "split_dataset",
    "tokenize",
    "umap_reduce",
]
