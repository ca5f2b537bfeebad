"""Two-stage face identification: cosine shortlisting plus patch-level
re-ranking with a cross-attention transformer or an optimal-transport matcher."""

from .model import ModelConfig, ModelWeights, Variant, load_weights, save_weights
from .pipeline import PipelineConfig, Reranker, evaluate, run_pipeline
from .records import (FaceRecord, Gallery, Occlusion, QuerySet, SynthConfig,
                      generate_synthetic, load_gallery, load_queries, save_records)

__version__ = "0.1.0"

__all__ = [
    "FaceRecord", "Gallery", "QuerySet", "Occlusion", "SynthConfig",
    "generate_synthetic", "load_gallery", "load_queries", "save_records",
    "ModelConfig", "ModelWeights", "Variant", "load_weights", "save_weights",
    "PipelineConfig", "Reranker", "run_pipeline", "evaluate",
    "__version__",
]
