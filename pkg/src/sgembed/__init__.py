"""Scene-graph image embeddings via a GCN trained with relative-similarity
ranking supervision, plus the evaluation and retrieval experiment tooling."""

from .model import BatchedGraph, GcnModel, ModelConfig, embed_graphs, forward
from .objectives import (
    LossConfig,
    SamplerConfig,
    Triple,
    TripleSampler,
    infonce_loss,
    ranking_loss,
    ranking_target,
    triplet_loss,
)
from .scene import (
    Dataset,
    SceneGraph,
    SimilarityMatrix,
    Split,
    Vocabulary,
    augment_trivial,
    corrupt,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .evaluate import (
    EvalReport,
    RetrievalReport,
    evaluate,
    kendall_tau,
    noise_sweep,
    pearson_r,
    retrieval_experiment,
    spearman_rho,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .synth import SynthConfig, dataset_stats, generate
from .tensor import Mode, Tensor, backward
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BatchedGraph",
    "Dataset",
    "EvalReport",
    "GcnModel",
    "LossConfig",
    "Mode",
    "ModelConfig",
    "RetrievalReport",
    "SamplerConfig",
    "SceneGraph",
    "SimilarityMatrix",
    "Split",
    "SynthConfig",
    "Tensor",
    "TrainConfig",
    "Triple",
    "TripleSampler",
    "Vocabulary",
    "augment_trivial",
    "backward",
    "corrupt",
    "dataset_stats",
    "embed_graphs",
    "evaluate",
    "forward",
    "generate",
    "infonce_loss",
    "kendall_tau",
    "load_checkpoint",
    "load_dataset",
    "noise_sweep",
    "pearson_r",
    "ranking_loss",
    "ranking_target",
    "retrieval_experiment",
    "save_checkpoint",
    "save_dataset",
    "spearman_rho",
    "split_dataset",
    "train",
    "triplet_loss",
]
