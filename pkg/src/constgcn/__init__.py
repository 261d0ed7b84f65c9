"""Constrained transmission-based graph convolution for document-level
relation extraction, with a synthetic corpus generator, trainer, and
gradient verification."""

__version__ = "0.1.0"

from .corpus import (CorpusConfig, Document, Entity, RelationSchema,
                     generate_synthetic_corpus, generate_train_dev,
                     insert_entity_markers, read_corpus, write_corpus)
from .graph import (LayerState, RelationBasis, TransmitScores, attentive_pool,
                    compute_transmit_scores, propagate, run_layers)
from .heads import NceConfig, PairHead, at_loss, decode, nce_loss, pair_logits
from .kge import KgeVariant, score, transmit, transmit_score
from .model import ConstGcnModel, ModelConfig, init_model
from .tensor import ComplexVec, Tensor, grad_check, logsumexp, sigmoid, softmax
from .training import (EvalReport, TrainConfig, evaluate, load_checkpoint,
                       save_checkpoint, train, transmit_score_auc)

__all__ = [
    "__version__",
    "ComplexVec", "ConstGcnModel", "CorpusConfig", "Document", "Entity",
    "EvalReport", "KgeVariant", "LayerState", "ModelConfig", "NceConfig",
    "PairHead", "RelationBasis", "RelationSchema", "Tensor", "TrainConfig",
    "TransmitScores", "at_loss", "attentive_pool", "compute_transmit_scores",
    "decode", "evaluate", "generate_synthetic_corpus", "generate_train_dev",
    "grad_check", "init_model", "insert_entity_markers", "load_checkpoint",
    "logsumexp", "nce_loss", "pair_logits", "propagate", "read_corpus",
    "run_layers", "save_checkpoint", "score", "sigmoid", "softmax", "train",
    "transmit", "transmit_score", "transmit_score_auc", "write_corpus",
]
