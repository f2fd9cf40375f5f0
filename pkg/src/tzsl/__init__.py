"""Transductive zero-shot learning over precomputed feature embeddings."""
from .embedding_store import (EmbeddingSet, SemanticTable, SyntheticSpec, hold_out_unseen_validation,
                              load_embeddings, load_semantics, make_synthetic)
from .errors import (ArgumentError, ClassReferenceError, DimensionError, NumericError, ParseError,
                     PartitionError, ValidationError, ZSLError)
from .evaluation import EvalReport, evaluate, harmonic_mean, nk_skewness, predict_gzsl, predict_zsl
from .losses import LossSpec, LossWeights, loss_and_grad
from .projection import ProjectionNet, adam_step, forward, init_net
from .trainer import PRESETS, TrainConfig, train, train_inductive, train_transductive

__version__ = "0.1.0"
