"""Multi-query embedding retrieval: aggregation methods, training, evaluation.

Retrieval with several textual queries per target beats single-query
retrieval when the extra queries are combined well. This package
implements the post-hoc combiners (similarity and rank averaging), the
feature combiners (mean and weighted features, with similarity-based,
learned, and context-aware weights), contrastive training for the
trainable ones, and a repeated-sampling evaluation protocol, all on
precomputed embeddings.
"""

__version__ = "0.1.0"

from .aggregation import (
    cgwf_weights,
    lgwf_weights,
    mean_feature,
    method_weights,
    score_method,
    score_ra,
    score_sa,
    tswf_weights,
    weighted_feature,
)
from .evaluation import (
    EvalConfig,
    EvalReport,
    SweepReport,
    WeightTable,
    auc,
    evaluate,
    inspect_weights,
    metrics_from_ranks,
    sweep,
)
from .methods import METHODS, POST_HOC_METHODS, TRAINABLE_METHODS, normalize_method
from .models import ModelParams, init_params, load_params, save_params
from .similarity import cosine, full_ranking, rank_of, sim_matrix
from .store import Corpus, FormatError, corpus_equal, load_corpus, save_corpus
from .synthetic import SyntheticConfig, default_config, generate, generate_pair
from .training import TrainConfig, TrainLog, infonce_loss, lr_at, train

__all__ = [
    "__version__",
    "METHODS",
    "POST_HOC_METHODS",
    "TRAINABLE_METHODS",
    "normalize_method",
    "Corpus",
    "FormatError",
    "corpus_equal",
    "load_corpus",
    "save_corpus",
    "cosine",
    "sim_matrix",
    "rank_of",
    "full_ranking",
    "score_sa",
    "score_ra",
    "score_method",
    "mean_feature",
    "weighted_feature",
    "method_weights",
    "tswf_weights",
    "lgwf_weights",
    "cgwf_weights",
    "ModelParams",
    "init_params",
    "save_params",
    "load_params",
    "TrainConfig",
    "TrainLog",
    "train",
    "infonce_loss",
    "lr_at",
    "EvalConfig",
    "EvalReport",
    "SweepReport",
    "WeightTable",
    "evaluate",
    "metrics_from_ranks",
    "auc",
    "sweep",
    "inspect_weights",
    "SyntheticConfig",
    "default_config",
    "generate",
    "generate_pair",
]
