"""Self-supervised graph collaborative filtering.

Training, evaluation, and hyperparameter tuning for four models on a shared
linear-propagation backbone: a plain ranking model (lightgcn), two
contrastive variants over augmented views (sgl with edge dropout, simgcl
with feature noise), and an alignment/uniformity model (directau).
"""

from .config import ExperimentConfig, parse_config
from .datahub import (
    ColumnFormat,
    InteractionDataset,
    RawInteraction,
    filter_low_rating,
    kcore_filter,
    load_dataset,
    load_interactions,
    split_dataset,
)
from .engine import TrainSettings, TuneGrid, train, tune
from .errors import (
    ConfigError,
    DataFormatError,
    EvaluationError,
    GraphCFError,
    NumericError,
    SamplingError,
    StructuralError,
)
from .evalkit import EvalReport, batched_full_eval, rank_eval
from .models import Batch, EmbeddingTable, ModelParams, cal_loss, forward, full_predict
from .sparse import CsrMatrix, from_coo, normalize_sym, spmm, transpose

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "ColumnFormat",
    "ConfigError",
    "CsrMatrix",
    "DataFormatError",
    "EmbeddingTable",
    "EvalReport",
    "EvaluationError",
    "ExperimentConfig",
    "GraphCFError",
    "InteractionDataset",
    "ModelParams",
    "NumericError",
    "RawInteraction",
    "SamplingError",
    "StructuralError",
    "TrainSettings",
    "TuneGrid",
    "batched_full_eval",
    "cal_loss",
    "filter_low_rating",
    "forward",
    "from_coo",
    "full_predict",
    "kcore_filter",
    "load_dataset",
    "load_interactions",
    "normalize_sym",
    "parse_config",
    "rank_eval",
    "spmm",
    "split_dataset",
    "train",
    "transpose",
    "tune",
]
