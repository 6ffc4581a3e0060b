"""Sparse mixtures of logistic-regression experts for process outcome prediction."""

from lrmoe.errors import LrMoeError
from lrmoe.event_log import (
    Event,
    EventLog,
    PrefixInstance,
    Schema,
    SplitSpec,
    Trace,
    extract_prefixes,
    parse_event_log,
    temporal_split,
)
from lrmoe.encoding import (
    Dataset,
    FeatureDictionary,
    FeatureVector,
    derive_temporal_features,
    encode_log,
    encode_prefix,
    encode_prefixes,
    fit_feature_dictionary,
    prepare_prefixes,
)
from lrmoe.model import MoeModel, Prediction, complexity, init_random, predict
from lrmoe.training import ALL, TrainConfig, TrainReport, prune_feature_blocks, train_full
from lrmoe.evaluation import EvalReport, auc, compare_with_baseline, evaluate
from lrmoe.explain import explain_experts, explain_gate, feature_usage_summary

__version__ = "0.1.0"

__all__ = [
    "ALL",
    "Dataset",
    "EvalReport",
    "Event",
    "EventLog",
    "FeatureDictionary",
    "FeatureVector",
    "LrMoeError",
    "MoeModel",
    "Prediction",
    "PrefixInstance",
    "Schema",
    "SplitSpec",
    "Trace",
    "TrainConfig",
    "TrainReport",
    "auc",
    "compare_with_baseline",
    "complexity",
    "derive_temporal_features",
    "encode_log",
    "encode_prefix",
    "encode_prefixes",
    "evaluate",
    "explain_experts",
    "explain_gate",
    "extract_prefixes",
    "feature_usage_summary",
    "fit_feature_dictionary",
    "init_random",
    "parse_event_log",
    "predict",
    "prepare_prefixes",
    "prune_feature_blocks",
    "temporal_split",
    "train_full",
]
