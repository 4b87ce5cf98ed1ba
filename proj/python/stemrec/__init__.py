from ._stemrec import (
    BoundsError,
    ConfigError,
    DataError,
    EmptyInputError,
    NumericError,
    ParseError,
    ShapeError,
    StemError,
    auc,
    classify_delta,
    equal_freq_buckets,
    generate_synthetic,
    logloss,
    mtl_gain,
    pair_distance,
    predict,
    run_cli,
    select_contradictory,
    subset_split,
)

__all__ = [
    "BoundsError",
    "ConfigError",
    "DataError",
    "EmptyInputError",
    "NumericError",
    "ParseError",
    "ShapeError",
    "StemError",
    "auc",
    "classify_delta",
    "equal_freq_buckets",
    "generate_synthetic",
    "logloss",
    "mtl_gain",
    "pair_distance",
    "predict",
    "run_cli",
    "select_contradictory",
    "subset_split",
]
