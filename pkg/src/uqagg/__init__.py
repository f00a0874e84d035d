"""Scalar scoring of pixel-wise segmentation-uncertainty maps.

The package turns a 2-D per-pixel uncertainty map (values in [0, 1]) into a
single scalar usable for out-of-distribution detection or failure detection:

- intensity aggregators that pool the raw values (``avg``, ``plm``, ``ata``,
  ``aqa``, ``bca``, ``ica``, ``qfr``),
- spatial aggregators that weight each pixel by the local structure of the
  map before pooling (``mor``, ``eds``, ``ent``),
- a Gaussian-mixture meta-aggregator fitted on reference feature vectors
  whose negative log-likelihood scores how atypical a new map's features are,
- evaluation utilities (AUROC, risk--coverage, bootstrap, Wilcoxon, mean
  ranks) and synthetic benchmark generators for exercising all of the above.
"""

from .core import (
    FeatureMatrix,
    FeatureVector,
    ProbabilityStack,
    SegmentationMask,
    UncertaintyMap,
    as_mask,
    entropy_uncertainty,
    validate_map,
)
from .errors import (
    AllZeroDifferences,
    BadMagic,
    DuplicateId,
    DuplicateStrategy,
    EmptyFeatureSet,
    EmptyGrid,
    EmptyInput,
    FeatureMismatch,
    FortranOrderUnsupported,
    InvalidEpsilon,
    InvalidParam,
    InvalidQuantile,
    InvalidSpec,
    InvalidStack,
    InvalidThreshold,
    LengthMismatch,
    MaskRequired,
    MissingColumn,
    MissingFile,
    NoForeground,
    NonFinite,
    NonTwoDimensional,
    OutOfRange,
    ParseError,
    PatchTooLarge,
    ShapeMismatch,
    SingleClass,
    SingularCovariance,
    StrategySetMismatch,
    TooFewSamples,
    TruncatedPayload,
    UnknownStrategy,
    UnsupportedDtype,
    UqaggError,
)
from .evaluation import (
    BootstrapResult,
    EvalRecord,
    RiskCoverageCurve,
    auroc,
    aurc,
    bootstrap_metric,
    bootstrap_table,
    dice,
    eaurc,
    mean_rank,
    risk_coverage,
    significance_matrix,
    wilcoxon_one_sided,
)
from .intensity import (
    ClassAverages,
    aqa,
    ata,
    avg,
    bca,
    class_averages,
    ica,
    plm,
    qfr,
    wca,
)
from .io import (
    Manifest,
    ManifestRow,
    read_manifest,
    read_npy,
    read_scores,
    write_manifest,
    write_npy,
    write_scores,
)
from .meta import (
    FeatureSetSpec,
    GmmModel,
    ablate,
    bic,
    em_fit,
    epsilon_rescale,
    fit_meta,
    load_model,
    meta_score,
    meta_score_matrix,
    model_from_json,
    model_to_json,
    save_model,
    standardize_apply,
    standardize_fit,
)
from .rng import stream
from .spatial import (
    WeightMap,
    eds,
    ent,
    mor,
    smr,
    spatial_decompose,
    spatial_weight_map,
)
from .strategies import (
    FULL_SET,
    INTENSITY_SET,
    SPATIAL_SET,
    Strategy,
    compute_features,
    parse_strategy,
    parse_strategy_list,
)
from .synth import (
    Benchmark,
    BenchmarkSample,
    SynthSpec,
    expected_mean,
    gen_benchmark,
    generate,
    match_background,
    pattern_mask,
)

__version__ = "0.1.0"

__all__ = [
    "AllZeroDifferences",
    "BadMagic",
    "Benchmark",
    "BenchmarkSample",
    "BootstrapResult",
    "ClassAverages",
    "DuplicateId",
    "DuplicateStrategy",
    "EmptyFeatureSet",
    "EmptyGrid",
    "EmptyInput",
    "EvalRecord",
    "FULL_SET",
    "FeatureMatrix",
    "FeatureMismatch",
    "FeatureSetSpec",
    "FeatureVector",
    "FortranOrderUnsupported",
    "GmmModel",
    "INTENSITY_SET",
    "InvalidEpsilon",
    "InvalidParam",
    "InvalidQuantile",
    "InvalidSpec",
    "InvalidStack",
    "InvalidThreshold",
    "LengthMismatch",
    "Manifest",
    "ManifestRow",
    "MaskRequired",
    "MissingColumn",
    "MissingFile",
    "NoForeground",
    "NonFinite",
    "NonTwoDimensional",
    "OutOfRange",
    "ParseError",
    "PatchTooLarge",
    "ProbabilityStack",
    "RiskCoverageCurve",
    "SPATIAL_SET",
    "SegmentationMask",
    "ShapeMismatch",
    "SingleClass",
    "SingularCovariance",
    "Strategy",
    "StrategySetMismatch",
    "SynthSpec",
    "TooFewSamples",
    "TruncatedPayload",
    "UncertaintyMap",
    "UnknownStrategy",
    "UnsupportedDtype",
    "UqaggError",
    "WeightMap",
    "ablate",
    "aqa",
    "as_mask",
    "ata",
    "auroc",
    "aurc",
    "avg",
    "bca",
    "bic",
    "bootstrap_metric",
    "bootstrap_table",
    "class_averages",
    "compute_features",
    "dice",
    "eaurc",
    "eds",
    "em_fit",
    "ent",
    "entropy_uncertainty",
    "epsilon_rescale",
    "expected_mean",
    "fit_meta",
    "gen_benchmark",
    "generate",
    "ica",
    "load_model",
    "match_background",
    "mean_rank",
    "meta_score",
    "meta_score_matrix",
    "model_from_json",
    "model_to_json",
    "mor",
    "parse_strategy",
    "parse_strategy_list",
    "pattern_mask",
    "plm",
    "qfr",
    "read_manifest",
    "read_npy",
    "read_scores",
    "risk_coverage",
    "save_model",
    "significance_matrix",
    "smr",
    "spatial_decompose",
    "spatial_weight_map",
    "standardize_apply",
    "standardize_fit",
    "stream",
    "validate_map",
    "wca",
    "wilcoxon_one_sided",
    "write_manifest",
    "write_npy",
    "write_scores",
]
