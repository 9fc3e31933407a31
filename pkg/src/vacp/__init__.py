"""Vocabulary-aware conformal prediction for next-token distributions.

Calibrates cumulative-mass non-conformity thresholds over optionally
masked, temperature-scaled token distributions and produces prediction
sets with finite-sample marginal coverage guarantees.
"""

from .conformal import (
    ScoreSample,
    aps_score,
    build_prediction_set,
    calibrate_pipeline,
    calibrate_threshold,
    score_records,
)
from .distribution import (
    DistributionStats,
    ProbabilityVector,
    canonical_order,
    distribution_stats,
    masked_temperature_softmax,
)
from .errors import (
    EmptySupportError,
    FormatError,
    GuaranteeError,
    TargetNotInSupportError,
    VacpError,
    ValidationError,
)
from .evaluation import (
    EvalReport,
    PartialCoverageCheck,
    StratumReport,
    SweepResult,
    SweepRow,
    bootstrap_ci,
    evaluate,
    temperature_sweep,
    transfer_evaluate,
    verify_partial_coverage_bound,
)
from .masking import (
    MaskValidationReport,
    empirical_filter,
    empirical_max_probs,
    structural_filter,
    validate_mask,
)
from .synth import SynthConfig, generate, target_inclusion_rate
from .types import (
    CalibrationResult,
    ConformalConfig,
    LogitRecord,
    PredictionSet,
    TokenMetadata,
    VocabMask,
    derive_sample_rng,
)

__version__ = "0.1.0"

__all__ = [
    "CalibrationResult",
    "ConformalConfig",
    "DistributionStats",
    "EvalReport",
    "EmptySupportError",
    "FormatError",
    "GuaranteeError",
    "LogitRecord",
    "MaskValidationReport",
    "PartialCoverageCheck",
    "PredictionSet",
    "ProbabilityVector",
    "ScoreSample",
    "StratumReport",
    "SweepResult",
    "SweepRow",
    "SynthConfig",
    "TargetNotInSupportError",
    "TokenMetadata",
    "VacpError",
    "ValidationError",
    "VocabMask",
    "aps_score",
    "bootstrap_ci",
    "build_prediction_set",
    "calibrate_pipeline",
    "calibrate_threshold",
    "canonical_order",
    "derive_sample_rng",
    "distribution_stats",
    "empirical_filter",
    "empirical_max_probs",
    "evaluate",
    "generate",
    "masked_temperature_softmax",
    "score_records",
    "structural_filter",
    "target_inclusion_rate",
    "temperature_sweep",
    "transfer_evaluate",
    "validate_mask",
    "verify_partial_coverage_bound",
]
