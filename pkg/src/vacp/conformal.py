"""Cumulative-mass non-conformity scoring, split-conformal threshold
calibration, and prediction-set construction.

Scoring conventions, fixed here once so every caller agrees bit for bit:

* Deterministic score: total probability of every token at least as
  probable as the target. Ordering-independent; all tied tokens count.
* Randomized score: mass strictly above the target, plus mass of tied
  tokens preceding it in canonical order, plus U times the target's own
  mass, U ~ Uniform(0, 1). At U = 1 with no tokens tied after the
  target this equals the deterministic score.
* Set rule: walk the canonical order, include tokens while the running
  mass stays <= the threshold, then include one more. Never empty.

The deterministic score under ties is intentionally the "total mass of
ties" formula even though sets use the tie-broken canonical order; the
two can disagree on tied tokens, which only distinct-probability inputs
avoid.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

import numpy as np

from .distribution import ProbabilityVector, canonical_order, masked_temperature_softmax
from .errors import TargetNotInSupportError, ValidationError
from .types import (
    CalibrationResult,
    ConformalConfig,
    LogitRecord,
    PredictionSet,
    VocabMask,
    derive_sample_rng,
)


@dataclass(frozen=True)
class ScoreSample:
    """Non-conformity score of one calibration sample."""

    sample_id: str
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(
                f"score must be in [0, 1], got {self.score} for {self.sample_id!r}"
            )


def aps_score(
    p: ProbabilityVector,
    target_id: int,
    mode: str = "deterministic",
    rng: np.random.Generator | None = None,
) -> float:
    """Cumulative-probability score of the target token; in [0, 1].

    Raises TargetNotInSupportError when the target has probability
    exactly 0 (the out-of-vocabulary-subset signal).
    """
    probs = p.probs
    if not 0 <= target_id < probs.shape[0]:
        raise ValidationError(f"target_id {target_id} outside [0, {probs.shape[0]})")
    p_target = probs[target_id]
    if p_target <= 0.0:
        raise TargetNotInSupportError(int(target_id))

    if mode == "deterministic":
        score = float(probs[probs >= p_target].sum())
    elif mode == "randomized":
        if rng is None:
            raise ValidationError("randomized mode needs a random source")
        strictly_above = float(probs[probs > p_target].sum())
        tied_before = int(np.count_nonzero(probs[:target_id] == p_target))
        u = float(rng.uniform())
        score = strictly_above + p_target * (tied_before + u)
    else:
        raise ValidationError(f"unknown score mode {mode!r}")
    return min(max(score, 0.0), 1.0)


def _quantile_index(n: int, alpha: float) -> int:
    """k = ceil((n+1)(1-alpha)), evaluated in exact rational arithmetic.

    Float alphas sitting a hair below their decimal value (0.3, say)
    push the product a hair above an integer, which must not bump the
    order statistic; values within 1e-9 of an integer snap to it before
    the ceiling.
    """
    exact = Fraction(n + 1) * (1 - Fraction(alpha))
    nearest = round(exact)
    if abs(exact - nearest) < Fraction(1, 10**9):
        return int(nearest)
    return math.ceil(exact)


def scores_digest(scores: np.ndarray) -> str:
    """Checksum of the sorted calibration scores."""
    payload = np.sort(np.asarray(scores, dtype=np.float64)).astype("<f8").tobytes()
    return hashlib.sha256(payload).hexdigest()[:16]


def calibrate_threshold(
    scores: Iterable[ScoreSample],
    alpha: float,
    config: ConformalConfig | None = None,
) -> CalibrationResult:
    """Finite-sample-corrected quantile of the calibration scores.

    With k = ceil((n+1)(1-alpha)): the k-th smallest score when k <= n,
    else 1.0. The k > n fallback deliberately returns the full-mass
    threshold rather than the max score; with too few calibration points
    only the trivial set achieves the guarantee.
    """
    samples = list(scores)
    if not samples:
        raise ValidationError("no calibration data")
    values = np.array([s.score for s in samples], dtype=np.float64)
    if config is None:
        config = ConformalConfig(alpha=alpha)
    elif config.alpha != alpha:
        raise ValidationError(
            f"alpha {alpha} disagrees with config.alpha {config.alpha}"
        )

    n = values.shape[0]
    k = _quantile_index(n, alpha)
    if k > n:
        threshold = 1.0
    else:
        threshold = float(np.sort(values)[k - 1])
    return CalibrationResult(
        threshold=threshold,
        n_calibration=n,
        config=config,
        score_samples_digest=scores_digest(values),
    )


def build_prediction_set(p: ProbabilityVector, threshold: float) -> PredictionSet:
    """Smallest canonical-order prefix whose mass exceeds the threshold.

    size = count(prefix sums <= threshold) + 1, clamped to the number of
    positive-probability tokens; always nonempty.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"threshold must be in [0, 1], got {threshold}")
    # All positive-probability tokens precede the zero-probability ones
    # in canonical order, so this prefix is the usable support.
    order = canonical_order(p)[: int(np.count_nonzero(p.probs))]
    sorted_probs = p.probs[order]
    cumulative = np.cumsum(sorted_probs)
    size = int((cumulative <= threshold).sum()) + 1
    size = max(1, min(size, order.shape[0]))
    return PredictionSet(
        token_ids=order[:size],
        token_probs=sorted_probs[:size],
        cumulative_mass=float(cumulative[size - 1]),
    )


def score_records(
    records: Iterable[LogitRecord],
    mask: VocabMask | None,
    config: ConformalConfig,
) -> list[ScoreSample]:
    """Score a record stream under one configuration.

    Each record gets its own random source derived from
    (config.seed, sample_id), so results do not depend on stream order.
    """
    out = []
    for record in records:
        p = masked_temperature_softmax(record.logits, config.temperature, mask)
        rng = (
            derive_sample_rng(config.seed, record.sample_id)
            if config.score_mode == "randomized"
            else None
        )
        try:
            score = aps_score(p, record.target_id, config.score_mode, rng)
        except TargetNotInSupportError as err:
            raise TargetNotInSupportError(err.token_id, record.sample_id) from None
        out.append(ScoreSample(sample_id=record.sample_id, score=score))
    return out


def calibrate_pipeline(
    records: Iterable[LogitRecord],
    mask: VocabMask | None,
    config: ConformalConfig,
) -> CalibrationResult:
    """Mask, temperature-softmax, and score every record, then calibrate.

    Deterministic for a fixed config. A record whose target is masked
    out raises TargetNotInSupportError naming the offending sample;
    calibrating on such records is undefined.
    """
    if mask is not None and config.mask_id is not None and config.mask_id != mask.mask_id:
        raise ValidationError(
            f"config.mask_id {config.mask_id} does not match mask {mask.mask_id}"
        )
    if mask is not None and config.mask_id is None:
        config = dataclasses.replace(config, mask_id=mask.mask_id)
    scores = score_records(records, mask, config)
    return calibrate_threshold(scores, config.alpha, config=config)
