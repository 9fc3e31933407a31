"""Core domain types and the deterministic randomness contract.

All probability math runs in float64 regardless of on-disk precision:
cumulative sums over vocabularies of 2.5e5 entries are not trustworthy
in float32. Every type here is immutable after construction and safe to
share across threads.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

SCORE_MODES = ("deterministic", "randomized")

# Per-token exclusion provenance codes used by VocabMask.reasons.
REASON_INCLUDED = 0
REASON_STRUCTURAL = 1
REASON_EMPIRICAL = 2
REASON_NAMES = {REASON_STRUCTURAL: "structural", REASON_EMPIRICAL: "empirical"}


def derive_sample_rng(seed: int, sample_id: str) -> np.random.Generator:
    """Deterministic per-sample random source.

    The stream depends only on (seed, sample_id), never on global state
    or processing order, so per-sample randomization is reproducible and
    parallel-safe.
    """
    h = hashlib.blake2b(
        sample_id.encode("utf-8"),
        key=int(seed).to_bytes(8, "little", signed=True),
        digest_size=16,
    ).digest()
    return np.random.default_rng(int.from_bytes(h, "little"))


@dataclass(frozen=True)
class LogitRecord:
    """One evaluation sample: raw logits over the vocabulary plus the
    ground-truth target token id.

    Logits may contain the -inf masked-out sentinel but never NaN or
    +inf; records coming from ingestion are fully finite.
    """

    sample_id: str
    logits: np.ndarray
    target_id: int

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float64)
        object.__setattr__(self, "logits", logits)
        if logits.ndim != 1:
            raise ValidationError(f"logits must be 1-d, got shape {logits.shape}")
        if np.isnan(logits).any():
            raise ValidationError(f"sample {self.sample_id!r}: logits contain NaN")
        if np.isposinf(logits).any():
            raise ValidationError(f"sample {self.sample_id!r}: logits contain +inf")
        if not 0 <= self.target_id < logits.shape[0]:
            raise ValidationError(
                f"sample {self.sample_id!r}: target_id {self.target_id} outside "
                f"[0, {logits.shape[0]})"
            )

    @property
    def vocab_size(self) -> int:
        return self.logits.shape[0]


@dataclass(frozen=True)
class TokenMetadata:
    """Per-token facts needed by structural filtering."""

    token_id: int
    surface: str
    is_special: bool = False
    is_reserved: bool = False
    is_printable: bool = True


@dataclass(frozen=True)
class VocabMask:
    """Boolean inclusion vector over token ids with per-exclusion provenance.

    ``reasons`` is a dense uint8 vector: 0 for included tokens, else a
    REASON_* code. ``build_config`` records the thresholds that produced
    the mask so exclusion accounting can be reproduced.
    """

    included: np.ndarray
    reasons: np.ndarray
    build_config: dict = field(default_factory=dict)

    def __post_init__(self):
        included = np.asarray(self.included, dtype=bool)
        reasons = np.asarray(self.reasons, dtype=np.uint8)
        object.__setattr__(self, "included", included)
        object.__setattr__(self, "reasons", reasons)
        if included.shape != reasons.shape or included.ndim != 1:
            raise ValidationError("included and reasons must be 1-d and aligned")
        if not included.any():
            raise ValidationError("empty support: mask excludes every token")
        if not np.array_equal(reasons == REASON_INCLUDED, included):
            raise ValidationError("every excluded token needs exactly one reason tag")
        if not np.isin(reasons, (REASON_INCLUDED, REASON_STRUCTURAL, REASON_EMPIRICAL)).all():
            raise ValidationError("unknown exclusion reason code")

    @classmethod
    def all_included(cls, vocab_size: int, build_config: dict | None = None) -> "VocabMask":
        return cls(
            included=np.ones(vocab_size, dtype=bool),
            reasons=np.zeros(vocab_size, dtype=np.uint8),
            build_config=dict(build_config or {}),
        )

    @property
    def vocab_size(self) -> int:
        return self.included.shape[0]

    @property
    def n_included(self) -> int:
        return int(self.included.sum())

    def reason_counts(self) -> dict[str, int]:
        return {
            name: int((self.reasons == code).sum())
            for code, name in REASON_NAMES.items()
        }

    @property
    def mask_id(self) -> str:
        """Content digest of the included set; used to detect calibrating
        with one mask and predicting with another."""
        return hashlib.sha256(np.packbits(self.included).tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class ConformalConfig:
    """Everything that determines a calibration run besides the data."""

    alpha: float
    temperature: float = 1.0
    score_mode: str = "deterministic"
    mask_id: str | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha must be in (0, 1), got {self.alpha}")
        if not self.temperature > 0.0:
            raise ValidationError(f"invalid temperature: {self.temperature}")
        if self.score_mode not in SCORE_MODES:
            raise ValidationError(
                f"score_mode must be one of {SCORE_MODES}, got {self.score_mode!r}"
            )


@dataclass(frozen=True)
class CalibrationResult:
    """Calibrated threshold together with the configuration that produced it."""

    threshold: float
    n_calibration: int
    config: ConformalConfig
    score_samples_digest: str

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValidationError(f"threshold must be in [0, 1], got {self.threshold}")


@dataclass(frozen=True)
class PredictionSet:
    """Tokens ordered by descending probability under the scoring
    distribution, truncated by the calibrated threshold."""

    token_ids: np.ndarray
    token_probs: np.ndarray
    cumulative_mass: float

    def __post_init__(self):
        token_ids = np.asarray(self.token_ids, dtype=np.int64)
        token_probs = np.asarray(self.token_probs, dtype=np.float64)
        object.__setattr__(self, "token_ids", token_ids)
        object.__setattr__(self, "token_probs", token_probs)
        if token_ids.shape != token_probs.shape or token_ids.ndim != 1:
            raise ValidationError("token_ids and token_probs must be 1-d and aligned")
        if token_ids.shape[0] < 1:
            raise ValidationError("prediction sets are nonempty by construction")
        if np.any(np.diff(token_probs) > 0.0):
            raise ValidationError("token_probs must be non-increasing")

    @property
    def size(self) -> int:
        return self.token_ids.shape[0]

    def __contains__(self, token_id: int) -> bool:
        return bool(np.isin(token_id, self.token_ids))
