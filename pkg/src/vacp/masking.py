"""Effective-vocabulary construction: structural filtering on token
metadata, empirical filtering on validation-set probabilities, and the
final ground-truth validation step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .distribution import masked_temperature_softmax
from .errors import EmptySupportError, ValidationError
from .types import (
    REASON_EMPIRICAL,
    REASON_INCLUDED,
    REASON_STRUCTURAL,
    LogitRecord,
    TokenMetadata,
    VocabMask,
)


@dataclass(frozen=True)
class MaskValidationReport:
    """Outcome of checking ground-truth targets against a mask."""

    n_samples: int
    n_hits: int
    missing_token_ids: tuple[int, ...]

    @property
    def hit_rate(self) -> float:
        return self.n_hits / self.n_samples

    @property
    def full_coverage(self) -> bool:
        return self.n_hits == self.n_samples


def structural_filter(metadata: Sequence[TokenMetadata]) -> VocabMask:
    """Exclude tokens that cannot appear as natural continuations.

    Drops special/control tokens, reserved placeholders, and tokens
    whose surface is non-printable. Metadata must cover token ids
    densely; surface-string heuristics (which strings count as reserved)
    are the ingestion side's job, this only reads the flags.
    """
    vocab_size = len(metadata)
    ids = sorted(m.token_id for m in metadata)
    if ids != list(range(vocab_size)):
        raise ValidationError("token metadata must cover [0, vocab_size) densely")

    included = np.ones(vocab_size, dtype=bool)
    for m in metadata:
        if m.is_special or m.is_reserved or not m.is_printable:
            included[m.token_id] = False
    if not included.any():
        raise EmptySupportError("structural filter excluded every token")
    reasons = np.where(included, REASON_INCLUDED, REASON_STRUCTURAL).astype(np.uint8)
    return VocabMask(
        included=included,
        reasons=reasons,
        build_config={"structural": "special|reserved|non-printable"},
    )


def empirical_max_probs(
    validation_records: Iterable[LogitRecord],
    tau: float = 1.0,
) -> np.ndarray:
    """Per-token maximum softmax probability over a validation stream.

    Runs on the raw softmax (tau = 1 by default), unmasked: the mask is
    being built, so no mask applies yet. Elementwise max is associative
    and commutative, making the reduction order-independent.
    """
    max_probs = None
    for record in validation_records:
        p = masked_temperature_softmax(record.logits, tau, mask=None)
        if max_probs is None:
            max_probs = p.probs.copy()
        elif max_probs.shape != p.probs.shape:
            raise ValidationError("validation records disagree on vocab_size")
        else:
            np.maximum(max_probs, p.probs, out=max_probs)
    if max_probs is None:
        raise ValidationError("no validation data")
    return max_probs


def empirical_filter(
    base: VocabMask,
    max_probs: np.ndarray,
    threshold: float = 1e-5,
) -> VocabMask:
    """Drop tokens whose probability never rises above the threshold.

    Keeps a token only when max_probs is strictly above the threshold
    (an entry exactly at it is excluded). Never re-includes anything the
    base mask excluded; new exclusions are tagged empirical, so applying
    the same filter twice is a no-op.
    """
    if not 0.0 < threshold < 1.0:
        raise ValidationError(f"threshold must be in (0, 1), got {threshold}")
    max_probs = np.asarray(max_probs, dtype=np.float64)
    if max_probs.shape != (base.vocab_size,):
        raise ValidationError(
            f"max_probs has shape {max_probs.shape}, mask covers {base.vocab_size}"
        )

    included = base.included & (max_probs > threshold)
    if not included.any():
        raise EmptySupportError("empirical filter excluded every remaining token")
    reasons = base.reasons.copy()
    reasons[base.included & ~included] = REASON_EMPIRICAL
    build_config = dict(base.build_config)
    build_config["empirical_threshold"] = threshold
    return VocabMask(included=included, reasons=reasons, build_config=build_config)


def validate_mask(
    mask: VocabMask,
    records: Iterable[LogitRecord],
) -> MaskValidationReport:
    """Check that every ground-truth target lies inside the mask."""
    n_samples = 0
    n_hits = 0
    missing: set[int] = set()
    for record in records:
        if record.vocab_size != mask.vocab_size:
            raise ValidationError("record vocab_size disagrees with mask")
        n_samples += 1
        if mask.included[record.target_id]:
            n_hits += 1
        else:
            missing.add(int(record.target_id))
    if n_samples == 0:
        raise ValidationError("no records to validate against")
    return MaskValidationReport(
        n_samples=n_samples,
        n_hits=n_hits,
        missing_token_ids=tuple(sorted(missing)),
    )
