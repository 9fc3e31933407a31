"""Probability-vector math: masked temperature softmax, canonical token
ordering, and vocabulary-structure statistics.

All functions are pure and safe for concurrent use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySupportError, ValidationError
from .types import VocabMask

_SUM_TOL = 1e-9


@dataclass(frozen=True)
class ProbabilityVector:
    """Dense probability vector with an explicit support.

    Entries outside the support are exactly 0; entries on the support
    sum to 1 within 1e-9.
    """

    probs: np.ndarray
    support: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        support = np.asarray(self.support, dtype=bool)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "support", support)
        if probs.shape != support.shape or probs.ndim != 1:
            raise ValidationError("probs and support must be 1-d and aligned")
        if np.any(probs[~support] != 0.0):
            raise ValidationError("entries outside the support must be exactly 0")
        if np.any(probs < 0.0) or np.any(probs > 1.0):
            raise ValidationError("probabilities must lie in [0, 1]")
        total = float(probs[support].sum())
        if abs(total - 1.0) > _SUM_TOL:
            raise ValidationError(f"support mass {total} is not 1 within {_SUM_TOL}")

    @property
    def vocab_size(self) -> int:
        return self.probs.shape[0]

    @property
    def support_size(self) -> int:
        return int(self.support.sum())


@dataclass(frozen=True)
class DistributionStats:
    """How probability mass spreads over the vocabulary for one sample."""

    effective_vocab_size: int
    tail_mass: float
    concentration: float


def masked_temperature_softmax(
    logits: np.ndarray,
    tau: float = 1.0,
    mask: VocabMask | None = None,
) -> ProbabilityVector:
    """Masked, temperature-scaled softmax.

    Excluded tokens are forced to the -inf sentinel before scaling, so
    masking commutes with temperature. The max included logit is
    subtracted before exponentiation; the result is invariant under
    logit shifts and does not overflow even at tau = 0.05.
    """
    if not tau > 0.0:
        raise ValidationError(f"invalid temperature: {tau}")
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise ValidationError(f"logits must be 1-d, got shape {z.shape}")
    if np.isnan(z).any():
        raise ValidationError("logits contain NaN")

    if mask is not None:
        if mask.vocab_size != z.shape[0]:
            raise ValidationError(
                f"mask covers {mask.vocab_size} tokens, logits have {z.shape[0]}"
            )
        z = np.where(mask.included, z, -np.inf)
    support = np.isfinite(z)
    if not support.any():
        raise EmptySupportError("empty support: all tokens masked out")

    scaled = z / tau
    scaled -= scaled[support].max()
    expz = np.exp(scaled, where=support, out=np.zeros_like(scaled))
    probs = expz / expz.sum()
    # Exponent underflow can zero out deep-tail tokens; they are still
    # formally on the support, so keep the flags consistent.
    probs[~support] = 0.0
    return ProbabilityVector(probs=probs, support=support)


def canonical_order(p: ProbabilityVector) -> np.ndarray:
    """Permutation of token ids by descending probability.

    Ties break by ascending token id, giving a total, platform-stable
    order. The result is a bijection on [0, vocab_size).
    """
    return np.argsort(-p.probs, kind="stable")


def distribution_stats(
    p: ProbabilityVector,
    eff_threshold: float = 1e-5,
    tail_rank_cutoff: int = 1000,
    conc_k1: int = 10,
    conc_k2: int = 1000,
) -> DistributionStats:
    """Effective vocabulary size, tail mass, and concentration ratio.

    effective_vocab_size counts entries with probability strictly above
    eff_threshold. tail_mass is the probability at canonical rank >
    tail_rank_cutoff. concentration is mass(top k1) / mass(top k2).
    Cutoffs past the vocabulary end are clamped to it.
    """
    if not 0.0 < eff_threshold < 1.0:
        raise ValidationError(f"eff_threshold must be in (0, 1), got {eff_threshold}")
    if tail_rank_cutoff < 0:
        raise ValidationError(f"tail_rank_cutoff must be >= 0, got {tail_rank_cutoff}")
    if not 1 <= conc_k1 <= conc_k2:
        raise ValidationError(f"need 1 <= conc_k1 <= conc_k2, got ({conc_k1}, {conc_k2})")
    v = p.vocab_size
    tail_rank_cutoff = min(tail_rank_cutoff, v)
    conc_k1, conc_k2 = min(conc_k1, v), min(conc_k2, v)

    sorted_probs = p.probs[canonical_order(p)]
    eff = int((p.probs > eff_threshold).sum())
    tail = float(sorted_probs[tail_rank_cutoff:].sum())
    top_k1 = float(sorted_probs[:conc_k1].sum())
    top_k2 = float(sorted_probs[:conc_k2].sum())
    return DistributionStats(
        effective_vocab_size=eff,
        tail_mass=min(max(tail, 0.0), 1.0),
        concentration=min(top_k1 / top_k2, 1.0),
    )
