"""Exchangeable synthetic logit datasets with controllable vocabulary
structure.

Samples are i.i.d. given the config, which is exactly the
exchangeability hypothesis the coverage guarantee needs, so coverage
properties tested on this generator are valid tests of the conformal
machinery. Live tokens get Zipf-decayed logits (randomly permuted per
sample, plus Gaussian noise); dead tokens sit a fixed logit gap below
the live floor, far under any plausible empirical-filter threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .types import (
    REASON_EMPIRICAL,
    REASON_INCLUDED,
    REASON_STRUCTURAL,
    LogitRecord,
    TokenMetadata,
    VocabMask,
    derive_sample_rng,
)

# Logit gap between the live floor and the dead ceiling. Total dead mass
# is bounded by vocab_size * exp(-gap), which must stay < 1e-6.
_DEAD_GAP = 40.0

_SPECIAL_SURFACES = ("<pad>", "<eos>", "<bos>", "<unk>")
_N_RESERVED = 8


@dataclass(frozen=True)
class SynthConfig:
    """Generator knobs.

    target_temperature controls how concentrated the *true* next-token
    distribution is relative to the model's softmax. At 1.0 targets come
    from the model's own distribution (well-specified; every mass level
    maps back to the same rank quantile, so temperature scaling cannot
    shrink recalibrated sets). Below 1.0 the truth is sharper than the
    model, the regime real language models sit in, where the tail of the
    softmax is wasted mass and masking plus sharpening pays off.
    """

    vocab_size: int
    n_samples: int
    dead_fraction: float = 0.8
    # default decay tuned so desk-scale top-10/top-1000 concentration
    # lands in [0.7, 0.95], qualitatively matching large-model structure
    zipf_exponent: float = 1.3
    logit_noise_scale: float = 1.0
    target_outside_prob: float = 0.0
    target_temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValidationError("vocab_size must be at least 2")
        if self.n_samples < 1:
            raise ValidationError("n_samples must be at least 1")
        if not 0.0 <= self.dead_fraction < 1.0:
            raise ValidationError("dead_fraction must be in [0, 1)")
        if not self.zipf_exponent > 0.0:
            raise ValidationError("zipf_exponent must be positive")
        if self.logit_noise_scale < 0.0:
            raise ValidationError("logit_noise_scale must be non-negative")
        if not 0.0 <= self.target_outside_prob <= 1.0:
            raise ValidationError("target_outside_prob must be in [0, 1]")
        if self.target_outside_prob > 0.0 and self.dead_fraction == 0.0:
            raise ValidationError(
                "target_outside_prob > 0 requires dead tokens to draw from"
            )
        if not self.target_temperature > 0.0:
            raise ValidationError("target_temperature must be positive")

    @property
    def n_dead(self) -> int:
        return int(self.dead_fraction * self.vocab_size)

    @property
    def n_live(self) -> int:
        return self.vocab_size - self.n_dead


def _token_metadata(config: SynthConfig, dead_ids: np.ndarray) -> list[TokenMetadata]:
    """Dense metadata; a few dead tokens get special/reserved/control
    surfaces so structural filtering has something to do."""
    special: dict[int, TokenMetadata] = {}
    dead_list = [int(t) for t in dead_ids]
    for token_id, surface in zip(dead_list, _SPECIAL_SURFACES):
        special[token_id] = TokenMetadata(token_id, surface, is_special=True)
    offset = len(special)
    for i, token_id in enumerate(dead_list[offset : offset + _N_RESERVED]):
        special[token_id] = TokenMetadata(token_id, f"<unused{i}>", is_reserved=True)
    if len(dead_list) > offset + _N_RESERVED:
        token_id = dead_list[offset + _N_RESERVED]
        special[token_id] = TokenMetadata(token_id, "\x00\x01", is_printable=False)
    return [
        special.get(t, TokenMetadata(t, f"tok{t}"))
        for t in range(config.vocab_size)
    ]


def generate(
    config: SynthConfig,
) -> tuple[list[LogitRecord], list[TokenMetadata], VocabMask]:
    """Generate records, token metadata, and the true live-token mask.

    Per sample: live tokens receive the Zipf-decayed base logits under a
    fresh random permutation, plus Gaussian noise; dead tokens sit
    _DEAD_GAP below the live floor. The target is drawn from the
    sample's own softmax restricted to live tokens, except with
    probability target_outside_prob it is drawn uniformly from the dead
    tokens. Fully deterministic given config.
    """
    n_dead, n_live = config.n_dead, config.n_live
    if n_dead > 0:
        bound = config.vocab_size * np.exp(-_DEAD_GAP)
        if bound >= 1e-6:
            raise ValidationError(
                f"dead-token mass bound {bound:.3g} too loose for this vocab_size"
            )

    rng_structure = derive_sample_rng(config.seed, "structure")
    token_perm = rng_structure.permutation(config.vocab_size)
    dead_ids = np.sort(token_perm[:n_dead])
    live_ids = np.sort(token_perm[n_dead:])

    base = -config.zipf_exponent * np.log(np.arange(1, n_live + 1, dtype=np.float64))
    records = []
    for i in range(config.n_samples):
        sample_id = f"synth-{i:06d}"
        rng = derive_sample_rng(config.seed, sample_id)

        rank_of = rng.permutation(n_live)
        live_logits = base[rank_of]
        if config.logit_noise_scale > 0.0:
            live_logits = live_logits + rng.normal(0.0, config.logit_noise_scale, n_live)

        logits = np.empty(config.vocab_size, dtype=np.float64)
        logits[live_ids] = live_logits
        if n_dead > 0:
            floor = live_logits.min()
            logits[dead_ids] = floor - _DEAD_GAP * (1.0 + rng.uniform(0.0, 0.1, n_dead))

        if config.target_outside_prob > 0.0 and rng.uniform() < config.target_outside_prob:
            target = int(rng.choice(dead_ids))
        else:
            scaled = live_logits / config.target_temperature
            live_probs = np.exp(scaled - scaled.max())
            live_probs /= live_probs.sum()
            target = int(live_ids[rng.choice(n_live, p=live_probs)])
        records.append(LogitRecord(sample_id=sample_id, logits=logits, target_id=target))

    metadata = _token_metadata(config, dead_ids)
    included = np.zeros(config.vocab_size, dtype=bool)
    included[live_ids] = True
    reasons = np.full(config.vocab_size, REASON_EMPIRICAL, dtype=np.uint8)
    reasons[live_ids] = REASON_INCLUDED
    for m in metadata:
        if m.is_special or m.is_reserved or not m.is_printable:
            reasons[m.token_id] = REASON_STRUCTURAL
    true_mask = VocabMask(
        included=included,
        reasons=reasons,
        build_config={
            "source": "synthetic",
            "seed": config.seed,
            "dead_fraction": config.dead_fraction,
        },
    )
    return records, metadata, true_mask


def target_inclusion_rate(records, mask: VocabMask) -> float:
    """Fraction of records whose target lies inside the mask; the
    empirical estimate of the probability the truth is in-vocabulary."""
    records = list(records)
    if not records:
        raise ValidationError("no records")
    hits = sum(1 for r in records if mask.included[r.target_id])
    return hits / len(records)
