"""Evaluation harness: coverage, set-size statistics, efficiency,
stratified coverage, bootstrap confidence intervals, temperature sweeps,
and the Monte Carlo check of the partial-coverage bound.

Conventions fixed here:

* Efficiency uses the full vocabulary in the denominator, never the
  masked subset, so masked and unmasked runs stay comparable.
* A test target with zero probability under the scoring distribution is
  a genuine coverage failure, not an error (in calibration the same
  situation is a hard error; calibrating on it is undefined).
* Median set size is the lower median: integer-valued output.
* Confidence intervals are percentile bootstrap over resampled means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .conformal import build_prediction_set, calibrate_pipeline
from .distribution import masked_temperature_softmax
from .errors import ValidationError
from .synth import SynthConfig, generate
from .types import (
    CalibrationResult,
    ConformalConfig,
    LogitRecord,
    VocabMask,
    derive_sample_rng,
)

# Confidence strata over the true-target probability p_y, per the
# scoring distribution: (label, lo, hi] with lo exclusive.
STRATA_BOUNDS = (
    ("high", 0.5, 1.0),
    ("medium", 0.1, 0.5),
    ("low", 0.0, 0.1),
)


@dataclass(frozen=True)
class StratumReport:
    label: str
    p_lo: float
    p_hi: float
    n: int
    coverage: float | None
    mean_size: float | None
    std_size: float | None


@dataclass(frozen=True)
class EvalReport:
    n_test: int
    coverage: float
    coverage_ci: tuple[float, float]
    mean_set_size: float
    median_set_size: int
    efficiency_eta: float
    n_out_of_support: int
    strata: tuple[StratumReport, ...]
    config_snapshot: dict = field(default_factory=dict)


def bootstrap_ci(
    samples: Sequence[float],
    n_resamples: int = 1000,
    seed: int = 0,
) -> tuple[float, float]:
    """95% percentile-bootstrap interval for the mean.

    Each resample draws indices from its own random source derived from
    (seed, resample index), so the interval is reproducible and
    independent of any evaluation order.
    """
    values = np.asarray(samples, dtype=np.float64)
    if values.size == 0:
        raise ValidationError("bootstrap needs at least one sample")
    n = values.size
    means = np.empty(n_resamples, dtype=np.float64)
    for i in range(n_resamples):
        rng = derive_sample_rng(seed, f"bootstrap-{i:05d}")
        means[i] = values[rng.integers(0, n, n)].mean()
    lo, hi = np.percentile(means, [2.5, 97.5])
    return float(lo), float(hi)


def _stratify(p_y: float) -> str | None:
    for label, lo, hi in STRATA_BOUNDS:
        if lo < p_y <= hi:
            return label
    return None


def evaluate(
    test_records: Iterable[LogitRecord],
    calib: CalibrationResult,
    mask: VocabMask | None = None,
    *,
    seed: int | None = None,
    n_resamples: int = 1000,
) -> EvalReport:
    """Build a prediction set for every record and aggregate the metrics.

    The caller is responsible for keeping the test stream disjoint from
    the calibration data; the CLI enforces this through split manifests.
    """
    if mask is not None and calib.config.mask_id is not None:
        if mask.mask_id != calib.config.mask_id:
            raise ValidationError(
                f"mask {mask.mask_id} is not the one calibrated with "
                f"({calib.config.mask_id})"
            )
    if mask is None and calib.config.mask_id is not None:
        raise ValidationError("calibration used a mask; evaluation needs the same one")
    if mask is not None and calib.config.mask_id is None:
        raise ValidationError("calibration was unmasked; evaluating masked is invalid")
    if seed is None:
        seed = calib.config.seed

    covered: list[int] = []
    sizes: list[int] = []
    vocab_size = None
    n_out_of_support = 0
    per_stratum: dict[str, list[tuple[int, int]]] = {label: [] for label, _, _ in STRATA_BOUNDS}

    for record in test_records:
        vocab_size = record.vocab_size if vocab_size is None else vocab_size
        if record.vocab_size != vocab_size:
            raise ValidationError("test records disagree on vocab_size")
        p = masked_temperature_softmax(record.logits, calib.config.temperature, mask)
        pset = build_prediction_set(p, calib.threshold)
        p_y = float(p.probs[record.target_id])
        if p_y <= 0.0:
            n_out_of_support += 1
            hit = 0
        else:
            hit = int(record.target_id in pset)
        covered.append(hit)
        sizes.append(pset.size)
        label = _stratify(p_y)
        if label is not None:
            per_stratum[label].append((hit, pset.size))

    if not covered:
        raise ValidationError("empty test stream")

    n_test = len(covered)
    coverage = float(np.mean(covered))
    sizes_arr = np.array(sizes, dtype=np.int64)
    strata = []
    for label, lo, hi in STRATA_BOUNDS:
        entries = per_stratum[label]
        if entries:
            hits = np.array([h for h, _ in entries], dtype=np.float64)
            ssizes = np.array([s for _, s in entries], dtype=np.float64)
            strata.append(
                StratumReport(
                    label=label,
                    p_lo=lo,
                    p_hi=hi,
                    n=len(entries),
                    coverage=float(hits.mean()),
                    mean_size=float(ssizes.mean()),
                    std_size=float(ssizes.std()),
                )
            )
        else:
            strata.append(
                StratumReport(label=label, p_lo=lo, p_hi=hi, n=0,
                              coverage=None, mean_size=None, std_size=None)
            )

    snapshot = {
        "alpha": calib.config.alpha,
        "temperature": calib.config.temperature,
        "score_mode": calib.config.score_mode,
        "mask_id": calib.config.mask_id,
        "seed": calib.config.seed,
        "threshold": calib.threshold,
        "n_calibration": calib.n_calibration,
    }
    if n_resamples > 0:
        ci = bootstrap_ci(covered, n_resamples=n_resamples, seed=seed)
    else:
        ci = (coverage, coverage)
    return EvalReport(
        n_test=n_test,
        coverage=coverage,
        coverage_ci=ci,
        mean_set_size=float(sizes_arr.mean()),
        median_set_size=int(np.sort(sizes_arr)[(n_test - 1) // 2]),
        efficiency_eta=1.0 - float(sizes_arr.mean()) / vocab_size,
        n_out_of_support=n_out_of_support,
        strata=tuple(strata),
        config_snapshot=snapshot,
    )


def transfer_evaluate(
    calib_from_a: CalibrationResult,
    mask_from_a: VocabMask | None,
    test_records_b: Iterable[LogitRecord],
    *,
    seed: int | None = None,
    n_resamples: int = 1000,
) -> EvalReport:
    """Evaluate domain-B records under domain-A threshold and mask.

    Out-of-mask targets are flagged through n_out_of_support, not raised:
    domain shift showing up here is a finding, not a bug.
    """
    return evaluate(
        test_records_b, calib_from_a, mask_from_a, seed=seed, n_resamples=n_resamples
    )


@dataclass(frozen=True)
class SweepRow:
    tau: float
    threshold: float
    coverage: float
    mean_set_size: float
    median_set_size: int


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    selected_tau: float | None
    alpha: float
    tolerance: float


def temperature_sweep(
    cal_records: Sequence[LogitRecord],
    test_records: Sequence[LogitRecord],
    mask: VocabMask | None,
    grid: Sequence[float],
    alpha: float,
    mode: str = "deterministic",
    seed: int = 0,
    tolerance: float = 0.005,
) -> SweepResult:
    """Recalibrate at every temperature in the grid and evaluate each.

    The selected temperature minimizes mean set size among rows whose
    coverage stays within `tolerance` of the 1 - alpha target; None when
    no row qualifies.
    """
    if not grid:
        raise ValidationError("temperature grid is empty")
    rows = []
    for tau in grid:
        config = ConformalConfig(
            alpha=alpha, temperature=float(tau), score_mode=mode, seed=seed
        )
        calib = calibrate_pipeline(cal_records, mask, config)
        report = evaluate(test_records, calib, mask, n_resamples=0)
        rows.append(
            SweepRow(
                tau=float(tau),
                threshold=calib.threshold,
                coverage=report.coverage,
                mean_set_size=report.mean_set_size,
                median_set_size=report.median_set_size,
            )
        )
    eligible = [r for r in rows if r.coverage >= 1.0 - alpha - tolerance]
    selected = min(eligible, key=lambda r: (r.mean_set_size, r.tau)).tau if eligible else None
    return SweepResult(rows=tuple(rows), selected_tau=selected, alpha=alpha, tolerance=tolerance)


@dataclass(frozen=True)
class PartialCoverageCheck:
    measured_coverage: float
    bound: float
    margin: float
    inclusion_prob: float
    n_calibration: int
    n_test: int

    @property
    def passed(self) -> bool:
        return self.measured_coverage >= self.bound - self.margin


def verify_partial_coverage_bound(
    config: SynthConfig,
    alpha: float,
    n_cal: int = 2000,
    mode: str = "deterministic",
) -> PartialCoverageCheck:
    """Monte Carlo check that restricting to the live vocabulary keeps
    marginal coverage at least (1 - alpha) * p, with p the probability
    the target lies in the live set.

    Calibration drops out-of-mask targets (only in-vocabulary scores
    exist); evaluation counts them as misses. The margin is a 3-sigma
    binomial allowance around the bound.
    """
    if config.n_samples <= n_cal:
        raise ValidationError("config.n_samples must exceed n_cal")
    records, _, true_mask = generate(config)
    cal_records = [r for r in records[:n_cal] if true_mask.included[r.target_id]]
    test_records = records[n_cal:]
    if not cal_records:
        raise ValidationError("every calibration target fell outside the mask")

    conformal_config = ConformalConfig(
        alpha=alpha, temperature=1.0, score_mode=mode, seed=config.seed
    )
    calib = calibrate_pipeline(cal_records, true_mask, conformal_config)
    report = evaluate(test_records, calib, true_mask, n_resamples=0)

    p = 1.0 - config.target_outside_prob
    bound = (1.0 - alpha) * p
    margin = 3.0 * math.sqrt(bound * (1.0 - bound) / len(test_records))
    return PartialCoverageCheck(
        measured_coverage=report.coverage,
        bound=bound,
        margin=margin,
        inclusion_prob=p,
        n_calibration=len(cal_records),
        n_test=len(test_records),
    )
