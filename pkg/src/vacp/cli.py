"""Command-line surface for the calibrate/predict pipeline.

Exit codes: 0 success, 2 validation or contract failure, 3 I/O or
format error, 4 statistical guarantee-check failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .conformal import build_prediction_set, calibrate_pipeline
from .distribution import distribution_stats, masked_temperature_softmax
from .errors import FormatError, GuaranteeError, ValidationError, VacpError
from .evaluation import evaluate, temperature_sweep, verify_partial_coverage_bound
from .masking import empirical_filter, empirical_max_probs, structural_filter, validate_mask
from .synth import SynthConfig, generate
from .types import ConformalConfig

EXIT_OK = 0
EXIT_CONTRACT = 2
EXIT_FORMAT = 3
EXIT_GUARANTEE = 4


def _load_synth_config(path: str, seed_override: int | None) -> SynthConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as err:
        raise FormatError(f"cannot read config: {err}", path=path) from None
    except json.JSONDecodeError as err:
        raise FormatError(f"invalid JSON config: {err}", path=path) from None
    if not isinstance(raw, dict):
        raise FormatError("synthetic config must be a JSON object", path=path)
    known = {f.name for f in dataclasses.fields(SynthConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValidationError(f"unknown synthetic-config keys: {unknown}")
    if seed_override is not None:
        raw["seed"] = seed_override
    try:
        return SynthConfig(**raw)
    except TypeError as err:
        raise ValidationError(f"bad synthetic config: {err}") from None


def _records_for(args, *, split: str | None):
    records = io.read_logit_dataset(args.data)
    manifest_path = getattr(args, "manifest", None)
    if manifest_path:
        manifest = io.read_manifest(manifest_path)
        use_split = getattr(args, "split", None) or split
        if use_split:
            records = io.select_split(records, manifest, use_split)
            if not records:
                raise ValidationError(f"split {use_split!r} selected no records")
    return records


def _cmd_gen(args) -> int:
    config = _load_synth_config(args.config, args.seed)
    records, metadata, true_mask = generate(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_logit_dataset(out / "dataset.bin", records)
    io.write_token_metadata(out / "metadata.jsonl", metadata)
    io.write_mask(out / "true_mask.json", true_mask)
    manifest = io.make_split_manifest(
        dataset_id=f"synthetic-{config.seed}",
        sample_ids=[r.sample_id for r in records],
        calibration_fraction=args.cal_frac,
        validation_fraction=args.val_frac,
        seed=config.seed,
    )
    io.write_manifest(out / "manifest.json", manifest)
    print(f"wrote {len(records)} records (vocab {config.vocab_size}) to {out}")
    print(
        f"splits: calibration {len(manifest.calibration_ids)}, "
        f"validation {len(manifest.validation_ids)}, "
        f"evaluation {len(manifest.evaluation_ids)}"
    )
    return EXIT_OK


def _cmd_stats(args) -> int:
    records = _records_for(args, split=None)
    mask = io.read_mask(args.mask) if args.mask else None
    rows = []
    for record in records:
        p = masked_temperature_softmax(record.logits, args.tau, mask)
        s = distribution_stats(p)
        rows.append((record.sample_id, s.effective_vocab_size, s.tail_mass, s.concentration))
    eff = np.array([r[1] for r in rows], dtype=np.float64)
    tail = np.array([r[2] for r in rows], dtype=np.float64)
    conc = np.array([r[3] for r in rows], dtype=np.float64)
    print(f"samples: {len(rows)}   vocab: {records[0].vocab_size}   tau: {args.tau}")
    print(f"effective vocab size (p > 1e-5): mean {eff.mean():.1f}  std {eff.std():.1f}")
    print(f"tail mass (rank > 1000):         mean {tail.mean():.6f}  std {tail.std():.6f}")
    print(f"top-10 / top-1000 concentration: mean {conc.mean():.4f}  std {conc.std():.4f}")
    if args.out:
        lines = ["sample_id,effective_vocab_size,tail_mass,concentration"]
        lines += [f"{sid},{e},{t},{c}" for sid, e, t, c in rows]
        io.write_text_file(args.out, "\n".join(lines) + "\n")
        print(f"per-sample stats written to {args.out}")
    return EXIT_OK


def _cmd_mask_build(args) -> int:
    metadata = io.read_token_metadata(args.metadata)
    records = _records_for(args, split="validation")
    base = structural_filter(metadata)
    max_probs = empirical_max_probs(records)
    mask = empirical_filter(base, max_probs, args.threshold)
    io.write_mask(args.out, mask)
    counts = mask.reason_counts()
    print(f"vocab size:          {mask.vocab_size}")
    print(f"structural excluded: {counts['structural']}")
    print(f"empirical excluded:  {counts['empirical']}")
    print(f"included:            {mask.n_included}")
    print(f"mask written to {args.out} (mask_id {mask.mask_id})")
    return EXIT_OK


def _cmd_mask_validate(args) -> int:
    mask = io.read_mask(args.mask)
    records = _records_for(args, split=None)
    report = validate_mask(mask, records)
    print(f"samples: {report.n_samples}  hits: {report.n_hits}  "
          f"hit_rate: {report.hit_rate:.6f}")
    if report.missing_token_ids:
        print(f"missing token ids: {list(report.missing_token_ids)}")
        raise GuaranteeError(
            f"{len(report.missing_token_ids)} ground-truth tokens fall outside the mask"
        )
    print("all ground-truth tokens lie inside the mask")
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    records = _records_for(args, split="calibration")
    mask = io.read_mask(args.mask) if args.mask else None
    config = ConformalConfig(
        alpha=args.alpha,
        temperature=args.tau,
        score_mode=args.mode,
        mask_id=mask.mask_id if mask is not None else None,
        seed=args.seed,
    )
    calib = calibrate_pipeline(records, mask, config)
    io.write_calibration(args.out, calib)
    print(f"calibrated on {calib.n_calibration} samples: threshold {calib.threshold!r}")
    print(f"calibration written to {args.out}")
    return EXIT_OK


def _cmd_predict(args) -> int:
    records = _records_for(args, split=None)
    calib = io.read_calibration(args.calibration)
    mask = io.read_mask(args.mask) if args.mask else None
    if calib.config.mask_id is not None and mask is None:
        raise ValidationError("calibration used a mask; pass the same one via --mask")
    if mask is not None and calib.config.mask_id != mask.mask_id:
        raise ValidationError(
            f"mask {mask.mask_id} is not the one calibrated with ({calib.config.mask_id})"
        )
    entries = []
    for record in records:
        p = masked_temperature_softmax(record.logits, calib.config.temperature, mask)
        entries.append((record.sample_id, build_prediction_set(p, calib.threshold)))
    io.write_prediction_sets(args.out, entries)
    sizes = np.array([pset.size for _, pset in entries])
    print(f"predicted {len(entries)} sets: mean size {sizes.mean():.2f}, "
          f"median {int(np.median(sizes))}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    records = _records_for(args, split="evaluation")
    calib = io.read_calibration(args.calibration)
    mask = io.read_mask(args.mask) if args.mask else None
    report = evaluate(records, calib, mask, seed=args.seed)
    io.write_eval_report(args.out, report)
    csv_path = args.csv or str(Path(args.out).with_suffix(".csv"))
    io.write_eval_csv(csv_path, report)
    print(f"n_test {report.n_test}  coverage {report.coverage:.4f} "
          f"(95% CI {report.coverage_ci[0]:.4f}..{report.coverage_ci[1]:.4f})")
    print(f"mean set size {report.mean_set_size:.2f}  median {report.median_set_size}  "
          f"efficiency {report.efficiency_eta:.4f}")
    if report.n_out_of_support:
        print(f"targets outside support: {report.n_out_of_support}")
    print(f"report written to {args.out} (CSV row: {csv_path})")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    records = io.read_logit_dataset(args.data)
    manifest = io.read_manifest(args.manifest)
    cal_records = io.select_split(records, manifest, "calibration")
    test_records = io.select_split(records, manifest, "evaluation")
    mask = io.read_mask(args.mask) if args.mask else None
    try:
        grid = [float(t) for t in args.grid.split(",") if t.strip()]
    except ValueError:
        raise ValidationError(f"bad temperature grid {args.grid!r}") from None
    sweep = temperature_sweep(
        cal_records,
        test_records,
        mask,
        grid,
        alpha=args.alpha,
        mode=args.mode,
        seed=args.seed,
        tolerance=args.tolerance,
    )
    io.write_sweep_result(args.out, sweep)
    print(f"{'tau':>8} {'threshold':>12} {'coverage':>9} {'mean|C|':>9} {'median':>7}")
    for row in sweep.rows:
        print(f"{row.tau:>8.3g} {row.threshold:>12.6f} {row.coverage:>9.4f} "
              f"{row.mean_set_size:>9.2f} {row.median_set_size:>7d}")
    if sweep.selected_tau is None:
        print("no temperature met the coverage tolerance")
    else:
        print(f"selected tau: {sweep.selected_tau}")
    print(f"sweep table written to {args.out}")
    return EXIT_OK


def _cmd_verify_bound(args) -> int:
    config = _load_synth_config(args.config, args.seed)
    if config.target_outside_prob <= 0.0:
        raise ValidationError(
            "verify-bound needs target_outside_prob > 0; otherwise the bound "
            "reduces to the standard guarantee"
        )
    check = verify_partial_coverage_bound(config, args.alpha, n_cal=args.n_cal)
    print(f"inclusion probability p: {check.inclusion_prob:.4f}")
    print(f"coverage bound (1-alpha)*p: {check.bound:.4f}  (3-sigma margin "
          f"{check.margin:.4f})")
    print(f"measured coverage: {check.measured_coverage:.4f} on {check.n_test} "
          f"test samples ({check.n_calibration} calibration)")
    if not check.passed:
        raise GuaranteeError(
            f"measured coverage {check.measured_coverage:.4f} fell below "
            f"{check.bound:.4f} - {check.margin:.4f}"
        )
    print("bound satisfied")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vacp",
        description="Vocabulary-aware conformal prediction sets for next-token "
                    "prediction: calibrate thresholds, build prediction sets, "
                    "and evaluate coverage/efficiency.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic logit dataset")
    p.add_argument("--config", required=True, help="synthetic-config JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--cal-frac", type=float, default=0.48)
    p.add_argument("--val-frac", type=float, default=0.2)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("stats", help="distribution statistics over a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--manifest", default=None)
    p.add_argument("--split", default=None,
                   choices=("calibration", "validation", "evaluation"))
    p.add_argument("--out", default=None, help="optional per-sample CSV")
    p.set_defaults(func=_cmd_stats)

    p_mask = sub.add_parser("mask", help="build or validate vocabulary masks")
    mask_sub = p_mask.add_subparsers(dest="mask_command", required=True)

    p = mask_sub.add_parser("build", help="structural + empirical filtering")
    p.add_argument("--data", required=True, help="validation-subset logit dataset")
    p.add_argument("--metadata", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--split", default=None,
                   choices=("calibration", "validation", "evaluation"))
    p.add_argument("--threshold", type=float, default=1e-5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_mask_build)

    p = mask_sub.add_parser("validate", help="check ground-truth targets against a mask")
    p.add_argument("--mask", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--split", default=None,
                   choices=("calibration", "validation", "evaluation"))
    p.set_defaults(func=_cmd_mask_validate)

    p = sub.add_parser("calibrate", help="calibrate the score threshold")
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--split", default=None,
                   choices=("calibration", "validation", "evaluation"))
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--mode", default="deterministic",
                   choices=("deterministic", "randomized"))
    p.add_argument("--mask", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("predict", help="emit per-sample prediction sets")
    p.add_argument("--data", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--split", default=None,
                   choices=("calibration", "validation", "evaluation"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="coverage/efficiency report")
    p.add_argument("--data", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--split", default=None,
                   choices=("calibration", "validation", "evaluation"))
    p.add_argument("--seed", type=int, default=None, help="bootstrap seed override")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--csv", default=None, help="CSV row path (default: <out>.csv)")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="temperature sweep with per-tau recalibration")
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--grid", default="0.05,0.1,0.2,0.5,1.0")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--mode", default="deterministic",
                   choices=("deterministic", "randomized"))
    p.add_argument("--mask", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=0.005)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser(
        "verify-bound",
        help="Monte Carlo check of the partial-coverage bound under "
             "vocabulary restriction",
    )
    p.add_argument("--config", required=True, help="synthetic-config JSON file")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--n-cal", type=int, default=2000)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=_cmd_verify_bound)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GuaranteeError as err:
        print(f"guarantee check failed: {err}", file=sys.stderr)
        return EXIT_GUARANTEE
    except FormatError as err:
        print(f"format error: {err}", file=sys.stderr)
        return EXIT_FORMAT
    except (ValidationError, VacpError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
