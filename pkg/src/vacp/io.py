"""File formats and dataset split management.

Binary logit dataset (little-endian):
  header: magic ``VACPLGT1`` (8 bytes), vocab_size u32, record_count u32
  record: sample_id length u16 + UTF-8 bytes, target_id u32,
          logits as float32 * vocab_size

Logits are stored in single precision for interoperability with model
runtimes and promoted to float64 in memory. All structured files are
JSON (or JSON lines) with a format-version field; writers emit a
complete temp file and rename it into place, so partial outputs are
never visible.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, ValidationError
from .evaluation import EvalReport, StratumReport, SweepResult, SweepRow
from .types import (
    REASON_EMPIRICAL,
    REASON_INCLUDED,
    REASON_STRUCTURAL,
    CalibrationResult,
    ConformalConfig,
    LogitRecord,
    PredictionSet,
    TokenMetadata,
    VocabMask,
    derive_sample_rng,
)

MAGIC = b"VACPLGT1"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<8sII")
_ID_LEN = struct.Struct("<H")
_TARGET = struct.Struct("<I")


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_text(path: Path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


def write_text_file(path, text: str) -> None:
    """Atomic plain-text write (complete temp file, then rename)."""
    _atomic_write_text(Path(path), text)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _load_json(path: Path, kind: str) -> dict:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as err:
        raise FormatError(f"cannot read file: {err}", path=path) from None
    except json.JSONDecodeError as err:
        raise FormatError(f"invalid JSON: {err}", path=path) from None
    if not isinstance(data, dict):
        raise FormatError("expected a JSON object", path=path)
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(
            f"format version {version!r} not supported (expected {FORMAT_VERSION}); "
            "regenerate the file with this version of the tool",
            path=path,
        )
    if data.get("kind") != kind:
        raise FormatError(
            f"expected a {kind!r} file, found {data.get('kind')!r}", path=path
        )
    return data


# ---------------------------------------------------------------------------
# Logit dataset (binary)
# ---------------------------------------------------------------------------

def write_logit_dataset(path, records: Sequence[LogitRecord]) -> None:
    if not records:
        raise ValidationError("refusing to write an empty dataset")
    vocab_size = records[0].vocab_size
    seen = set()
    chunks = [_HEADER.pack(MAGIC, vocab_size, len(records))]
    for record in records:
        if record.vocab_size != vocab_size:
            raise ValidationError("records disagree on vocab_size")
        if not np.isfinite(record.logits).all():
            raise ValidationError(
                f"sample {record.sample_id!r}: on-disk records must be fully finite"
            )
        if record.sample_id in seen:
            raise ValidationError(f"duplicate sample_id {record.sample_id!r}")
        seen.add(record.sample_id)
        id_bytes = record.sample_id.encode("utf-8")
        if len(id_bytes) > 0xFFFF:
            raise ValidationError(f"sample_id too long ({len(id_bytes)} bytes)")
        chunks.append(_ID_LEN.pack(len(id_bytes)))
        chunks.append(id_bytes)
        chunks.append(_TARGET.pack(record.target_id))
        chunks.append(record.logits.astype("<f4").tobytes())
    _atomic_write_bytes(Path(path), b"".join(chunks))


class _Reader:
    """Sequential reader that reports the byte offset of any failure."""

    def __init__(self, path: Path):
        self.path = path
        self.data = path.read_bytes()
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise FormatError(
                f"truncated file while reading {what}", path=self.path, offset=self.offset
            )
        out = self.data[self.offset : self.offset + n]
        self.offset += n
        return out


def read_logit_dataset(path) -> list[LogitRecord]:
    path = Path(path)
    if not path.exists():
        raise FormatError("no such file", path=path)
    r = _Reader(path)
    magic, vocab_size, record_count = _HEADER.unpack(r.take(_HEADER.size, "header"))
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", path=path, offset=0)
    if vocab_size == 0:
        raise FormatError("vocab_size is zero", path=path, offset=8)

    records = []
    seen = set()
    for _ in range(record_count):
        (id_len,) = _ID_LEN.unpack(r.take(_ID_LEN.size, "sample_id length"))
        try:
            sample_id = r.take(id_len, "sample_id").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(
                "sample_id is not valid UTF-8", path=path, offset=r.offset - id_len
            ) from None
        target_offset = r.offset
        (target_id,) = _TARGET.unpack(r.take(_TARGET.size, "target_id"))
        if target_id >= vocab_size:
            raise FormatError(
                f"target_id {target_id} out of range (vocab_size {vocab_size})",
                path=path,
                offset=target_offset,
            )
        logits_offset = r.offset
        raw = r.take(4 * vocab_size, "logits")
        logits = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        nan_positions = np.flatnonzero(np.isnan(logits))
        if nan_positions.size:
            raise FormatError(
                f"NaN logit for token {int(nan_positions[0])}",
                path=path,
                offset=logits_offset + 4 * int(nan_positions[0]),
            )
        if sample_id in seen:
            raise FormatError(f"duplicate sample_id {sample_id!r}", path=path)
        seen.add(sample_id)
        records.append(
            LogitRecord(sample_id=sample_id, logits=logits, target_id=int(target_id))
        )
    if r.offset != len(r.data):
        raise FormatError("trailing bytes after final record", path=path, offset=r.offset)
    return records


# ---------------------------------------------------------------------------
# Token metadata (JSON lines)
# ---------------------------------------------------------------------------

_METADATA_FIELDS = ("token_id", "surface", "is_special", "is_reserved", "is_printable")


def write_token_metadata(path, metadata: Sequence[TokenMetadata]) -> None:
    lines = []
    for m in sorted(metadata, key=lambda m: m.token_id):
        lines.append(
            json.dumps(
                {
                    "token_id": m.token_id,
                    "surface": m.surface,
                    "is_special": m.is_special,
                    "is_reserved": m.is_reserved,
                    "is_printable": m.is_printable,
                }
            )
        )
    _atomic_write_text(Path(path), "\n".join(lines) + "\n")


def read_token_metadata(path) -> list[TokenMetadata]:
    path = Path(path)
    if not path.exists():
        raise FormatError("no such file", path=path)
    entries: dict[int, TokenMetadata] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise FormatError(f"line {lineno}: invalid JSON: {err}", path=path) from None
            missing = [f for f in _METADATA_FIELDS if f not in obj]
            if missing:
                raise FormatError(f"line {lineno}: missing fields {missing}", path=path)
            token_id = obj["token_id"]
            if not isinstance(token_id, int) or token_id < 0:
                raise FormatError(f"line {lineno}: bad token_id {token_id!r}", path=path)
            if token_id in entries:
                raise FormatError(f"line {lineno}: duplicate token_id {token_id}", path=path)
            entries[token_id] = TokenMetadata(
                token_id=token_id,
                surface=str(obj["surface"]),
                is_special=bool(obj["is_special"]),
                is_reserved=bool(obj["is_reserved"]),
                is_printable=bool(obj["is_printable"]),
            )
    if not entries:
        raise FormatError("empty metadata file", path=path)
    vocab_size = max(entries) + 1
    gaps = [t for t in range(vocab_size) if t not in entries]
    if gaps:
        raise FormatError(
            f"token ids not dense: first gap at {gaps[0]} of {vocab_size}", path=path
        )
    return [entries[t] for t in range(vocab_size)]


# ---------------------------------------------------------------------------
# Vocabulary mask
# ---------------------------------------------------------------------------

def _runs(ids: np.ndarray) -> list[list[int]]:
    """Run-length encode a sorted integer id array as [start, length] pairs."""
    if ids.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(ids) != 1)
    starts = np.concatenate(([0], breaks + 1))
    ends = np.concatenate((breaks, [ids.size - 1]))
    return [[int(ids[s]), int(ids[e] - ids[s] + 1)] for s, e in zip(starts, ends)]


def _ids_from_runs(runs, vocab_size: int, path: Path) -> np.ndarray:
    ids = []
    for run in runs:
        if (not isinstance(run, list)) or len(run) != 2:
            raise FormatError(f"malformed run {run!r}", path=path)
        start, length = run
        if start < 0 or length < 1 or start + length > vocab_size:
            raise FormatError(f"run {run!r} outside [0, {vocab_size})", path=path)
        ids.extend(range(start, start + length))
    return np.array(ids, dtype=np.int64)


def write_mask(path, mask: VocabMask) -> None:
    included_ids = np.flatnonzero(mask.included)
    structural_ids = np.flatnonzero(mask.reasons == REASON_STRUCTURAL)
    empirical_ids = np.flatnonzero(mask.reasons == REASON_EMPIRICAL)
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": "vocab-mask",
        "vocab_size": mask.vocab_size,
        "mask_id": mask.mask_id,
        "n_included": int(included_ids.size),
        "exclusion_counts": mask.reason_counts(),
        "included_runs": _runs(included_ids),
        "structural_runs": _runs(structural_ids),
        "empirical_runs": _runs(empirical_ids),
        "build_config": mask.build_config,
    }
    _atomic_write_text(Path(path), _dump_json(payload))


def read_mask(path) -> VocabMask:
    path = Path(path)
    data = _load_json(path, "vocab-mask")
    vocab_size = data["vocab_size"]
    included_ids = _ids_from_runs(data["included_runs"], vocab_size, path)
    structural_ids = _ids_from_runs(data["structural_runs"], vocab_size, path)
    empirical_ids = _ids_from_runs(data["empirical_runs"], vocab_size, path)

    reasons = np.full(vocab_size, 0xFF, dtype=np.uint8)
    for ids, code in (
        (included_ids, REASON_INCLUDED),
        (structural_ids, REASON_STRUCTURAL),
        (empirical_ids, REASON_EMPIRICAL),
    ):
        if np.any(reasons[ids] != 0xFF):
            raise FormatError("mask categories overlap", path=path)
        reasons[ids] = code
    if np.any(reasons == 0xFF):
        raise FormatError("mask categories do not cover the vocabulary", path=path)

    included = np.zeros(vocab_size, dtype=bool)
    included[included_ids] = True
    mask = VocabMask(
        included=included, reasons=reasons, build_config=data.get("build_config", {})
    )
    if data.get("mask_id") != mask.mask_id:
        raise FormatError(
            f"mask_id {data.get('mask_id')!r} does not match contents "
            f"({mask.mask_id}); file corrupted?",
            path=path,
        )
    return mask


# ---------------------------------------------------------------------------
# Calibration result
# ---------------------------------------------------------------------------

def write_calibration(path, calib: CalibrationResult) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": "calibration",
        "threshold": calib.threshold,
        "n_calibration": calib.n_calibration,
        "score_samples_digest": calib.score_samples_digest,
        "config": {
            "alpha": calib.config.alpha,
            "temperature": calib.config.temperature,
            "score_mode": calib.config.score_mode,
            "mask_id": calib.config.mask_id,
            "seed": calib.config.seed,
        },
    }
    _atomic_write_text(Path(path), _dump_json(payload))


def read_calibration(path) -> CalibrationResult:
    path = Path(path)
    data = _load_json(path, "calibration")
    try:
        cfg = data["config"]
        config = ConformalConfig(
            alpha=cfg["alpha"],
            temperature=cfg["temperature"],
            score_mode=cfg["score_mode"],
            mask_id=cfg.get("mask_id"),
            seed=cfg["seed"],
        )
        return CalibrationResult(
            threshold=data["threshold"],
            n_calibration=data["n_calibration"],
            config=config,
            score_samples_digest=data["score_samples_digest"],
        )
    except (KeyError, TypeError, ValidationError) as err:
        raise FormatError(f"invalid calibration file: {err}", path=path) from None


# ---------------------------------------------------------------------------
# Split manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitManifest:
    """Disjoint calibration/validation/evaluation sample-id sets.

    Disjointness is the mechanical backbone of the coverage guarantee:
    evaluation data must never influence threshold selection.
    """

    dataset_id: str
    calibration_ids: tuple[str, ...]
    validation_ids: tuple[str, ...]
    evaluation_ids: tuple[str, ...]
    fractions: dict

    def __post_init__(self):
        cal, val, ev = (
            set(self.calibration_ids),
            set(self.validation_ids),
            set(self.evaluation_ids),
        )
        if len(cal) != len(self.calibration_ids) or len(val) != len(
            self.validation_ids
        ) or len(ev) != len(self.evaluation_ids):
            raise ValidationError("split contains duplicate sample ids")
        overlap = (cal & val) | (cal & ev) | (val & ev)
        if overlap:
            some = sorted(overlap)[:5]
            raise ValidationError(f"splits overlap on {len(overlap)} ids, e.g. {some}")

    def ids_for(self, split: str) -> tuple[str, ...]:
        try:
            return {
                "calibration": self.calibration_ids,
                "validation": self.validation_ids,
                "evaluation": self.evaluation_ids,
            }[split]
        except KeyError:
            raise ValidationError(f"unknown split {split!r}") from None


def make_split_manifest(
    dataset_id: str,
    sample_ids: Sequence[str],
    *,
    calibration_fraction: float = 0.48,
    validation_fraction: float = 0.2,
    seed: int = 0,
) -> SplitManifest:
    """Deterministic shuffle-and-partition of the sample ids.

    The remainder after the calibration and validation cuts becomes the
    evaluation split.
    """
    if calibration_fraction < 0 or validation_fraction < 0:
        raise ValidationError("fractions must be non-negative")
    if calibration_fraction + validation_fraction >= 1.0:
        raise ValidationError("calibration + validation fractions must leave room "
                              "for evaluation")
    ids = list(sample_ids)
    if len(set(ids)) != len(ids):
        raise ValidationError("sample ids must be unique")
    rng = derive_sample_rng(seed, f"split:{dataset_id}")
    order = rng.permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_cal = int(calibration_fraction * len(ids))
    n_val = int(validation_fraction * len(ids))
    return SplitManifest(
        dataset_id=dataset_id,
        calibration_ids=tuple(shuffled[:n_cal]),
        validation_ids=tuple(shuffled[n_cal : n_cal + n_val]),
        evaluation_ids=tuple(shuffled[n_cal + n_val :]),
        fractions={
            "calibration": calibration_fraction,
            "validation": validation_fraction,
            "evaluation": 1.0 - calibration_fraction - validation_fraction,
        },
    )


def write_manifest(path, manifest: SplitManifest) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": "split-manifest",
        "dataset_id": manifest.dataset_id,
        "fractions": manifest.fractions,
        "calibration_ids": list(manifest.calibration_ids),
        "validation_ids": list(manifest.validation_ids),
        "evaluation_ids": list(manifest.evaluation_ids),
    }
    _atomic_write_text(Path(path), _dump_json(payload))


def read_manifest(path) -> SplitManifest:
    path = Path(path)
    data = _load_json(path, "split-manifest")
    try:
        return SplitManifest(
            dataset_id=data["dataset_id"],
            calibration_ids=tuple(data["calibration_ids"]),
            validation_ids=tuple(data["validation_ids"]),
            evaluation_ids=tuple(data["evaluation_ids"]),
            fractions=data.get("fractions", {}),
        )
    except KeyError as err:
        raise FormatError(f"invalid manifest: missing {err}", path=path) from None


def select_split(
    records: Sequence[LogitRecord],
    manifest: SplitManifest,
    split: str,
) -> list[LogitRecord]:
    """Records belonging to one split, in dataset order."""
    wanted = set(manifest.ids_for(split))
    selected = [r for r in records if r.sample_id in wanted]
    missing = wanted - {r.sample_id for r in selected}
    if missing:
        some = sorted(missing)[:5]
        raise ValidationError(
            f"{len(missing)} manifest ids missing from the dataset, e.g. {some}"
        )
    return selected


# ---------------------------------------------------------------------------
# Evaluation report / sweep table / prediction sets
# ---------------------------------------------------------------------------

def _report_payload(report: EvalReport) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "eval-report",
        "n_test": report.n_test,
        "coverage": report.coverage,
        "coverage_ci": [report.coverage_ci[0], report.coverage_ci[1]],
        "mean_set_size": report.mean_set_size,
        "median_set_size": report.median_set_size,
        "efficiency_eta": report.efficiency_eta,
        "n_out_of_support": report.n_out_of_support,
        "strata": [
            {
                "label": s.label,
                "p_lo": s.p_lo,
                "p_hi": s.p_hi,
                "n": s.n,
                "coverage": s.coverage,
                "mean_size": s.mean_size,
                "std_size": s.std_size,
            }
            for s in report.strata
        ],
        "config": report.config_snapshot,
    }


def write_eval_report(path, report: EvalReport) -> None:
    _atomic_write_text(Path(path), _dump_json(_report_payload(report)))


def read_eval_report(path) -> EvalReport:
    path = Path(path)
    data = _load_json(path, "eval-report")
    try:
        strata = tuple(
            StratumReport(
                label=s["label"],
                p_lo=s["p_lo"],
                p_hi=s["p_hi"],
                n=s["n"],
                coverage=s["coverage"],
                mean_size=s["mean_size"],
                std_size=s["std_size"],
            )
            for s in data["strata"]
        )
        return EvalReport(
            n_test=data["n_test"],
            coverage=data["coverage"],
            coverage_ci=(data["coverage_ci"][0], data["coverage_ci"][1]),
            mean_set_size=data["mean_set_size"],
            median_set_size=data["median_set_size"],
            efficiency_eta=data["efficiency_eta"],
            n_out_of_support=data["n_out_of_support"],
            strata=strata,
            config_snapshot=data.get("config", {}),
        )
    except (KeyError, IndexError, TypeError) as err:
        raise FormatError(f"invalid eval report: {err}", path=path) from None


_CSV_COLUMNS = (
    "alpha", "temperature", "score_mode", "mask_id", "seed", "threshold",
    "n_calibration", "n_test", "coverage", "ci_lo", "ci_hi",
    "mean_set_size", "median_set_size", "efficiency_eta", "n_out_of_support",
)


def write_eval_csv(path, report: EvalReport) -> None:
    """Flat one-row CSV mirror of the report, for spreadsheet joins."""
    cfg = report.config_snapshot
    row = {
        "alpha": cfg.get("alpha"),
        "temperature": cfg.get("temperature"),
        "score_mode": cfg.get("score_mode"),
        "mask_id": cfg.get("mask_id") or "",
        "seed": cfg.get("seed"),
        "threshold": cfg.get("threshold"),
        "n_calibration": cfg.get("n_calibration"),
        "n_test": report.n_test,
        "coverage": report.coverage,
        "ci_lo": report.coverage_ci[0],
        "ci_hi": report.coverage_ci[1],
        "mean_set_size": report.mean_set_size,
        "median_set_size": report.median_set_size,
        "efficiency_eta": report.efficiency_eta,
        "n_out_of_support": report.n_out_of_support,
    }
    lines = [
        ",".join(_CSV_COLUMNS),
        ",".join(str(row[c]) for c in _CSV_COLUMNS),
    ]
    _atomic_write_text(Path(path), "\n".join(lines) + "\n")


def write_sweep_result(path, sweep: SweepResult) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": "temperature-sweep",
        "alpha": sweep.alpha,
        "tolerance": sweep.tolerance,
        "selected_tau": sweep.selected_tau,
        "rows": [
            {
                "tau": r.tau,
                "threshold": r.threshold,
                "coverage": r.coverage,
                "mean_set_size": r.mean_set_size,
                "median_set_size": r.median_set_size,
            }
            for r in sweep.rows
        ],
    }
    _atomic_write_text(Path(path), _dump_json(payload))


def read_sweep_result(path) -> SweepResult:
    path = Path(path)
    data = _load_json(path, "temperature-sweep")
    rows = tuple(
        SweepRow(
            tau=r["tau"],
            threshold=r["threshold"],
            coverage=r["coverage"],
            mean_set_size=r["mean_set_size"],
            median_set_size=r["median_set_size"],
        )
        for r in data["rows"]
    )
    return SweepResult(
        rows=rows,
        selected_tau=data["selected_tau"],
        alpha=data["alpha"],
        tolerance=data["tolerance"],
    )


def write_prediction_sets(
    path, entries: Iterable[tuple[str, PredictionSet]]
) -> None:
    """JSON-lines dump of per-sample prediction sets."""
    lines = []
    for sample_id, pset in entries:
        lines.append(
            json.dumps(
                {
                    "sample_id": sample_id,
                    "size": pset.size,
                    "cumulative_mass": pset.cumulative_mass,
                    "token_ids": [int(t) for t in pset.token_ids],
                    "token_probs": [float(p) for p in pset.token_probs],
                }
            )
        )
    _atomic_write_text(Path(path), "\n".join(lines) + "\n")


def read_prediction_sets(path) -> list[tuple[str, PredictionSet]]:
    path = Path(path)
    if not path.exists():
        raise FormatError("no such file", path=path)
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                pset = PredictionSet(
                    token_ids=np.array(obj["token_ids"], dtype=np.int64),
                    token_probs=np.array(obj["token_probs"], dtype=np.float64),
                    cumulative_mass=obj["cumulative_mass"],
                )
                if obj["size"] != pset.size:
                    raise FormatError(f"line {lineno}: size disagrees with tokens",
                                      path=path)
                entries.append((obj["sample_id"], pset))
            except (json.JSONDecodeError, KeyError, ValidationError) as err:
                raise FormatError(f"line {lineno}: {err}", path=path) from None
    return entries
