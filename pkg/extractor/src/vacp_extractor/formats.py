"""Writers for the conformal engine's on-disk formats.

Implemented here against the published wire format rather than imported
from the engine, so the two packages stay coupled only through files:

  logit dataset (little-endian binary):
    magic "VACPLGT1", vocab_size u32, record_count u32, then per record
    sample_id length u16 + UTF-8 bytes, target_id u32,
    float32 logits * vocab_size
  token metadata: JSON lines with token_id/surface/is_special/
    is_reserved/is_printable, dense over [0, vocab_size)
  split manifest: JSON with format_version 1 and pairwise-disjoint
    calibration/validation/evaluation id lists
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"VACPLGT1"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<8sII")
_ID_LEN = struct.Struct("<H")
_TARGET = struct.Struct("<I")


def _atomic_write(path, payload: bytes) -> None:
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


def write_logit_dataset(path, records: Sequence[tuple[str, int, np.ndarray]],
                        vocab_size: int) -> None:
    """records: (sample_id, target_id, logits) triples, logits length vocab_size."""
    if not records:
        raise ValueError("no records to write")
    chunks = [_HEADER.pack(MAGIC, vocab_size, len(records))]
    for sample_id, target_id, logits in records:
        logits = np.asarray(logits, dtype=np.float32)
        if logits.shape != (vocab_size,):
            raise ValueError(f"{sample_id}: logits shape {logits.shape}")
        if not np.isfinite(logits).all():
            raise ValueError(f"{sample_id}: non-finite logits")
        if not 0 <= target_id < vocab_size:
            raise ValueError(f"{sample_id}: target {target_id} out of range")
        id_bytes = sample_id.encode("utf-8")
        chunks.append(_ID_LEN.pack(len(id_bytes)))
        chunks.append(id_bytes)
        chunks.append(_TARGET.pack(target_id))
        chunks.append(logits.astype("<f4").tobytes())
    _atomic_write(path, b"".join(chunks))


def write_token_metadata(path, rows: Sequence[dict]) -> None:
    lines = [
        json.dumps({
            "token_id": r["token_id"],
            "surface": r["surface"],
            "is_special": r["is_special"],
            "is_reserved": r["is_reserved"],
            "is_printable": r["is_printable"],
        })
        for r in sorted(rows, key=lambda r: r["token_id"])
    ]
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def split_rng(seed: int, label: str) -> np.random.Generator:
    digest = hashlib.blake2b(
        label.encode("utf-8"),
        key=int(seed).to_bytes(8, "little", signed=True),
        digest_size=16,
    ).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def make_splits(sample_ids: Sequence[str], seed: int,
                validation_fraction: float = 0.2,
                calibration_share: float = 0.6) -> dict:
    """Validation carve-out first, then a 60/40 calibration/evaluation
    cut of the remainder. Deterministic given the seed."""
    ids = list(sample_ids)
    order = split_rng(seed, "extraction-split").permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_val = int(validation_fraction * len(ids))
    rest = shuffled[n_val:]
    n_cal = int(calibration_share * len(rest))
    return {
        "validation": shuffled[:n_val],
        "calibration": rest[:n_cal],
        "evaluation": rest[n_cal:],
    }


def write_manifest(path, dataset_id: str, splits: dict, fractions: dict,
                   extraction_info: dict) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": "split-manifest",
        "dataset_id": dataset_id,
        "fractions": fractions,
        "calibration_ids": list(splits["calibration"]),
        "validation_ids": list(splits["validation"]),
        "evaluation_ids": list(splits["evaluation"]),
        "extraction": extraction_info,
    }
    _atomic_write(path, (json.dumps(payload, indent=2) + "\n").encode("utf-8"))
