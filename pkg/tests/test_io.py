import json

import numpy as np
import pytest

from vacp import (
    CalibrationResult,
    ConformalConfig,
    FormatError,
    LogitRecord,
    TokenMetadata,
    ValidationError,
)
from vacp import io
from vacp.evaluation import EvalReport, StratumReport


@pytest.fixture
def records(rng):
    return [
        LogitRecord(f"sample-{i}", rng.normal(size=12).astype(np.float32).astype(np.float64),
                    int(rng.integers(12)))
        for i in range(7)
    ]


class TestLogitDataset:
    def test_round_trip(self, tmp_path, records):
        path = tmp_path / "data.bin"
        io.write_logit_dataset(path, records)
        loaded = io.read_logit_dataset(path)
        assert len(loaded) == len(records)
        for a, b in zip(records, loaded):
            assert a.sample_id == b.sample_id
            assert a.target_id == b.target_id
            # logits stored in single precision; these were already f32
            np.testing.assert_array_equal(a.logits, b.logits)

    def test_single_precision_storage(self, tmp_path):
        path = tmp_path / "data.bin"
        precise = np.array([0.1234567890123456789, 1e-12, -3.5])
        io.write_logit_dataset(path, [LogitRecord("a", precise, 0)])
        loaded = io.read_logit_dataset(path)[0]
        np.testing.assert_array_equal(
            loaded.logits, precise.astype(np.float32).astype(np.float64)
        )

    def test_bad_magic(self, tmp_path, records):
        path = tmp_path / "data.bin"
        io.write_logit_dataset(path, records)
        raw = bytearray(path.read_bytes())
        raw[:8] = b"XXXXXXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="bad magic"):
            io.read_logit_dataset(path)

    def test_truncated(self, tmp_path, records):
        path = tmp_path / "data.bin"
        io.write_logit_dataset(path, records)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(FormatError, match="truncated"):
            io.read_logit_dataset(path)

    def test_target_out_of_range(self, tmp_path):
        path = tmp_path / "data.bin"
        io.write_logit_dataset(path, [LogitRecord("a", np.zeros(4), 1)])
        raw = bytearray(path.read_bytes())
        # target u32 sits after header (16) + id_len (2) + id bytes (1)
        offset = 16 + 2 + 1
        raw[offset : offset + 4] = (4).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="out of range") as exc:
            io.read_logit_dataset(path)
        assert exc.value.offset == offset

    def test_nan_logit_offset(self, tmp_path):
        path = tmp_path / "data.bin"
        io.write_logit_dataset(path, [LogitRecord("a", np.zeros(4), 1)])
        raw = bytearray(path.read_bytes())
        logits_offset = 16 + 2 + 1 + 4
        raw[logits_offset + 8 : logits_offset + 12] = np.float32("nan").tobytes()
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="NaN") as exc:
            io.read_logit_dataset(path)
        assert exc.value.offset == logits_offset + 8

    def test_trailing_bytes(self, tmp_path, records):
        path = tmp_path / "data.bin"
        io.write_logit_dataset(path, records)
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(FormatError, match="trailing"):
            io.read_logit_dataset(path)

    def test_duplicate_ids_rejected_on_write(self, tmp_path):
        recs = [LogitRecord("same", np.zeros(3), 0), LogitRecord("same", np.zeros(3), 1)]
        with pytest.raises(ValidationError, match="duplicate"):
            io.write_logit_dataset(tmp_path / "d.bin", recs)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError, match="no such file"):
            io.read_logit_dataset(tmp_path / "absent.bin")

    def test_rejects_nonfinite_on_write(self, tmp_path):
        rec = LogitRecord("a", np.array([0.0, -np.inf]), 0)
        with pytest.raises(ValidationError, match="finite"):
            io.write_logit_dataset(tmp_path / "d.bin", [rec])


class TestTokenMetadata:
    def test_round_trip(self, tmp_path):
        metadata = [
            TokenMetadata(0, "<pad>", is_special=True),
            TokenMetadata(1, "hello"),
            TokenMetadata(2, "\x00\x01", is_printable=False),
            TokenMetadata(3, "<unused7>", is_reserved=True),
        ]
        path = tmp_path / "meta.jsonl"
        io.write_token_metadata(path, metadata)
        assert io.read_token_metadata(path) == metadata

    def test_gap_rejected(self, tmp_path):
        path = tmp_path / "meta.jsonl"
        io.write_token_metadata(path, [TokenMetadata(0, "a"), TokenMetadata(1, "b")])
        lines = path.read_text().splitlines()
        path.write_text(lines[1] + "\n")  # only token 1 remains
        with pytest.raises(FormatError, match="not dense"):
            io.read_token_metadata(path)

    def test_duplicate_rejected(self, tmp_path):
        path = tmp_path / "meta.jsonl"
        io.write_token_metadata(path, [TokenMetadata(0, "a")])
        line = path.read_text()
        path.write_text(line + line)
        with pytest.raises(FormatError, match="duplicate"):
            io.read_token_metadata(path)

    def test_missing_field(self, tmp_path):
        path = tmp_path / "meta.jsonl"
        path.write_text('{"token_id": 0, "surface": "a"}\n')
        with pytest.raises(FormatError, match="missing fields"):
            io.read_token_metadata(path)


class TestMaskFile:
    def test_round_trip(self, tmp_path, small_synth):
        _, _, _, mask = small_synth
        path = tmp_path / "mask.json"
        io.write_mask(path, mask)
        loaded = io.read_mask(path)
        np.testing.assert_array_equal(loaded.included, mask.included)
        np.testing.assert_array_equal(loaded.reasons, mask.reasons)
        assert loaded.mask_id == mask.mask_id
        assert loaded.build_config == mask.build_config

    def test_version_mismatch(self, tmp_path, small_synth):
        _, _, _, mask = small_synth
        path = tmp_path / "mask.json"
        io.write_mask(path, mask)
        data = json.loads(path.read_text())
        data["format_version"] = 99
        path.write_text(json.dumps(data))
        with pytest.raises(FormatError, match="regenerate"):
            io.read_mask(path)

    def test_wrong_kind(self, tmp_path, small_synth):
        _, _, _, mask = small_synth
        path = tmp_path / "mask.json"
        io.write_mask(path, mask)
        data = json.loads(path.read_text())
        data["kind"] = "calibration"
        path.write_text(json.dumps(data))
        with pytest.raises(FormatError, match="expected a 'vocab-mask'"):
            io.read_mask(path)

    def test_corrupted_runs_detected(self, tmp_path, small_synth):
        _, _, _, mask = small_synth
        path = tmp_path / "mask.json"
        io.write_mask(path, mask)
        data = json.loads(path.read_text())
        data["included_runs"] = data["included_runs"][:-1]
        path.write_text(json.dumps(data))
        with pytest.raises(FormatError):
            io.read_mask(path)


class TestCalibrationFile:
    def test_round_trip_exact_threshold(self, tmp_path):
        calib = CalibrationResult(
            threshold=0.123456789012345678,
            n_calibration=321,
            config=ConformalConfig(alpha=0.1, temperature=0.2,
                                   score_mode="randomized", mask_id="abc123", seed=7),
            score_samples_digest="deadbeefdeadbeef",
        )
        path = tmp_path / "cal.json"
        io.write_calibration(path, calib)
        loaded = io.read_calibration(path)
        assert loaded == calib
        assert loaded.threshold == calib.threshold  # bit-exact via repr round-trip

    def test_invalid_payload(self, tmp_path):
        path = tmp_path / "cal.json"
        path.write_text(json.dumps({
            "format_version": 1, "kind": "calibration", "threshold": 2.0,
            "n_calibration": 1, "score_samples_digest": "x",
            "config": {"alpha": 0.1, "temperature": 1.0,
                       "score_mode": "deterministic", "seed": 0},
        }))
        with pytest.raises(FormatError, match="invalid calibration"):
            io.read_calibration(path)


class TestSplitManifest:
    def test_round_trip(self, tmp_path):
        manifest = io.make_split_manifest("ds", [f"s{i}" for i in range(20)], seed=4)
        path = tmp_path / "manifest.json"
        io.write_manifest(path, manifest)
        assert io.read_manifest(path) == manifest

    def test_disjointness_enforced(self):
        with pytest.raises(ValidationError, match="overlap"):
            io.SplitManifest(
                dataset_id="ds",
                calibration_ids=("a", "b"),
                validation_ids=("b",),
                evaluation_ids=("c",),
                fractions={},
            )

    def test_partition_covers_everything(self):
        ids = [f"s{i}" for i in range(100)]
        manifest = io.make_split_manifest("ds", ids, calibration_fraction=0.48,
                                          validation_fraction=0.2, seed=0)
        everything = (set(manifest.calibration_ids) | set(manifest.validation_ids)
                      | set(manifest.evaluation_ids))
        assert everything == set(ids)
        assert len(manifest.calibration_ids) == 48
        assert len(manifest.validation_ids) == 20

    def test_select_split(self, rng):
        records = [LogitRecord(f"s{i}", rng.normal(size=4), 0) for i in range(10)]
        manifest = io.make_split_manifest("ds", [r.sample_id for r in records], seed=1)
        cal = io.select_split(records, manifest, "calibration")
        assert {r.sample_id for r in cal} == set(manifest.calibration_ids)
        # dataset order is preserved
        assert [r.sample_id for r in cal] == [
            r.sample_id for r in records if r.sample_id in set(manifest.calibration_ids)
        ]

    def test_select_split_missing_ids(self, rng):
        records = [LogitRecord(f"s{i}", rng.normal(size=4), 0) for i in range(5)]
        manifest = io.make_split_manifest("ds", [f"s{i}" for i in range(6)], seed=1)
        with pytest.raises(ValidationError, match="missing from the dataset"):
            for split in ("calibration", "validation", "evaluation"):
                io.select_split(records, manifest, split)

    def test_unknown_split(self, rng):
        manifest = io.make_split_manifest("ds", ["a", "b", "c"], seed=0)
        with pytest.raises(ValidationError, match="unknown split"):
            manifest.ids_for("test")


def _report():
    return EvalReport(
        n_test=100,
        coverage=0.91,
        coverage_ci=(0.88, 0.94),
        mean_set_size=4.25,
        median_set_size=3,
        efficiency_eta=0.99575,
        n_out_of_support=2,
        strata=(
            StratumReport("high", 0.5, 1.0, 50, 0.95, 2.0, 0.5),
            StratumReport("medium", 0.1, 0.5, 30, 0.9, 5.0, 1.0),
            StratumReport("low", 0.0, 0.1, 18, 0.85, 9.0, 2.0),
        ),
        config_snapshot={"alpha": 0.1, "temperature": 1.0,
                         "score_mode": "deterministic", "mask_id": None,
                         "seed": 0, "threshold": 0.93, "n_calibration": 200},
    )


class TestEvalReportFiles:
    def test_json_round_trip(self, tmp_path):
        report = _report()
        path = tmp_path / "report.json"
        io.write_eval_report(path, report)
        assert io.read_eval_report(path) == report

    def test_schema_fields_present(self, tmp_path):
        path = tmp_path / "report.json"
        io.write_eval_report(path, _report())
        data = json.loads(path.read_text())
        for field in ("n_test", "coverage", "coverage_ci", "mean_set_size",
                      "median_set_size", "efficiency_eta", "n_out_of_support",
                      "strata", "config"):
            assert field in data

    def test_csv_row(self, tmp_path):
        path = tmp_path / "report.csv"
        io.write_eval_csv(path, _report())
        header, row = path.read_text().strip().splitlines()
        cells = dict(zip(header.split(","), row.split(",")))
        assert cells["coverage"] == "0.91"
        assert cells["n_test"] == "100"
        assert cells["mask_id"] == ""

    def test_prediction_sets_round_trip(self, tmp_path):
        from vacp import PredictionSet

        entries = [
            ("a", PredictionSet(token_ids=np.array([4, 2]),
                                token_probs=np.array([0.6, 0.3]),
                                cumulative_mass=0.9)),
            ("b", PredictionSet(token_ids=np.array([1]),
                                token_probs=np.array([0.8]),
                                cumulative_mass=0.8)),
        ]
        path = tmp_path / "preds.jsonl"
        io.write_prediction_sets(path, entries)
        loaded = io.read_prediction_sets(path)
        assert [(sid, p.token_ids.tolist(), p.token_probs.tolist(), p.cumulative_mass)
                for sid, p in loaded] == \
            [(sid, p.token_ids.tolist(), p.token_probs.tolist(), p.cumulative_mass)
             for sid, p in entries]

    def test_sweep_round_trip(self, tmp_path):
        from vacp.evaluation import SweepResult, SweepRow

        sweep = SweepResult(
            rows=(SweepRow(0.1, 0.99, 0.9, 4.0, 3), SweepRow(1.0, 0.95, 0.91, 9.5, 7)),
            selected_tau=0.1,
            alpha=0.1,
            tolerance=0.005,
        )
        path = tmp_path / "sweep.json"
        io.write_sweep_result(path, sweep)
        assert io.read_sweep_result(path) == sweep
