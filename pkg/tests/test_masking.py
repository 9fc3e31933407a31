import numpy as np
import pytest

from vacp import (
    EmptySupportError,
    LogitRecord,
    TokenMetadata,
    ValidationError,
    empirical_filter,
    empirical_max_probs,
    structural_filter,
    validate_mask,
)
from vacp.types import REASON_EMPIRICAL, REASON_STRUCTURAL, VocabMask


def meta(entries):
    return [TokenMetadata(i, *e) for i, e in enumerate(entries)]


def record_from_probs(sample_id, probs, target=0):
    return LogitRecord(sample_id, np.log(np.array(probs, dtype=np.float64)), target)


class TestStructuralFilter:
    def test_flags_drive_exclusion(self):
        metadata = meta([
            ("<pad>", True, False, True),
            ("<unused42>", False, True, True),
            ("\x00", False, False, False),
            ("hello", False, False, True),
        ])
        mask = structural_filter(metadata)
        assert mask.included.tolist() == [False, False, False, True]
        assert set(np.flatnonzero(mask.reasons == REASON_STRUCTURAL)) == {0, 1, 2}

    def test_requires_dense_ids(self):
        metadata = [TokenMetadata(0, "a"), TokenMetadata(2, "b")]
        with pytest.raises(ValidationError, match="densely"):
            structural_filter(metadata)

    def test_all_excluded_is_error(self):
        metadata = meta([("<pad>", True, False, True), ("<eos>", True, False, True)])
        with pytest.raises(EmptySupportError):
            structural_filter(metadata)


class TestEmpiricalMaxProbs:
    def test_single_record(self):
        mp = empirical_max_probs([record_from_probs("a", [0.5, 0.3, 0.2])])
        np.testing.assert_allclose(mp, [0.5, 0.3, 0.2], rtol=1e-12)

    def test_elementwise_max(self):
        mp = empirical_max_probs([
            record_from_probs("a", [0.9, 0.1, 1e-300]),
            record_from_probs("b", [0.2, 0.3, 0.5]),
        ])
        np.testing.assert_allclose(mp, [0.9, 0.3, 0.5], rtol=1e-9)

    def test_bounds(self, small_synth):
        _, records, _, _ = small_synth
        mp = empirical_max_probs(records[:40])
        assert (mp >= 0.0).all() and (mp <= 1.0).all()

    def test_order_independent(self, small_synth):
        _, records, _, _ = small_synth
        a = empirical_max_probs(records[:20])
        b = empirical_max_probs(list(reversed(records[:20])))
        np.testing.assert_array_equal(a, b)

    def test_empty_stream(self):
        with pytest.raises(ValidationError, match="no validation data"):
            empirical_max_probs([])


class TestEmpiricalFilter:
    def test_threshold_is_strict(self):
        base = VocabMask.all_included(3)
        mask = empirical_filter(base, np.array([0.5, 1e-5, 0.2]), 1e-5)
        # an entry exactly at the threshold is excluded
        assert mask.included.tolist() == [True, False, True]
        assert mask.reasons[1] == REASON_EMPIRICAL

    def test_below_threshold_excluded(self):
        base = VocabMask.all_included(3)
        mask = empirical_filter(base, np.array([0.5, 1e-6, 0.2]), 1e-5)
        assert not mask.included[1]

    def test_never_reincludes(self):
        base = structural_filter(meta([("<pad>", True, False, True),
                                       ("a", False, False, True)]))
        mask = empirical_filter(base, np.array([0.9, 0.9]), 1e-5)
        assert not mask.included[0]
        assert mask.reasons[0] == REASON_STRUCTURAL

    def test_idempotent(self):
        base = VocabMask.all_included(5)
        mp = np.array([0.5, 1e-7, 0.2, 1e-6, 0.1])
        once = empirical_filter(base, mp, 1e-5)
        twice = empirical_filter(once, mp, 1e-5)
        np.testing.assert_array_equal(once.included, twice.included)
        np.testing.assert_array_equal(once.reasons, twice.reasons)

    def test_accounting(self, small_synth):
        _, records, metadata, _ = small_synth
        base = structural_filter(metadata)
        mask = empirical_filter(base, empirical_max_probs(records), 1e-5)
        counts = mask.reason_counts()
        assert mask.n_included + counts["structural"] + counts["empirical"] \
            == mask.vocab_size

    def test_recovers_live_set(self, small_synth):
        # The generator's dead tokens sit far below the threshold, so the
        # pipeline mask equals the generator's live mask.
        _, records, metadata, true_mask = small_synth
        base = structural_filter(metadata)
        mask = empirical_filter(base, empirical_max_probs(records), 1e-5)
        np.testing.assert_array_equal(mask.included, true_mask.included)

    def test_empty_result_is_error(self):
        base = VocabMask.all_included(2)
        with pytest.raises(EmptySupportError):
            empirical_filter(base, np.array([1e-9, 1e-9]), 1e-5)


class TestValidateMask:
    def test_full_vocab_hits_everything(self, small_synth):
        _, records, _, _ = small_synth
        report = validate_mask(VocabMask.all_included(records[0].vocab_size), records)
        assert report.hit_rate == 1.0
        assert report.missing_token_ids == ()
        assert report.full_coverage

    def test_counting(self):
        mask = VocabMask(
            included=np.array([True, True, False]),
            reasons=np.array([0, 0, REASON_EMPIRICAL], dtype=np.uint8),
        )
        records = [
            record_from_probs("a", [0.5, 0.4, 0.1], target=0),
            record_from_probs("b", [0.5, 0.4, 0.1], target=1),
            record_from_probs("c", [0.5, 0.4, 0.1], target=2),
            record_from_probs("d", [0.5, 0.4, 0.1], target=1),
        ]
        report = validate_mask(mask, records)
        assert report.hit_rate == pytest.approx(0.75)
        assert report.missing_token_ids == (2,)
        assert not report.full_coverage

    def test_single_token_mask(self):
        mask = VocabMask(
            included=np.array([True, False]),
            reasons=np.array([0, REASON_EMPIRICAL], dtype=np.uint8),
        )
        records = [record_from_probs(f"r{i}", [0.9, 0.1], target=0) for i in range(3)]
        assert validate_mask(mask, records).hit_rate == 1.0

    def test_empty_stream(self):
        with pytest.raises(ValidationError):
            validate_mask(VocabMask.all_included(2), [])
