import json

import numpy as np
import pytest

from markovseq import (
    Alphabet,
    Channel,
    SequenceDataset,
    define_alphabet,
    effective_size,
    ingest_dataset,
    mc_to_sc,
)
from markovseq.errors import (
    DuplicateLabel,
    MissingCovariate,
    MissingTokenCollision,
    ShapeMismatch,
    UnknownToken,
)
from markovseq.seqdata import MISSING

from helpers import write_manifest


class TestAlphabet:
    def test_codes_follow_label_order(self):
        a = define_alphabet(["single", "married", "divorced"], "*")
        assert [a.code(x) for x in ("single", "married", "divorced")] == [0, 1, 2]
        assert a.code("*") == MISSING
        assert a.token(1) == "married"
        assert a.token(MISSING) == "*"

    def test_single_symbol(self):
        a = define_alphabet(["a"], "*")
        assert a.size == 1

    def test_duplicate_label_rejected(self):
        with pytest.raises(DuplicateLabel):
            define_alphabet(["a", "a"], "*")

    def test_missing_token_collision_rejected(self):
        with pytest.raises(MissingTokenCollision):
            define_alphabet(["a", "*"], "*")

    def test_unknown_token_raises_keyerror(self):
        a = define_alphabet(["a", "b"])
        with pytest.raises(KeyError):
            a.code("z")


class TestIngest:
    def test_basic_single_channel(self, tmp_path):
        manifest = write_manifest(
            tmp_path, [("work", ["a", "b"], [["a", "b", "a"], ["b", "b", "a"]])]
        )
        data, cov = ingest_dataset(manifest)
        assert cov is None
        assert (data.n_subjects, data.n_time, data.n_channels) == (2, 3, 1)
        np.testing.assert_array_equal(data.channels[0].codes, [[0, 1, 0], [1, 1, 0]])
        assert data.subject_ids == ("s1", "s2")

    def test_missing_cell_is_missing_not_error(self, tmp_path):
        manifest = write_manifest(tmp_path, [("work", ["a", "b"], [["a", "*", "b"]])])
        data, _ = ingest_dataset(manifest)
        np.testing.assert_array_equal(data.channels[0].codes, [[0, MISSING, 1]])

    def test_unknown_token_reports_position(self, tmp_path):
        manifest = write_manifest(tmp_path, [("work", ["a", "b"], [["a", "q", "b"]])])
        with pytest.raises(UnknownToken) as err:
            ingest_dataset(manifest)
        assert (err.value.channel, err.value.row, err.value.col) == ("work", 0, 1)

    def test_channels_must_share_ids_and_length(self, tmp_path):
        manifest = write_manifest(
            tmp_path,
            [
                ("one", ["a", "b"], [["a", "b"], ["b", "a"]]),
                ("two", ["x", "y"], [["x", "y"], ["y", "x"]]),
            ],
        )
        # corrupt the second channel: drop a subject
        (tmp_path / "two.csv").write_text("id,t1,t2\ns1,x,y\n")
        with pytest.raises(ShapeMismatch):
            ingest_dataset(manifest)

    def test_covariates_loaded_and_aligned(self, tmp_path):
        manifest = write_manifest(
            tmp_path,
            [("work", ["a", "b"], [["a", "b"], ["b", "a"]])],
            covariate_rows=[[1.5], [-0.5]],
            covariate_names=["age"],
        )
        _, cov = ingest_dataset(manifest)
        assert cov.names == ("(Intercept)", "age")
        np.testing.assert_array_equal(cov.X, [[1.0, 1.5], [1.0, -0.5]])

    def test_missing_covariate_rejected(self, tmp_path):
        manifest = write_manifest(
            tmp_path,
            [("work", ["a", "b"], [["a", "b"], ["b", "a"]])],
            covariate_rows=[[1.5], ["NA"]],
            covariate_names=["age"],
        )
        with pytest.raises(MissingCovariate):
            ingest_dataset(manifest)

    def test_roundtrip_through_json(self, tmp_path):
        manifest = write_manifest(
            tmp_path,
            [
                ("one", ["a", "b"], [["a", "*"], ["b", "a"]]),
                ("two", ["x", "y", "z"], [["z", "y"], ["*", "x"]]),
            ],
        )
        data, _ = ingest_dataset(manifest)
        doc = json.loads(json.dumps(data.to_json()))
        back = SequenceDataset.from_json(doc)
        assert back.subject_ids == data.subject_ids
        for ch_a, ch_b in zip(data.channels, back.channels):
            assert ch_a.alphabet == ch_b.alphabet
            np.testing.assert_array_equal(ch_a.codes, ch_b.codes)


def _two_channel_dataset():
    marital = Alphabet(("single", "married"))
    kids = Alphabet(("childless", "children"))
    ch1 = Channel("marital", marital, np.array([[1, 0], [0, MISSING]]))
    ch2 = Channel("kids", kids, np.array([[1, 1], [MISSING, 0]]))
    return SequenceDataset((ch1, ch2), ("s1", "s2"))


class TestMcToSc:
    def test_labels_joined_by_separator(self):
        combined = mc_to_sc(_two_channel_dataset())
        labels = combined.channels[0].alphabet.labels
        assert "married/children" in labels
        # combination order is lexicographic in channel-code tuples
        assert labels == ("single/children", "married/children")

    def test_any_missing_channel_makes_combined_missing(self):
        combined = mc_to_sc(_two_channel_dataset())
        codes = combined.channels[0].codes
        labels = combined.channels[0].alphabet.labels
        assert labels[codes[0, 0]] == "married/children"
        assert labels[codes[0, 1]] == "single/children"
        assert codes[1, 0] == MISSING  # kids channel missing at (1, 0)
        assert codes[1, 1] == MISSING  # marital channel missing at (1, 1)

    def test_single_channel_input_unchanged(self):
        a = Alphabet(("a", "b", "c"))
        ch = Channel("only", a, np.array([[0, 2]]))
        data = SequenceDataset((ch,), ("s1",))
        out = mc_to_sc(data)
        assert out.channels[0].alphabet == a
        np.testing.assert_array_equal(out.channels[0].codes, ch.codes)

    def test_alphabet_bounded_by_product_and_decodable(self):
        rng = np.random.default_rng(7)
        sizes = (3, 2, 2)
        alphas = [Alphabet(tuple(f"c{c}m{j}" for j in range(m))) for c, m in enumerate(sizes)]
        channels = tuple(
            Channel(f"ch{c}", a, rng.integers(0, a.size, size=(6, 9)))
            for c, a in enumerate(alphas)
        )
        data = SequenceDataset(channels, tuple(f"s{i}" for i in range(6)))
        combined = mc_to_sc(data)
        labels = combined.channels[0].alphabet.labels
        assert len(labels) <= int(np.prod(sizes))
        assert len(set(labels)) == len(labels)
        # every combined label splits back into exactly one per-channel label
        for label in labels:
            parts = label.split("/")
            assert len(parts) == 3
            for part, a in zip(parts, alphas):
                assert part in a.labels


class TestEffectiveSize:
    def test_fully_observed_equals_nt(self):
        a = Alphabet(("a", "b"))
        data = SequenceDataset(
            (Channel("x", a, np.array([[0, 1, 0], [1, 1, 0]])),), ("s1", "s2")
        )
        assert effective_size(data) == 6.0

    def test_half_weight_for_missing_channel(self):
        a = Alphabet(("a", "b"))
        ch1 = Channel("x", a, np.array([[0, 1]]))
        ch2 = Channel("y", a, np.array([[0, MISSING]]))
        data = SequenceDataset((ch1, ch2), ("s1",))
        assert effective_size(data) == 1.5

    def test_all_missing_is_zero(self):
        a = Alphabet(("a", "b"))
        data = SequenceDataset(
            (Channel("x", a, np.full((2, 3), MISSING)),), ("s1", "s2")
        )
        assert effective_size(data) == 0.0

    def test_bounded_by_nt_with_equality_iff_complete(self):
        rng = np.random.default_rng(3)
        a = Alphabet(("a", "b", "c"))
        for _ in range(20):
            rate = rng.choice([0.0, 0.3])
            codes = rng.integers(0, 3, size=(4, 5))
            gaps = rng.random((4, 5)) < rate
            codes = np.where(gaps, MISSING, codes)
            data = SequenceDataset((Channel("x", a, codes),), tuple(f"s{i}" for i in range(4)))
            size = effective_size(data)
            assert size <= 20.0
            assert (size == 20.0) == (not gaps.any())
