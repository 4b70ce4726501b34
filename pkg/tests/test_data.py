"""Dataset ingestion, binarization, batching, and synthetic teacher data."""

import struct

import numpy as np
import pytest

from airbn.data import (
    BinaryDataset,
    batches,
    binarize,
    load_bmat,
    load_idx,
    make_splits,
    save_bmat,
    synth_teacher,
    write_idx,
)
from airbn.numerics import RandomStream
from airbn.oracle import exact_logp_rows
from conftest import random_gen


def idx_fixture_bytes():
    """2 images of 2x2 pixels, built byte for byte from the IDX layout."""
    header = struct.pack(">IIII", 0x00000803, 2, 2, 2)
    payload = bytes([0, 128, 255, 10, 1, 2, 200, 199])
    return header + payload


class TestIdx:
    def test_fixture_round_trip(self, tmp_path):
        p = tmp_path / "img.idx"
        p.write_bytes(idx_fixture_bytes())
        mat = load_idx(p)
        np.testing.assert_array_equal(
            mat, [[0, 128, 255, 10], [1, 2, 200, 199]]
        )

    def test_write_then_load_identical(self, tmp_path):
        p = tmp_path / "rt.idx"
        mat = np.arange(24, dtype=np.uint8).reshape(4, 6)
        write_idx(p, mat, rows=2, cols=3)
        np.testing.assert_array_equal(load_idx(p), mat)

    def test_label_magic_rejected(self, tmp_path):
        p = tmp_path / "labels.idx"
        p.write_bytes(struct.pack(">II", 0x00000801, 3) + bytes([1, 2, 3]))
        with pytest.raises(ValueError, match="wrong magic"):
            load_idx(p)

    def test_unknown_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.idx"
        p.write_bytes(struct.pack(">IIII", 0xDEADBEEF, 1, 1, 1) + b"\x00")
        with pytest.raises(ValueError, match="bad magic"):
            load_idx(p)

    def test_empty_file_truncated_header(self, tmp_path):
        p = tmp_path / "empty.idx"
        p.write_bytes(b"")
        with pytest.raises(ValueError, match="truncated header"):
            load_idx(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "trunc.idx"
        p.write_bytes(struct.pack(">IIII", 0x00000803, 2, 2, 2) + bytes(3))
        with pytest.raises(ValueError, match="truncated payload"):
            load_idx(p)


class TestBinarize:
    def test_all_zero(self):
        np.testing.assert_array_equal(binarize(np.zeros((2, 3))), np.zeros((2, 3)))

    def test_threshold_boundary(self):
        np.testing.assert_array_equal(binarize(np.array([[127, 128]])), [[0.0, 1.0]])

    def test_fixture_row(self):
        np.testing.assert_array_equal(
            binarize(np.array([[0, 128, 255, 10]])), [[0.0, 1.0, 1.0, 0.0]]
        )

    def test_prebinarized_passthrough(self):
        x = np.array([[0, 1, 1, 0]])
        np.testing.assert_array_equal(binarize(x), x.astype(float))

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="mode"):
            binarize(np.zeros((1, 1)), mode="stochastic")


class TestBmat:
    def test_round_trip(self, tmp_path):
        p = tmp_path / "m.bmat"
        rows = (np.random.default_rng(0).random((13, 7)) < 0.4).astype(float)
        save_bmat(p, rows)
        np.testing.assert_array_equal(load_bmat(p), rows)

    def test_byte_layout(self, tmp_path):
        p = tmp_path / "m.bmat"
        save_bmat(p, np.array([[1.0, 0.0]]))
        raw = p.read_bytes()
        assert raw[:4] == b"BMAT"
        assert struct.unpack("<QQ", raw[4:20]) == (1, 2)
        assert raw[20:] == bytes([1, 0])

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.bmat"
        p.write_bytes(b"XMAT" + struct.pack("<QQ", 0, 0))
        with pytest.raises(ValueError, match="bad magic"):
            load_bmat(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "short.bmat"
        p.write_bytes(b"BMAT" + struct.pack("<QQ", 4, 4))
        with pytest.raises(ValueError, match="truncated payload"):
            load_bmat(p)

    def test_rejects_non_binary(self, tmp_path):
        p = tmp_path / "nb.bmat"
        p.write_bytes(b"BMAT" + struct.pack("<QQ", 1, 1) + bytes([2]))
        with pytest.raises(ValueError, match="non-binary"):
            load_bmat(p)


class TestDatasets:
    def test_mean_image_from_train_split_only(self):
        train = np.array([[1.0, 1.0], [1.0, 0.0]])
        valid = np.zeros((2, 2))
        test = np.ones((2, 2))
        splits = make_splits(train, valid, test)
        for ds in splits.values():
            np.testing.assert_allclose(ds.mean_image, [1.0, 0.5])

    def test_rows_must_be_binary(self):
        with pytest.raises(ValueError, match="binary"):
            BinaryDataset(np.array([[0.5]]), "train", np.array([0.5]))

    def test_teacher_marginals_match_exact(self):
        teacher = random_gen(42, [4, 4], scale=1.5)
        splits = synth_teacher(
            teacher, {"train": 100_000, "valid": 10, "test": 10}, RandomStream(1)
        )
        rows = splits["train"].rows
        # exact visible marginals by enumerating x (weighting by p(x))
        from airbn.oracle import bit_patterns

        xs = bit_patterns(4)
        px = np.exp(exact_logp_rows(teacher, xs))
        exact_marginal = px @ xs
        se = np.sqrt(exact_marginal * (1 - exact_marginal) / rows.shape[0])
        np.testing.assert_array_less(np.abs(rows.mean(axis=0) - exact_marginal), 3 * se)

    def test_teacher_splits_reproducible_and_disjoint_streams(self):
        teacher = random_gen(43, [3, 3], scale=1.0)
        n = {"train": 50, "valid": 50, "test": 50}
        a = synth_teacher(teacher, n, RandomStream(9))
        b = synth_teacher(teacher, n, RandomStream(9))
        for split in ("train", "valid", "test"):
            np.testing.assert_array_equal(a[split].rows, b[split].rows)
        assert not np.array_equal(a["train"].rows, a["valid"].rows)

    def test_deterministic_teacher_rows(self):
        teacher = random_gen(44, [3, 3], scale=1.0)
        a = synth_teacher(teacher, {"train": 20, "valid": 5, "test": 5}, RandomStream(10))
        c = synth_teacher(teacher, {"train": 20, "valid": 5, "test": 5}, RandomStream(11))
        assert not np.array_equal(a["train"].rows, c["train"].rows)


class TestBatches:
    def _ds(self, n=250, d=3):
        rows = np.zeros((n, d))
        return BinaryDataset(rows, "train", np.zeros(d))

    def test_block_sizes_with_short_final(self):
        blocks = list(batches(self._ds(250), 100, RandomStream(0)))
        assert [len(b) for b in blocks] == [100, 100, 50]
        covered = np.sort(np.concatenate(blocks))
        np.testing.assert_array_equal(covered, np.arange(250))

    def test_no_shuffle_identity_order(self):
        blocks = list(batches(self._ds(10), 4, shuffle=False))
        np.testing.assert_array_equal(np.concatenate(blocks), np.arange(10))

    def test_same_seed_same_permutation(self):
        a = np.concatenate(list(batches(self._ds(50), 7, RandomStream(3, 1))))
        b = np.concatenate(list(batches(self._ds(50), 7, RandomStream(3, 1))))
        np.testing.assert_array_equal(a, b)

    def test_bad_batch_size(self):
        with pytest.raises(ValueError, match="batch_size"):
            list(batches(self._ds(5), 0, RandomStream(0)))
