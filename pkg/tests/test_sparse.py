"""CSR flattening, round-trips, and the storage-byte formula."""

import numpy as np
import pytest

from trainmem.errors import ContractError
from trainmem.numerics import DenseTensor, NumericFormat
from trainmem.sparse import (
    SparsityMask,
    col_index_bits,
    csr_from_dense,
    csr_storage_bytes,
    csr_storage_bytes_from_counts,
    csr_to_dense,
)

F32 = NumericFormat.FP32
F16 = NumericFormat.FP16


def test_singleton():
    w = DenseTensor((1, 1, 1, 1), F32, [5.0])
    csr = csr_from_dense(w, SparsityMask.full((1, 1, 1, 1)))
    assert csr.rows == 1 and csr.cols == 1
    assert list(csr.values) == [5.0]
    assert csr.col_index_bits == 0
    assert csr_storage_bytes(csr) == 0 + 8 + 4  # no index bits, 2 ptrs, 1 value


def test_hand_enumerable():
    w = DenseTensor((2, 1, 1, 2), F32, [1.0, 2.0, 3.0, 4.0])
    mask = SparsityMask((2, 1, 1, 2), [False, True, True, False])
    csr = csr_from_dense(w, mask)
    assert list(csr.row_ptr) == [0, 1, 2]
    assert list(csr.col_indices) == [1, 0]
    assert list(csr.values) == [2.0, 3.0]


def test_round_trip_property():
    # oracle: elementwise masked copy
    rng = np.random.default_rng(42)
    for trial in range(1000):
        c_o = int(rng.integers(1, 6))
        c_i = int(rng.integers(1, 5))
        k = int(rng.integers(1, 4))
        shape = (c_o, c_i, k, k)
        data = rng.normal(size=shape)
        bits = rng.random(shape) < rng.uniform(0.05, 0.95)
        w = DenseTensor(shape, F32, data.reshape(-1))
        m = SparsityMask(shape, bits.reshape(-1))
        back = csr_to_dense(csr_from_dense(w, m), shape, F32)
        assert np.array_equal(back.as_array(), data * bits)


def test_round_trip_matrix_case():
    # fully-connected weights reuse the conv CSR with k1 = k2 = 1
    rng = np.random.default_rng(1)
    data = rng.normal(size=(6, 9))
    bits = rng.random((6, 9)) < 0.4
    w = DenseTensor((6, 9), F32, data.reshape(-1))
    csr = csr_from_dense(w, SparsityMask((6, 9), bits.reshape(-1)))
    assert csr.cols == 9 and csr.col_index_bits == 4
    assert np.array_equal(csr_to_dense(csr, (6, 9), F32).as_array(), data * bits)


def test_shape_mismatch():
    w = DenseTensor((2, 1, 1, 2), F32, np.zeros(4))
    with pytest.raises(ContractError):
        csr_from_dense(w, SparsityMask.full((2, 1, 2, 2)))


def test_storage_bytes_wrn_example():
    # c_o=32, c_i=16, 3x3: cols = 144 so 8 bits per index; with 1383
    # nonzeros at FP16 the formula gives 1383 + 33*4 + 1383*2 bytes
    expected = (1383 * 8 + 7) // 8 + 33 * 4 + 1383 * 2
    assert expected == 1383 + 132 + 2766
    assert csr_storage_bytes_from_counts(32, 16 * 9, 1383, 2) == expected
    # shared-index buffers (gradient, momentum) pay values only
    assert csr_storage_bytes_from_counts(32, 16 * 9, 1383, 2, shares_indices=True) == 2766


def test_storage_bytes_matches_array_path():
    rng = np.random.default_rng(5)
    shape = (8, 4, 3, 3)
    data = rng.normal(size=shape)
    bits = rng.random(shape) < 0.3
    w = DenseTensor(shape, F16, np.asarray(np.float16(data), dtype=np.float64).reshape(-1))
    csr = csr_from_dense(w, SparsityMask(shape, bits.reshape(-1)))
    assert csr_storage_bytes(csr) == csr_storage_bytes_from_counts(
        8, 36, csr.nnz, 2
    )


def test_sharing_always_strictly_smaller():
    rng = np.random.default_rng(9)
    for _ in range(200):
        rows = int(rng.integers(1, 12))
        cols = int(rng.integers(1, 40))
        nnz = int(rng.integers(0, rows * cols + 1))
        full = csr_storage_bytes_from_counts(rows, cols, nnz, 4)
        shared = csr_storage_bytes_from_counts(rows, cols, nnz, 4, shares_indices=True)
        assert shared < full  # row pointers alone make it strict


def test_col_index_bits():
    assert col_index_bits(1) == 0
    assert col_index_bits(2) == 1
    assert col_index_bits(144) == 8
    assert col_index_bits(1152) == 11
