"""Sparsity masks and flattened CSR storage for convolution weights.

A 4-D conv weight of shape (c_o, c_i, k1, k2) is flattened to a matrix of
shape c_o x (c_i*k1*k2); row i is the row-major flattening of output
channel i.  Matrices (fully-connected and embedding weights) are the
degenerate case k1 = k2 = 1.  Column indices are charged ceil(log2(cols))
bits each, packed to whole bytes per array; row pointers are 32-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .numerics import DenseTensor, NumericFormat


@dataclass
class SparsityMask:
    shape: tuple[int, ...]
    bits: np.ndarray = field(repr=False)

    def __init__(self, shape, bits):
        self.shape = tuple(int(s) for s in shape)
        arr = np.asarray(bits, dtype=bool).reshape(-1)
        if arr.size != math.prod(self.shape):
            raise ContractError("mask bits do not match shape")
        self.bits = arr

    @property
    def nnz(self) -> int:
        return int(self.bits.sum())

    @property
    def numel(self) -> int:
        return math.prod(self.shape)

    def as_array(self) -> np.ndarray:
        return self.bits.reshape(self.shape)

    @staticmethod
    def full(shape) -> "SparsityMask":
        return SparsityMask(shape, np.ones(math.prod(tuple(shape)), dtype=bool))


def col_index_bits(cols: int) -> int:
    """Bits per column index: ceil(log2(cols)); the cols = 1 case yields 0."""
    if cols < 1:
        raise ContractError("cols must be positive")
    return (cols - 1).bit_length()


@dataclass
class SparseConvCSR:
    rows: int
    cols: int
    values: np.ndarray = field(repr=False)
    col_indices: np.ndarray = field(repr=False)
    row_ptr: np.ndarray = field(repr=False)
    element_bytes: int = 4

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.col_indices = np.asarray(self.col_indices, dtype=np.int64)
        self.row_ptr = np.asarray(self.row_ptr, dtype=np.int64)
        if self.row_ptr.shape != (self.rows + 1,):
            raise ContractError("row_ptr must have rows+1 entries")
        if self.row_ptr[0] != 0 or self.row_ptr[-1] != self.nnz:
            raise ContractError("row_ptr endpoints inconsistent with nnz")
        if np.any(np.diff(self.row_ptr) < 0):
            raise ContractError("row_ptr must be nondecreasing")
        if self.col_indices.size and (
            self.col_indices.min() < 0 or self.col_indices.max() >= self.cols
        ):
            raise ContractError("column index out of range")
        for r in range(self.rows):
            seg = self.col_indices[self.row_ptr[r] : self.row_ptr[r + 1]]
            if seg.size > 1 and np.any(np.diff(seg) <= 0):
                raise ContractError(f"row {r}: column indices not strictly increasing")

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @property
    def col_index_bits(self) -> int:
        return col_index_bits(self.cols)


def _flatten_shape(shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 4:
        c_o, c_i, k1, k2 = shape
        return c_o, c_i * k1 * k2
    if len(shape) == 2:
        return shape[0], shape[1]
    raise ContractError(f"CSR encoding expects a 2-D or 4-D shape, got {shape}")


def csr_from_dense(weight: DenseTensor, mask: SparsityMask) -> SparseConvCSR:
    """Encode the masked-true entries of `weight` in flattened CSR form."""
    if mask.shape != weight.shape:
        raise ContractError(f"mask shape {mask.shape} != weight shape {weight.shape}")
    rows, cols = _flatten_shape(weight.shape)
    w = weight.data.reshape(rows, cols)
    m = mask.bits.reshape(rows, cols)
    counts = m.sum(axis=1)
    row_ptr = np.zeros(rows + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    r_idx, c_idx = np.nonzero(m)
    return SparseConvCSR(
        rows=rows,
        cols=cols,
        values=w[r_idx, c_idx],
        col_indices=c_idx,
        row_ptr=row_ptr,
        element_bytes=weight.format.element_bytes,
    )


def csr_to_dense(csr: SparseConvCSR, shape, fmt: NumericFormat) -> DenseTensor:
    """Decode back to a dense tensor; zeros everywhere the CSR has no entry."""
    rows, cols = _flatten_shape(tuple(shape))
    if (rows, cols) != (csr.rows, csr.cols):
        raise ContractError("target shape inconsistent with CSR dimensions")
    out = np.zeros((rows, cols), dtype=np.float64)
    for r in range(rows):
        lo, hi = csr.row_ptr[r], csr.row_ptr[r + 1]
        out[r, csr.col_indices[lo:hi]] = csr.values[lo:hi]
    return DenseTensor(tuple(shape), fmt, out.reshape(-1))


def csr_storage_bytes(csr: SparseConvCSR, shares_indices: bool = False) -> int:
    """Storage bytes of one CSR tensor.

    When `shares_indices` is set the tensor reuses another tensor's index
    arrays (as gradient and momentum reuse the model's) and pays only for
    its values.
    """
    value_bytes = csr.nnz * csr.element_bytes
    if shares_indices:
        return value_bytes
    index_bytes = (csr.nnz * csr.col_index_bits + 7) // 8
    ptr_bytes = (csr.rows + 1) * 4
    return index_bytes + ptr_bytes + value_bytes


def csr_storage_bytes_from_counts(
    rows: int, cols: int, nnz: int, element_bytes: int, shares_indices: bool = False
) -> int:
    """Same formula as `csr_storage_bytes` without materializing arrays."""
    value_bytes = nnz * element_bytes
    if shares_indices:
        return value_bytes
    index_bytes = (nnz * col_index_bits(cols) + 7) // 8
    ptr_bytes = (rows + 1) * 4
    return index_bytes + ptr_bytes + value_bytes
