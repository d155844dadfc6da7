"""Linear density filter with cone (hat) weights."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .exceptions import DomainError, ParameterError
from .mesh_fea import StructuredGrid


@dataclass(frozen=True, eq=False)
class FilterKernel:
    """Row-normalized filter matrix ``W`` (``N x N``) and its radius in element units."""

    weights: sp.csr_matrix
    radius: float

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @cached_property
    def transpose(self) -> sp.csr_matrix:
        return self.weights.T.tocsr()

    @cached_property
    def column_sums(self) -> np.ndarray:
        return np.asarray(self.weights.sum(axis=0)).ravel()


def build_filter(grid: StructuredGrid, radius: float = 1.5) -> FilterKernel:
    """``W_ei = max(0, r - d(e, i)) / sum_k max(0, r - d(e, k))`` with centroid distance in elements."""
    if not radius > 0:
        raise ParameterError("filter radius must be positive")
    nx, ny = grid.nx, grid.ny
    reach = int(np.ceil(radius)) - 1 if float(radius).is_integer() else int(np.floor(radius))
    iy, ix = np.divmod(np.arange(grid.n_elements), nx)
    rows, cols, vals = [], [], []
    for dy in range(-reach, reach + 1):
        for dx in range(-reach, reach + 1):
            w = radius - np.hypot(dx, dy)
            if w <= 0:
                continue
            jx, jy = ix + dx, iy + dy
            ok = (jx >= 0) & (jx < nx) & (jy >= 0) & (jy < ny)
            rows.append(np.flatnonzero(ok))
            cols.append(jy[ok] * nx + jx[ok])
            vals.append(np.full(ok.sum(), w))
    W = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.n_elements, grid.n_elements),
    )
    W.sort_indices()
    row_sums = np.asarray(W.sum(axis=1)).ravel()
    W = sp.diags(1.0 / row_sums) @ W
    return FilterKernel(W.tocsr(), float(radius))


def _check(kernel: FilterKernel, values) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    if x.shape[0] != kernel.size or x.ndim > 2:
        raise DomainError(f"filter of size {kernel.size} applied to array of shape {x.shape}")
    return x


def apply_filter(kernel: FilterKernel, raw) -> np.ndarray:
    """``W @ raw``; a 2-D ``(N, K)`` input is filtered per column (material channel)."""
    return kernel.weights @ _check(kernel, raw)


def filter_chain_rule(kernel: FilterKernel, grad_wrt_filtered) -> np.ndarray:
    """Pull a gradient back through the filter: ``W^T @ grad``."""
    return kernel.transpose @ _check(kernel, grad_wrt_filtered)
