"""Blockwise Gaussian statistics of an alignment and coupling maps."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .msa import N_AA, N_SYMBOLS

Q = N_SYMBOLS


def blocks_to_full(blocks):
    L = blocks.shape[0]
    return np.ascontiguousarray(blocks.transpose(0, 2, 1, 3).reshape(L * Q, L * Q))


def full_to_blocks(full):
    L = full.shape[0] // Q
    return np.ascontiguousarray(full.reshape(L, Q, L, Q).transpose(0, 2, 1, 3))


@dataclass(frozen=True, eq=False)
class BlockCovariance:
    """Covariance as an ``(L, L, 21, 21)`` grid of column-pair blocks."""

    blocks: np.ndarray
    shrinkage: float = 0.0

    @property
    def L(self):
        return self.blocks.shape[0]

    def full(self):
        return blocks_to_full(self.blocks)

    @classmethod
    def from_full(cls, full, shrinkage=0.0):
        return cls(full_to_blocks(np.asarray(full, dtype=float)), shrinkage)

    def is_positive_definite(self):
        try:
            np.linalg.cholesky(self.full())
        except np.linalg.LinAlgError:
            return False
        return True


@dataclass(frozen=True, eq=False)
class BlockPrecision:
    """Estimated precision matrix plus solver bookkeeping.

    ``blocks`` holds the positive definite iterate of the eigenvalue
    step. ``sparse_blocks`` is the thresholded copy from the shrinkage
    step (its zero blocks are the estimated conditional independences);
    it is ``None`` for matrices not produced by a solver.
    """

    blocks: np.ndarray
    converged: bool = True
    iterations: int = 0
    sparse_blocks: np.ndarray = None

    @property
    def L(self):
        return self.blocks.shape[0]

    def full(self):
        return blocks_to_full(self.blocks)

    @classmethod
    def from_full(cls, full, **kw):
        return cls(full_to_blocks(np.asarray(full, dtype=float)), **kw)

    def support(self, tol=0.0):
        """Boolean ``(L, L)`` map of column pairs with a non-zero sparse block."""
        src = self.sparse_blocks if self.sparse_blocks is not None else self.blocks
        norm = np.sqrt((src[:, :, :N_AA, :N_AA] ** 2).sum(axis=(2, 3)))
        sup = norm > tol
        np.fill_diagonal(sup, False)
        return sup


@dataclass(frozen=True, eq=False)
class CouplingMap:
    s: np.ndarray
    apc_applied: bool = False


def empirical_covariance(msa, weights):
    """Weighted one-hot covariance; reduces to the plain estimate at unit weights."""
    w = np.asarray(weights, dtype=float)
    if msa.n_rows == 0:
        raise ValueError("empty alignment")
    if w.shape != (msa.n_rows,):
        raise ValueError("weights must have one entry per row")
    X = msa.one_hot().reshape(msa.n_rows, -1)
    W = w.sum()
    mean = w @ X / W
    Xc = X - mean
    S = (Xc * w[:, None]).T @ Xc / W
    S = 0.5 * (S + S.T)
    return BlockCovariance.from_full(S)


def shrink(cov, eps=0.1):
    if eps <= 0:
        raise ValueError("shrinkage must be positive")
    blocks = cov.blocks.copy()
    idx = np.arange(cov.L)
    diag = np.arange(Q)
    blocks[idx[:, None], idx[:, None], diag[None, :], diag[None, :]] += eps
    return BlockCovariance(blocks, cov.shrinkage + eps)


def coupling_norms(prec, sparse=False):
    """Frobenius norm of each amino-acid sub-block (gap row and column excluded)."""
    src = prec.sparse_blocks if (sparse and prec.sparse_blocks is not None) else prec.blocks
    s = np.sqrt((src[:, :, :N_AA, :N_AA] ** 2).sum(axis=(2, 3)))
    s = 0.5 * (s + s.T)
    np.fill_diagonal(s, 0.0)
    return CouplingMap(s, False)


def apc(cmap, include_diagonal=False):
    """Average-product correction ``s - mean_i mean_j / mean_all``.

    Means run over off-diagonal entries by default. With
    ``include_diagonal`` they run over the whole matrix as given, which
    removes any product map ``a_i a_j`` exactly.
    """
    if cmap.apc_applied:
        raise ValueError("APC already applied")
    s = np.array(cmap.s, dtype=float)
    L = s.shape[0]
    if L < 2:
        return CouplingMap(s, True)
    if include_diagonal:
        row_mean = s.mean(axis=1)
        all_mean = s.mean()
    else:
        off = ~np.eye(L, dtype=bool)
        row_mean = np.where(off, s, 0.0).sum(axis=1) / (L - 1)
        all_mean = s[off].mean()
    if all_mean == 0:
        return CouplingMap(s, True)
    out = s - np.outer(row_mean, row_mean) / all_mean
    np.fill_diagonal(out, 0.0)
    return CouplingMap(out, True)


# --- binary cache of precision matrices ------------------------------------------------

_PREC_MAGIC = b"CAPREC"
_PREC_VERSION = 1


def dump_precision(prec):
    """Serialize a precision: header then little-endian float64 blocks, row-major."""
    head = _PREC_MAGIC + struct.pack("<HII", _PREC_VERSION, prec.L, Q)
    body = np.ascontiguousarray(prec.blocks, dtype="<f8").tobytes()
    return head + body


def load_precision(data):
    n = len(_PREC_MAGIC)
    if data[:n] != _PREC_MAGIC:
        raise ValueError("not a precision dump")
    if len(data) < n + 10:
        raise ValueError("truncated precision dump")
    version, L, q = struct.unpack("<HII", data[n:n + 10])
    if version > _PREC_VERSION:
        raise ValueError(f"precision dump version {version} is newer than supported")
    body = data[n + 10:]
    if len(body) != L * L * q * q * 8:
        raise ValueError("truncated precision dump")
    blocks = np.frombuffer(body, dtype="<f8").reshape(L, L, q, q).astype(float)
    return BlockPrecision(blocks)
