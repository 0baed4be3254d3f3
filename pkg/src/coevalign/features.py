"""Built-in feature generator for the alignment scorer.

Each protein is summarized per residue (profile window, gap fraction,
conservation, terminal flag and optional user columns). A lattice vertex
gets the features of the residues its state consumes: matches see both
residues and their window dot products; a gap state only sees the residue
it consumes, so gap scores never depend on the other protein.

Slot layout (``BASE_F = 20``)::

    0        bias
    1..11    profile dot products at window offsets -5..5     (M)
    12, 13   gap fraction of template / target residue        (M, It | M, Is)
    14, 15   terminal flag of template / target residue
    16, 17   conservation of template / target residue
    18, 19   gap fraction averaged over a window of 5
    20..     template extra columns, then target extra columns
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .lattice import I_S, I_T, M
from .msa import N_AA
from .mrf import WINDOW, window_contexts

LAYOUT = "builtin-v1"
BASE_F = 20
_DOT = slice(1, 12)


class FeatureSchemaError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ResidueTable:
    """Per-residue descriptors of one protein."""

    context: np.ndarray  # (L, 21, 2w+1)
    gap: np.ndarray
    terminal: np.ndarray
    conservation: np.ndarray
    gap_window: np.ndarray
    extra: np.ndarray  # (L, e)
    extra_names: tuple = ()

    @property
    def L(self):
        return self.context.shape[0]


def residue_table(marginals, extra=None, extra_names=()):
    marg = np.asarray(marginals, dtype=float)
    L = marg.shape[0]
    ctx = window_contexts(marg)
    aa = marg[:, :N_AA]
    tot = aa.sum(axis=1, keepdims=True)
    q = np.divide(aa, tot, out=np.full_like(aa, 1.0 / N_AA), where=tot > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -np.sum(np.where(q > 0, q * np.log(q), 0.0), axis=1)
    idx = np.arange(L)
    terminal = ((idx < WINDOW) | (idx >= L - WINDOW)).astype(float)
    gap_window = ctx[:, -1, WINDOW - 2:WINDOW + 3].sum(axis=1) / 5.0
    if extra is None:
        extra = np.zeros((L, 0))
    extra = np.asarray(extra, dtype=float)
    if extra.shape[0] != L:
        raise FeatureSchemaError(f"extra features have {extra.shape[0]} rows, protein has {L}")
    if len(extra_names) != extra.shape[1]:
        raise FeatureSchemaError("one name per extra feature column required")
    return ResidueTable(ctx, marg[:, -1].copy(), terminal, 1.0 - ent / np.log(N_AA), gap_window,
                        extra, tuple(extra_names))


def mrf_table(mrf, extra=None, extra_names=()):
    return residue_table(mrf.marginals, extra, extra_names)


def schema_of(n_extra_t=0, n_extra_s=0, names_t=(), names_s=()):
    """Schema tag stored with trained models; differing tags mean incompatible features."""
    desc = f"{LAYOUT};T={','.join(names_t) or n_extra_t};S={','.join(names_s) or n_extra_s}"
    return desc + "#" + hashlib.sha256(desc.encode()).hexdigest()[:12]


def table_schema(rt, rs):
    return schema_of(rt.extra.shape[1], rs.extra.shape[1], rt.extra_names, rs.extra_names)


def n_features(rt, rs):
    return BASE_F + rt.extra.shape[1] + rs.extra.shape[1]


def _side(rt, idx, out, first, extra_at):
    out[..., 12 + first] = rt.gap[idx]
    out[..., 14 + first] = rt.terminal[idx]
    out[..., 16 + first] = rt.conservation[idx]
    out[..., 18 + first] = rt.gap_window[idx]
    e = rt.extra.shape[1]
    if e:
        out[..., extra_at:extra_at + e] = rt.extra[idx]


def pair_features(rt, rs, xi, yi):
    """Features ``(3, k, F)`` for residue pairs ``(xi[t], yi[t])`` (0-based)."""
    xi = np.asarray(xi, dtype=np.int64)
    yi = np.asarray(yi, dtype=np.int64)
    F = n_features(rt, rs)
    et = rt.extra.shape[1]
    out = np.zeros((3, len(xi), F))
    out[:, :, 0] = 1.0
    out[M, :, _DOT] = np.einsum("kad,kad->kd", rt.context[xi, :N_AA], rs.context[yi, :N_AA])
    _side(rt, xi, out[M], 0, BASE_F)
    _side(rs, yi, out[M], 1, BASE_F + et)
    _side(rt, xi, out[I_T], 0, BASE_F)
    _side(rs, yi, out[I_S], 1, BASE_F + et)
    return out


def lattice_features(rt, rs):
    """Features ``(3, m+1, n+1, F)`` for every lattice vertex; unreachable vertices are zero."""
    m, n = rt.L, rs.L
    F = n_features(rt, rs)
    et = rt.extra.shape[1]
    out = np.zeros((3, m + 1, n + 1, F))
    out[M, 1:, 1:, 0] = 1.0
    out[I_T, 1:, :, 0] = 1.0
    out[I_S, :, 1:, 0] = 1.0
    out[M, 1:, 1:, _DOT] = np.einsum("xad,yad->xyd", rt.context[:, :N_AA], rs.context[:, :N_AA],
                                     optimize=True)
    xs = np.arange(m)[:, None]
    ys = np.arange(n)[None, :]
    _side(rt, np.broadcast_to(xs, (m, n)), out[M, 1:, 1:], 0, BASE_F)
    _side(rs, np.broadcast_to(ys, (m, n)), out[M, 1:, 1:], 1, BASE_F + et)
    _side(rt, np.broadcast_to(xs, (m, n + 1)), out[I_T, 1:, :], 0, BASE_F)
    _side(rs, np.broadcast_to(ys, (m + 1, n)), out[I_S, :, 1:], 1, BASE_F + et)
    return out


def read_feature_file(text):
    """Per-residue feature file: ``#columns name ...`` header, then one row per residue."""
    names = None
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts and parts[0] == "columns":
                names = tuple(parts[1:])
            continue
        if names is None:
            raise FeatureSchemaError(f"feature file line {lineno}: data before '#columns' header")
        vals = line.split()
        if len(vals) != len(names):
            raise FeatureSchemaError(f"feature file line {lineno}: expected {len(names)} values")
        try:
            row = [float(v) for v in vals]
        except ValueError:
            raise FeatureSchemaError(f"feature file line {lineno}: unparsable number") from None
        if not all(np.isfinite(row)) or max(abs(v) for v in row) > 1.0:
            raise FeatureSchemaError(f"feature file line {lineno}: values must lie in [-1, 1]")
        rows.append(row)
    if names is None:
        raise FeatureSchemaError("feature file has no '#columns' header")
    return np.array(rows, dtype=float).reshape(len(rows), len(names)), names
