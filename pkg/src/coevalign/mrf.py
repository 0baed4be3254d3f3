"""Family models: per-column profile contexts plus a sparse set of coupled column pairs."""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import gauss, ggl
from .msa import N_SYMBOLS, Msa, MsaFormatError, build_profile, mi_power, mutual_information

WINDOW = 5
DEFAULT_BINS = ("<4",) + tuple(f"{a}-{a + 1}" for a in range(4, 15)) + (">15",)
TWO_BINS = ("contact", "noncontact")
COUPLING_SOURCES = ("mi", "mi_power_sum", "ggl", "file")

_MAGIC = b"COEVMRF\0"
FORMAT_VERSION = (1, 0)


class MrfFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MrfNode:
    index: int
    context: np.ndarray  # (21, 2w+1)
    marginal: np.ndarray  # (21,)


@dataclass(frozen=True)
class MrfEdge:
    i: int
    k: int
    strength: float
    dist: tuple = None

    def __post_init__(self):
        if not 0 <= self.i < self.k:
            raise ValueError(f"edge ({self.i}, {self.k}) must have i < k")
        if not self.strength >= 0:
            raise ValueError("edge strength must be non-negative")
        if self.dist is not None and abs(sum(self.dist) - 1.0) > 1e-9:
            raise ValueError(f"distance distribution of edge ({self.i}, {self.k}) does not sum to 1")


def window_contexts(marginals, w=WINDOW):
    """``(L, 21, 2w+1)`` windows of column marginals, zero beyond the ends."""
    L = marginals.shape[0]
    padded = np.zeros((L + 2 * w, marginals.shape[1]))
    padded[w:w + L] = marginals
    idx = np.arange(L)[:, None] + np.arange(2 * w + 1)[None, :]
    return np.ascontiguousarray(padded[idx].transpose(0, 2, 1))


class Mrf:
    """Column marginals, coupled column pairs and an optional distance-bin schema."""

    def __init__(self, marginals, edges=(), bins=None, provenance="", name="", min_sep=6, meta=None):
        self.marginals = np.ascontiguousarray(marginals, dtype=float)
        if self.marginals.ndim != 2 or self.marginals.shape[1] != N_SYMBOLS:
            raise ValueError("marginals must have shape (L, 21)")
        self.edges = tuple(sorted(edges, key=lambda e: (e.i, e.k)))
        self.bins = tuple(bins) if bins is not None else None
        self.provenance = provenance
        self.name = name
        self.min_sep = min_sep
        self.meta = {str(k): str(v) for k, v in (meta or {}).items()}
        L = self.L
        seen = set()
        for e in self.edges:
            if e.k >= L:
                raise ValueError(f"edge ({e.i}, {e.k}) outside {L} columns")
            if e.k - e.i < min_sep:
                raise ValueError(f"edge ({e.i}, {e.k}) closer than min_sep={min_sep}")
            if (e.i, e.k) in seen:
                raise ValueError(f"duplicate edge ({e.i}, {e.k})")
            seen.add((e.i, e.k))
            if e.dist is not None and (self.bins is None or len(e.dist) != len(self.bins)):
                raise ValueError("edge distribution does not match the bin schema")
        self._ctx = None

    @property
    def L(self):
        return self.marginals.shape[0]

    @property
    def contexts(self):
        if self._ctx is None:
            self._ctx = window_contexts(self.marginals)
        return self._ctx

    @property
    def nodes(self):
        ctx = self.contexts
        return [MrfNode(i, ctx[i], self.marginals[i]) for i in range(self.L)]

    @property
    def has_distances(self):
        return bool(self.edges) and all(e.dist is not None for e in self.edges)

    def edge_arrays(self):
        """``(i, k, strength, dist)`` arrays; ``dist`` is ``None`` unless every edge has one."""
        i = np.array([e.i for e in self.edges], dtype=np.int64)
        k = np.array([e.k for e in self.edges], dtype=np.int64)
        s = np.array([e.strength for e in self.edges], dtype=float)
        dist = None
        if self.has_distances:
            dist = np.array([e.dist for e in self.edges], dtype=float)
        return i, k, s, dist

    def __eq__(self, other):
        return (
            isinstance(other, Mrf)
            and self.name == other.name
            and self.provenance == other.provenance
            and self.bins == other.bins
            and self.min_sep == other.min_sep
            and self.edges == other.edges
            and self.meta == other.meta
            and np.array_equal(self.marginals, other.marginals)
        )

    def __repr__(self):
        return f"Mrf(name={self.name!r}, L={self.L}, edges={len(self.edges)}, provenance={self.provenance!r})"


# --- coupling maps ----------------------------------------------------------------------


def _offdiag_max(a):
    off = a[~np.eye(a.shape[0], dtype=bool)]
    return off.max() if off.size else 0.0


def mi_power_sum(mi):
    """``sum_{k=1..11} MI^k``, each power scaled by its largest off-diagonal entry."""
    total = np.zeros_like(mi.m)
    for k in range(1, 12):
        term = mi.m if k == 1 else mi_power(mi, k).m
        top = _offdiag_max(term)
        if top > 0:
            total += term / top
    return total


def read_coupling_file(text, L):
    """Parse ``i j score`` lines (1-based); unlisted pairs score 0."""
    s = np.zeros((L, L))
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except (IndexError, ValueError):
            raise MsaFormatError(f"coupling file line {lineno}: expected 'i j score'") from None
        if not (1 <= i <= L and 1 <= j <= L) or i == j:
            raise MsaFormatError(f"coupling file line {lineno}: pair ({i}, {j}) invalid for L={L}")
        if not np.isfinite(v):
            raise MsaFormatError(f"coupling file line {lineno}: non-finite score")
        s[i - 1, j - 1] = s[j - 1, i - 1] = v
    return s


def coupling_map(msa, weights, source, coupling_text=None, ggl_cfg=None, pseudocount=1.0):
    """Symmetric non-negative ``(L, L)`` coupling strengths with a zero diagonal."""
    if source == "mi":
        s = mutual_information(msa, weights, pseudocount).m.copy()
    elif source == "mi_power_sum":
        s = mi_power_sum(mutual_information(msa, weights, pseudocount))
    elif source == "ggl":
        cfg = ggl_cfg or ggl.GglConfig()
        cov = gauss.shrink(gauss.empirical_covariance(msa, weights))
        prec = ggl.solve_glasso(cov, cfg.lam1, cfg)
        s = gauss.apc(gauss.coupling_norms(prec)).s
    elif source == "file":
        if coupling_text is None:
            raise ValueError("coupling source 'file' needs coupling_text")
        s = read_coupling_file(coupling_text, msa.L)
    else:
        raise ValueError(f"unknown coupling source {source!r}; choose from {COUPLING_SOURCES}")
    s = np.maximum(0.5 * (s + s.T), 0.0)
    np.fill_diagonal(s, 0.0)
    return s


@dataclass(frozen=True)
class EdgeBudget:
    """Either a strength ``threshold`` or the ``top_k`` partners of every column."""

    top_k: int = 10
    threshold: float = None

    def __post_init__(self):
        if self.threshold is None and self.top_k < 1:
            raise ValueError("top_k must be at least 1")


def select_edges(s, budget, min_sep=6):
    L = s.shape[0]
    iu, ku = np.triu_indices(L, k=min_sep)
    cand = s[iu, ku]
    keep = cand > 0
    if budget.threshold is not None:
        keep &= cand >= budget.threshold
    else:
        chosen = np.zeros(len(cand), dtype=bool)
        for col in range(L):
            mine = np.flatnonzero(((iu == col) | (ku == col)) & keep)
            if mine.size == 0:
                continue
            order = np.lexsort((ku[mine], iu[mine], -cand[mine]))
            chosen[mine[order[:budget.top_k]]] = True
        keep &= chosen
    return [MrfEdge(int(i), int(k), float(v)) for i, k, v in zip(iu[keep], ku[keep], cand[keep])]


def build_mrf(msa, weights, coupling="mi", budget=EdgeBudget(), min_sep=6, name="",
              coupling_text=None, ggl_cfg=None, pseudocount=1.0):
    """Family model of a cleaned alignment.

    Node marginals are the weighted profile; edges are the strongest
    column pairs of the chosen coupling map at least ``min_sep`` apart.
    """
    if not isinstance(msa, Msa):
        raise TypeError("msa must be an Msa")
    prof = build_profile(msa, weights, pseudocount)
    s = coupling_map(msa, weights, coupling, coupling_text, ggl_cfg, pseudocount)
    edges = select_edges(s, budget, min_sep)
    return Mrf(prof.p, edges, None, coupling, name or (msa.ids[0] if msa.ids else ""), min_sep)


# --- distance distributions ----------------------------------------------------------------


@dataclass(frozen=True)
class TwoBin:
    """Fallback ``p(contact) = logistic(a * strength + b)``."""

    a: float = 4.0
    b: float = -2.0


def parse_distance_file(text):
    """Return ``(bins, {(i, k): dist})`` from a ``#bins`` header plus ``i k p1 .. pB`` rows."""
    bins = None
    rows = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts and parts[0] == "bins":
                bins = tuple(parts[1:])
            continue
        if bins is None:
            raise MrfFormatError(f"distance file line {lineno}: data before '#bins' header")
        parts = line.split()
        if len(parts) != 2 + len(bins):
            raise MrfFormatError(f"distance file line {lineno}: expected {2 + len(bins)} fields")
        try:
            i, k = int(parts[0]), int(parts[1])
            p = np.array([float(v) for v in parts[2:]])
        except ValueError:
            raise MrfFormatError(f"distance file line {lineno}: unparsable number") from None
        if np.any(p < 0) or not np.all(np.isfinite(p)) or abs(p.sum() - 1.0) > 1e-6:
            raise MrfFormatError(f"distance file line {lineno}: probabilities must sum to 1")
        a, b = sorted((i - 1, k - 1))
        rows[(a, b)] = tuple(float(v) for v in p / p.sum())
    if bins is None:
        raise MrfFormatError("distance file has no '#bins' header")
    return bins, rows


def attach_distance_distributions(mrf, source):
    """Copy of ``mrf`` whose edges carry distance-bin distributions.

    ``source`` is a :class:`TwoBin` or the text of a distance file.
    """
    if isinstance(source, TwoBin):
        bins = TWO_BINS
        edges = []
        for e in mrf.edges:
            p = float(expit(source.a * e.strength + source.b))
            edges.append(MrfEdge(e.i, e.k, e.strength, (p, 1.0 - p)))
    else:
        bins, rows = parse_distance_file(source)
        edges = []
        for e in mrf.edges:
            if (e.i, e.k) not in rows:
                raise MrfFormatError(f"no distance distribution for edge ({e.i + 1}, {e.k + 1})")
            edges.append(MrfEdge(e.i, e.k, e.strength, rows[(e.i, e.k)]))
    return Mrf(mrf.marginals, edges, bins, mrf.provenance, mrf.name, mrf.min_sep, mrf.meta)


# --- binary format --------------------------------------------------------------------------
#
# magic | u16 major | u16 minor | u32 header length | JSON header |
# marginals f8[L,21] | edge i i4[E] | edge k i4[E] | strength f8[E] | dist f8[E,B] | u32 crc32


def serialize_mrf(mrf):
    i, k, s, dist = mrf.edge_arrays()
    if mrf.edges and not mrf.has_distances and any(e.dist is not None for e in mrf.edges):
        raise ValueError("either all edges or none carry distance distributions")
    header = json.dumps({
        "name": mrf.name,
        "provenance": mrf.provenance,
        "L": mrf.L,
        "n_edges": len(mrf.edges),
        "bins": list(mrf.bins) if mrf.bins is not None else None,
        "has_dist": dist is not None,
        "min_sep": mrf.min_sep,
        "meta": mrf.meta,
    }, sort_keys=True).encode()
    parts = [
        _MAGIC,
        struct.pack("<HHI", *FORMAT_VERSION, len(header)),
        header,
        mrf.marginals.astype("<f8").tobytes(),
        i.astype("<i4").tobytes(),
        k.astype("<i4").tobytes(),
        s.astype("<f8").tobytes(),
    ]
    if dist is not None:
        parts.append(dist.astype("<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def load_mrf(data):
    data = bytes(data)
    n = len(_MAGIC)
    if data[:n] != _MAGIC:
        raise MrfFormatError("not an MRF file")
    if len(data) < n + 12:
        raise MrfFormatError("truncated MRF file")
    major, minor, hlen = struct.unpack("<HHI", data[n:n + 8])
    if major > FORMAT_VERSION[0]:
        raise MrfFormatError(f"MRF format version {major}.{minor} is newer than supported")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise MrfFormatError("MRF checksum mismatch (truncated or corrupted)")
    pos = n + 8
    try:
        head = json.loads(body[pos:pos + hlen])
    except ValueError:
        raise MrfFormatError("corrupted MRF header") from None
    pos += hlen
    L, E = head["L"], head["n_edges"]
    B = len(head["bins"]) if head["has_dist"] else 0
    need = L * N_SYMBOLS * 8 + E * (4 + 4 + 8) + E * B * 8
    if len(body) - pos != need:
        raise MrfFormatError("MRF payload size mismatch")

    def take(dtype, count):
        nonlocal pos
        a = np.frombuffer(body, dtype=dtype, count=count, offset=pos)
        pos += a.nbytes
        return a

    marg = take("<f8", L * N_SYMBOLS).reshape(L, N_SYMBOLS).astype(float)
    i, k = take("<i4", E), take("<i4", E)
    s = take("<f8", E)
    dist = take("<f8", E * B).reshape(E, B) if B else None
    edges = [
        MrfEdge(int(i[t]), int(k[t]), float(s[t]), tuple(float(v) for v in dist[t]) if B else None)
        for t in range(E)
    ]
    bins = tuple(head["bins"]) if head["bins"] is not None else None
    return Mrf(marg, edges, bins, head["provenance"], head["name"], head["min_sep"],
               head.get("meta"))


def write_mrf(mrf, path):
    with open(path, "wb") as fh:
        fh.write(serialize_mrf(mrf))


def read_mrf(path):
    with open(path, "rb") as fh:
        return load_mrf(fh.read())
