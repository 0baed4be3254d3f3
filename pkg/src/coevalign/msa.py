"""Multiple sequence alignments: parsing, cleaning, weighting and statistics.

Symbols are stored as integer codes ``0..20``: the twenty standard amino
acids in ``AMINO_ACIDS`` order followed by the gap (code 20). Gap
characters (``-`` and ``.``) and every non-standard residue (B, Z, X, J,
U, O, ...) are read as gap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
ALPHABET = AMINO_ACIDS + "-"
N_AA = 20
N_SYMBOLS = 21
GAP = 20

_LOOKUP = np.full(256, GAP, dtype=np.uint8)
for _code, _aa in enumerate(AMINO_ACIDS):
    _LOOKUP[ord(_aa)] = _code
    _LOOKUP[ord(_aa.lower())] = _code


class MsaFormatError(ValueError):
    """Input could not be read as the declared alignment format."""


@dataclass(frozen=True, eq=False)
class Msa:
    """An alignment held as an ``(N, L)`` array of symbol codes.

    ``source_column_map[c]`` is the column index in the originally
    parsed alignment that column ``c`` came from.
    """

    codes: np.ndarray
    ids: tuple
    source_column_map: tuple = field(default=None)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        codes = np.ascontiguousarray(self.codes, dtype=np.uint8)
        if codes.ndim != 2:
            raise ValueError("codes must be a 2-D array")
        if codes.size and codes.max() > GAP:
            raise ValueError("symbol codes must lie in 0..20")
        if len(self.ids) != codes.shape[0]:
            raise ValueError("one id per row required")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("row ids must be unique")
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "ids", tuple(self.ids))
        scm = self.source_column_map
        if scm is None:
            scm = tuple(range(codes.shape[1]))
        object.__setattr__(self, "source_column_map", tuple(int(c) for c in scm))

    @classmethod
    def from_rows(cls, rows, ids=None, **kw):
        if ids is None:
            ids = [f"seq{i}" for i in range(len(rows))]
        lengths = {len(r) for r in rows}
        if len(lengths) > 1:
            raise MsaFormatError("rows differ in length")
        codes = np.array([encode(r) for r in rows], dtype=np.uint8).reshape(len(rows), -1)
        return cls(codes, tuple(ids), **kw)

    @property
    def n_rows(self):
        return self.codes.shape[0]

    @property
    def L(self):
        return self.codes.shape[1]

    @property
    def rows(self):
        return [decode(r) for r in self.codes]

    def __eq__(self, other):
        if not isinstance(other, Msa):
            return NotImplemented
        return (
            self.ids == other.ids
            and self.source_column_map == other.source_column_map
            and np.array_equal(self.codes, other.codes)
        )

    def __hash__(self):
        return hash((self.ids, self.codes.tobytes()))

    def one_hot(self):
        """``(N, L, 21)`` float indicator array."""
        return np.eye(N_SYMBOLS)[self.codes]


@dataclass(frozen=True, eq=False)
class Profile:
    p: np.ndarray
    pseudocount: float

    @property
    def L(self):
        return self.p.shape[0]


@dataclass(frozen=True, eq=False)
class MiMatrix:
    m: np.ndarray
    power: int = 1


def encode(seq):
    raw = np.frombuffer(seq.encode("ascii", errors="replace"), dtype=np.uint8)
    return _LOOKUP[raw]


def decode(codes):
    return "".join(ALPHABET[c] for c in codes)


# --- parsing -----------------------------------------------------------------


def parse_msa(data, format="aligned-fasta", meta=None):
    """Parse an aligned FASTA or Stockholm alignment.

    Parameters
    ----------
    data : bytes or str
        File contents.
    format : {"aligned-fasta", "stockholm"}
        Declared input format.
    meta : dict, optional
        Provenance metadata carried on the result.

    Raises
    ------
    MsaFormatError
        Empty input, ragged rows (the message names the first row whose
        length differs from the first row), duplicate FASTA ids or text
        that does not follow the declared format.
    """
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MsaFormatError(f"input is not text: {exc}") from None
    if format in ("aligned-fasta", "fasta", "afa"):
        ids, seqs = _read_fasta(data)
    elif format in ("stockholm", "sto"):
        ids, seqs = _read_stockholm(data)
    else:
        raise ValueError(f"unknown alignment format {format!r}")
    if not seqs:
        raise MsaFormatError("empty alignment")
    width = len(seqs[0])
    for rid, s in zip(ids, seqs):
        if len(s) != width:
            raise MsaFormatError(
                f"row {rid!r} has length {len(s)}, expected {width} (ragged alignment)"
            )
    if width == 0:
        raise MsaFormatError("alignment has no columns")
    codes = np.array([encode(s.upper()) for s in seqs], dtype=np.uint8)
    return Msa(codes, tuple(ids), meta=dict(meta or {}))


def read_msa(path, format=None):
    """Read an alignment file, guessing the format from its first line."""
    with open(path, "rb") as fh:
        data = fh.read()
    if format is None:
        head = data.lstrip()[:32]
        format = "stockholm" if head.startswith(b"# STOCKHOLM") else "aligned-fasta"
    try:
        return parse_msa(data, format, meta={"source": str(path)})
    except MsaFormatError as exc:
        raise MsaFormatError(f"{path}: {exc}") from None


def _read_fasta(text):
    ids, seqs = [], []
    seen = set()
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            rid = line[1:].split()[0] if line[1:].split() else f"row{len(ids) + 1}"
            if rid in seen:
                raise MsaFormatError(f"line {lineno}: duplicate sequence id {rid!r}")
            seen.add(rid)
            ids.append(rid)
            current = []
            seqs.append(current)
        elif current is None:
            raise MsaFormatError(f"line {lineno}: sequence data before first '>' header")
        else:
            current.append("".join(line.split()))
    return ids, ["".join(parts) for parts in seqs]


def _read_stockholm(text):
    order, parts = [], {}
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if s == "//":
            break
        fields = s.split()
        if len(fields) != 2:
            raise MsaFormatError(f"line {lineno}: expected '<id> <aligned sequence>'")
        rid, seq = fields
        if rid not in parts:
            order.append(rid)
            parts[rid] = []
        parts[rid].append(seq)
    return order, ["".join(parts[r]) for r in order]


def format_fasta(msa):
    out = []
    for rid, row in zip(msa.ids, msa.rows):
        out.append(f">{rid}\n{row}\n")
    return "".join(out)


# --- cleaning ----------------------------------------------------------------


def remove_duplicates(msa):
    """Keep the first occurrence of every distinct row."""
    _, first = np.unique(msa.codes, axis=0, return_index=True)
    keep = np.sort(first)
    if len(keep) == msa.n_rows:
        return msa
    return Msa(
        msa.codes[keep],
        tuple(msa.ids[i] for i in keep),
        msa.source_column_map,
        dict(msa.meta),
    )


def filter_gap_columns(msa, max_gap_fraction=0.9):
    """Drop columns whose gap fraction is strictly above ``max_gap_fraction``."""
    if not 0 < max_gap_fraction <= 1:
        raise ValueError("max_gap_fraction must lie in (0, 1]")
    gap_frac = (msa.codes == GAP).mean(axis=0)
    keep = np.flatnonzero(~(gap_frac > max_gap_fraction))
    if keep.size == 0:
        raise ValueError("every column exceeds the gap threshold; degenerate family")
    if keep.size == msa.L:
        return msa
    scm = tuple(msa.source_column_map[c] for c in keep)
    return Msa(msa.codes[:, keep], msa.ids, scm, dict(msa.meta))


def clean(msa, max_gap_fraction=0.9):
    return filter_gap_columns(remove_duplicates(msa), max_gap_fraction)


# --- weighting and effective counts -------------------------------------------


def _aa_onehot_flat(msa):
    oh = msa.one_hot()[:, :, :N_AA]
    return oh.reshape(msa.n_rows, -1)


def pairwise_identity(msa):
    """Identity of every row pair over columns where either row is non-gap.

    Two all-gap rows are treated as identical.
    """
    X = _aa_onehot_flat(msa)
    same = X @ X.T
    G = (msa.codes == GAP).astype(float)
    union = msa.L - G @ G.T
    with np.errstate(invalid="ignore", divide="ignore"):
        ident = np.where(union > 0, same / np.maximum(union, 1), 1.0)
    return ident


def sequence_weights(msa, identity_threshold=0.62):
    """Inverse cluster-size weights at an identity threshold."""
    if msa.n_rows == 0:
        raise ValueError("empty alignment")
    ident = pairwise_identity(msa)
    # tolerance keeps exact-threshold pairs (e.g. 0.62 from 31/50) inside
    counts = (ident >= identity_threshold - 1e-12).sum(axis=1)
    return 1.0 / counts


def hamming_distance(msa):
    """Normalized Hamming distances between rows; gaps count as a symbol."""
    X = msa.one_hot().reshape(msa.n_rows, -1)
    same = X @ X.T
    return 1.0 - same / msa.L


def meff(msa, hamming_threshold=0.3):
    """Number of effective sequences by inverse neighbourhood size."""
    if msa.n_rows == 0:
        raise ValueError("empty alignment")
    s = hamming_distance(msa) < hamming_threshold - 1e-12
    np.fill_diagonal(s, True)
    return float(np.sum(1.0 / s.sum(axis=1)))


def neff(col):
    """Exponentiated amino-acid entropy.

    ``col`` is a single 21-vector (or 20-vector) of column probabilities,
    a ``(L, 21)`` array or a :class:`Profile`. Gap mass is dropped and
    the amino-acid part renormalized. For several columns the mean over
    columns with non-zero amino-acid mass is returned.
    """
    p = col.p if isinstance(col, Profile) else np.asarray(col, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)[:, :N_AA]
    mass = p.sum(axis=1)
    ok = mass > 0
    if not ok.any():
        raise ValueError("no column carries amino-acid mass")
    q = p[ok] / mass[ok, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.sum(np.where(q > 0, q * np.log(q), 0.0), axis=1)
    vals = np.clip(np.exp(h), 1.0, 20.0)
    return float(vals[0]) if single else float(vals.mean())


def build_profile(msa, weights, pseudocount=1.0):
    """Weighted column frequencies with an additive pseudocount."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (msa.n_rows,):
        raise ValueError("weights must have one entry per row")
    if pseudocount < 0:
        raise ValueError("pseudocount must be non-negative")
    counts = np.einsum("r,rla->la", w, msa.one_hot())
    p = (counts + pseudocount / N_SYMBOLS) / (w.sum() + pseudocount)
    return Profile(p, float(pseudocount))


# --- mutual information ---------------------------------------------------------


def pair_frequencies(msa, weights, pseudocount=1.0):
    """Joint ``(L, L, 21, 21)`` and marginal ``(L, 21)`` frequencies.

    ``pseudocount`` is a total mass spread evenly over the 441 symbol
    pairs, so the marginals carry ``pseudocount / 21`` per symbol.
    """
    w = np.asarray(weights, dtype=float)
    X = msa.one_hot().reshape(msa.n_rows, -1)
    W = w.sum()
    C = (X * w[:, None]).T @ X
    L = msa.L
    pij = (C.reshape(L, N_SYMBOLS, L, N_SYMBOLS).transpose(0, 2, 1, 3)
           + pseudocount / N_SYMBOLS**2) / (W + pseudocount)
    pi = (np.einsum("r,rla->la", w, msa.one_hot()) + pseudocount / N_SYMBOLS) / (W + pseudocount)
    return pij, pi


def mutual_information(msa, weights, pseudocount=1.0):
    if msa.L < 2:
        raise ValueError("mutual information needs at least two columns")
    pij, pi = pair_frequencies(msa, weights, pseudocount)
    denom = pi[:, None, :, None] * pi[None, :, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pij > 0, pij * np.log(pij / denom), 0.0)
        ent = -np.sum(np.where(pi > 0, pi * np.log(pi), 0.0), axis=1)
    mi = terms.sum(axis=(2, 3))
    mi = 0.5 * (mi + mi.T)
    np.fill_diagonal(mi, ent)
    if pseudocount > 0:
        mi = np.maximum(mi, 0.0)
    return MiMatrix(mi, 1)


def mi_power(mi, k):
    if not isinstance(k, (int, np.integer)) or not 2 <= k <= 11:
        raise ValueError(f"power must be an integer in [2, 11], got {k!r}")
    if mi.power != 1:
        raise ValueError("mi_power expects a raw (power 1) MI matrix")
    return MiMatrix(np.linalg.matrix_power(mi.m, int(k)), int(k))
