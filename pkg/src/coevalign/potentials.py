"""Alignment potentials.

Node potentials are scorer outputs offset by their expectation over
random column pairs, so they read as log-odds against a background of
unrelated proteins. Edge potentials score a template column pair against
a target column pair through their distance-bin distributions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cnf, features
from .lattice import I_S, I_T, M, N_STATES, vertex_valid_mask
from .mrf import DEFAULT_BINS, TWO_BINS

SHAPE_BUCKET = 50


class SchemaMismatch(ValueError):
    pass


# --- scorer -------------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Scorer:
    """A trained model together with the per-protein extra feature columns it expects."""

    model: cnf.CnfModel
    offset: float = 0.0  # constant added to every transition score

    def check(self, rt, rs):
        schema = features.table_schema(rt, rs)
        if self.model.schema not in ("generic", schema):
            raise SchemaMismatch(f"model expects features {self.model.schema!r}, proteins give {schema!r}")
        F = features.n_features(rt, rs)
        if F != self.model.F:
            raise SchemaMismatch(f"model expects {self.model.F} features, proteins give {F}")

    def pair_state_scores(self, rt, rs, xi, yi):
        """Per-state scores ``(3, k)``: mean over incoming states of the transition networks."""
        f = features.pair_features(rt, rs, xi, yi)
        W, lam = self.model.W, self.model.lam
        a = np.einsum("vkf,uvhf->uvkh", f, W)
        h = 1.0 / (1.0 + np.exp(-a))
        E = np.einsum("uvkh,uvh->uvk", h, lam)
        return E.mean(axis=0) + self.offset

    def lattice_scores(self, rt, rs):
        """Vertex scores ``(m+1, n+1, 3)``; unreachable vertices are 0."""
        feats = features.lattice_features(rt, rs)
        E = cnf.transition_scores(self.model, feats) + self.offset
        s = cnf.node_scores(E)
        s[~vertex_valid_mask(rt.L, rs.L)] = 0.0
        return s


# --- background ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BackgroundModel:
    """Columns to draw random pairs from.

    ``library`` provides template-side columns and ``target_library``
    (default: the same) target-side columns. Both hold residue tables.
    With ``exhaustive`` every column pair is used instead of sampling.
    """

    library: list
    n_samples: int = 1000
    seed: int = 0
    target_library: list = None
    exhaustive: bool = False

    def __post_init__(self):
        if not self.library:
            raise ValueError("background library is empty")
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")

    @property
    def targets(self):
        return self.target_library if self.target_library is not None else self.library


@dataclass(frozen=True)
class Expectation:
    mean: tuple  # per state
    stderr: tuple
    n: int


def _draw(lib, rng, count):
    sizes = np.array([t.L for t in lib])
    which = rng.integers(0, len(lib), size=count)
    col = (rng.random(count) * sizes[which]).astype(np.int64)
    return which, col


def _gather(lib, which, col):
    """Stack the chosen columns of several tables into one table."""
    pick = lambda attr: np.concatenate([getattr(lib[w], attr)[[c]] for w, c in zip(which, col)])
    return features.ResidueTable(pick("context"), pick("gap"), pick("terminal"), pick("conservation"),
                                 pick("gap_window"), pick("extra"), lib[0].extra_names)


def background_expectation(scorer, shape, bg, _cache={}):
    """Mean state scores over random column pairs, with Monte-Carlo standard errors.

    Draws for the template and target side come from one generator seeded
    by ``bg.seed`` in a fixed order (template library index, template
    column, target library index, target column). Results are cached per
    scorer and per length bucket of width 50; ``shape`` only selects the
    bucket because columns keep their own window contexts.
    """
    key = (id(scorer), id(bg), tuple(s // SHAPE_BUCKET for s in shape))
    hit = _cache.get(key)
    if hit is not None and hit[0] is scorer and hit[1] is bg:
        return hit[2]
    if bg.exhaustive:
        vals = []
        for rt in bg.library:
            for rs in bg.targets:
                xi, yi = np.meshgrid(np.arange(rt.L), np.arange(rs.L), indexing="ij")
                vals.append(scorer.pair_state_scores(rt, rs, xi.ravel(), yi.ravel()))
        S = np.concatenate(vals, axis=1)
    else:
        rng = np.random.default_rng(bg.seed)
        tw, tc = _draw(bg.library, rng, bg.n_samples)
        sw, sc = _draw(bg.targets, rng, bg.n_samples)
        rt = _gather(bg.library, tw, tc)
        rs = _gather(bg.targets, sw, sc)
        idx = np.arange(bg.n_samples)
        S = scorer.pair_state_scores(rt, rs, idx, idx)
    n = S.shape[1]
    mean = S.mean(axis=1)
    se = S.std(axis=1, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(N_STATES)
    out = Expectation(tuple(float(v) for v in mean), tuple(float(v) for v in se), n)
    _cache[key] = (scorer, bg, out)
    return out


# --- node potentials ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NodePotentialTable:
    theta: np.ndarray  # (m+1, n+1, 3)

    @property
    def m(self):
        return self.theta.shape[0] - 1

    @property
    def n(self):
        return self.theta.shape[1] - 1


def node_potentials(rt, rs, scorer, bg, expectation=None):
    """``theta[x, y, u] = E_u(x, y) - Exp(E_u)`` on every reachable vertex."""
    scorer.check(rt, rs)
    exp = expectation or background_expectation(scorer, (rt.L, rs.L), bg)
    theta = scorer.lattice_scores(rt, rs) - np.asarray(exp.mean)[None, None, :]
    theta[~vertex_valid_mask(rt.L, rs.L)] = 0.0
    return NodePotentialTable(theta)


# --- edge potentials ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EdgePotentialModel:
    bins: tuple
    lo: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        B = len(self.bins)
        if lo.shape != (B, B):
            raise ValueError(f"log-odds table must be {B}x{B}")
        if not np.all(np.isfinite(lo)):
            raise ValueError("log-odds table must be finite")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "bins", tuple(self.bins))


# Implementation default, not a fitted table: reward aligning contacts to
# contacts, penalize aligning a contact to a non-contact.
DEFAULT_TWO_BIN_LO = EdgePotentialModel(TWO_BINS, np.array([[1.0, -0.5], [-0.5, 0.0]]))


def read_lo_file(text):
    """``#bins`` header, then one row of log-odds per bin."""
    bins, rows = None, []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts and parts[0] == "bins":
                bins = tuple(parts[1:])
            continue
        try:
            rows.append([float(v) for v in line.split()])
        except ValueError:
            raise ValueError(f"log-odds file line {lineno}: unparsable number") from None
    if bins is None:
        raise ValueError("log-odds file has no '#bins' header")
    if len(rows) != len(bins) or any(len(r) != len(bins) for r in rows):
        raise ValueError(f"log-odds file must hold a {len(bins)}x{len(bins)} matrix")
    return EdgePotentialModel(bins, np.array(rows))


def format_lo_file(lo):
    lines = ["#bins " + " ".join(lo.bins)]
    lines += [" ".join(repr(float(v)) for v in row) for row in lo.lo]
    return "\n".join(lines) + "\n"


def edge_potential(dist_t, dist_s, lo):
    p = np.asarray(dist_t, dtype=float)
    q = np.asarray(dist_s, dtype=float)
    B = len(lo.bins)
    if p.shape != (B,) or q.shape != (B,):
        raise SchemaMismatch(f"distributions must have {B} bins")
    return float(p @ lo.lo @ q)


@dataclass(frozen=True, eq=False)
class EdgePotentialTable:
    """Match-match terms: template columns ``i < k`` paired with target columns ``j < l`` (0-based)."""

    i: np.ndarray
    k: np.ndarray
    j: np.ndarray
    l: np.ndarray
    theta: np.ndarray

    @classmethod
    def empty(cls):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, np.zeros(0))

    @classmethod
    def from_entries(cls, entries):
        if not entries:
            return cls.empty()
        a = np.array(entries, dtype=float)
        ints = a[:, :4].astype(np.int64)
        return cls(ints[:, 0], ints[:, 1], ints[:, 2], ints[:, 3], a[:, 4].copy())

    def __len__(self):
        return len(self.theta)


def build_edge_potentials(mrf_t, mrf_s, lo, prune_below=0.0):
    if not mrf_t.edges or not mrf_s.edges:
        return EdgePotentialTable.empty()
    for mrf in (mrf_t, mrf_s):
        if not mrf.has_distances:
            raise SchemaMismatch(f"MRF {mrf.name!r} has edges without distance distributions")
        if mrf.bins != lo.bins:
            raise SchemaMismatch(f"MRF {mrf.name!r} bins {mrf.bins} differ from log-odds bins {lo.bins}")
    it, kt, _, dt = mrf_t.edge_arrays()
    js, ls, _, ds = mrf_s.edge_arrays()
    theta = dt @ lo.lo @ ds.T
    a, b = np.nonzero(np.abs(theta) >= prune_below)
    return EdgePotentialTable(it[a], kt[a], js[b], ls[b], theta[a, b])
