"""Template search, score significance and accuracy metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import aligner, potentials
from .lattice import AlignmentPath


# --- library and search ---------------------------------------------------------------------


class TemplateLibrary:
    """Templates by id; entries are MRFs or zero-argument loaders returning one."""

    def __init__(self, entries):
        self._ids = []
        self._items = {}
        for tid, item in entries:
            if tid in self._items:
                raise ValueError(f"duplicate template id {tid!r}")
            self._ids.append(tid)
            self._items[tid] = item

    def __len__(self):
        return len(self._ids)

    @property
    def ids(self):
        return list(self._ids)

    def __getitem__(self, tid):
        item = self._items[tid]
        if callable(item):
            item = item()
            self._items[tid] = item
        return item


@dataclass(frozen=True, eq=False)
class SearchConfig:
    K: int = 200
    edge_weight: float = 1.0  # multiplies edge potentials in the rerank
    prune_below: float = 0.0
    admm: aligner.AdmmAlignConfig = aligner.AdmmAlignConfig()

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")


@dataclass(frozen=True, eq=False)
class RankedHit:
    template_id: str
    stage1: float
    objective: float
    pvalue: float
    alignment: AlignmentPath
    iterations: int = 0


@dataclass(frozen=True, eq=False)
class SearchResult:
    hits: list
    realigned: int
    evd: "EvdFit"


def two_stage_search(query, lib, scorer, bg, lo=None, cfg=SearchConfig(), evd=None):
    """Rank templates against ``query``.

    Stage 1 aligns every template on node potentials alone; the best
    ``K`` by that score (ties by id) are realigned with edge potentials
    and ranked by the full objective. ``query`` is the target side and
    templates the template side of every alignment. P-values use ``evd``
    when given, otherwise a fit to the stage-1 scores of the whole library.
    """
    from .features import mrf_table

    if len(lib) == 0:
        raise ValueError("template library is empty")
    rs = mrf_table(query)
    stage1 = []
    problems = {}
    for tid in lib.ids:
        tmpl = lib[tid]
        rt = mrf_table(tmpl)
        node = potentials.node_potentials(rt, rs, scorer, bg)
        path = aligner.dp_align(node.theta)
        stage1.append((aligner.vertex_sum(node.theta, path), tid))
        problems[tid] = node
    order = sorted(stage1, key=lambda t: (-t[0], t[1]))
    s1 = {tid: v for v, tid in stage1}
    if evd is None:
        evd = fit_evd([v for v, _ in stage1])
    hits = []
    for v, tid in order[:cfg.K]:
        tmpl = lib[tid]
        edges = potentials.EdgePotentialTable.empty()
        if lo is not None and tmpl.edges and query.edges and cfg.edge_weight != 0:
            edges = potentials.build_edge_potentials(tmpl, query, lo, cfg.prune_below)
            edges = potentials.EdgePotentialTable(edges.i, edges.k, edges.j, edges.l,
                                                  edges.theta * cfg.edge_weight)
        res = aligner.admm_align(aligner.AlignProblem(problems[tid], edges), cfg.admm)
        hits.append(RankedHit(tid, s1[tid], res.objective, pvalue(res.objective, evd), res.path,
                              res.iterations))
    hits.sort(key=lambda h: (-h.objective, h.template_id))
    return SearchResult(hits, min(cfg.K, len(lib)), evd)


def format_hits(result, header=()):
    lines = [f"# {h}" for h in header]
    lines.append("# rank\tid\tstage1\tobjective\tpvalue")
    for r, h in enumerate(result.hits, 1):
        lines.append(f"{r}\t{h.template_id}\t{h.stage1:.6f}\t{h.objective:.6f}\t{h.pvalue:.6e}")
    return "\n".join(lines) + "\n"


# --- extreme value statistics ---------------------------------------------------------------------


@dataclass(frozen=True)
class EvdFit:
    mu: float
    beta: float
    n_fit: int

    def __post_init__(self):
        if not self.beta > 0 or not math.isfinite(self.mu):
            raise ValueError("EVD needs finite location and positive scale")


def fit_evd(scores):
    """Maximum-likelihood Gumbel fit, started from the method of moments.

    The likelihood equation for the scale is solved by bracketing around
    the moment estimate; the location then follows in closed form.
    """
    x = np.asarray(scores, dtype=float)
    if x.size < 30:
        raise ValueError(f"need at least 30 scores, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("scores must be finite")
    sd = x.std(ddof=1)
    if not sd > 0:
        raise ValueError("scores are all equal")
    beta0 = math.sqrt(6.0) * sd / math.pi
    mean = x.mean()

    def g(beta):
        w = np.exp(-(x - x.min()) / beta)
        return mean - beta - float(np.sum(x * w) / np.sum(w))

    lo, hi = beta0 / 2, beta0 * 2
    while g(lo) <= 0 and lo > 1e-12 * sd:
        lo /= 2
    while g(hi) >= 0 and hi < 1e12 * sd:
        hi *= 2
    beta = brentq(g, lo, hi, xtol=1e-14 * beta0, rtol=1e-14, maxiter=500)
    mu = x.min() - beta * math.log(np.mean(np.exp(-(x - x.min()) / beta)))
    return EvdFit(float(mu), float(beta), int(x.size))


def pvalue(score, fit):
    """Upper-tail Gumbel probability, kept inside the open interval (0, 1)."""
    z = (score - fit.mu) / fit.beta
    p = -math.expm1(-math.exp(-z)) if z > -700 else 1.0
    tiny = np.nextafter(0.0, 1.0)
    return float(min(max(p, tiny), np.nextafter(1.0, 0.0)))


def format_evd(fit):
    return f"mu {fit.mu!r}\nbeta {fit.beta!r}\nn_fit {fit.n_fit}\n"


def parse_evd(text):
    vals = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, val = line.partition(" ")
        vals[key] = val.strip()
    try:
        return EvdFit(float(vals["mu"]), float(vals["beta"]), int(vals["n_fit"]))
    except (KeyError, ValueError):
        raise ValueError("EVD file must define mu, beta and n_fit") from None


# --- accuracy metrics ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AlignmentAccuracy:
    precision: float
    recall: float
    precision_defined: bool


def alignment_accuracy(pred, ref, offset=0):
    """Fraction of predicted matches within ``offset`` target positions of the reference partner."""
    if (pred.m, pred.n) != (ref.m, ref.n):
        raise ValueError("alignments cover different lattices")
    if offset < 0:
        raise ValueError("offset must be non-negative")
    partner = dict(ref.matches())
    pm = pred.matches()
    correct = sum(1 for x, y in pm if x in partner and abs(y - partner[x]) <= offset)
    precision = correct / len(pm) if pm else 0.0
    recall = correct / len(partner) if partner else 0.0
    return AlignmentAccuracy(precision, recall, bool(pm))


RANGES = (("short", 6, 12), ("medium", 12, 24), ("long", 24, None))
FRACTIONS = (("L/10", 10), ("L/5", 5), ("L/2", 2))


@dataclass(frozen=True)
class AccuracyCell:
    accuracy: float
    evaluated: int
    underfilled: bool


def contact_accuracy(pred, native, L):
    """Top-``L/f`` accuracy per sequence-separation range.

    ``pred`` is a ranked ContactList (or any sequence of ``(i, j, score)``
    rows, best first); ``native`` a set of ``(i, j)`` pairs with ``i < j``.
    """
    rows = pred.entries if hasattr(pred, "entries") else pred
    native = {(min(i, j), max(i, j)) for i, j in native}
    table = {}
    for rname, lo, hi in RANGES:
        inr = [(min(i, j), max(i, j)) for i, j, *_ in rows
               if abs(j - i) >= lo and (hi is None or abs(j - i) < hi)]
        for fname, f in FRACTIONS:
            want = max(1, L // f)
            top = inr[:want]
            if not top:
                table[(rname, fname)] = AccuracyCell(0.0, 0, True)
                continue
            hits = sum(1 for p in top if p in native)
            table[(rname, fname)] = AccuracyCell(hits / len(top), len(top), len(top) < want)
    return table
