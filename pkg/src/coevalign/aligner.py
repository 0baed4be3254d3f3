"""Alignment of two family models with pairwise (edge) potentials.

The objective of a path ``z`` is::

    sum_{vertices} theta_node + (1 / L) * sum_{edge terms with both ends matched} theta_edge

with ``L`` the number of path vertices. It is not decomposable, so
:func:`admm_align` alternates two vertex-score dynamic programs over
copies ``y`` and ``z`` of the path, coupled by a multiplier ``lam``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import dp
from .dp import dp_align, vertex_transition_scores  # noqa: F401  (re-exported)
from .lattice import I_S, I_T, M, N_STATES, STATE_NAMES, STEP, AlignmentPath, enumerate_paths
from .potentials import EdgePotentialTable, NodePotentialTable

BRUTE_FORCE_MAX = 7


class ProblemTooLarge(ValueError):
    pass


def profile_column_mapping(p_target, p_aux, gap=-1.0):
    """Column correspondence of two profiles with match probabilities.

    Match vertices score ``log(21 * <p, q>)`` (0 for unrelated uniform
    columns), gap vertices ``gap``. The maximum expected accuracy path over
    the posterior match probabilities gives the pairs; each pair carries
    its posterior. Returns ``{target_col: (aux_col, prob)}``, 0-based.
    """
    pt = np.asarray(p_target, dtype=float)
    pa = np.asarray(p_aux, dtype=float)
    m, n = pt.shape[0], pa.shape[0]
    s = np.full((m + 1, n + 1, N_STATES), float(gap))
    s[1:, 1:, M] = np.log(np.maximum(pt.shape[1] * (pt @ pa.T), 1e-300))
    if m < 2 or n < 2:
        mag = np.exp(s[1:, 1:, M] - np.logaddexp.reduce(s[1:, 1:, M], axis=None))
    else:
        E = vertex_transition_scores(s)
        F, B = dp.forward(E), dp.backward(E)
        logZ = np.logaddexp.reduce(F[m, n])
        mag = np.exp(F[1:, 1:, M] + B[1:, 1:, M] - logZ)
    mscore = np.zeros((m + 1, n + 1, N_STATES))
    mscore[1:, 1:, M] = mag
    path = dp_align(mscore)
    out = {}
    for x, y in path.matches():
        p = float(min(1.0, mag[x - 1, y - 1]))
        if p > 0:
            out[x - 1] = (y - 1, p)
    return out


def vertex_sum(scores, path):
    return float(np.asarray(scores)[list(path.xs), list(path.ys), list(path.states)].sum())


# --- problem and objective ------------------------------------------------------------------


class AlignProblem:
    """Node table plus match-match edge terms, indexed for path lookups."""

    def __init__(self, node, edges=None):
        theta = node.theta if isinstance(node, NodePotentialTable) else np.asarray(node, dtype=float)
        if theta.ndim != 3 or theta.shape[2] != N_STATES:
            raise ValueError("node potentials must have shape (m+1, n+1, 3)")
        if not np.all(np.isfinite(theta)):
            raise ValueError("node potentials must be finite")
        self.theta = theta
        self.m, self.n = theta.shape[0] - 1, theta.shape[1] - 1
        self.edges = edges if edges is not None else EdgePotentialTable.empty()
        e = self.edges
        if len(e):
            if not np.all(np.isfinite(e.theta)):
                raise ValueError("edge potentials must be finite")
            if (e.i.min() < 0 or e.k.max() >= self.m or e.j.min() < 0 or e.l.max() >= self.n
                    or np.any(e.i >= e.k) or np.any(e.j >= e.l)):
                raise ValueError("edge terms must satisfy 0 <= i < k < m and 0 <= j < l < n")
        self._small = self._index(e.i, e.j)
        self._large = self._index(e.k, e.l)

    def _index(self, a, b):
        key = a * self.n + b
        order = np.argsort(key, kind="stable")
        return key[order], order

    def _lookup(self, index, a, b):
        keys, order = index
        key = a * self.n + b
        lo, hi = np.searchsorted(keys, key, "left"), np.searchsorted(keys, key, "right")
        return order[lo:hi]

    def match_map(self, path):
        """``mt[i] = j`` for template column ``i`` matched to target column ``j`` (0-based), else -1."""
        mt = np.full(self.m, -1, dtype=np.int64)
        for x, y in path.matches():
            mt[x - 1] = y - 1
        return mt

    def edge_sum(self, path):
        e = self.edges
        if not len(e):
            return 0.0
        mt = self.match_map(path)
        active = (mt[e.i] == e.j) & (mt[e.k] == e.l)
        return float(e.theta[active].sum())

    def spread(self, path, side):
        """Vertex scores from edge terms with one end matched on ``path``.

        ``side="small"`` credits the larger end of every term whose smaller
        end is matched; ``side="large"`` the reverse. Cost is proportional
        to the number of terms touching the path.
        """
        out = np.zeros((self.m + 1, self.n + 1, N_STATES))
        e = self.edges
        if not len(e):
            return out
        index = self._small if side == "small" else self._large
        for x, y in path.matches():
            idx = self._lookup(index, x - 1, y - 1)
            if idx.size == 0:
                continue
            if side == "small":
                np.add.at(out, (e.k[idx] + 1, e.l[idx] + 1, M), e.theta[idx])
            else:
                np.add.at(out, (e.i[idx] + 1, e.j[idx] + 1, M), e.theta[idx])
        return out


def objective(path, prob):
    if (path.m, path.n) != (prob.m, prob.n):
        raise ValueError("path and problem sizes differ")
    return vertex_sum(prob.theta, path) + prob.edge_sum(path) / len(path)


# --- ADMM -------------------------------------------------------------------------------------


@dataclass(frozen=True)
class AdmmAlignConfig:
    """ADMM settings.

    ``split`` chooses how the bilinear edge term is spread over the two
    copies: ``"ordered"`` credits a term to ``y`` at its larger end and to
    ``z`` at its smaller end; ``"symmetric"`` credits half of it to both
    ends in both subproblems. ``penalty`` selects the coefficient of the
    quadratic penalty in the ``z`` subproblem: ``"expanded"`` uses
    ``1 - 2y`` as obtained by expanding ``(z - y)^2`` for binary variables,
    ``"one_sided"`` uses ``1 - y``.
    """

    rho: float = 0.5
    max_iter: int = 50
    split: str = "ordered"
    penalty: str = "one_sided"

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.split not in ("ordered", "symmetric"):
            raise ValueError("split must be 'ordered' or 'symmetric'")
        if self.penalty not in ("expanded", "one_sided"):
            raise ValueError("penalty must be 'expanded' or 'one_sided'")


@dataclass(frozen=True, eq=False)
class AlignResult:
    path: AlignmentPath
    objective: float
    iterations: int
    converged: bool
    trace: tuple = ()  # (objective of z, ||z - y||) per iteration
    final_path: AlignmentPath = None


def _edge_scores(prob, path, which, split):
    if split == "ordered":
        return prob.spread(path, "small" if which == "y" else "large")
    return 0.5 * (prob.spread(path, "small") + prob.spread(path, "large"))


def admm_align(prob, cfg=AdmmAlignConfig()):
    rho = cfg.rho
    z = dp_align(prob.theta)
    L = len(z)
    best_path, best_obj = z, objective(z, prob)
    lam = np.zeros_like(prob.theta)
    trace = []
    converged = False
    it = 0
    if not len(prob.edges):
        # Both subproblems reproduce the node-only path at once.
        return AlignResult(z, best_obj, 1, True, ((best_obj, 0.0),), z)
    for it in range(1, cfg.max_iter + 1):
        zi = z.indicator()
        C = _edge_scores(prob, z, "y", cfg.split) / L - lam - 0.5 * rho * (1.0 - 2.0 * zi)
        y = dp_align(C)
        yi = y.indicator()
        pen = 1.0 - 2.0 * yi if cfg.penalty == "expanded" else 1.0 - yi
        D = prob.theta + _edge_scores(prob, y, "z", cfg.split) / L + lam - 0.5 * rho * pen
        z = dp_align(D)
        zi = z.indicator()
        lam = lam - rho * (zi - yi)
        L = len(z)
        diff = math.sqrt(float(np.sum((zi - yi) ** 2)))
        obj = objective(z, prob)
        trace.append((obj, diff))
        if obj > best_obj:
            best_path, best_obj = z, obj
        if diff == 0.0:
            converged = True
            break
    return AlignResult(best_path, best_obj, it, converged, tuple(trace), z)


# --- exhaustive oracle ---------------------------------------------------------------------------


@lru_cache(maxsize=8)
def _path_arrays(m, n):
    paths = enumerate_paths(m, n)
    P, Lmax = len(paths), m + n
    xs = np.zeros((P, Lmax), dtype=np.int64)
    ys = np.zeros((P, Lmax), dtype=np.int64)
    st = np.zeros((P, Lmax), dtype=np.int64)
    valid = np.zeros((P, Lmax), dtype=bool)
    mt = np.full((P, m), -1, dtype=np.int64)
    for r, p in enumerate(paths):
        k = len(p)
        xs[r, :k], ys[r, :k], st[r, :k] = p.xs, p.ys, p.states
        valid[r, :k] = True
        for x, y in p.matches():
            mt[r, x - 1] = y - 1
    lengths = valid.sum(axis=1)
    return paths, xs, ys, st, valid, mt, lengths


def brute_force_align(prob):
    if prob.m > BRUTE_FORCE_MAX or prob.n > BRUTE_FORCE_MAX:
        raise ProblemTooLarge(f"exhaustive search limited to {BRUTE_FORCE_MAX}x{BRUTE_FORCE_MAX}")
    paths, xs, ys, st, valid, mt, lengths = _path_arrays(prob.m, prob.n)
    node = np.where(valid, prob.theta[xs, ys, st], 0.0).sum(axis=1)
    e = prob.edges
    if len(e):
        active = (mt[:, e.i] == e.j) & (mt[:, e.k] == e.l)
        node = node + (active @ e.theta) / lengths
    r = int(np.argmax(node))
    path = paths[r]
    return AlignResult(path, objective(path, prob), 0, True, (), path)


# --- output ---------------------------------------------------------------------------------------


def consensus(marginals):
    """One letter per column: the most probable amino acid (or gap)."""
    from .msa import ALPHABET

    return "".join(ALPHABET[a] for a in np.argmax(marginals, axis=1))


def format_alignment(result, template_name, target_name, template_seq, target_seq, header=()):
    """Paired FASTA with gaps followed by a ``#``-prefixed footer."""
    a, b = result.path.gapped_strings(template_seq, target_seq)
    lines = [f"# {h}" for h in header]
    lines += [f">{template_name}", a, f">{target_name}", b]
    lines.append(f"# objective {result.objective!r}")
    lines.append(f"# iterations {result.iterations}")
    lines.append(f"# converged {str(result.converged).lower()}")
    for t, (obj, diff) in enumerate(result.trace, 1):
        lines.append(f"# trace {t} {obj!r} {diff!r}")
    return "\n".join(lines) + "\n"


def format_triples(path):
    return "".join(f"{x} {y} {STATE_NAMES[s]}\n" for x, y, s in path.triples())


def parse_triples(text, m=None, n=None):
    """Read an ``x y state`` list (1-based, states M/It/Is) back into a path."""
    triples = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"triple file line {lineno}: expected 'x y state'")
        try:
            triples.append((int(parts[0]), int(parts[1]), parts[2]))
        except ValueError:
            raise ValueError(f"triple file line {lineno}: bad coordinates") from None
    if not triples:
        raise ValueError("empty triple file")
    m = triples[-1][0] if m is None else m
    n = triples[-1][1] if n is None else n
    return AlignmentPath.from_triples(m, n, triples)
