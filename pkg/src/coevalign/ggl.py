"""Sparse precision estimation for one or several related families.

Single families use the graphical lasso; related families are estimated
jointly with a group penalty tying aligned column-pair blocks. Both run
through the same scaled-form ADMM loop:

    Omega_k <- sp1_update(Sigma_k - rho Z_k + rho U_k)
    H_k     <- relax Omega_k + (1 - relax) Z_k
    Z       <- sp2_update(H + U)
    U_k     <- U_k + H_k - Z_k

``relax = 1`` is the plain iteration; the default over-relaxation of 1.6
and a warm start at the diagonal-only solution roughly halve the
iteration count.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
from scipy.linalg import blas

from .gauss import Q, BlockCovariance, BlockPrecision, apc, blocks_to_full, coupling_norms, full_to_blocks

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """An eigendecomposition or factorization failed."""


@dataclass(frozen=True)
class GglConfig:
    """Solver settings.

    ``alpha`` (group strength) and ``rho`` (ADMM penalty) follow the
    published settings; ``lam1``, ``lam2`` and ``tol`` are implementation
    defaults.
    """

    lam1: float = 0.01
    alpha: float = 0.001
    lam2: float = 0.005
    rho: float = 0.1
    max_iter: int = 100
    tol: float = 1e-5
    prior_floor: float = 0.3
    relax: float = 1.6
    init: str = "dual"

    def __post_init__(self):
        for name in ("alpha", "rho", "tol", "prior_floor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lam1 < 0 or self.lam2 < 0:
            raise ValueError("penalties must be non-negative")
        if self.tol >= 1:
            raise ValueError("tol must be below 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0 < self.relax < 2:
            raise ValueError("relax must lie in (0, 2)")
        if self.init not in ("diag", "dual", "zero"):
            raise ValueError("init must be 'diag', 'dual' or 'zero'")


@dataclass(frozen=True, eq=False)
class FamilySet:
    families: list
    target_index: int = 0
    meta: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.families) < 1:
            raise ValueError("at least one family is required")
        if not 0 <= self.target_index < len(self.families):
            raise ValueError("target_index out of range")

    @property
    def K(self):
        return len(self.families)


@dataclass(frozen=True, eq=False)
class ColumnMapping:
    """For each auxiliary family, ``{target_col: (aux_col, prob)}`` (0-based)."""

    maps: list

    def __post_init__(self):
        for n, mp in enumerate(self.maps):
            targets = [a for a, _ in mp.values()]
            if len(set(targets)) != len(targets):
                raise ValueError(f"mapping for auxiliary family {n} is not injective")
            for i, (_, p) in mp.items():
                if not 0 < p <= 1:
                    raise ValueError(f"alignment probability {p} at column {i} outside (0, 1]")

    @property
    def n_aux(self):
        return len(self.maps)


@dataclass(frozen=True, eq=False)
class GroupSpec:
    """Column-pair groups as flat member arrays.

    Member ``t`` is block ``(i[t], j[t])`` (``i < j``) of family ``k[t]``
    and belongs to group ``group[t]`` whose weight is ``lam[group[t]]``.
    """

    group: np.ndarray
    k: np.ndarray
    i: np.ndarray
    j: np.ndarray
    lam: np.ndarray

    @classmethod
    def empty(cls):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, np.zeros(0))

    @property
    def n_groups(self):
        return len(self.lam)

    def members(self, g):
        sel = np.flatnonzero(self.group == g)
        return [(int(self.k[t]), int(self.i[t]), int(self.j[t])) for t in sel]

    def validate(self, K, Ls):
        seen = set()
        for t in range(len(self.group)):
            key = (int(self.k[t]), int(self.i[t]), int(self.j[t]))
            if key in seen:
                raise ValueError(f"block {key} appears in more than one group")
            seen.add(key)
            k, i, j = key
            if not 0 <= k < K or not 0 <= i < j < Ls[k]:
                raise ValueError(f"group member {key} out of range")
        fam_pairs = set(zip(self.group.tolist(), self.k.tolist()))
        if len(fam_pairs) != len(self.group):
            raise ValueError("a group holds more than one block of the same family")


@dataclass(frozen=True, eq=False)
class PriorMatrix:
    P: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("prior must be a square matrix")
        if not np.allclose(P, P.T):
            raise ValueError("prior must be symmetric")
        if P.min() < 0 or P.max() > 1:
            raise ValueError("prior probabilities must lie in [0, 1]")
        object.__setattr__(self, "P", P)


@dataclass(frozen=True)
class ContactList:
    """Ranked contacts ``(i, j, score)``, 0-based, ``i < j``."""

    entries: tuple
    L: int

    def pairs(self):
        return [(i, j) for i, j, _ in self.entries]

    def top(self, n):
        return ContactList(self.entries[:n], self.L)


def rank_pairs(scores, min_sep=1):
    """Pairs ``i < j`` with ``j - i >= min_sep``, sorted by score then index."""
    L = scores.shape[0]
    iu, ju = np.triu_indices(L, k=max(1, min_sep))
    vals = scores[iu, ju]
    order = np.lexsort((ju, iu, -vals))
    return tuple((int(iu[t]), int(ju[t]), float(vals[t])) for t in order)


# --- groups --------------------------------------------------------------------


def group_weight(probs, alpha):
    """``alpha * sqrt(N-1) * geometric_mean(probs)`` with ``N - 1 = len(probs)``."""
    probs = np.asarray(probs, dtype=float)
    if probs.size == 0:
        return 0.0
    gm = float(np.exp(np.mean(np.log(probs))))
    return alpha * np.sqrt(probs.size) * gm


def build_groups(mapping, target_L, alpha=0.001, target_index=0, aux_indices=None):
    """One group per target column pair plus every aligned auxiliary pair.

    Auxiliary family ``n`` of ``mapping`` is family ``aux_indices[n]`` of
    the FamilySet (default: ``1 + n`` with the target at 0).
    """
    if aux_indices is None:
        aux_indices = [n + 1 for n in range(mapping.n_aux)]
    group, ks, iis, jjs, lam = [], [], [], [], []
    g = 0
    for i in range(target_L):
        for j in range(i + 1, target_L):
            group.append(g)
            ks.append(target_index)
            iis.append(i)
            jjs.append(j)
            probs = []
            for n, mp in enumerate(mapping.maps):
                if i in mp and j in mp:
                    (a, pa), (b, pb) = mp[i], mp[j]
                    group.append(g)
                    ks.append(aux_indices[n])
                    iis.append(min(a, b))
                    jjs.append(max(a, b))
                    probs.append(pa * pb)
            lam.append(group_weight(probs, alpha))
            g += 1
    as_i = lambda v: np.asarray(v, dtype=np.int64)
    return GroupSpec(as_i(group), as_i(ks), as_i(iis), as_i(jjs), np.asarray(lam, dtype=float))


# --- subproblems ---------------------------------------------------------------


def sp1_update(M, rho):
    """Eigenvalue step: maximizer of ``log|W| - tr(W M) - rho/2 ||W||_F^2``.

    ``M`` is symmetric; the result shares its eigenvectors with
    eigenvalues ``(-m + sqrt(m^2 + 4 rho)) / (2 rho)``, all positive.
    When ``M`` is block-diagonal up to a permutation each connected
    component is decomposed separately.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    M = np.asarray(M, dtype=float)
    M = 0.5 * (M + M.T)
    n_comp, labels = _components(M != 0)
    if n_comp == 1:
        return _sp1_dense(M, rho)
    out = np.zeros_like(M)
    for c in range(n_comp):
        idx = np.flatnonzero(labels == c)
        out[np.ix_(idx, idx)] = _sp1_dense(M[np.ix_(idx, idx)], rho)
    return out


def _components(adj):
    """Connected components of a symmetric boolean adjacency matrix.

    Breadth-first search on the dense matrix; a dense input is settled
    in one or two sweeps, far cheaper than building a sparse graph.
    """
    n = adj.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    c = 0
    for s in range(n):
        if labels[s] >= 0:
            continue
        seen = np.zeros(n, dtype=bool)
        seen[s] = True
        frontier = seen.copy()
        while True:
            nxt = adj[frontier].any(axis=0) & ~seen
            if not nxt.any():
                break
            seen |= nxt
            frontier = nxt
        labels[seen] = c
        c += 1
    return c, labels


def _delta(m, rho):
    # stable form of (-m + sqrt(m^2 + 4 rho)) / (2 rho) for large positive m
    r = np.sqrt(m * m + 4.0 * rho)
    return np.where(m <= 0, (r - m) / (2.0 * rho), 2.0 / (r + m))


def _sp1_dense(M, rho):
    finite = bool(np.isfinite(M).all())
    try:
        if not finite:
            raise ValueError("array must not contain infs or NaNs")
        m, V = scipy.linalg.eigh(M, driver="evd", overwrite_a=True, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(
            f"eigendecomposition failed for {M.shape[0]}x{M.shape[0]} matrix "
            f"(finite={finite}, norm={np.linalg.norm(M) if finite else float('nan'):.3g}): {exc}"
        ) from None
    # every delta is positive, so W = (V sqrt(d)) (V sqrt(d))^T; syrk fills one triangle
    Vs = V * np.sqrt(_delta(m, rho))
    U = blas.dsyrk(1.0, Vs, lower=False)
    return np.triu(U) + np.triu(U, 1).T


def soft_threshold(x, c):
    return np.sign(x) * np.maximum(np.abs(x) - c, 0.0)


def sp2_update(A, lam1, groups, rho, per_entry_lam=None):
    """Group shrinkage step for every family.

    Parameters
    ----------
    A : list of ndarray
        ``Omega_k + U_k`` as full ``(21 L_k)`` square matrices.
    lam1 : float
        Entrywise l1 weight.
    groups : GroupSpec
    rho : float
    per_entry_lam : list of ndarray, optional
        Per-family ``(L_k, L_k)`` block weights replacing ``lam1``.

    Returns
    -------
    list of ndarray
        The minimizer ``Z`` of ``rho/2 ||Z - A||^2 + l1 + group`` terms.
    """
    S = []
    for k, Ak in enumerate(A):
        if per_entry_lam is not None and per_entry_lam[k] is not None:
            c = np.kron(np.asarray(per_entry_lam[k]), np.ones((Q, Q))) / rho
        else:
            c = lam1 / rho
        S.append(soft_threshold(Ak, c))
    if groups.n_groups == 0:
        return S
    Sb = [full_to_blocks(s) for s in S]
    sq = np.array([np.sum(Sb[k][i, j] ** 2) for k, i, j in zip(groups.k, groups.i, groups.j)])
    gnorm = np.sqrt(np.bincount(groups.group, weights=sq, minlength=groups.n_groups))
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(gnorm > 0, 1.0 - groups.lam / (rho * gnorm), 0.0)
    factor = np.maximum(factor, 0.0)
    for t in range(len(groups.group)):
        f = factor[groups.group[t]]
        if f == 1.0:
            continue
        k, i, j = groups.k[t], groups.i[t], groups.j[t]
        Sb[k][i, j] *= f
        Sb[k][j, i] *= f
    return [blocks_to_full(b) for b in Sb]


# --- solvers ---------------------------------------------------------------------


def prior_block_weights(prior, cfg, L):
    """``lam1 + lam2 / max(P_ij, floor)`` per block; diagonal blocks use P = 1."""
    P = np.array(prior.P, dtype=float)
    if P.shape != (L, L):
        raise ValueError(f"prior is {P.shape[0]}x{P.shape[1]}, family has {L} columns")
    np.fill_diagonal(P, 1.0)
    return cfg.lam1 + cfg.lam2 / np.maximum(P, cfg.prior_floor)


def glasso_objective(prec_full, cov_full, lam1):
    """``log|W| - tr(W S) - lam1 ||W||_1`` (to be maximized)."""
    sign, logdet = np.linalg.slogdet(prec_full)
    if sign <= 0:
        return -np.inf
    return logdet - np.sum(prec_full * cov_full) - lam1 * np.abs(prec_full).sum()


def _initial_iterates(Sig, cfg, per_entry):
    """Starting ``(Z, U)``.

    ``dual`` solves the problem restricted to diagonal precisions: the
    diagonal of the fixed point has ``Z_ii = 1 / (Sigma_ii + lam_ii)`` and
    ``rho U_ii = lam_ii``, the subgradient of a positive entry.
    """
    Z, U = [], []
    for k, s in enumerate(Sig):
        d = np.diag(s)
        if np.any(d <= 0):
            raise ValueError("covariance diagonal must be positive")
        if cfg.init == "zero":
            Z.append(np.zeros_like(s))
            U.append(np.zeros_like(s))
        elif cfg.init == "diag":
            Z.append(np.diag(1.0 / d))
            U.append(np.zeros_like(s))
        else:
            if per_entry is not None and per_entry[k] is not None:
                lam = np.repeat(np.diag(per_entry[k]), Q)
            else:
                lam = np.full(d.size, cfg.lam1)
            Z.append(np.diag(1.0 / (d + lam)))
            U.append(np.diag(lam / cfg.rho))
    return Z, U


def solve_ggl(fams, groups, cfg, prior=None, history=None, n_threads=1):
    """Jointly estimate one precision per family.

    ``prior`` applies to the target family only; auxiliary families use
    ``P = 1``. ``history``, when a list, receives one
    ``(iteration, primal_residual, dual_residual)`` tuple per iteration.

    Returns a list of :class:`BlockPrecision`, one per family, each
    holding the eigenvalue-step iterate and its thresholded copy. When
    ``max_iter`` is reached first, the iterate with the smallest residual
    is returned with ``converged=False``.
    """
    K = fams.K
    Ls = [f.L for f in fams.families]
    groups.validate(K, Ls)
    rho = cfg.rho
    Sig = [f.full() for f in fams.families]
    per_entry = None
    if prior is not None:
        per_entry = [None] * K
        for k in range(K):
            P = prior if k == fams.target_index else PriorMatrix(np.ones((Ls[k], Ls[k])))
            per_entry[k] = prior_block_weights(P, cfg, Ls[k])
    Z, U = _initial_iterates(Sig, cfg, per_entry)
    a = cfg.relax
    best = None
    converged = False
    it = 0
    pool = None
    if n_threads > 1 and K > 1:
        from concurrent.futures import ThreadPoolExecutor

        pool = ThreadPoolExecutor(max_workers=n_threads)
    try:
        for it in range(1, cfg.max_iter + 1):
            Ms = [Sig[k] - rho * Z[k] + rho * U[k] for k in range(K)]
            if pool is not None:
                Om = list(pool.map(lambda M: sp1_update(M, rho), Ms))
            else:
                Om = [sp1_update(M, rho) for M in Ms]
            H = [a * Om[k] + (1.0 - a) * Z[k] for k in range(K)] if a != 1.0 else Om
            Z_prev = Z
            Z = sp2_update([H[k] + U[k] for k in range(K)], cfg.lam1, groups, rho, per_entry)
            U = [U[k] + H[k] - Z[k] for k in range(K)]
            r_p = max(np.linalg.norm(Om[k] - Z[k]) for k in range(K))
            r_d = max(rho * np.linalg.norm(Z[k] - Z_prev[k]) for k in range(K))
            if history is not None:
                history.append((it, float(r_p), float(r_d)))
            log.debug("ggl iter %d primal %.3e dual %.3e", it, r_p, r_d)
            score = max(r_p, r_d)
            if best is None or score < best[0]:
                best = (score, it, Om, Z)
            if r_p < cfg.tol and r_d < cfg.tol:
                converged = True
                best = (score, it, Om, Z)
                break
    finally:
        if pool is not None:
            pool.shutdown()
    _, best_it, Om, Zb = best
    if not converged:
        log.warning("ggl did not converge in %d iterations (best residual %.3e)", cfg.max_iter, best[0])
    return [
        BlockPrecision(
            full_to_blocks(Om[k]),
            converged=converged,
            iterations=it if converged else best_it,
            sparse_blocks=full_to_blocks(Zb[k]),
        )
        for k in range(K)
    ]


def solve_glasso(cov, lam1, cfg=GglConfig(), history=None):
    """Single-family graphical lasso; the K = 1, no-group case of :func:`solve_ggl`."""
    cfg = replace(cfg, lam1=lam1)
    return solve_ggl(FamilySet([cov]), GroupSpec.empty(), cfg, history=history)[0]


# --- contacts and baselines --------------------------------------------------------


def contacts_from_precision(prec, apply_apc=True, min_sep=6):
    cmap = coupling_norms(prec)
    if apply_apc:
        cmap = apc(cmap)
    return ContactList(rank_pairs(cmap.s, min_sep), prec.L)


def majority_vote(lists, mapping, family_weights):
    """Weighted vote of each family's contacts mapped onto the target.

    ``lists[0]`` is the target family's list and ``lists[n + 1]`` that of
    auxiliary family ``n``. Ties are broken by rank in the target list,
    then by index.
    """
    if len(lists) != mapping.n_aux + 1 or len(family_weights) != len(lists):
        raise ValueError("need one contact list and one weight per family")
    if any(w <= 0 for w in family_weights):
        raise ValueError("family weights must be positive")
    target = lists[0]
    if mapping.n_aux == 0:
        return target
    votes = {}
    for i, j, _ in target.entries:
        votes[(i, j)] = votes.get((i, j), 0.0) + family_weights[0]
    for n, mp in enumerate(mapping.maps):
        present = {(min(a, b), max(a, b)) for a, b, _ in lists[n + 1].entries}
        if not present:
            continue
        cols = sorted(mp)
        for ii, i in enumerate(cols):
            a = mp[i][0]
            for j in cols[ii + 1:]:
                b = mp[j][0]
                if (min(a, b), max(a, b)) in present:
                    votes[(i, j)] = votes.get((i, j), 0.0) + family_weights[n + 1]
    rank = {(i, j): r for r, (i, j, _) in enumerate(target.entries)}
    big = len(rank)
    order = sorted(votes.items(), key=lambda kv: (-kv[1], rank.get(kv[0], big), kv[0]))
    return ContactList(tuple((i, j, s) for (i, j), s in order), target.L)


def merge_families(target, aux, mapping):
    """Re-index auxiliary rows onto target columns and stack them under the target."""
    from .msa import GAP, Msa

    if len(aux) != mapping.n_aux:
        raise ValueError("one mapping per auxiliary family required")
    blocks = [target.codes]
    ids = list(target.ids)
    for n, (fam, mp) in enumerate(zip(aux, mapping.maps)):
        rows = np.full((fam.n_rows, target.L), GAP, dtype=np.uint8)
        for i, (a, _) in mp.items():
            if not 0 <= i < target.L or not 0 <= a < fam.L:
                raise ValueError(f"mapping {i}->{a} out of range for auxiliary family {n}")
            rows[:, i] = fam.codes[:, a]
        blocks.append(rows)
        ids.extend(f"aux{n + 1}|{rid}" for rid in fam.ids)
    return Msa(np.vstack(blocks), tuple(ids), target.source_column_map, dict(target.meta))
