"""Backend selection for the lattice kernels.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``COEVALIGN_PURE_PYTHON`` is set to a non-empty
value other than ``0``, the pure-Python module is used instead.
"""

import os

import numpy as np

from . import _dp_py
from .lattice import I_S, I_T, M, N_STATES, STEP, AlignmentPath


def _load_compiled():
    if os.environ.get("COEVALIGN_PURE_PYTHON", "") not in ("", "0"):
        return None
    try:
        from . import _dp
    except ImportError:
        return None
    return _dp


_compiled = _load_compiled()
_impl = _compiled if _compiled is not None else _dp_py
BACKEND = "cython" if _compiled is not None else "python"


def get_backend(name=None):
    """Return the kernel module called ``name`` ("cython" or "python")."""
    if name is None:
        return _impl
    if name == "python":
        return _dp_py
    if name == "cython":
        if _compiled is None:
            from . import _dp  # raises ImportError with the real reason

            return _dp
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def forward(E):
    return _impl.forward(_c(E))


def backward(E):
    return _impl.backward(_c(E))


def expect_forward(E, F, g):
    return _impl.expect_forward(_c(E), _c(F), _c(g))


def expect_backward(E, B, g):
    return _impl.expect_backward(_c(E), _c(B), _c(g))


def viterbi(E):
    states, score = _impl.viterbi(_c(E))
    return np.asarray(states, dtype=np.int64), float(score)


def vertex_transition_scores(scores):
    """Transition scores whose path sums equal vertex-score sums.

    The kernels do not score steps out of the origin, so each of the three
    first vertices, which have no other predecessor, passes its score on
    to its outgoing steps. Only the single-vertex path of a 1x1 lattice
    is left unscored.
    """
    s = np.asarray(scores, dtype=float)
    m, n = s.shape[0] - 1, s.shape[1] - 1
    E = np.empty((N_STATES, N_STATES, m + 1, n + 1))
    E[:] = np.moveaxis(s, 2, 0)[None]
    for (fx, fy, u) in ((1, 1, M), (1, 0, I_T), (0, 1, I_S)):
        for v, (dx, dy) in enumerate(STEP):
            x, y = fx + dx, fy + dy
            if x <= m and y <= n:
                E[u, v, x, y] += s[fx, fy, u]
    return E


def dp_align(scores):
    """Path maximizing the summed vertex scores ``scores[x, y, state]``.

    Ties go to the lower state code (M, then It, then Is).
    """
    s = np.asarray(scores, dtype=float)
    m, n = s.shape[0] - 1, s.shape[1] - 1
    if m < 1 or n < 1:
        raise ValueError("lattice must be at least 1x1")
    if not np.all(np.isfinite(s)):
        raise ValueError("vertex scores must be finite")
    if m == 1 and n == 1:
        # Three paths, ordered by final state as the kernel breaks ties.
        cands = ((M,), (I_S, I_T), (I_T, I_S))
        vals = [s[1, 1, M], s[0, 1, I_S] + s[1, 1, I_T], s[1, 0, I_T] + s[1, 1, I_S]]
        return AlignmentPath.from_states(1, 1, cands[int(np.argmax(vals))])
    states, _ = viterbi(vertex_transition_scores(s))
    return AlignmentPath.from_states(m, n, states)
