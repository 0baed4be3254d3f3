"""Alignment lattice geometry shared by the CNF scorer and the aligners.

A lattice between a template of length ``m`` and a target of length ``n``
has vertices ``(x, y, state)`` with ``0 <= x <= m`` and ``0 <= y <= n``.
The coordinates of a vertex are the residue counts consumed *after* the
step that enters it, so a path starts at the virtual origin ``(0, 0)``
and ends at ``(m, n)``.

States
------
``M``   consumes one template and one target residue, ``(x+1, y+1)``.
``I_T`` consumes a template residue only (template insertion), ``(x+1, y)``.
``I_S`` consumes a target residue only (sequence insertion), ``(x, y+1)``.

All nine state transitions are allowed, so the number of paths of an
``m x n`` lattice is the Delannoy number ``D(m, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

M, I_T, I_S = 0, 1, 2
N_STATES = 3
STATE_NAMES = ("M", "It", "Is")
STATE_CODES = {name: code for code, name in enumerate(STATE_NAMES)}

# (dx, dy) consumed by each state
STEP = ((1, 1), (1, 0), (0, 1))


class PathError(ValueError):
    """Raised when a sequence of triples is not a valid lattice path."""


@dataclass(frozen=True)
class AlignmentPath:
    """Lattice path stored as the vertices it visits.

    ``xs``, ``ys`` hold the coordinates reached after each step and
    ``states`` the state used to reach them. The origin is implicit.
    """

    m: int
    n: int
    xs: tuple
    ys: tuple
    states: tuple

    def __post_init__(self):
        validate_path(self.m, self.n, self.xs, self.ys, self.states)

    def __len__(self):
        return len(self.states)

    @classmethod
    def from_states(cls, m, n, states):
        x = y = 0
        xs, ys = [], []
        for s in states:
            dx, dy = STEP[s]
            x += dx
            y += dy
            xs.append(x)
            ys.append(y)
        return cls(m, n, tuple(xs), tuple(ys), tuple(int(s) for s in states))

    @classmethod
    def from_triples(cls, m, n, triples):
        xs, ys, states = [], [], []
        for x, y, s in triples:
            if isinstance(s, str):
                if s not in STATE_CODES:
                    raise PathError(f"unknown state {s!r}")
                s = STATE_CODES[s]
            xs.append(int(x))
            ys.append(int(y))
            states.append(int(s))
        return cls(m, n, tuple(xs), tuple(ys), tuple(states))

    def triples(self):
        return list(zip(self.xs, self.ys, self.states))

    def matches(self):
        """Matched residue pairs ``(x, y)`` (1-based)."""
        return [(x, y) for x, y, s in zip(self.xs, self.ys, self.states) if s == M]

    def indicator(self):
        """Vertex indicator array of shape ``(m+1, n+1, 3)``."""
        z = np.zeros((self.m + 1, self.n + 1, N_STATES))
        if self.states:
            z[list(self.xs), list(self.ys), list(self.states)] = 1.0
        return z

    def gapped_strings(self, template, target, gap="-"):
        """Render the path as two gapped strings."""
        top, bottom = [], []
        for x, y, s in zip(self.xs, self.ys, self.states):
            if s == M:
                top.append(template[x - 1])
                bottom.append(target[y - 1])
            elif s == I_T:
                top.append(template[x - 1])
                bottom.append(gap)
            else:
                top.append(gap)
                bottom.append(target[y - 1])
        return "".join(top), "".join(bottom)


def validate_path(m, n, xs, ys, states):
    if m < 1 or n < 1:
        raise PathError(f"lattice dimensions must be positive, got {m}x{n}")
    if not (len(xs) == len(ys) == len(states)):
        raise PathError("coordinate and state sequences differ in length")
    x = y = 0
    for k, (px, py, s) in enumerate(zip(xs, ys, states)):
        if s not in (M, I_T, I_S):
            raise PathError(f"step {k}: unknown state {s!r}")
        dx, dy = STEP[s]
        x += dx
        y += dy
        if (px, py) != (x, y):
            raise PathError(
                f"step {k}: state {STATE_NAMES[s]} reaches ({x}, {y}), path says ({px}, {py})"
            )
    if (x, y) != (m, n):
        raise PathError(f"path ends at ({x}, {y}), expected ({m}, {n})")


def delannoy(m, n):
    """Number of lattice paths from (0, 0) to (m, n)."""
    d = np.zeros((m + 1, n + 1), dtype=object)
    d[0, :] = 1
    d[:, 0] = 1
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            d[i, j] = d[i - 1, j] + d[i, j - 1] + d[i - 1, j - 1]
    return int(d[m, n])


@lru_cache(maxsize=64)
def _enumerate_state_seqs(m, n):
    out = []

    def rec(x, y, seq):
        if x == m and y == n:
            out.append(tuple(seq))
            return
        for s, (dx, dy) in enumerate(STEP):
            if x + dx <= m and y + dy <= n:
                seq.append(s)
                rec(x + dx, y + dy, seq)
                seq.pop()

    rec(0, 0, [])
    return tuple(out)


def enumerate_paths(m, n):
    """Every path of the ``m x n`` lattice, in a fixed order."""
    return [AlignmentPath.from_states(m, n, s) for s in _enumerate_state_seqs(m, n)]


def predecessor_cell(x, y, v):
    dx, dy = STEP[v]
    return x - dx, y - dy


def vertex_valid_mask(m, n):
    """Boolean ``(m+1, n+1, 3)`` mask of vertices a path can visit."""
    mask = np.zeros((m + 1, n + 1, N_STATES), dtype=bool)
    mask[1:, 1:, M] = True
    mask[1:, :, I_T] = True
    mask[:, 1:, I_S] = True
    return mask


def transition_scores_from_vertex(scores):
    """Lift vertex scores ``(m+1, n+1, 3)`` to transition scores.

    The result has shape ``(3, 3, m+1, n+1)`` with ``E[u, v, x, y] =
    scores[x, y, v]`` for every incoming state ``u``.
    """
    s = np.ascontiguousarray(np.moveaxis(scores, 2, 0))
    return np.ascontiguousarray(np.broadcast_to(s[None], (N_STATES,) + s.shape))
